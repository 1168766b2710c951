#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pxs {

struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0.0;  // worst probed entry over all trials
  double tolerance = 1e-4;
  std::size_t trials = 0;
  bool passed() const { return max_rel_err < tolerance; }
};

// Central-finite-difference validation of every differentiable operator:
// elementwise ops, convolution/upsampling, reductions and reshapes, the loss
// family, Gaussian materialization, the decoders, and the full renderer.
// Each trial draws fresh random inputs (deterministic in `seed`) and compares
// the tape gradient of a randomly weighted output sum against central
// differences. The renderer entries run at a relaxed 1e-3 tolerance; all
// remaining ops must stay under 1e-4.
std::vector<GradCheckEntry> run_gradcheck(std::uint64_t seed, std::size_t trials);

bool all_passed(const std::vector<GradCheckEntry>& entries);

}  // namespace pxs
