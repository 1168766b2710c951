#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/bundle.hpp"
#include "core/train.hpp"

namespace pxs {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Full optimization state: the scene, the schedule config it was built
// under, and the optimizer moments (absent before the first train step).
struct Checkpoint {
  TrainConfig config;
  SceneBundle bundle;
  bool has_optimizer = false;
  std::vector<double> opt_moments;
  std::vector<std::uint64_t> opt_param_steps;
  std::uint64_t opt_step_count = 0;
};

// Little-endian binary container; doubles are stored as raw IEEE-754 bits so
// a save/load round trip is bitwise exact.
void save_checkpoint(const std::string& path, const Checkpoint& ck);

// Rejects unknown versions and truncated or size-inconsistent files with
// errors naming the path, byte offset, and expectation.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pxs
