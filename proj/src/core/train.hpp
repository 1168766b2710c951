#pragma once

#include <cstdint>
#include <vector>

#include "core/bundle.hpp"
#include "core/dataset.hpp"
#include "core/image_io.hpp"
#include "core/losses.hpp"
#include "core/optimizer.hpp"

namespace pxs {

// Two-phase schedule and per-group learning rates. scale_factor uniformly
// divides the total/phase iteration counts for small smoke runs; the
// alignment stage keeps its own count.
struct TrainConfig {
  std::size_t align_iters = 1000;
  std::size_t total_iters = 13000;
  std::size_t phase1_iters = 8000;
  double lr_align = 1e-2;
  double lr_decoder = 1e-4;
  double lr_color = 2.5e-3;
  double lr_rotation = 1e-3;
  double lr_log_scale = 5e-3;
  std::size_t samples_per_pixel = 4;
  std::uint64_t seed = 0;
  std::size_t scale_factor = 1;
  std::size_t channels = 5;
  double tau = 1.0;
  LossWeights weights;  // lambda_s is driven by the schedule, not this value

  std::size_t scaled_total() const;
  std::size_t scaled_phase1() const;
  void validate() const;
};

// One directed flow edge with its consistency mask, storage owned.
struct TrainObservation {
  std::size_t from = 0, to = 0;
  ImageF flow;                     // (2,H,W)
  std::vector<std::uint8_t> mask;  // H*W, 1 = reliable correspondence
};

struct TrainData {
  std::vector<ImageF> images;  // target RGB per training view
  std::vector<TrainObservation> flows;

  void validate(const SceneBundle& bundle) const;
  // Pointer views into this object's storage for the loss functions.
  std::vector<FlowObservation> observations() const;
};

// Images plus consistency-masked flow edges from a loaded dataset. Every
// flow edge must have its reverse present (the mask needs both directions).
TrainData prepare_train_data(const Dataset& dataset, double tau = 1.0);

// Optimizer over the bundle's trainable parameters. Group layout is fixed
// (decoder, color, rotation, log_scale) so saved moments stay compatible.
Adam make_optimizer(SceneBundle& bundle, const TrainConfig& config);

// Switches every frozen grid to the explicit rotation + log-scale covariance
// parameterization at the radius its current depth map implies. Renders are
// unchanged up to floating-point rounding.
void unfreeze_covariance(SceneBundle& bundle);

// Runs the optimization loop from bundle.iteration to the scaled total:
// round-robin over training views, photometric + depth-smoothness + flow
// objective, Adam step, quaternion renormalization. Appends one loss value
// per iteration to bundle.loss_history.
void train(SceneBundle& bundle, const TrainData& data, const TrainConfig& config, Adam& opt);

// Same, with a fresh optimizer.
void train(SceneBundle& bundle, const TrainData& data, const TrainConfig& config);

}  // namespace pxs
