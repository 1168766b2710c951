#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace pxs {

// Standard Adam over named parameter groups. Gradients are read from each
// tensor's accumulated grad; callers zero them between iterations. Parameter
// semantics that live outside plain gradient descent (quaternion
// renormalization, value clamps, scale floors) belong to the training loop,
// which knows what each tensor means.
class Adam {
public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  struct Group {
    std::string name;
    std::vector<ad::Tensor> params;
    double lr = 1e-3;
  };

  explicit Adam(std::vector<Group> groups);

  // One update over every group. A non-finite gradient aborts with the
  // offending group named.
  void step();
  void zero_grad();

  std::size_t step_count() const { return t_; }
  std::vector<Group>& groups() { return groups_; }
  const std::vector<Group>& groups() const { return groups_; }
  void set_lr(const std::string& group, double lr);

  // Serialized moment state, ordered as (group, param, element) with the
  // first-moment block before the second for each tensor. Bias correction is
  // per parameter, counting only the steps where that parameter had a
  // gradient, so param_steps() is part of the state.
  std::vector<double> moments() const;
  std::vector<std::uint64_t> param_steps() const;
  void restore(const std::vector<double>& moments, const std::vector<std::uint64_t>& param_steps,
               std::size_t step_count);

private:
  std::vector<Group> groups_;
  std::vector<std::vector<std::vector<double>>> m_, v_;  // [group][param][elem]
  std::vector<std::vector<std::uint64_t>> tp_;           // [group][param]
  std::size_t t_ = 0;
};

}  // namespace pxs
