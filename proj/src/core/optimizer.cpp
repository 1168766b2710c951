#include "core/optimizer.hpp"

#include <cmath>

#include "core/error.hpp"

namespace pxs {

Adam::Adam(std::vector<Group> groups) : groups_(std::move(groups)) {
  check(!groups_.empty(), ErrorKind::invalid_argument, "Adam: no parameter groups");
  m_.resize(groups_.size());
  v_.resize(groups_.size());
  tp_.resize(groups_.size());
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    check(!groups_[g].name.empty(), ErrorKind::invalid_argument, "Adam: unnamed parameter group");
    check(groups_[g].lr > 0.0, ErrorKind::invalid_argument,
          "Adam: non-positive learning rate for group '" + groups_[g].name + "'");
    m_[g].resize(groups_[g].params.size());
    v_[g].resize(groups_[g].params.size());
    tp_[g].assign(groups_[g].params.size(), 0);
    for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
      auto& t = groups_[g].params[p];
      check(t.defined() && t.requires_grad(), ErrorKind::invalid_argument,
            "Adam: group '" + groups_[g].name + "' holds a non-trainable tensor");
      m_[g][p].assign(t.numel(), 0.0);
      v_[g][p].assign(t.numel(), 0.0);
    }
  }
}

void Adam::step() {
  ++t_;
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    const double lr = groups_[g].lr;
    for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
      auto& t = groups_[g].params[p];
      if (!t.has_grad()) continue;  // parameter untouched by this loss
      const double tstep = static_cast<double>(++tp_[g][p]);
      const double bc1 = 1.0 - std::pow(kBeta1, tstep);
      const double bc2 = 1.0 - std::pow(kBeta2, tstep);
      const auto grad = t.grad();
      const auto x = t.mutable_data();
      auto& m = m_[g][p];
      auto& v = v_[g][p];
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const double gi = grad[i];
        if (!std::isfinite(gi)) {
          fail(ErrorKind::numeric,
               "Adam: non-finite gradient in parameter group '" + groups_[g].name + "'");
        }
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        x[i] -= lr * mhat / (std::sqrt(vhat) + kEpsilon);
      }
    }
  }
}

void Adam::zero_grad() {
  for (auto& group : groups_) {
    for (auto& t : group.params) t.zero_grad();
  }
}

void Adam::set_lr(const std::string& group, double lr) {
  check(lr > 0.0, ErrorKind::invalid_argument, "Adam: non-positive learning rate");
  for (auto& g : groups_) {
    if (g.name == group) {
      g.lr = lr;
      return;
    }
  }
  fail(ErrorKind::invalid_argument, "Adam: unknown parameter group '" + group + "'");
}

std::vector<double> Adam::moments() const {
  std::vector<double> out;
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
      out.insert(out.end(), m_[g][p].begin(), m_[g][p].end());
      out.insert(out.end(), v_[g][p].begin(), v_[g][p].end());
    }
  }
  return out;
}

std::vector<std::uint64_t> Adam::param_steps() const {
  std::vector<std::uint64_t> out;
  for (const auto& group : tp_) out.insert(out.end(), group.begin(), group.end());
  return out;
}

void Adam::restore(const std::vector<double>& moments,
                   const std::vector<std::uint64_t>& param_steps, std::size_t step_count) {
  std::size_t need = 0;
  std::size_t count = 0;
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    count += groups_[g].params.size();
    for (const auto& p : groups_[g].params) need += 2 * p.numel();
  }
  check(moments.size() == need, ErrorKind::invalid_argument, "Adam: moment state size mismatch");
  check(param_steps.size() == count, ErrorKind::invalid_argument,
        "Adam: step-count state size mismatch");
  std::size_t at = 0;
  std::size_t pi = 0;
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
      const std::size_t n = groups_[g].params[p].numel();
      m_[g][p].assign(moments.begin() + at, moments.begin() + at + n);
      at += n;
      v_[g][p].assign(moments.begin() + at, moments.begin() + at + n);
      at += n;
      tp_[g][p] = param_steps[pi++];
    }
  }
  t_ = step_count;
}

}  // namespace pxs
