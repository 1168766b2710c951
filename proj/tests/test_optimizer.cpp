#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "core/error.hpp"
#include "core/optimizer.hpp"
#include "testutil.hpp"

using namespace pxs;
using ad::Tensor;

namespace {

// Textbook per-element Adam, kept deliberately simple.
struct ScalarAdam {
  double m = 0, v = 0;
  std::size_t t = 0;
  double step(double x, double g, double lr) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
    const double vhat = v / (1.0 - std::pow(0.999, static_cast<double>(t)));
    return x - lr * mhat / (std::sqrt(vhat) + 1e-8);
  }
};

// Drives grads into params through a weighted-sum loss: grad == weights.
void backward_with_grads(std::vector<Tensor>& params,
                         const std::vector<std::vector<double>>& grads) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Tensor total;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor w = ad::constant(params[i].shape(), grads[i]);
    Tensor part = ad::reduce_sum(ad::mul(params[i], w));
    total = total.defined() ? ad::add(total, part) : part;
  }
  tape.backward(total);
  tape.clear();
}

}  // namespace

TEST_CASE("adam matches a scalar reference over 100 steps") {
  std::mt19937_64 rng(417);
  std::vector<Tensor> a = {ad::param({2, 2}, testutil::random_vec(rng, 4, -1.0, 1.0)),
                           ad::param({3}, testutil::random_vec(rng, 3, -1.0, 1.0))};
  std::vector<Tensor> b = {ad::param({5}, testutil::random_vec(rng, 5, -1.0, 1.0))};

  std::vector<std::vector<double>> ref;
  for (const auto& group : {a, b})
    for (const auto& p : group) ref.emplace_back(p.data().begin(), p.data().end());
  std::vector<std::vector<ScalarAdam>> state;
  for (const auto& r : ref) state.emplace_back(r.size());

  Adam opt({{"surface", a, 3e-3}, {"colors", b, 1e-2}});

  std::normal_distribution<double> g(0.0, 1.0);
  for (int it = 0; it < 100; ++it) {
    std::vector<std::vector<double>> grads;
    for (const auto& r : ref) {
      std::vector<double> gr(r.size());
      for (auto& v : gr) v = g(rng);
      grads.push_back(std::move(gr));
    }

    for (std::size_t i = 0; i < ref.size(); ++i)
      for (std::size_t j = 0; j < ref[i].size(); ++j)
        ref[i][j] = state[i][j].step(ref[i][j], grads[i][j], i < 2 ? 3e-3 : 1e-2);

    std::vector<Tensor> all = {a[0], a[1], b[0]};
    opt.zero_grad();
    backward_with_grads(all, grads);
    opt.step();

    for (std::size_t i = 0; i < all.size(); ++i)
      for (std::size_t j = 0; j < ref[i].size(); ++j)
        CHECK(std::abs(all[i].at(j) - ref[i][j]) < 1e-12);
  }
  CHECK(opt.step_count() == 100);
}

TEST_CASE("zero gradient from fresh state leaves parameters bitwise unchanged") {
  Tensor p = ad::param({3}, {0.25, -1.5, 2.0});
  const std::vector<double> before(p.data().begin(), p.data().end());
  Adam opt({{"colors", {p}, 1e-2}});

  std::vector<Tensor> params = {p};
  backward_with_grads(params, {{0.0, 0.0, 0.0}});
  opt.step();
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.at(i) == before[i]);

  SUBCASE("moments decay under subsequent zero gradients") {
    opt.zero_grad();
    backward_with_grads(params, {{2.0, -1.0, 0.5}});
    opt.step();
    const auto m1 = opt.moments();
    opt.zero_grad();
    backward_with_grads(params, {{0.0, 0.0, 0.0}});
    opt.step();
    const auto m2 = opt.moments();
    // First-moment block scales by beta1, second by beta2.
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(m2[i] == doctest::Approx(0.9 * m1[i]).epsilon(1e-12));
      CHECK(m2[3 + i] == doctest::Approx(0.999 * m1[3 + i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("constant gradient drives the update magnitude to the learning rate") {
  Tensor p = ad::param({1}, {0.0});
  const double lr = 1e-2;
  Adam opt({{"offsets", {p}, lr}});
  std::vector<Tensor> params = {p};
  double prev = p.at(0);
  double update = 0;
  for (int it = 0; it < 200; ++it) {
    opt.zero_grad();
    backward_with_grads(params, {{3.7}});
    opt.step();
    update = std::abs(p.at(0) - prev);
    prev = p.at(0);
  }
  CHECK(update == doctest::Approx(lr).epsilon(1e-2));
}

TEST_CASE("non-finite gradient aborts naming the parameter group") {
  Tensor ok = ad::param({2}, {0.0, 1.0});
  Tensor bad = ad::param({2}, {0.0, 1.0});
  Adam opt({{"surface", {ok}, 1e-3}, {"rotations", {bad}, 1e-3}});
  std::vector<Tensor> params = {ok, bad};
  backward_with_grads(params, {{1.0, 1.0}, {1.0, std::numeric_limits<double>::quiet_NaN()}});
  bool threw = false;
  try {
    opt.step();
  } catch (const Error& e) {
    threw = true;
    CHECK(e.kind() == ErrorKind::numeric);
    CHECK(std::string(e.what()).find("rotations") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("parameters without gradients are skipped and join with fresh bias correction") {
  Tensor active = ad::param({1}, {0.0});
  Tensor idle = ad::param({1}, {5.0});
  Adam opt({{"mixed", {active, idle}, 1e-2}});
  for (int it = 0; it < 5; ++it) {
    opt.zero_grad();
    std::vector<Tensor> params = {active};
    backward_with_grads(params, {{1.0}});
    opt.step();
  }
  CHECK(idle.at(0) == 5.0);

  // First update of a late joiner has fully bias-corrected magnitude ~ lr.
  opt.zero_grad();
  std::vector<Tensor> params = {idle};
  backward_with_grads(params, {{2.0}});
  opt.step();
  CHECK(std::abs(idle.at(0) - 5.0) == doctest::Approx(1e-2).epsilon(1e-6));
}

TEST_CASE("moment state round-trips through restore") {
  auto build = [](std::vector<double> vals) {
    return std::vector<Tensor>{ad::param({3}, std::move(vals))};
  };
  std::vector<Tensor> a = build({0.1, -0.2, 0.3});
  Adam first({{"surface", a, 2e-3}});

  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  auto run = [&](Adam& opt, std::vector<Tensor>& params, std::mt19937_64& r, int steps) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int it = 0; it < steps; ++it) {
      opt.zero_grad();
      backward_with_grads(params, {{dist(r), dist(r), dist(r)}});
      opt.step();
    }
  };
  std::mt19937_64 rng_a(9), rng_b(9);
  run(first, a, rng_a, 10);

  std::vector<Tensor> b = build({a[0].at(0), a[0].at(1), a[0].at(2)});
  Adam second({{"surface", b, 2e-3}});
  second.restore(first.moments(), first.param_steps(), first.step_count());

  // Warm up the clone's RNG to the same point, then compare trajectories.
  run(second, b, rng_b, 0);
  std::normal_distribution<double> warm(0.0, 1.0);
  for (int i = 0; i < 30; ++i) warm(rng_b);

  run(first, a, rng_a, 10);
  run(second, b, rng_b, 10);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[0].at(i) == b[0].at(i));

  CHECK_THROWS_AS(second.restore({1.0}, {0}, 1), Error);
}

TEST_CASE("group constraints are validated") {
  Tensor p = ad::param({1}, {0.0});
  CHECK_THROWS_AS(Adam({{"", {p}, 1e-3}}), Error);
  CHECK_THROWS_AS(Adam({{"x", {p}, 0.0}}), Error);
  CHECK_THROWS_AS(Adam({{"x", {ad::constant({1}, {1.0})}, 1e-3}}), Error);
  Adam opt({{"x", {p}, 1e-3}});
  CHECK_THROWS_AS(opt.set_lr("y", 1e-3), Error);
  opt.set_lr("x", 5e-3);
  CHECK(opt.groups()[0].lr == 5e-3);
}
