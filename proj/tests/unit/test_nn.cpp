#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

#include "dualpath/errors.hpp"
#include "dualpath/nn.hpp"
#include "support/finite_diff.hpp"

using namespace dualpath;
using ad::Tensor;
using ad::Var;
using testsupport::numeric_gradient;
using testsupport::random_tensor;
using testsupport::relative_error;

namespace {

using CriticFn = std::function<Var(const Var&)>;

CriticFn linear_critic(const Tensor& w, double factor = 1.0) {
  return [w, factor](const Var& x) { return ad::scale(ad::matmul(x, ad::constant(w)), factor); };
}

Tensor unit_column(std::size_t n, std::mt19937_64& rng) {
  Tensor w = random_tensor({n, 1}, rng);
  double norm = 0.0;
  for (double v : w.data()) norm += v * v;
  for (auto& v : w.storage()) v /= std::sqrt(norm);
  return w;
}

struct SmallCritic {
  nn::Mlp mlp{"c", {3, 5, 4, 1}, nn::Activation::tanh};
  nn::ParameterSet params;

  explicit SmallCritic(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    mlp.init(params, rng);
  }
  CriticFn fn() const {
    return [this](const Var& x) {
      const nn::Bindings b(params, params.leaves(false));
      return mlp.forward(x, b);
    };
  }
};

}  // namespace

TEST_CASE("gradient norm of linear critics") {
  std::mt19937_64 rng(1);
  const Tensor w = unit_column(4, rng);
  for (int i = 0; i < 5; ++i) {
    const Tensor p = random_tensor({1, 4}, rng, -3, 3);
    CHECK(nn::gradient_norm_of_critic(linear_critic(w), p) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(nn::gradient_norm_of_critic(linear_critic(w, 2.0), p) == doctest::Approx(2.0).epsilon(1e-12));
  }
}

TEST_CASE("gradient norm of a small MLP critic matches finite differences") {
  SmallCritic critic(4);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 5; ++i) {
    const Tensor p = random_tensor({1, 3}, rng);
    auto f = [&](const Tensor& x) {
      ad::NoGradGuard ng;
      return critic.fn()(ad::constant(x)).value().item();
    };
    const Tensor g = numeric_gradient(f, p);
    double fd = 0.0;
    for (double v : g.data()) fd += v * v;
    CHECK(nn::gradient_norm_of_critic(critic.fn(), p) == doctest::Approx(std::sqrt(fd)).epsilon(1e-5));
  }
}

TEST_CASE("double backward through the gradient norm matches finite differences of the norm") {
  SmallCritic critic(9);
  std::mt19937_64 rng(10);
  const Tensor points = random_tensor({4, 3}, rng);

  // d/dtheta of sum_i ||grad_x D(x_i; theta)|| for the first weight matrix.
  const std::string name = "c.0.w";
  const Tensor theta0 = critic.params.get(name);
  auto norm_sum = [&](const Tensor& theta) {
    nn::ParameterSet p = critic.params;
    p.get(name) = theta;
    const nn::Bindings b(p, p.leaves(false));
    auto fn = [&](const Var& x) { return critic.mlp.forward(x, b); };
    return ad::sum(nn::input_gradient_norm(fn, ad::leaf(points, false))).value().item();
  };

  const auto leaves = critic.params.leaves();
  const nn::Bindings b(critic.params, leaves);
  auto fn = [&](const Var& x) { return critic.mlp.forward(x, b); };
  const Var root = ad::sum(nn::input_gradient_norm(fn, ad::leaf(points, false)));
  const Var& target = b[name];
  const Var analytic = ad::grad(root, std::span<const Var>(&target, 1))[0];
  CHECK(relative_error(analytic.value(), numeric_gradient(norm_sum, theta0)) < 1e-4);
}

TEST_CASE("adam: zero gradients leave parameters and moments unchanged") {
  nn::ParameterSet p;
  p.add("w", Tensor::vector({1.0, -2.0}));
  auto state = nn::AdamState::for_params(p, nn::AdamConfig::vae());
  const nn::ParameterSet before = p;
  nn::adam_step(p, state, {Tensor({2})});
  CHECK(p.get("w") == before.get("w"));
  CHECK(state.first_moment[0] == Tensor({2}));
  CHECK(state.second_moment[0] == Tensor({2}));
  CHECK(state.step == 1);
  CHECK(p.version() == before.version() + 1);
}

TEST_CASE("adam: one step on w^2 from w=1 decreases w") {
  nn::ParameterSet p;
  p.add("w", Tensor::vector({1.0}));
  auto state = nn::AdamState::for_params(p, {0.1, 0.9, 0.999, 1e-8});
  nn::adam_step(p, state, {Tensor::vector({2.0})});
  CHECK(p.get("w")[0] < 1.0);
}

TEST_CASE("adam: 500 steps on a convex quadratic reach the minimizer") {
  // f(w) = (w0 - 3)^2 + 2 (w1 + 1)^2, minimizer (3, -1).
  nn::ParameterSet p;
  p.add("w", Tensor::vector({0.0, 0.0}));
  auto state = nn::AdamState::for_params(p, {0.1, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 500; ++i) {
    const auto& w = p.get("w");
    nn::adam_step(p, state, {Tensor::vector({2 * (w[0] - 3), 4 * (w[1] + 1)})});
  }
  CHECK(std::abs(p.get("w")[0] - 3.0) < 1e-3);
  CHECK(std::abs(p.get("w")[1] + 1.0) < 1e-3);
}

TEST_CASE("adam: non-finite gradient names the parameter and changes nothing") {
  nn::ParameterSet p;
  p.add("layer.w", Tensor::vector({1.0}));
  auto state = nn::AdamState::for_params(p, nn::AdamConfig::vae());
  const nn::ParameterSet before = p;
  try {
    nn::adam_step(p, state, {Tensor::vector({std::nan("")})});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("layer.w") != std::string::npos);
  }
  CHECK(p == before);
  CHECK(state.step == 0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  nn::ParameterSet p;
  std::mt19937_64 rng(2);
  nn::Mlp{"m", {4, 6, 2}, nn::Activation::relu}.init(p, rng);
  p.set_version(17);
  const auto restored = nn::ParameterSet::deserialize(p.serialize());
  CHECK(restored == p);
  CHECK(restored.version() == 17);

  const auto path = std::filesystem::temp_directory_path() / "dualpath_test_nn.ckpt";
  p.save(path);
  CHECK(nn::ParameterSet::load(path) == p);
  std::filesystem::remove(path);

  std::string bytes = p.serialize();
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_AS(nn::ParameterSet::deserialize(bytes), DataError);
}

TEST_CASE("snapshot slot readers keep the version they loaded") {
  nn::SnapshotSlot<int> slot;
  slot.publish(std::make_shared<const int>(1));
  const auto held = slot.load();
  slot.publish(std::make_shared<const int>(2));
  CHECK(*held == 1);
  CHECK(*slot.load() == 2);
}
