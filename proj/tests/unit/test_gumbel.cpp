#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "dualpath/gumbel.hpp"
#include "support/finite_diff.hpp"

using namespace dualpath;
using codec::GumbelConfig;
using testsupport::numeric_gradient;
using testsupport::relative_error;

namespace {

std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p;
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  for (double l : logits) p.push_back(std::exp(l - m) / z);
  return p;
}

double max_component(const std::vector<double>& logits, const std::vector<double>& noise, double temperature) {
  const auto y = codec::gumbel_softmax(logits, GumbelConfig{temperature, false}, noise);
  return *std::max_element(y.begin(), y.end());
}

}  // namespace

TEST_CASE("uniform logits with equal noise give the uniform vector") {
  const std::vector<double> logits(5, 0.7), noise(5, -0.3);
  for (double v : codec::gumbel_softmax(logits, GumbelConfig{1.0, false}, noise)) {
    CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
  }
}

TEST_CASE("low temperature approaches one-hot") {
  const std::vector<double> logits{0.1, 0.5, -0.2, 0.3};
  const auto noise = codec::sample_gumbel(4, 17);
  CHECK(max_component(logits, noise, 0.01) >= 0.99);
}

TEST_CASE("argmax frequency matches softmax over 1e5 draws") {
  const std::vector<double> logits{1.0, 0.2, -0.5, 0.0, 0.8};
  const auto p = softmax(logits);
  std::mt19937_64 rng(2024);
  std::vector<double> counts(logits.size(), 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto y = codec::gumbel_softmax(logits, GumbelConfig{0.5, false}, codec::sample_gumbel(logits.size(), rng));
    counts[std::max_element(y.begin(), y.end()) - y.begin()] += 1.0;
  }
  for (std::size_t k = 0; k < logits.size(); ++k) {
    CAPTURE(k);
    CHECK(std::abs(counts[k] / n - p[k]) <= 0.01);
  }
}

TEST_CASE("gumbel noise is reproducible and has the standard moments") {
  CHECK(codec::sample_gumbel(64, 5) == codec::sample_gumbel(64, 5));

  const auto g = codec::sample_gumbel(1000000, 99);
  double mean = 0.0;
  for (double v : g) mean += v;
  mean /= static_cast<double>(g.size());
  double var = 0.0;
  for (double v : g) var += (v - mean) * (v - mean);
  var /= static_cast<double>(g.size() - 1);
  CHECK(std::abs(mean - std::numbers::egamma) <= 0.01);
  CHECK(std::abs(var - std::numbers::pi * std::numbers::pi / 6.0) <= 0.02);
}

TEST_CASE("annealing schedule") {
  const codec::AnnealSchedule s{1.0, 1e-4, 0.1};
  CHECK(codec::anneal_temperature(0, s) == 1.0);
  CHECK(codec::anneal_temperature(10000, s) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(codec::anneal_temperature(1000000000, s) == 0.1);
}

TEST_CASE("outputs sum to one and stay positive") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> logits(16);
    for (auto& l : logits) l = n(rng);
    const double temperature = 0.05 + 2.0 * codec::uniform_open(rng);
    const auto y = codec::gumbel_softmax(logits, GumbelConfig{temperature, false}, codec::sample_gumbel(16, rng));
    double sum = 0.0;
    for (double v : y) {
      sum += v;
      CHECK(v > 0.0);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("lower temperature strictly increases the max component") {
  const std::vector<double> logits{0.3, -0.1, 0.25, 0.0};
  const auto noise = codec::sample_gumbel(4, 3);
  double prev = 0.0;
  for (double t : {4.0, 2.0, 1.0, 0.5, 0.25, 0.1}) {
    const double m = max_component(logits, noise, t);
    CHECK(m > prev);
    prev = m;
  }
}

TEST_CASE("differentiable form: gradient matches finite differences and hard mode is one-hot") {
  std::mt19937_64 rng(12);
  const ad::Tensor logits = testsupport::random_tensor({3, 4}, rng);
  ad::Tensor noise({3, 4});
  for (std::size_t r = 0; r < 3; ++r) {
    const auto g = codec::sample_gumbel(4, rng);
    for (std::size_t c = 0; c < 4; ++c) noise.at(r, c) = g[c];
  }
  const ad::Tensor w = testsupport::random_tensor({3, 4}, rng);
  const GumbelConfig soft{0.7, false};
  auto f = [&](const ad::Tensor& x) {
    ad::NoGradGuard ng;
    return ad::sum(ad::mul(codec::gumbel_softmax(ad::constant(x), noise, soft), ad::constant(w))).value().item();
  };
  const ad::Var x = ad::leaf(logits);
  const ad::Var root = ad::sum(ad::mul(codec::gumbel_softmax(x, noise, soft), ad::constant(w)));
  const auto g = ad::grad(root, std::span<const ad::Var>(&x, 1));
  CHECK(relative_error(g[0].value(), numeric_gradient(f, logits)) < 1e-6);

  // Straight-through: forward is one-hot, gradient is the soft one.
  const GumbelConfig hard{0.7, true};
  const ad::Var xh = ad::leaf(logits);
  const ad::Var yh = codec::gumbel_softmax(xh, noise, hard);
  for (std::size_t r = 0; r < 3; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      const double v = yh.value().at(r, c);
      CHECK((v == 0.0 || std::abs(v - 1.0) <= 1e-15));
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-15);
  }
  const auto gh = ad::grad(ad::sum(ad::mul(yh, ad::constant(w))), std::span<const ad::Var>(&xh, 1));
  CHECK(relative_error(gh[0].value(), g[0].value()) < 1e-9);
}
