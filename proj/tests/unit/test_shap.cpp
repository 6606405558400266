#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dualpath/errors.hpp"
#include "dualpath/shap.hpp"
#include "dualpath/simulator.hpp"

using namespace dualpath;
using shap::ValueFunction;

namespace {

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("f" + std::to_string(i));
  return out;
}

std::size_t mask_of(const std::vector<bool>& present) {
  std::size_t m = 0;
  for (std::size_t i = 0; i < present.size(); ++i)
    if (present[i]) m |= std::size_t{1} << i;
  return m;
}

// Arbitrary game on n players: a random value per coalition.
ValueFunction random_game(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> table(std::size_t{1} << n);
  for (auto& v : table) v = d(rng);
  return [table](const std::vector<bool>& present) { return table[mask_of(present)]; };
}

// Additive part plus pairwise interactions, closer to a real score surface.
ValueFunction smooth_game(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> w(n);
  std::vector<std::vector<double>> pair(n, std::vector<double>(n));
  for (auto& v : w) v = 2.0 * d(rng);
  for (auto& row : pair)
    for (auto& v : row) v = 0.3 * d(rng);
  return [w, pair, n](const std::vector<bool>& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!p[i]) continue;
      s += w[i];
      for (std::size_t j = i + 1; j < n; ++j)
        if (p[j]) s += pair[i][j];
    }
    return s;
  };
}

double range(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

}  // namespace

TEST_CASE("constant game gives zero attributions") {
  const ValueFunction v = [](const std::vector<bool>&) { return 4.2; };
  const auto n = names(5);
  for (double p : shap::explain_exact(v, n).phi) CHECK(p == 0.0);
  for (std::size_t budget : {10u, 100u, 2000u}) {
    for (double p : shap::explain_sampled(v, n, budget, 3).phi) CHECK(p == 0.0);
  }
}

TEST_CASE("additive two-field game") {
  const double a = 1.7, b = -0.4;
  const ValueFunction v = [&](const std::vector<bool>& p) { return (p[0] ? a : 0.0) + (p[1] ? b : 0.0); };
  const auto e = shap::explain_exact(v, names(2));
  CHECK(e.phi[0] == doctest::Approx(a).epsilon(1e-15));
  CHECK(e.phi[1] == doctest::Approx(b).epsilon(1e-15));
}

TEST_CASE("three-field game: subset formula agrees with the permutation oracle") {
  const std::map<std::size_t, double> table{{0b000, 0}, {0b001, 1}, {0b010, 2}, {0b100, 0},
                                            {0b011, 4}, {0b101, 1}, {0b110, 2}, {0b111, 5}};
  const ValueFunction v = [&](const std::vector<bool>& p) { return table.at(mask_of(p)); };
  const auto e = shap::explain_exact(v, names(3));
  const auto oracle = shap::permutation_oracle(v, 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(e.phi[i] - oracle[i]) <= 1e-12);
  CHECK(std::abs(e.base + e.phi[0] + e.phi[1] + e.phi[2] - 5.0) <= 1e-12);
}

TEST_CASE("exact matches the oracle on random games up to 8 fields") {
  for (std::size_t n = 1; n <= 8; ++n) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto v = random_game(n, 100 * n + seed);
      const auto e = shap::explain_exact(v, names(n));
      const auto oracle = shap::permutation_oracle(v, n);
      CAPTURE(n);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(e.phi[i] - oracle[i]) <= 1e-12);
      CHECK(std::abs(e.efficiency_gap()) <= 1e-9);
    }
  }
}

TEST_CASE("symmetry and null player") {
  // Fields 0 and 1 are interchangeable, field 3 never matters.
  const ValueFunction v = [](const std::vector<bool>& p) {
    const double pair = (p[0] ? 1.0 : 0.0) + (p[1] ? 1.0 : 0.0);
    return pair * pair + (p[2] ? 3.0 : 0.0) * (p[0] ? 2.0 : 1.0);
  };
  const auto e = shap::explain_exact(v, names(4));
  CHECK(std::abs(e.phi[3]) <= 1e-15);
  const ValueFunction sym = [](const std::vector<bool>& p) {
    const double pair = (p[0] ? 1.0 : 0.0) + (p[1] ? 1.0 : 0.0);
    return pair * pair + (p[2] ? 3.0 : 0.0);
  };
  const auto es = shap::explain_exact(sym, names(4));
  CHECK(std::abs(es.phi[0] - es.phi[1]) <= 1e-12);
  CHECK(std::abs(es.phi[3]) <= 1e-15);

  const auto s = shap::explain_sampled(v, names(4), 400, 8);
  CHECK(std::abs(s.phi[3]) <= s.confidence_bound + 1e-12);
}

TEST_CASE("sampled estimate is within 5% of range at 2000 permutations") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto v = smooth_game(8, seed);
    const auto exact = shap::explain_exact(v, names(8));
    const auto sampled = shap::explain_sampled(v, names(8), 2000, seed);
    double worst = 0.0;
    for (std::size_t i = 0; i < 8; ++i) worst = std::max(worst, std::abs(sampled.phi[i] - exact.phi[i]));
    CAPTURE(seed);
    CHECK(worst <= 0.05 * range(exact.phi));
    CHECK(std::abs(sampled.efficiency_gap()) <= 1e-9);
  }
}

TEST_CASE("sampled error shrinks as the budget doubles") {
  // Averaged over seeds so the check is on the expectation.
  const std::size_t n = 8;
  std::vector<double> mean_error;
  for (std::size_t budget : {64u, 128u, 256u, 512u, 1024u, 2048u}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto v = random_game(n, 7000 + seed);
      const auto exact = shap::explain_exact(v, names(n));
      const auto s = shap::explain_sampled(v, names(n), budget, seed);
      for (std::size_t i = 0; i < n; ++i) total += std::abs(s.phi[i] - exact.phi[i]);
    }
    mean_error.push_back(total);
  }
  for (std::size_t i = 1; i < mean_error.size(); ++i) CHECK(mean_error[i] < mean_error[i - 1]);
}

TEST_CASE("sampled is deterministic per seed and rejects tiny budgets") {
  const auto v = random_game(6, 5);
  const auto a = shap::explain_sampled(v, names(6), 500, 42);
  const auto b = shap::explain_sampled(v, names(6), 500, 42);
  CHECK(a.phi == b.phi);
  CHECK_THROWS_AS(shap::explain_sampled(v, names(6), 11, 1), ContractError);
  CHECK_THROWS_AS(shap::explain_exact(random_game(2, 1), names(16)), CostError);
}

TEST_CASE("VAE value function") {
  const auto profiles = sim::make_profiles(20, 1);
  const auto stream = sim::generate_stream(profiles, {}, 400, 9);
  const auto c = std::make_shared<const codec::Codec>(
      codec::Codec::fit(codec::TransactionSchema::banking_default(), stream, 5));
  const auto model = vae::VaeModel::create(c, {}, 3);
  const auto x = c->encode(stream[10]);
  const auto other = c->encode(stream[20]);
  const std::size_t n = c->schema().field_count();

  const std::vector<codec::FeatureVector> self{x};
  const auto v_self = shap::value_function_for_vae(model, x, self);
  CHECK(v_self(std::vector<bool>(n, true)) == model.reconstruction_error(x));
  CHECK(v_self(std::vector<bool>(n, false)) == model.reconstruction_error(x));

  // Single background row: replace the fields outside S by hand.
  const std::vector<codec::FeatureVector> bg{other};
  const auto v = shap::value_function_for_vae(model, x, bg);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<bool> present(n);
    for (std::size_t i = 0; i < n; ++i) present[i] = rng() & 1;
    std::vector<double> composed = other.values;
    for (std::size_t i = 0; i < n; ++i) {
      if (!present[i]) continue;
      const auto& s = c->layout().slices[i];
      std::copy_n(x.values.begin() + static_cast<std::ptrdiff_t>(s.offset), s.width,
                  composed.begin() + static_cast<std::ptrdiff_t>(s.offset));
    }
    CHECK(std::abs(v(present) - model.reconstruction_error(composed)) <= 1e-12);
  }

  const auto e = shap::explain_transaction(model, stream[10], std::vector<codec::FeatureVector>{other, x});
  CHECK(e.feature_names == c->schema().field_names());
  CHECK(e.method == shap::Method::exact);
  CHECK(std::abs(e.output - model.reconstruction_error(x)) <= 1e-12);
  CHECK(std::abs(e.efficiency_gap()) <= 1e-9);
  CHECK(e.transaction_id == stream[10].id);

  const auto round = shap::Explanation::from_json(e.to_json());
  CHECK(round.phi == e.phi);
}

TEST_CASE("explanation counter counts calls on this thread") {
  const auto before = shap::thread_explanation_count();
  shap::explain_exact(random_game(3, 1), names(3));
  shap::explain_sampled(random_game(3, 1), names(3), 10, 1);
  CHECK(shap::thread_explanation_count() == before + 2);
}
