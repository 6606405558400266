#include <doctest.h>

#include <cmath>
#include <set>

#include "dualpath/errors.hpp"
#include "dualpath/evaluate.hpp"
#include "dualpath/simulator.hpp"

using namespace dualpath;
using codec::Transaction;
namespace bk = codec::banking;

namespace {

std::vector<Transaction> with_label(const std::vector<Transaction>& s, const std::string& label) {
  std::vector<Transaction> out;
  for (const auto& t : s)
    if (t.label == label) out.push_back(t);
  return out;
}

// Mean +- 4 standard deviations of a sum of independent Binomial(n, p_i).
std::pair<double, double> binomial_band(std::size_t n, const std::vector<double>& ps) {
  double mean = 0.0, var = 0.0;
  for (double p : ps) {
    mean += static_cast<double>(n) * p;
    var += static_cast<double>(n) * p * (1.0 - p);
  }
  return {mean - 4.0 * std::sqrt(var), mean + 4.0 * std::sqrt(var)};
}

}  // namespace

TEST_CASE("fraud count at 0.17% of 100k lies in the binomial band") {
  const auto profiles = sim::make_profiles(20, 1);
  const auto stream = sim::generate_stream(profiles, sim::default_scenarios(0.0017), 100000, 103);
  CHECK(stream.size() == 100000);
  std::size_t fraud = 0;
  for (const auto& t : stream) fraud += t.is_fraud();
  const auto [lo, hi] = binomial_band(100000, {0.0017 / 3, 0.0017 / 3, 0.0017 / 3});
  CHECK(static_cast<double>(fraud) >= lo);
  CHECK(static_cast<double>(fraud) <= hi);
}

TEST_CASE("streams: no scenarios, determinism, ordering") {
  const auto profiles = sim::make_profiles(10, 2);
  const auto clean = sim::generate_stream(profiles, {}, 3000, 5);
  for (const auto& t : clean) CHECK(t.label == codec::kLegitimate);

  const auto a = sim::generate_stream(profiles, sim::default_scenarios(0.01), 3000, 6);
  const auto b = sim::generate_stream(profiles, sim::default_scenarios(0.01), 3000, 6);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].timestamp == b[i].timestamp);
    CHECK(a[i].continuous == b[i].continuous);
    CHECK(a[i].categorical == b[i].categorical);
    CHECK(a[i].label == b[i].label);
    codec::validate(a[i], codec::TransactionSchema::banking_default());
  }
  // Ids follow time order, so they carry no label information.
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1].timestamp <= a[i].timestamp);
}

TEST_CASE("salami burst of 200 at 0.30 in 60 s") {
  auto profiles = sim::make_profiles(3, 4);
  for (auto& p : profiles) p.rate_per_day = 3.0;
  auto d = sim::legitimate_draft(profiles, 50, 7);
  std::mt19937_64 rng(1);
  sim::inject_salami(d, profiles[0].account, 1000.0, {0.30, 0.30, 200, 60.0}, rng);
  const auto s = sim::finalize(std::move(d), "x");
  const auto salami = with_label(s, "salami");
  REQUIRE(salami.size() == 200);
  double first = 1e300, last = -1e300;
  for (const auto& t : salami) {
    CHECK(t.continuous[bk::kAmount] == doctest::Approx(0.30));
    CHECK(t.account == profiles[0].account);
    first = std::min(first, t.timestamp);
    last = std::max(last, t.timestamp);
  }
  CHECK(last - first <= 60.0);

  auto d0 = sim::legitimate_draft(profiles, 50, 7);
  const auto before = d0.transactions.size();
  sim::inject_salami(d0, profiles[0].account, 10.0, {0.05, 0.45, 0, 60.0}, rng);
  CHECK(d0.transactions.size() == before);

  sim::SalamiParams too_big{0.10, 0.50, 10, 60.0};
  CHECK_THROWS_AS(sim::inject_salami(d0, profiles[0].account, 10.0, too_big, rng), ContractError);
}

TEST_CASE("salami amounts stay below 0.50 and evade every amount rule above it") {
  const auto profiles = sim::make_profiles(20, 1);
  sim::ScenarioConfig s;
  s.scenario = sim::Scenario::salami;
  s.prevalence = 0.01;
  const auto stream = sim::generate_stream(profiles, {s}, 20000, 9);
  const auto salami = with_label(stream, "salami");
  REQUIRE_FALSE(salami.empty());
  for (const auto& t : salami) CHECK(t.continuous[bk::kAmount] < 0.50);
  for (double x : {0.50, 0.51, 1.0, 10.0, 100.0}) CHECK(eval::amount_rule_recall(stream, "salami", x) == 0.0);
}

TEST_CASE("cnp velocity burst: 12 MCCs, 5 regions, 10 minutes") {
  const auto profiles = sim::make_profiles(3, 4);
  auto d = sim::legitimate_draft(profiles, 50, 7);
  std::mt19937_64 rng(2);
  sim::CnpParams p;
  p.mcc_spread = 12;
  p.geo_spread = 5;
  p.window_s = 600.0;
  p.burst_size = 15;
  sim::inject_cnp_velocity(d, profiles[1].account, 500.0, p, rng);
  const auto cnp = with_label(sim::finalize(std::move(d), "x"), "cnp");
  REQUIRE(cnp.size() == 15);
  std::set<int> mccs;
  std::vector<std::pair<double, double>> centres;
  double first = 1e300, last = -1e300;
  for (const auto& t : cnp) {
    mccs.insert(t.categorical[bk::kMcc]);
    first = std::min(first, t.timestamp);
    last = std::max(last, t.timestamp);
    bool known = false;
    for (const auto& [la, lo] : centres)
      known |= sim::great_circle_km(la, lo, t.continuous[bk::kLat], t.continuous[bk::kLon]) < 100.0;
    if (!known) centres.emplace_back(t.continuous[bk::kLat], t.continuous[bk::kLon]);
  }
  CHECK(mccs.size() == 12);
  CHECK(centres.size() == 5);
  CHECK(last - first <= 600.0);

  sim::ScenarioConfig degenerate;
  degenerate.scenario = sim::Scenario::cnp_velocity;
  degenerate.cnp.mcc_spread = 1;
  degenerate.cnp.geo_spread = 1;
  CHECK_THROWS_AS(degenerate.validate(), ContractError);
}

TEST_CASE("ato: device swapped, geo jump, amounts inside the profile's quantiles") {
  const auto profiles = sim::make_profiles(3, 4);
  auto d = sim::legitimate_draft(profiles, 50, 7);
  std::mt19937_64 rng(3);
  sim::AtoParams p;
  p.burst_size = 40;
  sim::inject_ato(d, profiles[2].account, 800.0, p, rng);
  const auto ato = with_label(sim::finalize(std::move(d), "x"), "ato");
  REQUIRE(ato.size() == 40);
  const auto& prof = profiles[2];
  const double lo = std::exp(prof.amount_mu - 2.326 * prof.amount_sigma) - 0.005;
  const double hi = std::exp(prof.amount_mu + 2.326 * prof.amount_sigma) + 0.005;
  for (const auto& t : ato) {
    CHECK(t.categorical[bk::kDevice] == bk::unseen);
    CHECK(t.continuous[bk::kHomeDistance] > 7900.0);
    CHECK(t.continuous[bk::kAmount] >= lo);
    CHECK(t.continuous[bk::kAmount] <= hi);
  }

  sim::ScenarioConfig s;
  s.scenario = sim::Scenario::ato;
  s.prevalence = 0.002;
  const auto stream = sim::generate_stream(sim::make_profiles(20, 1), {s}, 50000, 13);
  const auto [blo, bhi] = binomial_band(50000, {0.002});
  const double n = static_cast<double>(with_label(stream, "ato").size());
  CHECK(n >= blo);
  CHECK(n <= bhi);
}

TEST_CASE("seed sets and fixed-count streams") {
  const auto profiles = sim::make_profiles(20, 1);
  sim::ScenarioConfig cnp;
  cnp.scenario = sim::Scenario::cnp_velocity;
  const auto seeds = sim::seed_set(profiles, cnp, 256, 3);
  CHECK(seeds.size() == 256);
  for (const auto& t : seeds) CHECK(t.label == "cnp");

  sim::ScenarioConfig ato;
  ato.scenario = sim::Scenario::ato;
  const auto s = sim::generate_with_counts(profiles, ato, 100, 1000, 4);
  const auto counts = sim::label_counts(s);
  CHECK(counts.at("ato") == 100);
  CHECK(counts.at(codec::kLegitimate) == 1000);
}

TEST_CASE("evaluation baselines") {
  const auto stream = sim::generate_stream(sim::make_profiles(20, 1), sim::default_scenarios(0.0017), 20000, 21);
  const auto labels = eval::labels_of(stream);
  std::vector<eval::ScoredRecord> approve_all, oracle;
  for (const auto& t : stream) {
    approve_all.push_back({t.id, 0.0, false});
    oracle.push_back({t.id, t.is_fraud() ? 1.0 : 0.0, t.is_fraud()});
  }
  const auto none = eval::evaluate(approve_all, labels);
  CHECK(none.recall == 0.0);
  CHECK(none.fpr == 0.0);
  const auto perfect = eval::evaluate(oracle, labels);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.auroc == 1.0);

  const std::vector<double> pos{3.0, 2.0}, neg{1.0, 2.0};
  CHECK(eval::auroc(pos, neg) == 0.875);

  std::vector<eval::ScoredRecord> dup{{stream[0].id, 0.0, false}, {stream[0].id, 0.0, false}};
  CHECK_THROWS_AS(eval::evaluate(dup, labels), DataError);
}

TEST_CASE("oracle reviewer") {
  const auto stream = sim::generate_stream(sim::make_profiles(5, 1), sim::default_scenarios(0.02), 2000, 31);
  sim::OracleReviewer exact(stream);
  sim::OracleReviewer wrong(stream, 1.0, 3);
  for (const auto& t : stream) {
    CHECK(exact.confirms_fraud(t.id) == t.is_fraud());
    CHECK(wrong.confirms_fraud(t.id) != t.is_fraud());
  }
  CHECK_THROWS_AS(exact.confirms_fraud("nope"), NotFoundError);
}
