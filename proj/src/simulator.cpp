#include "dualpath/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "dualpath/errors.hpp"

namespace dualpath::sim {

namespace {

using nlohmann::json;
namespace bk = codec::banking;

constexpr double kDeg = std::numbers::pi / 180.0;

double wrap_lon(double lon) {
  while (lon > 180.0) lon -= 360.0;
  while (lon < -180.0) lon += 360.0;
  return lon;
}

const LegitimateProfile& profile_of(const Draft& d, std::int64_t account) {
  for (const auto& p : d.profiles) {
    if (p.account == account) return p;
  }
  throw ContractError("no profile for account " + std::to_string(account));
}

template <std::size_t N>
int draw(const std::array<double, N>& probs, std::mt19937_64& rng) {
  std::discrete_distribution<int> dist(probs.begin(), probs.end());
  return dist(rng);
}

Transaction blank(std::int64_t account, double t) {
  Transaction tx;
  tx.account = account;
  tx.timestamp = t;
  tx.continuous.assign(5, 0.0);
  tx.categorical.assign(3, 0);
  return tx;
}

double round_cents(double amount) { return std::round(amount * 100.0) / 100.0; }

std::vector<double> sorted_offsets(std::size_t n, double window, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, window);
  std::vector<double> out(n);
  for (auto& v : out) v = u(rng);
  std::sort(out.begin(), out.end());
  return out;
}

void place_near(Transaction& tx, double lat, double lon, double km, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> bearing(0.0, 2.0 * std::numbers::pi);
  std::exponential_distribution<double> dist(1.0 / km);
  const auto [la, lo] = displace(lat, lon, dist(rng), bearing(rng));
  tx.continuous[bk::kLat] = la;
  tx.continuous[bk::kLon] = lo;
}

std::size_t burst_size_of(const ScenarioConfig& c) {
  switch (c.scenario) {
    case Scenario::salami: return c.salami.burst_size;
    case Scenario::cnp_velocity: return c.cnp.burst_size;
    case Scenario::ato: return c.ato.burst_size;
  }
  return 1;
}

// Splits `count` fraud transactions into bursts of roughly the configured
// size and injects them at random accounts and times.
void inject_count(Draft& d, const ScenarioConfig& c, std::size_t count, std::mt19937_64& rng) {
  if (count == 0) return;
  const std::size_t target = std::max<std::size_t>(1, burst_size_of(c));
  const std::size_t bursts =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(count) / target)));
  std::uniform_int_distribution<std::size_t> pick(0, d.profiles.size() - 1);
  std::uniform_real_distribution<double> when(0.02 * d.span_s, 0.98 * d.span_s);
  for (std::size_t b = 0; b < bursts; ++b) {
    const std::size_t size = count / bursts + (b < count % bursts ? 1 : 0);
    const auto account = d.profiles[pick(rng)].account;
    const double start = when(rng);
    switch (c.scenario) {
      case Scenario::salami: {
        auto p = c.salami;
        p.burst_size = size;
        inject_salami(d, account, start, p, rng);
        break;
      }
      case Scenario::cnp_velocity: {
        auto p = c.cnp;
        p.burst_size = size;
        p.mcc_spread = std::min(p.mcc_spread, size);
        p.geo_spread = std::min(p.geo_spread, size);
        inject_cnp_velocity(d, account, start, p, rng);
        break;
      }
      case Scenario::ato: {
        auto p = c.ato;
        p.burst_size = size;
        inject_ato(d, account, start, p, rng);
        break;
      }
    }
  }
}

}  // namespace

double great_circle_km(double lat1, double lon1, double lat2, double lon2) {
  const double p1 = lat1 * kDeg, p2 = lat2 * kDeg;
  const double dp = (lat2 - lat1) * kDeg, dl = (lon2 - lon1) * kDeg;
  const double a = std::sin(dp / 2) * std::sin(dp / 2) + std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

std::pair<double, double> displace(double lat, double lon, double km, double bearing_rad) {
  const double d = km / kEarthRadiusKm;
  const double p1 = lat * kDeg, l1 = lon * kDeg;
  const double p2 = std::asin(std::sin(p1) * std::cos(d) + std::cos(p1) * std::sin(d) * std::cos(bearing_rad));
  const double l2 =
      l1 + std::atan2(std::sin(bearing_rad) * std::sin(d) * std::cos(p1), std::cos(d) - std::sin(p1) * std::sin(p2));
  return {p2 / kDeg, wrap_lon(l2 / kDeg)};
}

void LegitimateProfile::validate() const {
  if (!(amount_sigma > 0.0)) throw ContractError("profile " + std::to_string(account) + ": amount sigma must be > 0");
  if (!(rate_per_day > 0.0)) throw ContractError("profile " + std::to_string(account) + ": rate must be > 0");
  const double s = std::accumulate(mcc_probs.begin(), mcc_probs.end(), 0.0);
  if (std::abs(s - 1.0) > 1e-9) throw ContractError("profile " + std::to_string(account) + ": MCC probabilities sum to " + std::to_string(s));
  for (double p : mcc_probs) {
    if (p < 0.0) throw ContractError("profile " + std::to_string(account) + ": negative MCC probability");
  }
}

json LegitimateProfile::to_json() const {
  return {{"account", account},       {"amount_mu", amount_mu},   {"amount_sigma", amount_sigma},
          {"rate_per_day", rate_per_day}, {"mcc_probs", mcc_probs}, {"channel_probs", channel_probs},
          {"device_probs", device_probs}, {"home_lat", home_lat},   {"home_lon", home_lon},
          {"local_km", local_km},     {"travel_prob", travel_prob}, {"travel_median_km", travel_median_km}};
}

LegitimateProfile LegitimateProfile::from_json(const json& j) {
  LegitimateProfile p;
  try {
    p.account = j.at("account").get<std::int64_t>();
    p.amount_mu = j.at("amount_mu").get<double>();
    p.amount_sigma = j.at("amount_sigma").get<double>();
    p.rate_per_day = j.at("rate_per_day").get<double>();
    p.mcc_probs = j.at("mcc_probs").get<std::array<double, bk::kMccCount>>();
    p.channel_probs = j.at("channel_probs").get<std::array<double, 3>>();
    p.device_probs = j.at("device_probs").get<std::array<double, 3>>();
    p.home_lat = j.at("home_lat").get<double>();
    p.home_lon = j.at("home_lon").get<double>();
    p.local_km = j.value("local_km", p.local_km);
    p.travel_prob = j.value("travel_prob", p.travel_prob);
    p.travel_median_km = j.value("travel_median_km", p.travel_median_km);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed profile: ") + e.what());
  }
  p.validate();
  return p;
}

std::vector<LegitimateProfile> make_profiles(std::size_t accounts, std::uint64_t seed) {
  if (accounts == 0) throw ContractError("make_profiles: need at least one account");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::gamma_distribution<double> gamma(2.0, 1.0);
  std::vector<LegitimateProfile> out;
  for (std::size_t a = 0; a < accounts; ++a) {
    LegitimateProfile p;
    p.account = static_cast<std::int64_t>(a);
    p.amount_mu = std::log(20.0) + u(rng) * (std::log(90.0) - std::log(20.0));
    p.amount_sigma = 0.5 + 0.35 * u(rng);
    p.rate_per_day = 2.0 + 6.0 * u(rng);
    std::vector<int> mccs(bk::kMccCount);
    std::iota(mccs.begin(), mccs.end(), 0);
    std::shuffle(mccs.begin(), mccs.end(), rng);
    constexpr std::size_t kFavourites = 4;
    constexpr double kRest = 0.03;
    std::array<double, kFavourites> w{};
    for (auto& v : w) v = gamma(rng);
    const double ws = std::accumulate(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < bk::kMccCount; ++i) {
      p.mcc_probs[static_cast<std::size_t>(mccs[i])] =
          i < kFavourites ? (1.0 - kRest) * w[i] / ws : kRest / static_cast<double>(bk::kMccCount - kFavourites);
    }
    const double pos = 0.45 + 0.2 * u(rng);
    const double online = 0.2 + 0.15 * u(rng);
    p.channel_probs = {pos, online, std::max(0.0, 1.0 - pos - online)};
    p.home_lat = 25.0 + 30.0 * u(rng);
    p.home_lon = -120.0 + 140.0 * u(rng);
    out.push_back(p);
  }
  return out;
}

std::string scenario_tag(Scenario s) {
  switch (s) {
    case Scenario::salami: return "salami";
    case Scenario::cnp_velocity: return "cnp";
    case Scenario::ato: return "ato";
  }
  return "unknown";
}

Scenario scenario_from_tag(const std::string& tag) {
  if (tag == "salami") return Scenario::salami;
  if (tag == "cnp") return Scenario::cnp_velocity;
  if (tag == "ato") return Scenario::ato;
  throw DataError("unknown scenario '" + tag + "' (expected salami, cnp or ato)");
}

void ScenarioConfig::validate() const {
  if (!(prevalence > 0.0 && prevalence <= 0.05)) {
    throw ContractError("scenario " + scenario_tag(scenario) + ": prevalence must lie in (0, 0.05]");
  }
  switch (scenario) {
    case Scenario::salami:
      if (salami.max_amount >= kSalamiCeiling) {
        throw ContractError("salami amounts must stay below 0.50 currency units");
      }
      if (!(salami.min_amount > 0.0 && salami.min_amount <= salami.max_amount)) {
        throw ContractError("salami amount range is empty");
      }
      if (!(salami.window_s > 0.0)) throw ContractError("salami window must be positive");
      break;
    case Scenario::cnp_velocity:
      if (cnp.mcc_spread > bk::kMccCount) {
        throw ContractError("cnp mcc-spread " + std::to_string(cnp.mcc_spread) + " exceeds the MCC cardinality " +
                            std::to_string(bk::kMccCount));
      }
      if (cnp.mcc_spread <= 1 && cnp.geo_spread <= 1) {
        throw ContractError("cnp with mcc-spread and geo-spread of 1 is not a velocity scenario");
      }
      if (cnp.burst_size < std::max(cnp.mcc_spread, cnp.geo_spread)) {
        throw ContractError("cnp burst size must cover both spreads");
      }
      if (!(cnp.window_s > 0.0)) throw ContractError("cnp window must be positive");
      break;
    case Scenario::ato:
      if (!(ato.geo_jump_km > 0.0)) throw ContractError("ato geo-jump must be positive");
      if (ato.device < 0 || ato.device > 2) throw ContractError("ato device index outside [0,3)");
      if (!(ato.span_s > 0.0)) throw ContractError("ato span must be positive");
      break;
  }
}

json ScenarioConfig::to_json() const {
  json j{{"scenario", scenario_tag(scenario)}, {"prevalence", prevalence}};
  switch (scenario) {
    case Scenario::salami:
      j["params"] = {{"min_amount", salami.min_amount},
                     {"max_amount", salami.max_amount},
                     {"burst_size", salami.burst_size},
                     {"window_s", salami.window_s}};
      break;
    case Scenario::cnp_velocity:
      j["params"] = {{"mcc_spread", cnp.mcc_spread},
                     {"geo_spread", cnp.geo_spread},
                     {"window_s", cnp.window_s},
                     {"burst_size", cnp.burst_size},
                     {"min_distance_km", cnp.min_distance_km}};
      break;
    case Scenario::ato:
      j["params"] = {{"device", ato.device},
                     {"geo_jump_km", ato.geo_jump_km},
                     {"burst_size", ato.burst_size},
                     {"span_s", ato.span_s}};
      break;
  }
  return j;
}

ScenarioConfig ScenarioConfig::from_json(const json& j) {
  ScenarioConfig c;
  try {
    c.scenario = scenario_from_tag(j.at("scenario").get<std::string>());
    c.prevalence = j.at("prevalence").get<double>();
    const json p = j.value("params", json::object());
    switch (c.scenario) {
      case Scenario::salami:
        c.salami.min_amount = p.value("min_amount", c.salami.min_amount);
        c.salami.max_amount = p.value("max_amount", c.salami.max_amount);
        c.salami.burst_size = p.value("burst_size", c.salami.burst_size);
        c.salami.window_s = p.value("window_s", c.salami.window_s);
        break;
      case Scenario::cnp_velocity:
        c.cnp.mcc_spread = p.value("mcc_spread", c.cnp.mcc_spread);
        c.cnp.geo_spread = p.value("geo_spread", c.cnp.geo_spread);
        c.cnp.window_s = p.value("window_s", c.cnp.window_s);
        c.cnp.burst_size = p.value("burst_size", c.cnp.burst_size);
        c.cnp.min_distance_km = p.value("min_distance_km", c.cnp.min_distance_km);
        break;
      case Scenario::ato:
        c.ato.device = p.value("device", c.ato.device);
        c.ato.geo_jump_km = p.value("geo_jump_km", c.ato.geo_jump_km);
        c.ato.burst_size = p.value("burst_size", c.ato.burst_size);
        c.ato.span_s = p.value("span_s", c.ato.span_s);
        break;
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed scenario config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<ScenarioConfig> default_scenarios(double total_prevalence) {
  std::vector<ScenarioConfig> out;
  for (auto s : {Scenario::salami, Scenario::cnp_velocity, Scenario::ato}) {
    ScenarioConfig c;
    c.scenario = s;
    c.prevalence = total_prevalence / 3.0;
    out.push_back(c);
  }
  return out;
}

Draft legitimate_draft(const std::vector<LegitimateProfile>& profiles, std::size_t count, std::uint64_t seed) {
  if (profiles.empty()) throw ContractError("generate: need at least one profile");
  for (const auto& p : profiles) p.validate();
  Draft d;
  d.profiles = profiles;
  d.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<double> rates;
  for (const auto& p : profiles) rates.push_back(p.rate_per_day);
  const double total_rate = std::accumulate(rates.begin(), rates.end(), 0.0) / 86400.0;
  std::discrete_distribution<std::size_t> who(rates.begin(), rates.end());
  std::exponential_distribution<double> gap(total_rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> bearing(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> normal;
  d.transactions.reserve(count);
  double t = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    t += gap(rng);
    const auto& p = profiles[who(rng)];
    Transaction tx = blank(p.account, t);
    tx.continuous[bk::kAmount] = round_cents(std::exp(p.amount_mu + p.amount_sigma * normal(rng)));
    tx.categorical[bk::kMcc] = draw(p.mcc_probs, rng);
    tx.categorical[bk::kChannel] = draw(p.channel_probs, rng);
    tx.categorical[bk::kDevice] = draw(p.device_probs, rng);
    if (u(rng) < p.travel_prob) {
      const double km = p.travel_median_km * std::exp(0.6 * normal(rng));
      const auto [lat, lon] = displace(p.home_lat, p.home_lon, km, bearing(rng));
      place_near(tx, lat, lon, p.local_km, rng);
    } else {
      place_near(tx, p.home_lat, p.home_lon, p.local_km, rng);
    }
    d.transactions.push_back(std::move(tx));
  }
  d.span_s = std::max(t, 1.0);
  return d;
}

void inject_salami(Draft& d, std::int64_t account, double start_s, const SalamiParams& p, std::mt19937_64& rng) {
  if (p.max_amount >= kSalamiCeiling) throw ContractError("salami amounts must stay below 0.50 currency units");
  if (p.burst_size == 0) return;
  const auto& prof = profile_of(d, account);
  std::uniform_real_distribution<double> amount(p.min_amount, p.max_amount);
  const int mcc = draw(prof.mcc_probs, rng);
  for (double off : sorted_offsets(p.burst_size, p.window_s, rng)) {
    Transaction tx = blank(account, start_s + off);
    tx.continuous[bk::kAmount] = std::min(p.max_amount, round_cents(amount(rng)));
    tx.categorical[bk::kMcc] = mcc;
    tx.categorical[bk::kChannel] = bk::online;
    tx.categorical[bk::kDevice] = draw(prof.device_probs, rng);
    place_near(tx, prof.home_lat, prof.home_lon, prof.local_km, rng);
    tx.label = scenario_tag(Scenario::salami);
    d.transactions.push_back(std::move(tx));
  }
}

void inject_cnp_velocity(Draft& d, std::int64_t account, double start_s, const CnpParams& p, std::mt19937_64& rng) {
  if (p.mcc_spread > bk::kMccCount) throw ContractError("cnp mcc-spread exceeds the MCC cardinality");
  if (p.burst_size == 0) return;
  if (p.burst_size < std::max(p.mcc_spread, p.geo_spread)) throw ContractError("cnp burst size must cover both spreads");
  const auto& prof = profile_of(d, account);
  std::vector<int> mccs(bk::kMccCount);
  std::iota(mccs.begin(), mccs.end(), 0);
  std::shuffle(mccs.begin(), mccs.end(), rng);
  mccs.resize(std::max<std::size_t>(1, p.mcc_spread));
  std::uniform_real_distribution<double> far(p.min_distance_km, 9000.0);
  std::uniform_real_distribution<double> bearing(0.0, 2.0 * std::numbers::pi);
  std::vector<std::pair<double, double>> regions;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, p.geo_spread); ++r) {
    regions.push_back(displace(prof.home_lat, prof.home_lon, far(rng), bearing(rng)));
  }
  std::normal_distribution<double> normal;
  const auto offsets = sorted_offsets(p.burst_size, p.window_s, rng);
  for (std::size_t i = 0; i < p.burst_size; ++i) {
    Transaction tx = blank(account, start_s + offsets[i]);
    tx.continuous[bk::kAmount] = round_cents(std::exp(prof.amount_mu + 0.5 + prof.amount_sigma * normal(rng)));
    tx.categorical[bk::kMcc] = mccs[i % mccs.size()];
    tx.categorical[bk::kChannel] = bk::online;
    tx.categorical[bk::kDevice] = bk::unseen;
    const auto& region = regions[i % regions.size()];
    place_near(tx, region.first, region.second, 20.0, rng);
    tx.label = scenario_tag(Scenario::cnp_velocity);
    d.transactions.push_back(std::move(tx));
  }
}

void inject_ato(Draft& d, std::int64_t account, double start_s, const AtoParams& p, std::mt19937_64& rng) {
  if (!(p.geo_jump_km > 0.0)) throw ContractError("ato geo-jump must be positive");
  if (p.burst_size == 0) return;
  const auto& prof = profile_of(d, account);
  std::uniform_real_distribution<double> bearing(0.0, 2.0 * std::numbers::pi);
  const auto [lat, lon] = displace(prof.home_lat, prof.home_lon, p.geo_jump_km, bearing(rng));
  std::normal_distribution<double> normal;
  // Amounts stay inside the profile's 1%..99% quantiles.
  constexpr double kZ99 = 2.326;
  for (double off : sorted_offsets(p.burst_size, p.span_s, rng)) {
    Transaction tx = blank(account, start_s + off);
    const double z = std::clamp(normal(rng), -kZ99, kZ99);
    tx.continuous[bk::kAmount] = round_cents(std::exp(prof.amount_mu + prof.amount_sigma * z));
    tx.categorical[bk::kMcc] = draw(prof.mcc_probs, rng);
    tx.categorical[bk::kChannel] = draw(prof.channel_probs, rng);
    tx.categorical[bk::kDevice] = p.device;
    // Stay within a few km of the displaced point so the jump is at least
    // roughly geo_jump_km.
    place_near(tx, lat, lon, 2.0, rng);
    tx.label = scenario_tag(Scenario::ato);
    d.transactions.push_back(std::move(tx));
  }
}

std::vector<Transaction> finalize(Draft d, const std::string& id_prefix) {
  auto& txs = d.transactions;
  std::stable_sort(txs.begin(), txs.end(), [](const Transaction& a, const Transaction& b) { return a.timestamp < b.timestamp; });
  std::map<std::int64_t, double> last;
  std::map<std::int64_t, const LegitimateProfile*> prof;
  for (const auto& p : d.profiles) prof[p.account] = &p;
  char buf[32];
  for (std::size_t i = 0; i < txs.size(); ++i) {
    auto& tx = txs[i];
    const auto it = last.find(tx.account);
    tx.continuous[bk::kTimeDelta] = it == last.end() ? kFirstTimeDelta : tx.timestamp - it->second;
    last[tx.account] = tx.timestamp;
    const auto* p = prof.at(tx.account);
    tx.continuous[bk::kHomeDistance] =
        great_circle_km(tx.continuous[bk::kLat], tx.continuous[bk::kLon], p->home_lat, p->home_lon);
    std::snprintf(buf, sizeof buf, "%06zu", i);
    tx.id = id_prefix + "-" + buf;
  }
  return std::move(txs);
}

std::vector<Transaction> generate_stream(const std::vector<LegitimateProfile>& profiles,
                                         const std::vector<ScenarioConfig>& scenarios, std::size_t length,
                                         std::uint64_t seed) {
  if (length == 0) throw ContractError("generate_stream: length must be positive");
  for (const auto& s : scenarios) s.validate();
  std::mt19937_64 rng(seed ^ 0xa5a5a5a5ULL);
  std::vector<std::size_t> counts;
  std::size_t fraud = 0;
  for (const auto& s : scenarios) {
    std::binomial_distribution<std::size_t> bin(length, s.prevalence);
    counts.push_back(bin(rng));
    fraud += counts.back();
  }
  if (fraud >= length) throw ContractError("generate_stream: fraud count exceeds stream length");
  Draft d = legitimate_draft(profiles, length - fraud, seed);
  for (std::size_t i = 0; i < scenarios.size(); ++i) inject_count(d, scenarios[i], counts[i], rng);
  return finalize(std::move(d), "s" + std::to_string(seed));
}

std::vector<Transaction> generate_with_counts(const std::vector<LegitimateProfile>& profiles,
                                              const ScenarioConfig& scenario, std::size_t fraud_count,
                                              std::size_t legit_count, std::uint64_t seed) {
  scenario.validate();
  if (legit_count == 0) throw ContractError("generate_with_counts: need legitimate background traffic");
  std::mt19937_64 rng(seed ^ 0x5a5a5a5aULL);
  Draft d = legitimate_draft(profiles, legit_count, seed);
  inject_count(d, scenario, fraud_count, rng);
  return finalize(std::move(d), "s" + std::to_string(seed));
}

std::vector<Transaction> seed_set(const std::vector<LegitimateProfile>& profiles, const ScenarioConfig& scenario,
                                  std::size_t count, std::uint64_t seed) {
  auto stream = generate_with_counts(profiles, scenario, count, std::max<std::size_t>(1000, 20 * count), seed);
  std::vector<Transaction> out;
  for (auto& t : stream) {
    if (t.is_fraud()) out.push_back(std::move(t));
  }
  return out;
}

std::vector<Transaction> only_legitimate(const std::vector<Transaction>& stream) {
  std::vector<Transaction> out;
  for (const auto& t : stream) {
    if (!t.is_fraud()) out.push_back(t);
  }
  return out;
}

std::map<std::string, std::size_t> label_counts(const std::vector<Transaction>& stream) {
  std::map<std::string, std::size_t> out;
  for (const auto& t : stream) ++out[t.label];
  return out;
}

OracleReviewer::OracleReviewer(std::map<std::string, std::string> labels, double error_rate, std::uint64_t seed)
    : labels_(std::move(labels)), error_rate_(error_rate), rng_(seed) {
  if (error_rate_ < 0.0 || error_rate_ > 1.0) throw ContractError("reviewer error rate must lie in [0, 1]");
}

OracleReviewer::OracleReviewer(const std::vector<Transaction>& stream, double error_rate, std::uint64_t seed)
    : OracleReviewer(
          [&] {
            std::map<std::string, std::string> m;
            for (const auto& t : stream) m[t.id] = t.label;
            return m;
          }(),
          error_rate, seed) {}

const std::string& OracleReviewer::label(const std::string& id) const {
  const auto it = labels_.find(id);
  if (it == labels_.end()) throw NotFoundError("reviewer has no ground truth for transaction " + id);
  return it->second;
}

bool OracleReviewer::confirms_fraud(const std::string& id) {
  const bool fraud = label(id) != codec::kLegitimate;
  if (error_rate_ <= 0.0) return fraud;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng_) < error_rate_ ? !fraud : fraud;
}

}  // namespace dualpath::sim
