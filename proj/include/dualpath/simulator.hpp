#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualpath/codec.hpp"

namespace dualpath::sim {

using codec::Transaction;

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kSalamiCeiling = 0.50;
inline constexpr double kDefaultPrevalence = 0.0017;
/// Context value for an account's first transaction, which has no predecessor.
inline constexpr double kFirstTimeDelta = 86400.0;

double great_circle_km(double lat1, double lon1, double lat2, double lon2);
/// Point `km` away from (lat, lon) along `bearing_rad`.
std::pair<double, double> displace(double lat, double lon, double km, double bearing_rad);

struct LegitimateProfile {
  std::int64_t account = 0;
  double amount_mu = 3.5;
  double amount_sigma = 0.7;
  double rate_per_day = 5.0;
  std::array<double, codec::banking::kMccCount> mcc_probs{};
  std::array<double, 3> channel_probs{0.6, 0.3, 0.1};
  std::array<double, 3> device_probs{0.85, 0.14, 0.01};
  double home_lat = 0.0;
  double home_lon = 0.0;
  double local_km = 8.0;
  double travel_prob = 0.03;
  double travel_median_km = 800.0;

  /// Throws ContractError on sigma <= 0, rate <= 0 or an MCC distribution
  /// that does not sum to 1.
  void validate() const;
  nlohmann::json to_json() const;
  static LegitimateProfile from_json(const nlohmann::json& j);
};

std::vector<LegitimateProfile> make_profiles(std::size_t accounts, std::uint64_t seed);

enum class Scenario { salami, cnp_velocity, ato };
std::string scenario_tag(Scenario s);
Scenario scenario_from_tag(const std::string& tag);

struct SalamiParams {
  double min_amount = 0.05;
  double max_amount = 0.45;
  std::size_t burst_size = 20;
  double window_s = 60.0;
};

struct CnpParams {
  std::size_t mcc_spread = 12;
  std::size_t geo_spread = 5;
  double window_s = 600.0;
  std::size_t burst_size = 15;
  double min_distance_km = 1500.0;
};

struct AtoParams {
  int device = codec::banking::unseen;
  double geo_jump_km = 8000.0;
  std::size_t burst_size = 6;
  /// Session length; transactions are spread uniformly across it.
  double span_s = 6.0 * 3600.0;
};

struct ScenarioConfig {
  Scenario scenario = Scenario::salami;
  double prevalence = kDefaultPrevalence / 3.0;
  SalamiParams salami;
  CnpParams cnp;
  AtoParams ato;

  void validate() const;
  nlohmann::json to_json() const;
  static ScenarioConfig from_json(const nlohmann::json& j);
};

/// The three scenarios sharing `total_prevalence` equally.
std::vector<ScenarioConfig> default_scenarios(double total_prevalence = kDefaultPrevalence);

/// Raw stream under construction: transactions carry only their direct
/// fields until `finalize` fills the per-account context fields.
struct Draft {
  std::vector<LegitimateProfile> profiles;
  std::vector<Transaction> transactions;
  double span_s = 0.0;
  std::uint64_t seed = 0;
};

Draft legitimate_draft(const std::vector<LegitimateProfile>& profiles, std::size_t count, std::uint64_t seed);

/// Each inject_* appends one burst on `account` starting at `start_s`.
void inject_salami(Draft& d, std::int64_t account, double start_s, const SalamiParams& p, std::mt19937_64& rng);
void inject_cnp_velocity(Draft& d, std::int64_t account, double start_s, const CnpParams& p, std::mt19937_64& rng);
void inject_ato(Draft& d, std::int64_t account, double start_s, const AtoParams& p, std::mt19937_64& rng);

/// Sorts by time, fills time_delta and home_distance per account and assigns
/// ids "<prefix>-<index>".
std::vector<Transaction> finalize(Draft d, const std::string& id_prefix);

/// Legitimate traffic interleaved with injected bursts. The fraud count per
/// scenario is Binomial(length, prevalence).
std::vector<Transaction> generate_stream(const std::vector<LegitimateProfile>& profiles,
                                         const std::vector<ScenarioConfig>& scenarios, std::size_t length,
                                         std::uint64_t seed);

/// Stream holding exactly `fraud_count` transactions of one scenario plus
/// `legit_count` legitimate ones.
std::vector<Transaction> generate_with_counts(const std::vector<LegitimateProfile>& profiles,
                                              const ScenarioConfig& scenario, std::size_t fraud_count,
                                              std::size_t legit_count, std::uint64_t seed);

/// Fraud-only transactions of one scenario for GAN cold start.
std::vector<Transaction> seed_set(const std::vector<LegitimateProfile>& profiles, const ScenarioConfig& scenario,
                                  std::size_t count, std::uint64_t seed);

std::vector<Transaction> only_legitimate(const std::vector<Transaction>& stream);
std::map<std::string, std::size_t> label_counts(const std::vector<Transaction>& stream);

/// Resolves reviews from ground truth. With `error_rate` > 0 a verdict is
/// flipped with that probability.
class OracleReviewer {
 public:
  OracleReviewer(std::map<std::string, std::string> labels, double error_rate = 0.0, std::uint64_t seed = 0);
  explicit OracleReviewer(const std::vector<Transaction>& stream, double error_rate = 0.0, std::uint64_t seed = 0);
  /// True when the reviewer confirms fraud. Throws NotFoundError for unknown ids.
  bool confirms_fraud(const std::string& id);
  const std::string& label(const std::string& id) const;

 private:
  std::map<std::string, std::string> labels_;
  double error_rate_;
  std::mt19937_64 rng_;
};

}  // namespace dualpath::sim
