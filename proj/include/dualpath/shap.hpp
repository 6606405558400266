#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualpath/codec.hpp"
#include "dualpath/vae.hpp"

namespace dualpath::shap {

/// v(S): `present[i]` is true when field i is taken from the explained
/// transaction.
using ValueFunction = std::function<double(const std::vector<bool>& present)>;

inline constexpr std::size_t kMaxExactFields = 15;
inline constexpr std::size_t kDefaultBackgroundSize = 100;

enum class Method { exact, sampled };

struct Explanation {
  std::string transaction_id;
  std::vector<std::string> feature_names;
  std::vector<double> phi;
  /// v(empty set): mean score over the background.
  double base = 0.0;
  /// v(all fields): the score being explained.
  double output = 0.0;
  Method method = Method::exact;
  std::size_t samples = 0;
  /// Largest per-field 95% half-width before renormalisation (sampled only).
  double confidence_bound = 0.0;
  double compute_ms = 0.0;
  std::uint64_t model_version = 0;

  double efficiency_gap() const;
  nlohmann::json to_json() const;
  static Explanation from_json(const nlohmann::json& j);
};

/// Subset-weight formula over all 2^n coalitions. Throws CostError for
/// n > kMaxExactFields.
Explanation explain_exact(const ValueFunction& v, std::span<const std::string> feature_names);

/// Permutation sampling (antithetic pairs), then the residual against
/// v(all) - v(empty) is spread over fields in proportion to |phi|.
/// `permutations` must be at least 2n.
Explanation explain_sampled(const ValueFunction& v, std::span<const std::string> feature_names,
                            std::size_t permutations, std::uint64_t seed);

/// Number of explain_exact / explain_sampled calls made on the calling
/// thread. Lets callers assert that a code path computed no explanation.
std::uint64_t thread_explanation_count();

/// Average marginal contribution over all n! orderings. Test oracle.
std::vector<double> permutation_oracle(const ValueFunction& v, std::size_t n);

/// v(S) = mean over background rows b of E(x with fields outside S taken
/// from b).
ValueFunction value_function_for_vae(const vae::VaeModel& model, const codec::FeatureVector& x,
                                     std::span<const codec::FeatureVector> background);

struct ExplainConfig {
  std::size_t permutations = 2000;
  std::uint64_t seed = 11;
};

/// Explains E(x) for one transaction: exact up to kMaxExactFields fields,
/// sampled above.
Explanation explain_transaction(const vae::VaeModel& model, const codec::Transaction& t,
                                std::span<const codec::FeatureVector> background, const ExplainConfig& config = {});

}  // namespace dualpath::shap
