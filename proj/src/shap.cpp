#include "dualpath/shap.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "dualpath/errors.hpp"

namespace dualpath::shap {

namespace {

using nlohmann::json;

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

thread_local std::uint64_t tl_explanations = 0;

std::vector<bool> mask_bits(std::uint32_t mask, std::size_t n) {
  std::vector<bool> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = (mask >> i) & 1u;
  return s;
}

}  // namespace

double Explanation::efficiency_gap() const {
  return std::accumulate(phi.begin(), phi.end(), base) - output;
}

json Explanation::to_json() const {
  json j;
  j["transaction_id"] = transaction_id;
  j["method"] = method == Method::exact ? "exact" : "sampled";
  j["base"] = base;
  j["output"] = output;
  j["features"] = json::array();
  for (std::size_t i = 0; i < phi.size(); ++i) j["features"].push_back({{"name", feature_names[i]}, {"phi", phi[i]}});
  if (method == Method::sampled) {
    j["samples"] = samples;
    j["confidence_bound"] = confidence_bound;
  }
  j["compute_ms"] = compute_ms;
  j["model_version"] = model_version;
  return j;
}

Explanation Explanation::from_json(const json& j) {
  try {
    Explanation e;
    e.transaction_id = j.at("transaction_id").get<std::string>();
    const auto m = j.at("method").get<std::string>();
    if (m != "exact" && m != "sampled") throw DataError("unknown explanation method '" + m + "'");
    e.method = m == "exact" ? Method::exact : Method::sampled;
    e.base = j.at("base").get<double>();
    e.output = j.at("output").get<double>();
    for (const auto& f : j.at("features")) {
      e.feature_names.push_back(f.at("name").get<std::string>());
      e.phi.push_back(f.at("phi").get<double>());
    }
    e.samples = j.value("samples", std::size_t{0});
    e.confidence_bound = j.value("confidence_bound", 0.0);
    e.compute_ms = j.value("compute_ms", 0.0);
    e.model_version = j.value("model_version", std::uint64_t{0});
    return e;
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed explanation record: ") + ex.what());
  }
}

std::uint64_t thread_explanation_count() { return tl_explanations; }

Explanation explain_exact(const ValueFunction& v, std::span<const std::string> feature_names) {
  ++tl_explanations;
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = feature_names.size();
  if (n == 0) throw ContractError("explain_exact: no features");
  if (n > kMaxExactFields) {
    throw CostError("explain_exact: " + std::to_string(n) + " fields exceed the exact limit of " +
                    std::to_string(kMaxExactFields) + "; use explain_sampled");
  }
  const std::uint32_t full = (1u << n) - 1u;
  std::vector<double> values(std::size_t{1} << n);
  for (std::uint32_t mask = 0; mask <= full; ++mask) values[mask] = v(mask_bits(mask, n));

  // w(s) = s! (n - s - 1)! / n!
  std::vector<double> weight(n);
  for (std::size_t s = 0; s < n; ++s) {
    double w = 1.0 / static_cast<double>(n);
    // 1 / (n * C(n-1, s))
    double c = 1.0;
    for (std::size_t k = 1; k <= s; ++k) c = c * static_cast<double>(n - 1 - s + k) / static_cast<double>(k);
    weight[s] = w / c;
  }

  Explanation e;
  e.feature_names.assign(feature_names.begin(), feature_names.end());
  e.phi.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bit = 1u << i;
    double acc = 0.0;
    for (std::uint32_t mask = 0; mask <= full; ++mask) {
      if (mask & bit) continue;
      acc += weight[static_cast<std::size_t>(std::popcount(mask))] * (values[mask | bit] - values[mask]);
    }
    e.phi[i] = acc;
  }
  e.base = values[0];
  e.output = values[full];
  e.method = Method::exact;
  e.samples = values.size();
  e.compute_ms = elapsed_ms(start);
  return e;
}

Explanation explain_sampled(const ValueFunction& v, std::span<const std::string> feature_names,
                            std::size_t permutations, std::uint64_t seed) {
  ++tl_explanations;
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = feature_names.size();
  if (n == 0) throw ContractError("explain_sampled: no features");
  if (permutations < 2 * n) {
    throw ContractError("explain_sampled: budget of " + std::to_string(permutations) +
                        " permutations is below 2n = " + std::to_string(2 * n));
  }
  std::mt19937_64 rng(seed);
  const double base = v(std::vector<bool>(n, false));
  const double output = v(std::vector<bool>(n, true));
  std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<bool> present(n);

  auto walk = [&](auto begin, auto end) {
    std::fill(present.begin(), present.end(), false);
    double prev = base;
    std::size_t added = 0;
    for (auto it = begin; it != end; ++it) {
      present[*it] = true;
      const double cur = ++added == n ? output : v(present);
      const double d = cur - prev;
      sum[*it] += d;
      sum_sq[*it] += d * d;
      prev = cur;
    }
  };
  std::size_t done = 0;
  while (done < permutations) {
    std::shuffle(order.begin(), order.end(), rng);
    walk(order.begin(), order.end());
    ++done;
    if (done < permutations) {
      walk(order.rbegin(), order.rend());
      ++done;
    }
  }

  Explanation e;
  e.feature_names.assign(feature_names.begin(), feature_names.end());
  e.phi.resize(n);
  const double count = static_cast<double>(permutations);
  for (std::size_t i = 0; i < n; ++i) {
    e.phi[i] = sum[i] / count;
    const double var = std::max(0.0, sum_sq[i] / count - e.phi[i] * e.phi[i]);
    e.confidence_bound = std::max(e.confidence_bound, 1.96 * std::sqrt(var / count));
  }
  const double residual = (output - base) - std::accumulate(e.phi.begin(), e.phi.end(), 0.0);
  double mass = 0.0;
  for (double p : e.phi) mass += std::abs(p);
  for (auto& p : e.phi) p += mass > 0.0 ? residual * std::abs(p) / mass : residual / static_cast<double>(n);
  e.base = base;
  e.output = output;
  e.method = Method::sampled;
  e.samples = permutations;
  e.compute_ms = elapsed_ms(start);
  return e;
}

std::vector<double> permutation_oracle(const ValueFunction& v, std::size_t n) {
  if (n == 0 || n > 10) throw ContractError("permutation_oracle supports 1..10 fields");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(n, 0.0);
  std::size_t count = 0;
  do {
    std::vector<bool> present(n, false);
    double prev = v(present);
    for (auto i : order) {
      present[i] = true;
      const double cur = v(present);
      phi[i] += cur - prev;
      prev = cur;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (auto& p : phi) p /= static_cast<double>(count);
  return phi;
}

ValueFunction value_function_for_vae(const vae::VaeModel& model, const codec::FeatureVector& x,
                                     std::span<const codec::FeatureVector> background) {
  if (background.empty()) throw ContractError("value function needs a non-empty background set");
  const auto& layout = model.codec().layout();
  if (x.values.size() != layout.dim) throw ContractError("explained vector does not match the model layout");
  for (const auto& b : background) {
    if (b.values.size() != layout.dim) throw ContractError("background vector does not match the model layout");
  }
  std::vector<std::vector<double>> rows;
  rows.reserve(background.size());
  for (const auto& b : background) rows.push_back(b.values);
  return [&model, &layout, xv = x.values, rows = std::move(rows)](const std::vector<bool>& present) {
    if (present.size() != layout.slices.size()) throw ContractError("coalition size does not match field count");
    std::vector<double> z(xv.size());
    double total = 0.0;
    for (const auto& b : rows) {
      for (std::size_t f = 0; f < layout.slices.size(); ++f) {
        const auto& s = layout.slices[f];
        const auto& src = present[f] ? xv : b;
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(s.offset), s.width,
                    z.begin() + static_cast<std::ptrdiff_t>(s.offset));
      }
      total += model.reconstruction_error(std::span<const double>(z));
    }
    return total / static_cast<double>(rows.size());
  };
}

Explanation explain_transaction(const vae::VaeModel& model, const codec::Transaction& t,
                                std::span<const codec::FeatureVector> background, const ExplainConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const auto x = model.codec().encode(t);
  const auto v = value_function_for_vae(model, x, background);
  const auto names = model.codec().schema().field_names();
  Explanation e = names.size() <= kMaxExactFields ? explain_exact(v, names)
                                                  : explain_sampled(v, names, config.permutations, config.seed);
  e.transaction_id = t.id;
  e.model_version = model.version();
  e.compute_ms = elapsed_ms(start);
  return e;
}

}  // namespace dualpath::shap
