#include "dualpath/gumbel.hpp"

#include <algorithm>
#include <cmath>

#include "dualpath/errors.hpp"

namespace dualpath::codec {

namespace {

void check_config(const GumbelConfig& config) {
  if (!(config.temperature > 0.0) || !std::isfinite(config.temperature)) {
    throw ContractError("gumbel_softmax: temperature must be positive, got " + std::to_string(config.temperature));
  }
}

}  // namespace

double anneal_temperature(std::int64_t step, const AnnealSchedule& schedule) {
  if (step < 0) throw ContractError("anneal_temperature: step must be >= 0");
  return std::max(schedule.minimum, schedule.initial * std::exp(-schedule.rate * static_cast<double>(step)));
}

double uniform_open(std::mt19937_64& rng) {
  // (n + 0.5) / 2^53 for n in [0, 2^53) never reaches 0 or 1.
  const std::uint64_t n = rng() >> 11;
  return (static_cast<double>(n) + 0.5) * 0x1.0p-53;
}

std::vector<double> sample_gumbel(std::size_t k, std::mt19937_64& rng) {
  if (k == 0) throw ContractError("sample_gumbel: k must be >= 1");
  std::vector<double> g(k);
  for (auto& v : g) v = -std::log(-std::log(uniform_open(rng)));
  return g;
}

std::vector<double> sample_gumbel(std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_gumbel(k, rng);
}

std::vector<double> gumbel_softmax(std::span<const double> logits, const GumbelConfig& config,
                                   std::span<const double> noise) {
  check_config(config);
  if (logits.size() < 2) throw ContractError("gumbel_softmax: need at least two categories");
  if (noise.size() != logits.size()) throw ShapeError("gumbel_softmax: noise length does not match logits");
  std::vector<double> y(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw ContractError("gumbel_softmax: non-finite logit at index " + std::to_string(i));
    y[i] = (logits[i] + noise[i]) / config.temperature;
  }
  const double mx = *std::max_element(y.begin(), y.end());
  double z = 0.0;
  for (auto& v : y) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : y) v /= z;
  if (config.hard) {
    const auto best = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
    std::fill(y.begin(), y.end(), 0.0);
    y[best] = 1.0;
  }
  return y;
}

ad::Var gumbel_softmax(const ad::Var& logits, const ad::Tensor& noise, const GumbelConfig& config) {
  check_config(config);
  if (logits.value().cols() < 2) throw ContractError("gumbel_softmax: need at least two categories");
  if (noise.shape() != logits.shape()) throw ShapeError("gumbel_softmax: noise shape does not match logits");
  if (!logits.value().all_finite()) throw ContractError("gumbel_softmax: non-finite logit");
  const ad::Var soft = ad::softmax(ad::scale(ad::add(logits, ad::constant(noise)), 1.0 / config.temperature));
  if (!config.hard) return soft;
  // y_hard = y_soft + stop_gradient(one_hot - y_soft)
  const auto& y = soft.value();
  ad::Tensor correction(y.shape());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < y.cols(); ++c)
      if (y.at(r, c) > y.at(r, best)) best = c;
    for (std::size_t c = 0; c < y.cols(); ++c) correction.at(r, c) = (c == best ? 1.0 : 0.0) - y.at(r, c);
  }
  return ad::add(soft, ad::constant(std::move(correction)));
}

}  // namespace dualpath::codec
