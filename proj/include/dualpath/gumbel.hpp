#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dualpath/autodiff.hpp"

namespace dualpath::codec {

struct GumbelConfig {
  double temperature = 1.0;
  /// Straight-through: one-hot forward value, soft gradient.
  bool hard = false;
};

struct AnnealSchedule {
  double initial = 1.0;
  double rate = 1e-4;
  double minimum = 0.1;
};

/// max(minimum, initial * exp(-rate * step)).
double anneal_temperature(std::int64_t step, const AnnealSchedule& schedule = {});

/// Uniform draw strictly inside (0, 1), built from the top 53 bits.
double uniform_open(std::mt19937_64& rng);

/// Standard Gumbel(0,1) noise: -log(-log(u)).
std::vector<double> sample_gumbel(std::size_t k, std::mt19937_64& rng);
std::vector<double> sample_gumbel(std::size_t k, std::uint64_t seed);

/// Relaxed categorical sample from logits (log-probabilities up to a constant)
/// and fixed Gumbel noise.
std::vector<double> gumbel_softmax(std::span<const double> logits, const GumbelConfig& config,
                                   std::span<const double> noise);

/// Row-wise differentiable form used by generator heads; `noise` matches the
/// shape of `logits`.
ad::Var gumbel_softmax(const ad::Var& logits, const ad::Tensor& noise, const GumbelConfig& config);

}  // namespace dualpath::codec
