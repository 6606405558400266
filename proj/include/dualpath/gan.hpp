#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualpath/codec.hpp"
#include "dualpath/gumbel.hpp"
#include "dualpath/nn.hpp"

namespace dualpath::gan {

using ad::Tensor;
using ad::Var;

using CriticFn = std::function<Var(const Var&)>;

inline const std::string kSyntheticFraud = "synthetic-fraud";
inline constexpr std::size_t kMinRealExamples = 64;

struct GanConfig {
  std::size_t noise_dim = 16;
  std::vector<std::size_t> hidden{64, 64};
  double lambda = 10.0;
  std::size_t n_critic = 5;
  std::size_t batch_size = 64;
  std::size_t generator_steps = 1000;
  /// Straight-through heads during training.
  bool hard = true;
  codec::AnnealSchedule anneal;
  nn::AdamConfig adam = nn::AdamConfig::adversarial();
  std::uint64_t seed = 7;

  nlohmann::json to_json() const;
  static GanConfig from_json(const nlohmann::json& j);
};

/// Generator G: noise -> feature vector, and critic D: feature vector ->
/// unbounded scalar. Each network has its own ParameterSet ("gen." and
/// "critic." prefixes) so the alternating optimisers touch only their own
/// weights.
class GanModel {
 public:
  GanModel(std::shared_ptr<const codec::Codec> codec, GanConfig config, nn::ParameterSet generator,
           nn::ParameterSet critic);
  static GanModel create(std::shared_ptr<const codec::Codec> codec, GanConfig config);

  /// Generator output in encoded space. `gumbel_noise` holds one [m, k] tensor
  /// per categorical field.
  Var generate(const Var& noise, std::span<const Tensor> gumbel_noise, const codec::GumbelConfig& gumbel,
               const nn::Bindings& generator) const;
  Var critic(const Var& x, const nn::Bindings& critic) const;
  /// Critic as a function of its input, parameters fixed to `critic`.
  CriticFn critic_fn(const nn::Bindings& critic) const;

  /// Both networks in one set for checkpointing; version is the generator's.
  nn::ParameterSet combined() const;
  static GanModel from_combined(std::shared_ptr<const codec::Codec> codec, GanConfig config,
                                const nn::ParameterSet& combined);

  const codec::Codec& codec() const { return *codec_; }
  std::shared_ptr<const codec::Codec> codec_ptr() const { return codec_; }
  const GanConfig& config() const { return config_; }
  GanConfig& config() { return config_; }
  const nn::ParameterSet& generator_params() const { return generator_params_; }
  nn::ParameterSet& generator_params() { return generator_params_; }
  const nn::ParameterSet& critic_params() const { return critic_params_; }
  nn::ParameterSet& critic_params() { return critic_params_; }
  std::uint64_t version() const { return generator_params_.version(); }
  std::size_t feature_dim() const { return codec_->layout().dim; }

 private:
  std::shared_ptr<const codec::Codec> codec_;
  GanConfig config_;
  nn::ParameterSet generator_params_;
  nn::ParameterSet critic_params_;
  nn::Mlp generator_;
  nn::Mlp critic_;
};

struct CriticLossTerms {
  Var loss;
  double fake_mean = 0.0;
  double real_mean = 0.0;
  double penalty = 0.0;
  std::vector<double> gradient_norms;
};

/// x_hat = eps * real + (1 - eps) * fake, eps one value per row ([m,1]).
Tensor interpolate(const Tensor& real, const Tensor& fake, const Tensor& eps);

/// E[D(fake)] - E[D(real)] + lambda * E[(||grad D(x_hat)|| - 1)^2].
CriticLossTerms critic_loss(const CriticFn& critic, const Tensor& real, const Tensor& fake, const Tensor& eps,
                            double lambda);

/// -E[D(G(z))].
Var generator_loss(const CriticFn& critic, const Var& generated);

struct GradientNormStats {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t count = 0;

  nlohmann::json to_json() const;
};

struct SynthesisReport {
  std::size_t sample_count = 0;
  std::size_t critic_steps = 0;
  std::size_t generator_steps = 0;
  /// E[D(real)] - E[D(fake)] after each generator step.
  std::vector<double> wasserstein_trace;
  /// Interpolate gradient norms over the final 10% of critic steps.
  GradientNormStats training_gradient_norms;
  /// Fresh measurement on the trained model.
  GradientNormStats final_gradient_norms;
  /// Per categorical field, the share of each category among `sample_count`
  /// synthesized transactions.
  std::map<std::string, std::vector<double>> categorical_marginals;
  std::map<std::string, double> marginal_entropy;
  /// Fraction of categories present in the real set that the generator emits.
  double mode_coverage = 0.0;

  nlohmann::json to_json() const;
};

struct GanResult {
  GanModel model;
  SynthesisReport report;
};

/// Trains (or continues training `initial`) on encoded real fraud. Throws
/// ColdStartError below kMinRealExamples.
GanResult train_gan(std::shared_ptr<const codec::Codec> codec, std::span<const codec::FeatureVector> real,
                    const GanConfig& config, const GanModel* initial = nullptr,
                    std::size_t report_samples = 10000);

/// Hard one-hot samples, decoded into schema-valid transactions tagged
/// synthetic-fraud.
std::vector<codec::Transaction> synthesize(const GanModel& model, std::size_t count, std::uint64_t seed);
/// Encoded form of the same samples.
std::vector<codec::FeatureVector> synthesize_encoded(const GanModel& model, std::size_t count, std::uint64_t seed);

/// Gradient norm statistics at interpolates between `real` and fresh fakes.
GradientNormStats measure_gradient_norms(const GanModel& model, std::span<const codec::FeatureVector> real,
                                         std::size_t count, std::uint64_t seed);

void fill_marginals(SynthesisReport& report, const GanModel& model, std::span<const codec::FeatureVector> real,
                    std::span<const codec::Transaction> samples);

}  // namespace dualpath::gan
