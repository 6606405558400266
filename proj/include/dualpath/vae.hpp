#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualpath/codec.hpp"
#include "dualpath/nn.hpp"

namespace dualpath::vae {

using ad::Tensor;
using ad::Var;

struct VaeArchitecture {
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden{64, 64};

  nlohmann::json to_json() const;
  static VaeArchitecture from_json(const nlohmann::json& j);
};

/// Encoder q(z|x) producing (mu, log sigma^2) and decoder p(x|z) with a
/// linear head for continuous fields and one softmax head per categorical
/// field. The reconstruction of a categorical slice is the softmax-weighted
/// average of that field's embedding rows, so x_hat lives in the same space
/// as the encoded x.
class VaeModel {
 public:
  struct Outputs {
    Var mu;
    Var logvar;
    Var z;
    Var continuous;                // [m, #continuous]
    std::vector<Var> logits;       // one [m, k] per categorical field
    Var reconstruction;            // [m, feature_dim]
  };

  VaeModel(std::shared_ptr<const codec::Codec> codec, VaeArchitecture arch, nn::ParameterSet params);
  static VaeModel create(std::shared_ptr<const codec::Codec> codec, VaeArchitecture arch, std::uint64_t seed);

  /// Graph forward. With `eps` the latent is mu + exp(logvar/2) * eps;
  /// without it the posterior mean is used.
  Outputs forward(const Var& x, const nn::Bindings& p, const Tensor* eps = nullptr) const;

  /// Deterministic reconstruction via the posterior mean. Allocation-free
  /// after the first call on a thread.
  void reconstruct(std::span<const double> x, std::span<double> out) const;
  /// E(x) = ||x - x_hat||^2 over the full encoded vector.
  double reconstruction_error(std::span<const double> x) const;
  double reconstruction_error(const codec::FeatureVector& x) const;

  const codec::Codec& codec() const { return *codec_; }
  std::shared_ptr<const codec::Codec> codec_ptr() const { return codec_; }
  const VaeArchitecture& architecture() const { return arch_; }
  const nn::ParameterSet& params() const { return params_; }
  nn::ParameterSet& params() { return params_; }
  std::uint64_t version() const { return params_.version(); }
  std::size_t input_dim() const { return codec_->layout().dim; }

 private:
  struct DenseRef {
    std::size_t weight = 0;
    std::size_t bias = 0;
  };

  void bind_layers();

  std::shared_ptr<const codec::Codec> codec_;
  VaeArchitecture arch_;
  nn::ParameterSet params_;
  nn::Mlp encoder_;
  nn::Mlp decoder_;
  std::vector<DenseRef> encoder_layers_;
  std::vector<DenseRef> decoder_layers_;
};

/// Closed-form KL(N(mu, sigma^2) || N(0, 1)) for one dimension.
double closed_form_kl(double mu, double sigma);

/// Per-row KL against the standard normal prior, [m, 1].
Var kl_divergence(const Var& mu, const Var& logvar);

struct ElboTerms {
  Var loss;            // mean over the batch of reconstruction + kl
  Var reconstruction;  // mean over the batch
  Var kl;              // mean over the batch
};

/// Reconstruction term: squared error on continuous slices plus
/// cross-entropy of each categorical head against the category whose
/// embedding row the input slice holds.
ElboTerms elbo_terms(const VaeModel& model, const Var& x, const VaeModel::Outputs& out);

/// Negative ELBO of a batch with reparameterisation noise `eps`
/// ([m, latent_dim]). Parameters are bound to `p`.
ElboTerms elbo_loss(const VaeModel& model, const Tensor& batch, const Tensor& eps, const nn::Bindings& p);

/// Rows of feature vectors stacked into a tensor.
Tensor stack(std::span<const codec::FeatureVector> rows);
Tensor stack_rows(std::span<const std::vector<double>> rows);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  nn::AdamConfig adam = nn::AdamConfig::vae();
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainingReport {
  double initial_validation_loss = 0.0;
  std::vector<EpochRecord> epochs;
  bool aborted = false;
  std::string abort_reason;

  nlohmann::json to_json() const;
};

struct TrainResult {
  VaeModel model;
  TrainingReport report;
};

/// Validation negative-ELBO with fixed noise so successive epochs compare.
double validation_loss(const VaeModel& model, std::span<const codec::FeatureVector> validation, std::uint64_t seed);

/// Trains from scratch on legitimate vectors only. Throws TrainingError if the
/// loss goes NaN or stays above 10x its initial value for 3 epochs.
TrainResult train(std::shared_ptr<const codec::Codec> codec, std::span<const codec::FeatureVector> legitimate,
                  std::span<const codec::FeatureVector> validation, const TrainConfig& config,
                  const VaeArchitecture& arch = {});

struct ThresholdConfig {
  double tau = 0.0;
  double quantile = 0.995;
  std::size_t calibration_size = 0;
  std::uint64_t model_version = 0;

  nlohmann::json to_json() const;
  static ThresholdConfig from_json(const nlohmann::json& j);
};

inline constexpr std::size_t kMinCalibrationSize = 1000;

/// Nearest-rank quantile: the ceil(q * n)-th smallest value.
double nearest_rank_quantile(std::vector<double> values, double quantile);

/// tau = nearest-rank quantile of E(x) over a legitimate calibration set.
ThresholdConfig calibrate_threshold(const VaeModel& model, std::span<const codec::FeatureVector> calibration,
                                    double quantile = 0.995);

enum class Verdict { normal, anomalous };

struct ScoreResult {
  std::string transaction_id;
  double reconstruction_error = 0.0;
  double tau = 0.0;
  Verdict verdict = Verdict::normal;
  double latency_us = 0.0;
  std::uint64_t model_version = 0;
};

/// Strict inequality: E(x) > tau is anomalous.
inline Verdict verdict_for(double error, double tau) { return error > tau ? Verdict::anomalous : Verdict::normal; }

ScoreResult score(const VaeModel& model, const ThresholdConfig& threshold, const codec::Transaction& t);

struct FineTuneConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 128;
  /// Hinge margin for synthetic fraud; <= 0 means 2 x the current tau.
  double margin = 0.0;
  double hinge_weight = 1.0;
  /// When false, synthetic fraud only feeds recalibration, not training.
  bool train_on_synthetic = true;
  /// When false, false positives are not added to the legitimate set.
  bool train_on_false_positives = true;
  std::size_t max_legitimate_per_epoch = 8192;
  double quantile = 0.995;
  std::uint64_t seed = 2;
  nn::AdamConfig adam = nn::AdamConfig::vae();
};

struct FineTuneResult {
  VaeModel model;
  ThresholdConfig threshold;
  TrainingReport report;
  double margin = 0.0;
};

/// Continues ELBO training with confirmed false positives folded into the
/// legitimate set and a hinge max(0, m - E(x_syn)) on synthetic fraud, then
/// recalibrates tau on `calibration`.
FineTuneResult fine_tune(const VaeModel& model, const ThresholdConfig& current,
                         std::span<const codec::FeatureVector> legitimate,
                         std::span<const codec::FeatureVector> false_positives,
                         std::span<const codec::FeatureVector> synthetic_fraud,
                         std::span<const codec::FeatureVector> calibration, const FineTuneConfig& config);

}  // namespace dualpath::vae
