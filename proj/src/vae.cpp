#include "dualpath/vae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>
#include <utility>

#include "dualpath/errors.hpp"

namespace dualpath::vae {

namespace {

using nlohmann::json;

std::size_t decoder_output_dim(const codec::TransactionSchema& schema) {
  std::size_t d = schema.continuous.size();
  for (const auto& f : schema.categorical) d += f.cardinality;
  return d;
}

Tensor gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Tensor t({rows, cols});
  for (auto& v : t.storage()) v = normal(rng);
  return t;
}

Tensor gather(std::span<const codec::FeatureVector> rows, std::span<const std::size_t> idx) {
  const std::size_t n = rows[idx[0]].values.size();
  Tensor t({idx.size(), n});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& v = rows[idx[r]].values;
    if (v.size() != n) throw ShapeError("feature vectors of different lengths in one batch");
    std::copy(v.begin(), v.end(), t.storage().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return t;
}

std::vector<Tensor> leaf_grads(const Var& loss, const nn::Bindings& b) {
  const auto g = ad::grad(loss, b.leaves());
  std::vector<Tensor> out;
  out.reserve(g.size());
  for (const auto& v : g) out.push_back(v.value());
  return out;
}

void check_batch(std::span<const codec::FeatureVector> rows, std::size_t dim, const char* what) {
  for (const auto& r : rows) {
    if (r.values.size() != dim) {
      throw ShapeError(std::string(what) + ": feature vector of length " + std::to_string(r.values.size()) +
                       " does not match model input " + std::to_string(dim));
    }
  }
}

}  // namespace

json VaeArchitecture::to_json() const { return {{"latent_dim", latent_dim}, {"hidden", hidden}}; }

VaeArchitecture VaeArchitecture::from_json(const json& j) {
  VaeArchitecture a;
  a.latent_dim = j.at("latent_dim").get<std::size_t>();
  a.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  return a;
}

static std::pair<nn::Mlp, nn::Mlp> vae_networks(const codec::Codec& codec, const VaeArchitecture& arch) {
  nn::Mlp enc{"enc", {codec.layout().dim}, nn::Activation::tanh};
  enc.sizes.insert(enc.sizes.end(), arch.hidden.begin(), arch.hidden.end());
  enc.sizes.push_back(2 * arch.latent_dim);
  nn::Mlp dec{"dec", {arch.latent_dim}, nn::Activation::tanh};
  dec.sizes.insert(dec.sizes.end(), arch.hidden.rbegin(), arch.hidden.rend());
  dec.sizes.push_back(decoder_output_dim(codec.schema()));
  return {std::move(enc), std::move(dec)};
}

VaeModel::VaeModel(std::shared_ptr<const codec::Codec> codec, VaeArchitecture arch, nn::ParameterSet params)
    : codec_(std::move(codec)), arch_(std::move(arch)), params_(std::move(params)) {
  if (!codec_) throw ContractError("VaeModel needs a codec");
  if (arch_.latent_dim == 0) throw ContractError("latent dimension must be positive");
  std::tie(encoder_, decoder_) = vae_networks(*codec_, arch_);
  bind_layers();
}

VaeModel VaeModel::create(std::shared_ptr<const codec::Codec> codec, VaeArchitecture arch, std::uint64_t seed) {
  if (!codec) throw ContractError("VaeModel needs a codec");
  const auto [enc, dec] = vae_networks(*codec, arch);
  nn::ParameterSet ps;
  std::mt19937_64 rng(seed);
  enc.init(ps, rng);
  dec.init(ps, rng);
  return VaeModel(std::move(codec), std::move(arch), std::move(ps));
}

void VaeModel::bind_layers() {
  auto bind = [&](const nn::Mlp& mlp, std::vector<DenseRef>& layers) {
    layers.clear();
    const auto& entries = params_.entries();
    for (std::size_t l = 0; l < mlp.depth(); ++l) {
      const auto w = mlp.prefix + "." + std::to_string(l) + ".w";
      const auto b = mlp.prefix + "." + std::to_string(l) + ".b";
      DenseRef ref;
      bool fw = false, fb = false;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name == w) ref.weight = i, fw = true;
        if (entries[i].name == b) ref.bias = i, fb = true;
      }
      if (!fw || !fb) throw DataError("VAE checkpoint is missing layer " + mlp.prefix + "." + std::to_string(l));
      const auto& wt = entries[ref.weight].value;
      if (wt.rank() != 2 || wt.rows() != mlp.sizes[l] || wt.cols() != mlp.sizes[l + 1] ||
          entries[ref.bias].value.size() != mlp.sizes[l + 1]) {
        throw ShapeError("VAE parameter " + w + " has shape " + ad::to_string(wt.shape()) +
                         " which does not match the architecture");
      }
      layers.push_back(ref);
    }
  };
  bind(encoder_, encoder_layers_);
  bind(decoder_, decoder_layers_);
}

VaeModel::Outputs VaeModel::forward(const Var& x, const nn::Bindings& p, const Tensor* eps) const {
  if (x.value().cols() != input_dim()) {
    throw ShapeError("VAE input has " + std::to_string(x.value().cols()) + " columns, layout expects " +
                     std::to_string(input_dim()));
  }
  Outputs o;
  const std::size_t L = arch_.latent_dim;
  const Var h = encoder_.forward(x, p);
  o.mu = ad::slice(h, 0, L);
  o.logvar = ad::slice(h, L, 2 * L);
  if (eps) {
    o.z = ad::add(o.mu, ad::mul(ad::exp(ad::scale(o.logvar, 0.5)), ad::constant(*eps)));
  } else {
    o.z = o.mu;
  }
  const Var d = decoder_.forward(o.z, p);
  const auto& schema = codec_->schema();
  const std::size_t C = schema.continuous.size();
  std::vector<Var> parts;
  if (C > 0) {
    o.continuous = ad::slice(d, 0, C);
    parts.push_back(o.continuous);
  }
  std::size_t off = C;
  for (std::size_t i = 0; i < schema.categorical.size(); ++i) {
    const std::size_t k = schema.categorical[i].cardinality;
    o.logits.push_back(ad::slice(d, off, off + k));
    off += k;
    parts.push_back(ad::matmul(ad::softmax(o.logits.back()), ad::constant(codec_->embedding(i))));
  }
  o.reconstruction = ad::concat(parts);
  return o;
}

void VaeModel::reconstruct(std::span<const double> x, std::span<double> out) const {
  if (x.size() != input_dim() || out.size() != input_dim()) {
    throw ShapeError("reconstruct: vector length " + std::to_string(x.size()) + " does not match layout " +
                     std::to_string(input_dim()));
  }
  thread_local std::vector<double> a, b;
  const auto& entries = params_.entries();
  auto dense = [&](const std::vector<DenseRef>& layers, std::span<const double> input) -> std::span<const double> {
    a.assign(input.begin(), input.end());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& w = entries[layers[l].weight].value;
      const auto& bias = entries[layers[l].bias].value;
      const std::size_t nin = w.rows(), nout = w.cols();
      b.assign(bias.data().begin(), bias.data().end());
      const double* wd = w.data().data();
      for (std::size_t i = 0; i < nin; ++i) {
        const double ai = a[i];
        const double* wrow = wd + i * nout;
        for (std::size_t j = 0; j < nout; ++j) b[j] += ai * wrow[j];
      }
      if (l + 1 < layers.size()) {
        for (auto& v : b) v = std::tanh(v);
      }
      std::swap(a, b);
    }
    return a;
  };
  const std::size_t L = arch_.latent_dim;
  const auto h = dense(encoder_layers_, x);
  thread_local std::vector<double> z;
  z.assign(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(L));
  const auto d = dense(decoder_layers_, z);
  const auto& schema = codec_->schema();
  const std::size_t C = schema.continuous.size();
  std::copy(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(C), out.begin());
  std::size_t in_off = C, out_off = C;
  thread_local std::vector<double> probs;
  for (std::size_t i = 0; i < schema.categorical.size(); ++i) {
    const std::size_t k = schema.categorical[i].cardinality;
    const auto& table = codec_->embedding(i);
    const std::size_t dim = table.cols();
    probs.assign(d.begin() + static_cast<std::ptrdiff_t>(in_off), d.begin() + static_cast<std::ptrdiff_t>(in_off + k));
    const double mx = *std::max_element(probs.begin(), probs.end());
    double zsum = 0.0;
    for (auto& p : probs) {
      p = std::exp(p - mx);
      zsum += p;
    }
    for (std::size_t j = 0; j < dim; ++j) out[out_off + j] = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      const double p = probs[r] / zsum;
      for (std::size_t j = 0; j < dim; ++j) out[out_off + j] += p * table.at(r, j);
    }
    in_off += k;
    out_off += dim;
  }
}

double VaeModel::reconstruction_error(std::span<const double> x) const {
  thread_local std::vector<double> xhat;
  xhat.resize(x.size());
  reconstruct(x, xhat);
  double e = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) e += (x[i] - xhat[i]) * (x[i] - xhat[i]);
  return e;
}

double VaeModel::reconstruction_error(const codec::FeatureVector& x) const {
  if (x.layout && !(*x.layout == codec_->layout())) throw ContractError("feature vector layout does not match model");
  return reconstruction_error(std::span<const double>(x.values));
}

double closed_form_kl(double mu, double sigma) {
  return 0.5 * (mu * mu + sigma * sigma - 1.0 - std::log(sigma * sigma));
}

Var kl_divergence(const Var& mu, const Var& logvar) {
  // 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)
  const Var inner = ad::sub(ad::add(ad::square(mu), ad::exp(logvar)), ad::add(logvar, ad::constant(Tensor::scalar(1.0))));
  return ad::scale(ad::sum_cols(inner), 0.5);
}

ElboTerms elbo_terms(const VaeModel& model, const Var& x, const VaeModel::Outputs& out) {
  const auto& codec = model.codec();
  const auto& layout = codec.layout();
  const std::size_t m = x.value().rows();
  Var recon;
  if (layout.continuous_dim > 0) {
    recon = ad::sum_cols(ad::square(ad::sub(ad::slice(x, 0, layout.continuous_dim), out.continuous)));
  }
  std::size_t cat = 0;
  for (const auto& s : layout.slices) {
    if (!s.categorical) continue;
    const std::size_t k = codec.schema().categorical[s.field_index].cardinality;
    Tensor onehot({m, k});
    const auto& xv = x.value();
    for (std::size_t r = 0; r < m; ++r) {
      const auto row = xv.data().subspan(r * xv.cols() + s.offset, s.width);
      onehot.at(r, codec.nearest_category(s.field_index, row)) = 1.0;
    }
    const Var ce = ad::neg(ad::sum_cols(ad::mul(ad::log_softmax(out.logits[cat]), ad::constant(std::move(onehot)))));
    recon = recon.defined() ? ad::add(recon, ce) : ce;
    ++cat;
  }
  const Var kl = kl_divergence(out.mu, out.logvar);
  ElboTerms t;
  t.reconstruction = ad::mean(recon);
  t.kl = ad::mean(kl);
  t.loss = ad::mean(ad::add(recon, kl));
  return t;
}

ElboTerms elbo_loss(const VaeModel& model, const Tensor& batch, const Tensor& eps, const nn::Bindings& p) {
  if (batch.size() == 0) throw ContractError("elbo_loss on an empty batch");
  const Var x = ad::constant(batch);
  const auto out = model.forward(x, p, &eps);
  return elbo_terms(model, x, out);
}

Tensor stack(std::span<const codec::FeatureVector> rows) {
  if (rows.empty()) throw ContractError("stack of zero rows");
  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  return gather(rows, idx);
}

Tensor stack_rows(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw ContractError("stack of zero rows");
  const std::size_t n = rows[0].size();
  Tensor t({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != n) throw ShapeError("rows of different lengths");
    std::copy(rows[r].begin(), rows[r].end(), t.storage().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return t;
}

json TrainingReport::to_json() const {
  json j;
  j["initial_validation_loss"] = initial_validation_loss;
  j["aborted"] = aborted;
  if (aborted) j["abort_reason"] = abort_reason;
  j["epochs"] = json::array();
  for (const auto& e : epochs) {
    j["epochs"].push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_loss", e.validation_loss}});
  }
  return j;
}

double validation_loss(const VaeModel& model, std::span<const codec::FeatureVector> validation, std::uint64_t seed) {
  if (validation.empty()) return 0.0;
  ad::NoGradGuard ng;
  std::mt19937_64 rng(seed);
  const nn::Bindings p(model.params(), model.params().leaves(false));
  double total = 0.0;
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < validation.size(); start += kChunk) {
    const std::size_t end = std::min(validation.size(), start + kChunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor batch = gather(validation, idx);
    const Tensor eps = gaussian(idx.size(), model.architecture().latent_dim, rng);
    total += elbo_loss(model, batch, eps, p).loss.value().item() * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(validation.size());
}

namespace {

// Shared epoch loop for train and fine_tune. `extra` may add terms to the
// loss of each batch.
template <class Extra>
void run_epochs(VaeModel& model, std::span<const codec::FeatureVector> pool, std::size_t epochs,
                std::size_t batch_size, std::mt19937_64& rng, nn::AdamState& adam,
                std::span<const codec::FeatureVector> validation, std::uint64_t validation_seed,
                TrainingReport& report, Extra extra) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  const double initial = report.initial_validation_loss;
  int strikes = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t seen = 0, batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor batch = gather(pool, idx);
      const Tensor eps = gaussian(idx.size(), model.architecture().latent_dim, rng);
      const nn::Bindings p(model.params(), model.params().leaves());
      Var loss = elbo_loss(model, batch, eps, p).loss;
      loss = extra(loss, p);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        report.aborted = true;
        report.abort_reason = "NaN loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index);
        throw TrainingError(report.abort_reason);
      }
      nn::adam_step(model.params(), adam, leaf_grads(loss, p));
      sum += value * static_cast<double>(idx.size());
      seen += idx.size();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = sum / static_cast<double>(std::max<std::size_t>(seen, 1));
    rec.validation_loss = validation.empty() ? rec.train_loss : validation_loss(model, validation, validation_seed);
    report.epochs.push_back(rec);
    if (!std::isfinite(rec.validation_loss)) {
      report.aborted = true;
      report.abort_reason = "NaN validation loss at epoch " + std::to_string(epoch);
      throw TrainingError(report.abort_reason);
    }
    strikes = rec.validation_loss > 10.0 * std::abs(initial) ? strikes + 1 : 0;
    if (strikes >= 3) {
      report.aborted = true;
      report.abort_reason = "loss above 10x its initial value for 3 consecutive epochs";
      throw TrainingError("training diverged: " + report.abort_reason);
    }
  }
}

}  // namespace

TrainResult train(std::shared_ptr<const codec::Codec> codec, std::span<const codec::FeatureVector> legitimate,
                  std::span<const codec::FeatureVector> validation, const TrainConfig& config,
                  const VaeArchitecture& arch) {
  if (legitimate.empty()) throw ContractError("train: empty training set");
  if (config.batch_size == 0) throw ContractError("train: batch size must be positive");
  VaeModel model = VaeModel::create(codec, arch, config.seed);
  check_batch(legitimate, model.input_dim(), "train");
  check_batch(validation, model.input_dim(), "train validation");
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  auto adam = nn::AdamState::for_params(model.params(), config.adam);
  TrainingReport report;
  const std::uint64_t vseed = config.seed + 17;
  report.initial_validation_loss = validation_loss(model, validation.empty() ? legitimate : validation, vseed);
  run_epochs(model, legitimate, config.epochs, config.batch_size, rng, adam, validation, vseed, report,
             [](const Var& loss, const nn::Bindings&) { return loss; });
  return {std::move(model), std::move(report)};
}

json ThresholdConfig::to_json() const {
  return {{"tau", tau}, {"quantile", quantile}, {"calibration_size", calibration_size}, {"model_version", model_version}};
}

ThresholdConfig ThresholdConfig::from_json(const json& j) {
  try {
    ThresholdConfig t;
    t.tau = j.at("tau").get<double>();
    t.quantile = j.at("quantile").get<double>();
    t.calibration_size = j.value("calibration_size", std::size_t{0});
    t.model_version = j.value("model_version", std::uint64_t{0});
    return t;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed threshold record: ") + e.what());
  }
}

double nearest_rank_quantile(std::vector<double> values, double quantile) {
  if (values.empty()) throw CalibrationError("quantile of an empty set");
  if (!(quantile > 0.0 && quantile <= 1.0)) throw CalibrationError("quantile must lie in (0, 1]");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return values[rank - 1];
}

ThresholdConfig calibrate_threshold(const VaeModel& model, std::span<const codec::FeatureVector> calibration,
                                    double quantile) {
  if (calibration.size() < kMinCalibrationSize) {
    throw CalibrationError("calibration set has " + std::to_string(calibration.size()) + " transactions, need at least " +
                           std::to_string(kMinCalibrationSize));
  }
  if (!(quantile > 0.0 && quantile <= 1.0)) throw CalibrationError("calibration quantile must lie in (0, 1]");
  std::vector<double> errors;
  errors.reserve(calibration.size());
  for (const auto& x : calibration) errors.push_back(model.reconstruction_error(x));
  ThresholdConfig t;
  t.tau = nearest_rank_quantile(std::move(errors), quantile);
  t.quantile = quantile;
  t.calibration_size = calibration.size();
  t.model_version = model.version();
  return t;
}

ScoreResult score(const VaeModel& model, const ThresholdConfig& threshold, const codec::Transaction& t) {
  const auto start = std::chrono::steady_clock::now();
  thread_local std::vector<double> x;
  x.resize(model.input_dim());
  model.codec().encode_into(t, x);
  const double e = model.reconstruction_error(std::span<const double>(x));
  const auto stop = std::chrono::steady_clock::now();
  ScoreResult r;
  r.transaction_id = t.id;
  r.reconstruction_error = e;
  r.tau = threshold.tau;
  r.verdict = verdict_for(e, threshold.tau);
  r.latency_us = std::max(std::chrono::duration<double, std::micro>(stop - start).count(), 1e-3);
  r.model_version = model.version();
  return r;
}

FineTuneResult fine_tune(const VaeModel& model, const ThresholdConfig& current,
                         std::span<const codec::FeatureVector> legitimate,
                         std::span<const codec::FeatureVector> false_positives,
                         std::span<const codec::FeatureVector> synthetic_fraud,
                         std::span<const codec::FeatureVector> calibration, const FineTuneConfig& config) {
  if (legitimate.empty()) throw ContractError("fine_tune: needs the legitimate training set");
  check_batch(legitimate, model.input_dim(), "fine_tune");
  check_batch(false_positives, model.input_dim(), "fine_tune false positives");
  check_batch(synthetic_fraud, model.input_dim(), "fine_tune synthetic fraud");
  FineTuneResult result{model, current, {}, config.margin > 0.0 ? config.margin : 2.0 * current.tau};
  std::mt19937_64 rng(config.seed);

  // Legitimate subset plus replicated false positives (about 5% of the pool).
  std::vector<codec::FeatureVector> pool;
  std::vector<std::size_t> idx(legitimate.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t take = std::min(legitimate.size(), config.max_legitimate_per_epoch);
  for (std::size_t i = 0; i < take; ++i) pool.push_back(legitimate[idx[i]]);
  if (config.train_on_false_positives && !false_positives.empty()) {
    const std::size_t reps = std::max<std::size_t>(1, take / 20 / false_positives.size());
    for (std::size_t r = 0; r < reps; ++r) pool.insert(pool.end(), false_positives.begin(), false_positives.end());
  }

  auto adam = nn::AdamState::for_params(result.model.params(), config.adam);
  const std::uint64_t vseed = config.seed + 17;
  result.report.initial_validation_loss = validation_loss(result.model, calibration.empty() ? legitimate : calibration,
                                                          vseed);
  const bool hinge = config.train_on_synthetic && !synthetic_fraud.empty();
  const double margin = result.margin;
  const double weight = config.hinge_weight;
  const VaeModel& trained = result.model;
  run_epochs(result.model, pool, config.epochs, config.batch_size, rng, adam, calibration, vseed, result.report,
             [&](const Var& loss, const nn::Bindings& p) {
               if (!hinge) return loss;
               const std::size_t m = std::min<std::size_t>(config.batch_size, synthetic_fraud.size());
               std::vector<std::size_t> pick(m);
               std::uniform_int_distribution<std::size_t> u(0, synthetic_fraud.size() - 1);
               for (auto& v : pick) v = u(rng);
               const Var xs = ad::constant(gather(synthetic_fraud, pick));
               const auto out = trained.forward(xs, p);
               const Var err = ad::sum_cols(ad::square(ad::sub(xs, out.reconstruction)));
               const Var gap = ad::relu(ad::sub(ad::constant(Tensor::scalar(margin)), err));
               return ad::add(loss, ad::scale(ad::mean(gap), weight));
             });
  if (!calibration.empty()) result.threshold = calibrate_threshold(result.model, calibration, config.quantile);
  return result;
}

}  // namespace dualpath::vae
