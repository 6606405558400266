#include "dualpath/gan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "dualpath/errors.hpp"

namespace dualpath::gan {

namespace {

using nlohmann::json;

std::size_t generator_output_dim(const codec::TransactionSchema& schema) {
  std::size_t d = schema.continuous.size();
  for (const auto& f : schema.categorical) d += f.cardinality;
  return d;
}

std::pair<nn::Mlp, nn::Mlp> gan_networks(const codec::Codec& codec, const GanConfig& config) {
  nn::Mlp gen{"gen", {config.noise_dim}, nn::Activation::tanh};
  gen.sizes.insert(gen.sizes.end(), config.hidden.begin(), config.hidden.end());
  gen.sizes.push_back(generator_output_dim(codec.schema()));
  nn::Mlp critic{"critic", {codec.layout().dim}, nn::Activation::tanh};
  critic.sizes.insert(critic.sizes.end(), config.hidden.begin(), config.hidden.end());
  critic.sizes.push_back(1);
  return {std::move(gen), std::move(critic)};
}

void check_network(const nn::Mlp& mlp, const nn::ParameterSet& params) {
  for (std::size_t l = 0; l < mlp.depth(); ++l) {
    const auto base = mlp.prefix + "." + std::to_string(l);
    if (!params.contains(base + ".w") || !params.contains(base + ".b")) {
      throw DataError("GAN checkpoint is missing layer " + base);
    }
    const auto& w = params.get(base + ".w");
    if (w.rank() != 2 || w.rows() != mlp.sizes[l] || w.cols() != mlp.sizes[l + 1]) {
      throw ShapeError("GAN parameter " + base + ".w has shape " + ad::to_string(w.shape()) +
                       " which does not match the configuration");
    }
  }
}

Tensor gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Tensor t({rows, cols});
  for (auto& v : t.storage()) v = normal(rng);
  return t;
}

std::vector<Tensor> gumbel_batch(const codec::TransactionSchema& schema, std::size_t m, std::mt19937_64& rng) {
  std::vector<Tensor> out;
  for (const auto& f : schema.categorical) {
    const auto g = codec::sample_gumbel(m * f.cardinality, rng);
    out.emplace_back(ad::Shape{m, f.cardinality}, g);
  }
  return out;
}

Tensor uniform_column(std::size_t m, std::mt19937_64& rng) {
  Tensor t({m, 1});
  for (auto& v : t.storage()) v = codec::uniform_open(rng);
  return t;
}

Tensor sample_rows(std::span<const codec::FeatureVector> pool, std::size_t m, std::mt19937_64& rng) {
  const std::size_t n = pool[0].values.size();
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  Tensor t({m, n});
  for (std::size_t r = 0; r < m; ++r) {
    const auto& v = pool[pick(rng)].values;
    std::copy(v.begin(), v.end(), t.storage().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return t;
}

std::vector<Tensor> grads_of(const Var& loss, const nn::Bindings& b) {
  const auto g = ad::grad(loss, b.leaves());
  std::vector<Tensor> out;
  out.reserve(g.size());
  for (const auto& v : g) out.push_back(v.value());
  return out;
}

GradientNormStats stats_of(std::span<const double> values) {
  GradientNormStats s;
  s.count = values.size();
  if (values.empty()) return s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

Tensor generate_hard(const GanModel& model, std::size_t m, std::mt19937_64& rng) {
  ad::NoGradGuard ng;
  const Tensor noise = gaussian(m, model.config().noise_dim, rng);
  const auto g = gumbel_batch(model.codec().schema(), m, rng);
  const nn::Bindings gb(model.generator_params(), model.generator_params().leaves(false));
  const codec::GumbelConfig hard{model.config().anneal.minimum, true};
  return model.generate(ad::constant(noise), g, hard, gb).value();
}

}  // namespace

json GanConfig::to_json() const {
  return {{"noise_dim", noise_dim},
          {"hidden", hidden},
          {"lambda", lambda},
          {"n_critic", n_critic},
          {"batch_size", batch_size},
          {"generator_steps", generator_steps},
          {"hard", hard},
          {"anneal", {{"initial", anneal.initial}, {"rate", anneal.rate}, {"minimum", anneal.minimum}}},
          {"adam",
           {{"learning_rate", adam.learning_rate}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"epsilon", adam.epsilon}}},
          {"seed", seed}};
}

GanConfig GanConfig::from_json(const json& j) {
  GanConfig c;
  try {
    c.noise_dim = j.at("noise_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.lambda = j.at("lambda").get<double>();
    c.n_critic = j.at("n_critic").get<std::size_t>();
    c.batch_size = j.value("batch_size", c.batch_size);
    c.generator_steps = j.value("generator_steps", c.generator_steps);
    c.hard = j.value("hard", c.hard);
    if (j.contains("anneal")) {
      const auto& a = j["anneal"];
      c.anneal = {a.at("initial").get<double>(), a.at("rate").get<double>(), a.at("minimum").get<double>()};
    }
    if (j.contains("adam")) {
      const auto& a = j["adam"];
      c.adam = {a.at("learning_rate").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                a.at("epsilon").get<double>()};
    }
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed GAN config: ") + e.what());
  }
  return c;
}

GanModel::GanModel(std::shared_ptr<const codec::Codec> codec, GanConfig config, nn::ParameterSet generator,
                   nn::ParameterSet critic)
    : codec_(std::move(codec)),
      config_(std::move(config)),
      generator_params_(std::move(generator)),
      critic_params_(std::move(critic)) {
  if (!codec_) throw ContractError("GanModel needs a codec");
  if (!(config_.lambda > 0.0)) throw ContractError("gradient penalty coefficient must be positive");
  if (config_.n_critic == 0) throw ContractError("n_critic must be at least 1");
  if (config_.noise_dim == 0) throw ContractError("noise dimension must be positive");
  std::tie(generator_, critic_) = gan_networks(*codec_, config_);
  check_network(generator_, generator_params_);
  check_network(critic_, critic_params_);
}

GanModel GanModel::create(std::shared_ptr<const codec::Codec> codec, GanConfig config) {
  if (!codec) throw ContractError("GanModel needs a codec");
  const auto [gen, critic] = gan_networks(*codec, config);
  std::mt19937_64 rng(config.seed);
  nn::ParameterSet g, c;
  gen.init(g, rng);
  critic.init(c, rng);
  return GanModel(std::move(codec), std::move(config), std::move(g), std::move(c));
}

Var GanModel::generate(const Var& noise, std::span<const Tensor> gumbel_noise, const codec::GumbelConfig& gumbel,
                       const nn::Bindings& generator) const {
  const auto& schema = codec_->schema();
  if (gumbel_noise.size() != schema.categorical.size()) {
    throw ContractError("generate: need one Gumbel noise tensor per categorical field");
  }
  const Var out = generator_.forward(noise, generator);
  const std::size_t C = schema.continuous.size();
  std::vector<Var> parts;
  if (C > 0) parts.push_back(ad::slice(out, 0, C));
  std::size_t off = C;
  for (std::size_t i = 0; i < schema.categorical.size(); ++i) {
    const std::size_t k = schema.categorical[i].cardinality;
    const Var y = codec::gumbel_softmax(ad::slice(out, off, off + k), gumbel_noise[i], gumbel);
    parts.push_back(ad::matmul(y, ad::constant(codec_->embedding(i))));
    off += k;
  }
  return ad::concat(parts);
}

Var GanModel::critic(const Var& x, const nn::Bindings& critic) const { return critic_.forward(x, critic); }

CriticFn GanModel::critic_fn(const nn::Bindings& critic) const {
  return [this, critic](const Var& x) { return critic_.forward(x, critic); };
}

nn::ParameterSet GanModel::combined() const {
  nn::ParameterSet out;
  for (const auto& e : generator_params_.entries()) out.add(e.name, e.value);
  for (const auto& e : critic_params_.entries()) out.add(e.name, e.value);
  out.set_version(generator_params_.version());
  return out;
}

GanModel GanModel::from_combined(std::shared_ptr<const codec::Codec> codec, GanConfig config,
                                 const nn::ParameterSet& combined) {
  nn::ParameterSet g, c;
  for (const auto& e : combined.entries()) {
    if (e.name.rfind("gen.", 0) == 0) {
      g.add(e.name, e.value);
    } else if (e.name.rfind("critic.", 0) == 0) {
      c.add(e.name, e.value);
    } else {
      throw DataError("unexpected parameter '" + e.name + "' in GAN checkpoint");
    }
  }
  g.set_version(combined.version());
  return GanModel(std::move(codec), std::move(config), std::move(g), std::move(c));
}

Tensor interpolate(const Tensor& real, const Tensor& fake, const Tensor& eps) {
  if (real.shape() != fake.shape()) {
    throw ShapeError("interpolate: real " + ad::to_string(real.shape()) + " vs fake " + ad::to_string(fake.shape()));
  }
  if (eps.size() != real.rows()) throw ShapeError("interpolate: need one epsilon per row");
  Tensor out(real.shape());
  for (std::size_t r = 0; r < real.rows(); ++r) {
    const double e = eps[r];
    for (std::size_t c = 0; c < real.cols(); ++c) out.at(r, c) = e * real.at(r, c) + (1.0 - e) * fake.at(r, c);
  }
  return out;
}

CriticLossTerms critic_loss(const CriticFn& critic, const Tensor& real, const Tensor& fake, const Tensor& eps,
                            double lambda) {
  if (real.size() == 0 || fake.size() == 0) throw ContractError("critic_loss: empty batch");
  if (real.cols() != fake.cols()) {
    throw ShapeError("critic_loss: real " + ad::to_string(real.shape()) + " vs fake " + ad::to_string(fake.shape()));
  }
  const Var d_fake = ad::mean(critic(ad::constant(fake)));
  const Var d_real = ad::mean(critic(ad::constant(real)));
  const Var points = ad::leaf(interpolate(real, fake, eps));
  const Var norms = nn::input_gradient_norm(critic, points);
  const Var penalty = ad::mean(ad::square(ad::sub(norms, ad::constant(Tensor::scalar(1.0)))));
  CriticLossTerms t;
  t.loss = ad::add(ad::sub(d_fake, d_real), ad::scale(penalty, lambda));
  t.fake_mean = d_fake.value().item();
  t.real_mean = d_real.value().item();
  t.penalty = penalty.value().item();
  const auto nv = norms.value().data();
  t.gradient_norms.assign(nv.begin(), nv.end());
  return t;
}

Var generator_loss(const CriticFn& critic, const Var& generated) {
  if (generated.value().size() == 0) throw ContractError("generator_loss: empty batch");
  return ad::neg(ad::mean(critic(generated)));
}

json GradientNormStats::to_json() const {
  return {{"mean", mean}, {"stddev", stddev}, {"min", min}, {"max", max}, {"count", count}};
}

json SynthesisReport::to_json() const {
  json j;
  j["sample_count"] = sample_count;
  j["critic_steps"] = critic_steps;
  j["generator_steps"] = generator_steps;
  j["wasserstein_trace"] = wasserstein_trace;
  j["training_gradient_norms"] = training_gradient_norms.to_json();
  j["final_gradient_norms"] = final_gradient_norms.to_json();
  j["categorical_marginals"] = categorical_marginals;
  j["marginal_entropy"] = marginal_entropy;
  j["mode_coverage"] = mode_coverage;
  return j;
}

GradientNormStats measure_gradient_norms(const GanModel& model, std::span<const codec::FeatureVector> real,
                                         std::size_t count, std::uint64_t seed) {
  if (real.empty() || count == 0) return {};
  std::mt19937_64 rng(seed);
  const Tensor r = sample_rows(real, count, rng);
  const Tensor f = generate_hard(model, count, rng);
  const Tensor eps = uniform_column(count, rng);
  const nn::Bindings cb(model.critic_params(), model.critic_params().leaves(false));
  const Var points = ad::leaf(interpolate(r, f, eps));
  const Var norms = nn::input_gradient_norm(model.critic_fn(cb), points);
  return stats_of(norms.value().data());
}

void fill_marginals(SynthesisReport& report, const GanModel& model, std::span<const codec::FeatureVector> real,
                    std::span<const codec::Transaction> samples) {
  const auto& codec = model.codec();
  const auto& schema = codec.schema();
  report.sample_count = samples.size();
  std::size_t present = 0, covered = 0;
  for (std::size_t i = 0; i < schema.categorical.size(); ++i) {
    const std::size_t k = schema.categorical[i].cardinality;
    std::vector<double> share(k, 0.0);
    for (const auto& t : samples) share[static_cast<std::size_t>(t.categorical[i])] += 1.0;
    double entropy = 0.0;
    for (auto& s : share) {
      s /= std::max<double>(1.0, static_cast<double>(samples.size()));
      if (s > 0.0) entropy -= s * std::log(s);
    }
    std::set<std::size_t> in_real;
    const auto& slice = codec.layout().slices[schema.continuous.size() + i];
    for (const auto& x : real) {
      in_real.insert(codec.nearest_category(i, std::span<const double>(x.values).subspan(slice.offset, slice.width)));
    }
    for (auto c : in_real) {
      ++present;
      if (share[c] > 0.0) ++covered;
    }
    report.categorical_marginals[schema.categorical[i].name] = std::move(share);
    report.marginal_entropy[schema.categorical[i].name] = entropy;
  }
  report.mode_coverage = present == 0 ? 1.0 : static_cast<double>(covered) / static_cast<double>(present);
}

GanResult train_gan(std::shared_ptr<const codec::Codec> codec, std::span<const codec::FeatureVector> real,
                    const GanConfig& config, const GanModel* initial, std::size_t report_samples) {
  if (real.size() < kMinRealExamples) {
    throw ColdStartError("cold start: " + std::to_string(real.size()) + " real fraud examples available, at least " +
                         std::to_string(kMinRealExamples) +
                         " are needed; train on a simulator seed set (gen-data --seed-set) first");
  }
  if (config.batch_size == 0) throw ContractError("train_gan: batch size must be positive");
  GanModel model = initial ? *initial : GanModel::create(codec, config);
  if (initial) {
    model.config().generator_steps = config.generator_steps;
    model.config().seed = config.seed;
  }
  for (const auto& x : real) {
    if (x.values.size() != model.feature_dim()) throw ShapeError("train_gan: real example does not match the layout");
  }
  const auto& cfg = model.config();
  const auto& schema = model.codec().schema();
  std::mt19937_64 rng(config.seed ^ (model.version() * 0x9e3779b97f4a7c15ULL));
  auto gen_adam = nn::AdamState::for_params(model.generator_params(), cfg.adam);
  auto critic_adam = nn::AdamState::for_params(model.critic_params(), cfg.adam);
  const std::size_t m = cfg.batch_size;
  const std::uint64_t start_version = model.version();

  SynthesisReport report;
  std::vector<double> recent_norms;
  const std::size_t total_critic = config.generator_steps * cfg.n_critic;
  const std::size_t window_start = total_critic - total_critic / 10;
  double last_w = 0.0;
  for (std::size_t step = 0; step < config.generator_steps; ++step) {
    const codec::GumbelConfig gumbel{
        codec::anneal_temperature(static_cast<std::int64_t>(start_version + step), cfg.anneal), cfg.hard};
    for (std::size_t c = 0; c < cfg.n_critic; ++c) {
      const Tensor r = sample_rows(real, m, rng);
      Tensor f;
      {
        ad::NoGradGuard ng;
        const Tensor noise = gaussian(m, cfg.noise_dim, rng);
        const auto g = gumbel_batch(schema, m, rng);
        const nn::Bindings gb(model.generator_params(), model.generator_params().leaves(false));
        f = model.generate(ad::constant(noise), g, gumbel, gb).value();
      }
      const Tensor eps = uniform_column(m, rng);
      const nn::Bindings cb(model.critic_params(), model.critic_params().leaves());
      const auto terms = critic_loss(model.critic_fn(cb), r, f, eps, cfg.lambda);
      if (!std::isfinite(terms.loss.value().item())) {
        throw TrainingError("critic loss is NaN at step " + std::to_string(report.critic_steps));
      }
      nn::adam_step(model.critic_params(), critic_adam, grads_of(terms.loss, cb));
      if (report.critic_steps >= window_start) {
        recent_norms.insert(recent_norms.end(), terms.gradient_norms.begin(), terms.gradient_norms.end());
      }
      last_w = terms.real_mean - terms.fake_mean;
      ++report.critic_steps;
    }
    const Tensor noise = gaussian(m, cfg.noise_dim, rng);
    const auto g = gumbel_batch(schema, m, rng);
    const nn::Bindings gb(model.generator_params(), model.generator_params().leaves());
    const nn::Bindings cb(model.critic_params(), model.critic_params().leaves(false));
    const Var loss = generator_loss(model.critic_fn(cb), model.generate(ad::constant(noise), g, gumbel, gb));
    if (!std::isfinite(loss.value().item())) {
      throw TrainingError("generator loss is NaN at step " + std::to_string(step));
    }
    nn::adam_step(model.generator_params(), gen_adam, grads_of(loss, gb));
    report.wasserstein_trace.push_back(last_w);
    ++report.generator_steps;
  }
  report.training_gradient_norms = stats_of(recent_norms);
  report.final_gradient_norms = measure_gradient_norms(model, real, 1024, config.seed + 1);
  if (report_samples > 0) {
    const auto samples = synthesize(model, report_samples, config.seed + 2);
    fill_marginals(report, model, real, samples);
  }
  return {std::move(model), std::move(report)};
}

std::vector<codec::Transaction> synthesize(const GanModel& model, std::size_t count, std::uint64_t seed) {
  std::vector<codec::Transaction> out;
  out.reserve(count);
  std::mt19937_64 rng(seed);
  constexpr std::size_t kChunk = 1024;
  const auto& codec = model.codec();
  for (std::size_t start = 0; start < count; start += kChunk) {
    const std::size_t m = std::min(kChunk, count - start);
    const Tensor x = generate_hard(model, m, rng);
    for (std::size_t r = 0; r < m; ++r) {
      auto t = codec.decode(x.data().subspan(r * x.cols(), x.cols()));
      t.id = "syn-" + std::to_string(seed) + "-" + std::to_string(start + r);
      t.label = kSyntheticFraud;
      codec::validate(t, codec.schema());
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<codec::FeatureVector> synthesize_encoded(const GanModel& model, std::size_t count, std::uint64_t seed) {
  const auto txs = synthesize(model, count, seed);
  std::vector<codec::FeatureVector> out;
  out.reserve(txs.size());
  for (const auto& t : txs) out.push_back(model.codec().encode(t));
  return out;
}

}  // namespace dualpath::gan
