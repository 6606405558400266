#include "dualpath/retraining.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

#include "dualpath/errors.hpp"

namespace dualpath::retrain {

using nlohmann::json;

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::gan_fine_tune: return "gan-fine-tune";
    case Stage::synthesize: return "synthesize";
    case Stage::vae_fine_tune: return "vae-fine-tune";
    case Stage::recalibrate: return "recalibrate";
    case Stage::mark_consumed: return "mark-consumed";
    case Stage::publish: return "publish";
  }
  return "unknown";
}

json CycleConfig::to_json() const {
  return {{"gan", gan.to_json()},
          {"gan_fine_tune_steps", gan_fine_tune_steps},
          {"expansion_size", expansion_size},
          {"fine_tune",
           {{"epochs", fine_tune.epochs},
            {"margin", fine_tune.margin},
            {"hinge_weight", fine_tune.hinge_weight},
            {"train_on_synthetic", fine_tune.train_on_synthetic},
            {"train_on_false_positives", fine_tune.train_on_false_positives},
            {"quantile", fine_tune.quantile}}},
          {"min_entries", min_entries},
          {"seed", seed}};
}

json CycleReport::to_json() const {
  json j{{"succeeded", succeeded},
         {"entries_used", entries_used},
         {"false_positives_used", false_positives_used},
         {"vae_version_before", vae_version_before},
         {"vae_version_after", vae_version_after},
         {"gan_version_before", gan_version_before},
         {"gan_version_after", gan_version_after},
         {"tau_before", tau_before},
         {"tau_after", tau_after},
         {"margin", margin},
         {"expansion_mean_error", expansion_mean_error},
         {"seconds", seconds}};
  if (!succeeded) {
    j["failed_stage"] = failed_stage;
    j["error"] = error;
  }
  if (!gan_report.is_null()) j["gan_report"] = gan_report;
  if (!vae_report.is_null()) j["vae_report"] = vae_report;
  return j;
}

std::vector<codec::FeatureVector> gan_mixture(const std::vector<buffer::BufferEntry>& entries,
                                              const std::vector<codec::FeatureVector>& seed_set,
                                              const codec::Codec& codec, std::uint64_t seed) {
  std::vector<codec::FeatureVector> out;
  for (const auto& e : entries) out.push_back({e.features, codec.layout_ptr()});
  if (seed_set.empty()) return out;
  const std::size_t want = std::max<std::size_t>(entries.size(), 1);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> idx(seed_set.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t i = 0; i < want; ++i) out.push_back(seed_set[idx[i % idx.size()]]);
  return out;
}

CycleResult run_retraining_cycle(const store::ModelBundle& current, const CycleInputs& inputs,
                                 const CycleResources& resources, const CycleConfig& config,
                                 const StageHook& hook) {
  const auto start = std::chrono::steady_clock::now();
  CycleResult result;
  auto& r = result.report;
  r.entries_used = inputs.entries.size();
  r.false_positives_used = inputs.false_positives.size();
  r.vae_version_before = current.vae_version();
  r.gan_version_before = current.gan_version();
  r.tau_before = current.threshold.tau;
  Stage stage = Stage::gan_fine_tune;
  try {
    if (!current.vae) throw ContractError("retraining needs a trained VAE");
    const auto codec = current.vae->codec_ptr();

    stage = Stage::gan_fine_tune;
    if (hook) hook(stage);
    const auto real = gan_mixture(inputs.entries, resources.seed_set, *codec, config.seed);
    auto gcfg = current.gan ? current.gan->config() : config.gan;
    gcfg.generator_steps = current.gan ? config.gan_fine_tune_steps : config.gan.generator_steps;
    gcfg.seed = config.seed;
    auto trained = gan::train_gan(codec, real, gcfg, current.gan.get(), 0);
    r.gan_report = trained.report.to_json();

    stage = Stage::synthesize;
    if (hook) hook(stage);
    result.expansion = gan::synthesize_encoded(trained.model, config.expansion_size, config.seed + 1);

    stage = Stage::vae_fine_tune;
    if (hook) hook(stage);
    auto ft_cfg = config.fine_tune;
    ft_cfg.seed = config.seed + 2;
    auto tuned = vae::fine_tune(*current.vae, current.threshold, resources.legitimate, inputs.false_positives,
                                result.expansion, {}, ft_cfg);
    r.vae_report = tuned.report.to_json();
    r.margin = tuned.margin;

    stage = Stage::recalibrate;
    if (hook) hook(stage);
    const auto threshold = vae::calibrate_threshold(tuned.model, resources.calibration, ft_cfg.quantile);

    store::ModelBundle next;
    next.vae = std::make_shared<const vae::VaeModel>(std::move(tuned.model));
    next.threshold = threshold;
    next.gan = std::make_shared<const gan::GanModel>(std::move(trained.model));
    const std::size_t nb = std::min(resources.calibration.size(), shap::kDefaultBackgroundSize);
    next.background.assign(resources.calibration.begin(), resources.calibration.begin() + static_cast<std::ptrdiff_t>(nb));
    if (next.background.empty()) next.background = current.background;
    next.generation = current.generation + 1;

    double sum = 0.0;
    for (const auto& x : result.expansion) sum += next.vae->reconstruction_error(x);
    r.expansion_mean_error = result.expansion.empty() ? 0.0 : sum / static_cast<double>(result.expansion.size());
    r.vae_version_after = next.vae_version();
    r.gan_version_after = next.gan_version();
    r.tau_after = threshold.tau;
    r.succeeded = true;
    result.next = std::move(next);
  } catch (const std::exception& e) {
    r.succeeded = false;
    r.failed_stage = stage_name(stage);
    r.error = e.what();
    result.next.reset();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

CycleResources load_cycle_resources(const store::ResourcePaths& paths, const codec::Codec& codec) {
  const auto& schema = codec.schema();
  CycleResources r;
  auto legit = codec::read_stream(paths.legitimate, schema);
  if (!paths.labels.empty()) codec::attach_labels(paths.labels, legit);
  std::size_t i = 0;
  for (const auto& t : legit) {
    if (t.is_fraud()) continue;
    if (i++ % paths.validation_every != 0) r.legitimate.push_back(codec.encode(t));
  }
  for (const auto& t : codec::read_stream(paths.calibration, schema)) r.calibration.push_back(codec.encode(t));
  if (!paths.seed_set.empty()) {
    for (const auto& t : codec::read_stream(paths.seed_set, schema)) r.seed_set.push_back(codec.encode(t));
  }
  return r;
}

}  // namespace dualpath::retrain
