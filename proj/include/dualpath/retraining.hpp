#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualpath/buffer.hpp"
#include "dualpath/model_store.hpp"
#include "dualpath/shap.hpp"

namespace dualpath::retrain {

enum class Stage { gan_fine_tune = 1, synthesize = 2, vae_fine_tune = 3, recalibrate = 4, mark_consumed = 5, publish = 6 };
std::string stage_name(Stage s);

/// Called before each stage; throwing from it aborts the cycle there.
using StageHook = std::function<void(Stage)>;

struct CycleConfig {
  gan::GanConfig gan;
  /// Generator steps when continuing an existing GAN.
  std::size_t gan_fine_tune_steps = 300;
  std::size_t expansion_size = 1000;
  vae::FineTuneConfig fine_tune;
  std::size_t min_entries = 50;
  std::uint64_t seed = 31;

  nlohmann::json to_json() const;
};

/// Data the cycle needs beyond the buffer: the legitimate training set, the
/// calibration set and the simulator seed set for the 50/50 GAN mixture.
struct CycleResources {
  std::vector<codec::FeatureVector> legitimate;
  std::vector<codec::FeatureVector> calibration;
  std::vector<codec::FeatureVector> seed_set;
};

/// Reads and encodes the recorded streams: legitimate rows minus the
/// validation hold-out, the calibration stream and the seed set (if any).
CycleResources load_cycle_resources(const store::ResourcePaths& paths, const codec::Codec& codec);

struct CycleInputs {
  std::vector<buffer::BufferEntry> entries;
  std::vector<codec::FeatureVector> false_positives;
};

struct CycleReport {
  bool succeeded = false;
  std::string failed_stage;
  std::string error;
  std::size_t entries_used = 0;
  std::size_t false_positives_used = 0;
  std::uint64_t vae_version_before = 0;
  std::uint64_t vae_version_after = 0;
  std::uint64_t gan_version_before = 0;
  std::uint64_t gan_version_after = 0;
  double tau_before = 0.0;
  double tau_after = 0.0;
  double margin = 0.0;
  /// Mean E(x) over the expansion set under the new model.
  double expansion_mean_error = 0.0;
  double seconds = 0.0;
  nlohmann::json gan_report;
  nlohmann::json vae_report;

  nlohmann::json to_json() const;
};

struct CycleResult {
  CycleReport report;
  /// Present on success; stages 5 and 6 are up to the caller.
  std::optional<store::ModelBundle> next;
  std::vector<codec::FeatureVector> expansion;
};

/// Stages 1-4: GAN fine-tune on a 50/50 mixture of buffer entries and seed
/// set, synthesis of the expansion set, VAE fine-tune with false positives and
/// the expansion set, recalibration. Never throws; failures are reported and
/// `next` stays empty.
CycleResult run_retraining_cycle(const store::ModelBundle& current, const CycleInputs& inputs,
                                 const CycleResources& resources, const CycleConfig& config,
                                 const StageHook& hook = {});

/// Real examples for GAN training: every buffer entry plus as many seed-set
/// rows (sampled with replacement when short).
std::vector<codec::FeatureVector> gan_mixture(const std::vector<buffer::BufferEntry>& entries,
                                              const std::vector<codec::FeatureVector>& seed_set,
                                              const codec::Codec& codec, std::uint64_t seed);

}  // namespace dualpath::retrain
