#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualpath/gan.hpp"
#include "dualpath/vae.hpp"

namespace dualpath::store {

/// Everything the scoring and explanation paths read, published as one
/// immutable snapshot.
struct ModelBundle {
  std::shared_ptr<const vae::VaeModel> vae;
  vae::ThresholdConfig threshold;
  /// Absent until a GAN has been trained.
  std::shared_ptr<const gan::GanModel> gan;
  /// Encoded legitimate reference rows for Shapley marginalisation.
  std::vector<codec::FeatureVector> background;
  /// Incremented on every publish.
  std::uint64_t generation = 0;

  std::uint64_t vae_version() const { return vae ? vae->version() : 0; }
  std::uint64_t gan_version() const { return gan ? gan->version() : 0; }
};

/// Files inside a model directory.
namespace files {
inline constexpr const char* kCodec = "codec.json";
inline constexpr const char* kVaeArchitecture = "vae.json";
inline constexpr const char* kVaeCheckpoint = "vae.ckpt";
inline constexpr const char* kThreshold = "threshold.json";
inline constexpr const char* kGanConfig = "gan.json";
inline constexpr const char* kGanCheckpoint = "gan.ckpt";
inline constexpr const char* kBackground = "background.json";
inline constexpr const char* kResources = "resources.json";
}  // namespace files

void save_vae(const std::filesystem::path& dir, const vae::VaeModel& model);
vae::VaeModel load_vae(const std::filesystem::path& dir);
void save_threshold(const std::filesystem::path& dir, const vae::ThresholdConfig& t);
vae::ThresholdConfig load_threshold(const std::filesystem::path& dir);
void save_gan(const std::filesystem::path& dir, const gan::GanModel& model);
/// Uses the codec already loaded for the VAE.
gan::GanModel load_gan(const std::filesystem::path& dir, std::shared_ptr<const codec::Codec> codec);
void save_background(const std::filesystem::path& dir, const std::vector<codec::FeatureVector>& rows);
std::vector<codec::FeatureVector> load_background(const std::filesystem::path& dir, const codec::Codec& codec);

/// Stream files a model was trained from, recorded so a running service
/// can rebuild its retraining inputs. Paths are stored as given.
struct ResourcePaths {
  std::filesystem::path legitimate;
  /// Label file for `legitimate`; labelled fraud rows are dropped. Optional.
  std::filesystem::path labels;
  std::filesystem::path calibration;
  /// Fraud-only seed set; empty until train-gan records one.
  std::filesystem::path seed_set;
  /// Every n-th legitimate row is held out for validation.
  std::size_t validation_every = 10;

  nlohmann::json to_json() const;
  static ResourcePaths from_json(const nlohmann::json& j);
};

void save_resource_paths(const std::filesystem::path& dir, const ResourcePaths& r);
/// Empty when the model directory has no resources file.
std::optional<ResourcePaths> load_resource_paths(const std::filesystem::path& dir);

/// Writes every part that is present.
void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);
/// Throws ServiceError naming the first missing required file (codec, VAE,
/// threshold). The GAN and background are optional.
ModelBundle load_bundle(const std::filesystem::path& dir);

/// Writes `j` to `path` through a temporary file and rename.
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace dualpath::store
