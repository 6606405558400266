#include "dualpath/model_store.hpp"

#include <fstream>

#include "dualpath/errors.hpp"

namespace dualpath::store {

namespace fs = std::filesystem;
using nlohmann::json;

void write_json_atomic(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_vae(const fs::path& dir, const vae::VaeModel& model) {
  fs::create_directories(dir);
  model.codec().save(dir / files::kCodec);
  write_json_atomic(dir / files::kVaeArchitecture, {{"format_version", 1}, {"architecture", model.architecture().to_json()}});
  model.params().save(dir / files::kVaeCheckpoint);
}

vae::VaeModel load_vae(const fs::path& dir) {
  auto codec = std::make_shared<const codec::Codec>(codec::Codec::load(dir / files::kCodec));
  const json arch = read_json(dir / files::kVaeArchitecture);
  if (arch.value("format_version", 0) != 1) throw DataError("unsupported vae.json format_version");
  return vae::VaeModel(std::move(codec), vae::VaeArchitecture::from_json(arch.at("architecture")),
                       nn::ParameterSet::load(dir / files::kVaeCheckpoint));
}

void save_threshold(const fs::path& dir, const vae::ThresholdConfig& t) {
  write_json_atomic(dir / files::kThreshold, t.to_json());
}

vae::ThresholdConfig load_threshold(const fs::path& dir) {
  return vae::ThresholdConfig::from_json(read_json(dir / files::kThreshold));
}

void save_gan(const fs::path& dir, const gan::GanModel& model) {
  fs::create_directories(dir);
  write_json_atomic(dir / files::kGanConfig, {{"format_version", 1}, {"config", model.config().to_json()}});
  model.combined().save(dir / files::kGanCheckpoint);
}

gan::GanModel load_gan(const fs::path& dir, std::shared_ptr<const codec::Codec> codec) {
  const json cfg = read_json(dir / files::kGanConfig);
  if (cfg.value("format_version", 0) != 1) throw DataError("unsupported gan.json format_version");
  return gan::GanModel::from_combined(std::move(codec), gan::GanConfig::from_json(cfg.at("config")),
                                      nn::ParameterSet::load(dir / files::kGanCheckpoint));
}

void save_background(const fs::path& dir, const std::vector<codec::FeatureVector>& rows) {
  json j{{"format_version", 1}, {"rows", json::array()}};
  for (const auto& r : rows) j["rows"].push_back(r.values);
  write_json_atomic(dir / files::kBackground, j);
}

std::vector<codec::FeatureVector> load_background(const fs::path& dir, const codec::Codec& codec) {
  const json j = read_json(dir / files::kBackground);
  std::vector<codec::FeatureVector> out;
  for (const auto& r : j.at("rows")) {
    codec::FeatureVector v{r.get<std::vector<double>>(), codec.layout_ptr()};
    if (v.values.size() != codec.layout().dim) throw DataError("background row does not match the codec layout");
    out.push_back(std::move(v));
  }
  return out;
}

void save_bundle(const fs::path& dir, const ModelBundle& bundle) {
  if (!bundle.vae) throw ContractError("save_bundle: bundle has no VAE");
  save_vae(dir, *bundle.vae);
  save_threshold(dir, bundle.threshold);
  if (bundle.gan) save_gan(dir, *bundle.gan);
  if (!bundle.background.empty()) save_background(dir, bundle.background);
}

ModelBundle load_bundle(const fs::path& dir) {
  for (const char* required : {files::kCodec, files::kVaeArchitecture, files::kVaeCheckpoint, files::kThreshold}) {
    if (!fs::exists(dir / required)) {
      throw ServiceError("model directory " + dir.string() + " is missing " + required + " (run train-vae first)");
    }
  }
  ModelBundle b;
  auto vae = std::make_shared<const vae::VaeModel>(load_vae(dir));
  b.threshold = load_threshold(dir);
  if (fs::exists(dir / files::kGanCheckpoint)) {
    b.gan = std::make_shared<const gan::GanModel>(load_gan(dir, vae->codec_ptr()));
  }
  if (fs::exists(dir / files::kBackground)) b.background = load_background(dir, vae->codec());
  b.vae = std::move(vae);
  return b;
}

json ResourcePaths::to_json() const {
  return {{"legitimate", legitimate.string()},
          {"labels", labels.string()},
          {"calibration", calibration.string()},
          {"seed_set", seed_set.string()},
          {"validation_every", validation_every}};
}

ResourcePaths ResourcePaths::from_json(const json& j) {
  try {
    ResourcePaths r;
    r.legitimate = j.at("legitimate").get<std::string>();
    r.labels = j.value("labels", std::string());
    r.calibration = j.at("calibration").get<std::string>();
    r.seed_set = j.value("seed_set", std::string());
    r.validation_every = j.value("validation_every", r.validation_every);
    if (r.validation_every < 2) throw DataError("validation_every must be at least 2");
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed resources file: ") + e.what());
  }
}

void save_resource_paths(const fs::path& dir, const ResourcePaths& r) {
  write_json_atomic(dir / files::kResources, r.to_json());
}

std::optional<ResourcePaths> load_resource_paths(const fs::path& dir) {
  if (!fs::exists(dir / files::kResources)) return std::nullopt;
  return ResourcePaths::from_json(read_json(dir / files::kResources));
}

}  // namespace dualpath::store
