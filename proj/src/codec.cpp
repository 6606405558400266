#include "dualpath/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <unordered_map>

#include "dualpath/errors.hpp"

namespace dualpath::codec {

namespace {

const char* normalization_name(Normalization n) {
  return n == Normalization::z_score ? "z-score" : "log-then-z-score";
}

Normalization parse_normalization(const std::string& s) {
  if (s == "z-score") return Normalization::z_score;
  if (s == "log-then-z-score") return Normalization::log_z_score;
  throw DataError("unknown normalization '" + s + "'");
}

double pre_transform(Normalization n, double raw) {
  return n == Normalization::log_z_score ? std::log1p(std::max(raw, 0.0)) : raw;
}

double post_transform(Normalization n, double v) {
  return n == Normalization::log_z_score ? std::max(std::expm1(v), 0.0) : v;
}

// Unit-norm rows spread as far apart as a small random search finds.
ad::Tensor make_embedding(std::size_t k, std::size_t d, std::mt19937_64& rng) {
  ad::Tensor best({k, d});
  if (k <= d) {
    for (std::size_t i = 0; i < k; ++i) best.at(i, i) = 1.0;
    return best;
  }
  std::normal_distribution<double> normal;
  double best_score = -1.0;
  for (int attempt = 0; attempt < 64; ++attempt) {
    ad::Tensor t({k, d});
    for (std::size_t i = 0; i < k; ++i) {
      double n2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        t.at(i, j) = normal(rng);
        n2 += t.at(i, j) * t.at(i, j);
      }
      const double n = std::sqrt(n2);
      for (std::size_t j = 0; j < d; ++j) t.at(i, j) /= n;
    }
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (t.at(a, j) - t.at(b, j)) * (t.at(a, j) - t.at(b, j));
        min_dist = std::min(min_dist, s);
      }
    }
    if (min_dist > best_score) {
      best_score = min_dist;
      best = std::move(t);
    }
  }
  return best;
}

json tensor_json(const ad::Tensor& t) {
  json rows = json::array();
  for (std::size_t i = 0; i < t.rows(); ++i) {
    json r = json::array();
    for (std::size_t j = 0; j < t.cols(); ++j) r.push_back(t.at(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

ad::Tensor tensor_from_json(const json& j) {
  const std::size_t r = j.size();
  if (r == 0) throw DataError("empty embedding table");
  const std::size_t c = j[0].size();
  ad::Tensor t({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    if (j[i].size() != c) throw DataError("ragged embedding table");
    for (std::size_t k = 0; k < c; ++k) t.at(i, k) = j[i][k].get<double>();
  }
  return t;
}

}  // namespace

void TransactionSchema::validate() const {
  std::set<std::string> names;
  for (const auto& f : continuous) {
    if (f.name.empty() || !names.insert(f.name).second) throw DataError("duplicate or empty field name '" + f.name + "'");
  }
  for (const auto& f : categorical) {
    if (f.name.empty() || !names.insert(f.name).second) throw DataError("duplicate or empty field name '" + f.name + "'");
    if (f.cardinality < 2) throw DataError("categorical field '" + f.name + "' needs cardinality >= 2");
    if (f.embedding_dim < 1) throw DataError("categorical field '" + f.name + "' needs embedding dimension >= 1");
  }
  if (field_count() == 0) throw DataError("schema declares no fields");
}

std::size_t TransactionSchema::feature_dim() const {
  std::size_t d = continuous.size();
  for (const auto& f : categorical) d += f.embedding_dim;
  return d;
}

std::vector<std::string> TransactionSchema::field_names() const {
  std::vector<std::string> out;
  for (const auto& f : continuous) out.push_back(f.name);
  for (const auto& f : categorical) out.push_back(f.name);
  return out;
}

std::optional<std::size_t> TransactionSchema::continuous_index(const std::string& name) const {
  for (std::size_t i = 0; i < continuous.size(); ++i)
    if (continuous[i].name == name) return i;
  return std::nullopt;
}

std::optional<std::size_t> TransactionSchema::categorical_index(const std::string& name) const {
  for (std::size_t i = 0; i < categorical.size(); ++i)
    if (categorical[i].name == name) return i;
  return std::nullopt;
}

TransactionSchema TransactionSchema::banking_default() {
  TransactionSchema s;
  s.continuous = {
      {"amount", "currency", Normalization::log_z_score},
      {"time_delta", "seconds", Normalization::log_z_score},
      {"lat", "degrees", Normalization::z_score},
      {"lon", "degrees", Normalization::z_score},
      {"home_distance", "km", Normalization::log_z_score},
  };
  s.categorical = {
      {"mcc", banking::kMccCount, 4},
      {"channel", 3, 3},
      {"device", 3, 3},
  };
  return s;
}

json TransactionSchema::to_json() const {
  json j;
  j["format_version"] = kSchemaFormatVersion;
  j["continuous"] = json::array();
  for (const auto& f : continuous) {
    j["continuous"].push_back({{"name", f.name}, {"unit", f.unit}, {"normalization", normalization_name(f.normalization)}});
  }
  j["categorical"] = json::array();
  for (const auto& f : categorical) {
    j["categorical"].push_back({{"name", f.name}, {"cardinality", f.cardinality}, {"embedding_dim", f.embedding_dim}});
  }
  return j;
}

TransactionSchema TransactionSchema::from_json(const json& j) {
  try {
    const int v = j.at("format_version").get<int>();
    if (v != kSchemaFormatVersion) throw DataError("unsupported schema format_version " + std::to_string(v));
    TransactionSchema s;
    for (const auto& f : j.at("continuous")) {
      s.continuous.push_back({f.at("name").get<std::string>(), f.value("unit", ""),
                              parse_normalization(f.value("normalization", "z-score"))});
    }
    for (const auto& f : j.at("categorical")) {
      s.categorical.push_back({f.at("name").get<std::string>(), f.at("cardinality").get<std::size_t>(),
                               f.at("embedding_dim").get<std::size_t>()});
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed schema: ") + e.what());
  }
}

TransactionSchema TransactionSchema::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open schema " + path.string());
  try {
    return from_json(json::parse(f));
  } catch (const json::parse_error& e) {
    throw DataError("schema " + path.string() + ": " + e.what());
  }
}

void TransactionSchema::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write schema " + path.string());
  f << to_json().dump(2) << '\n';
}

void validate(const Transaction& t, const TransactionSchema& schema) {
  if (t.continuous.size() != schema.continuous.size() || t.categorical.size() != schema.categorical.size()) {
    throw DataError("transaction " + t.id + " does not match schema field counts");
  }
  for (std::size_t i = 0; i < t.continuous.size(); ++i) {
    if (!std::isfinite(t.continuous[i])) {
      throw DataError("transaction " + t.id + ": non-finite value for '" + schema.continuous[i].name + "'");
    }
    if (schema.continuous[i].normalization == Normalization::log_z_score && t.continuous[i] < 0.0) {
      throw DataError("transaction " + t.id + ": negative value for '" + schema.continuous[i].name + "'");
    }
  }
  for (std::size_t i = 0; i < t.categorical.size(); ++i) {
    const int v = t.categorical[i];
    if (v < 0 || static_cast<std::size_t>(v) >= schema.categorical[i].cardinality) {
      throw DataError("transaction " + t.id + ": field '" + schema.categorical[i].name + "' index " +
                      std::to_string(v) + " outside [0," + std::to_string(schema.categorical[i].cardinality) + ")");
    }
  }
  if (!std::isfinite(t.timestamp)) throw DataError("transaction " + t.id + ": non-finite timestamp");
}

json to_json(const Transaction& t, const TransactionSchema& schema) {
  json j;
  j["id"] = t.id;
  j["account"] = t.account;
  j["timestamp"] = t.timestamp;
  json c = json::object();
  for (std::size_t i = 0; i < schema.continuous.size(); ++i) c[schema.continuous[i].name] = t.continuous.at(i);
  json k = json::object();
  for (std::size_t i = 0; i < schema.categorical.size(); ++i) k[schema.categorical[i].name] = t.categorical.at(i);
  j["continuous"] = std::move(c);
  j["categorical"] = std::move(k);
  return j;
}

Transaction transaction_from_json(const json& j, const TransactionSchema& schema) {
  try {
    Transaction t;
    t.id = j.at("id").get<std::string>();
    t.account = j.value("account", std::int64_t{-1});
    t.timestamp = j.value("timestamp", 0.0);
    const auto& c = j.at("continuous");
    for (const auto& f : schema.continuous) t.continuous.push_back(c.at(f.name).get<double>());
    const auto& k = j.at("categorical");
    for (const auto& f : schema.categorical) t.categorical.push_back(k.at(f.name).get<int>());
    return t;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed transaction record: ") + e.what());
  }
}

Layout Layout::for_schema(const TransactionSchema& schema) {
  Layout l;
  std::size_t off = 0;
  for (std::size_t i = 0; i < schema.continuous.size(); ++i) {
    l.slices.push_back({schema.continuous[i].name, false, i, off, 1});
    ++off;
  }
  l.continuous_dim = off;
  for (std::size_t i = 0; i < schema.categorical.size(); ++i) {
    l.slices.push_back({schema.categorical[i].name, true, i, off, schema.categorical[i].embedding_dim});
    off += schema.categorical[i].embedding_dim;
  }
  l.dim = off;
  return l;
}

Codec::Codec(TransactionSchema schema, NormalizationStats stats, std::vector<ad::Tensor> embeddings)
    : schema_(std::move(schema)), stats_(std::move(stats)), embeddings_(std::move(embeddings)) {
  schema_.validate();
  if (stats_.mean.size() != schema_.continuous.size() || stats_.stddev.size() != schema_.continuous.size()) {
    throw ContractError("normalization statistics do not match the schema");
  }
  if (embeddings_.size() != schema_.categorical.size()) throw ContractError("one embedding table per categorical field");
  for (std::size_t i = 0; i < embeddings_.size(); ++i) {
    const auto& f = schema_.categorical[i];
    if (embeddings_[i].rows() != f.cardinality || embeddings_[i].cols() != f.embedding_dim) {
      throw ShapeError("embedding table for '" + f.name + "' has shape " + ad::to_string(embeddings_[i].shape()) +
                       ", expected [" + std::to_string(f.cardinality) + "," + std::to_string(f.embedding_dim) + "]");
    }
  }
  layout_ = std::make_shared<const Layout>(Layout::for_schema(schema_));
}

Codec Codec::fit(const TransactionSchema& schema, std::span<const Transaction> legitimate, std::uint64_t seed) {
  schema.validate();
  if (legitimate.empty()) throw ContractError("cannot fit normalization statistics on an empty set");
  NormalizationStats stats;
  for (std::size_t i = 0; i < schema.continuous.size(); ++i) {
    const auto n = schema.continuous[i].normalization;
    double sum = 0.0, sum2 = 0.0;
    for (const auto& t : legitimate) {
      const double v = pre_transform(n, t.continuous.at(i));
      sum += v;
      sum2 += v * v;
    }
    const double count = static_cast<double>(legitimate.size());
    const double mean = sum / count;
    const double var = std::max(sum2 / count - mean * mean, 0.0);
    stats.mean.push_back(mean);
    stats.stddev.push_back(var > 1e-24 ? std::sqrt(var) : 1.0);
  }
  std::mt19937_64 rng(seed);
  std::vector<ad::Tensor> tables;
  for (const auto& f : schema.categorical) tables.push_back(make_embedding(f.cardinality, f.embedding_dim, rng));
  return Codec(schema, std::move(stats), std::move(tables));
}

Codec Codec::identity(const TransactionSchema& schema) {
  NormalizationStats stats{std::vector<double>(schema.continuous.size(), 0.0),
                           std::vector<double>(schema.continuous.size(), 1.0)};
  std::vector<ad::Tensor> tables;
  for (const auto& f : schema.categorical) {
    if (f.embedding_dim != f.cardinality) throw ContractError("identity embeddings need embedding_dim == cardinality");
    ad::Tensor t({f.cardinality, f.cardinality});
    for (std::size_t i = 0; i < f.cardinality; ++i) t.at(i, i) = 1.0;
    tables.push_back(std::move(t));
  }
  return Codec(schema, std::move(stats), std::move(tables));
}

double Codec::normalize(std::size_t i, double raw) const {
  return (pre_transform(schema_.continuous[i].normalization, raw) - stats_.mean[i]) / stats_.stddev[i];
}

double Codec::denormalize(std::size_t i, double normalized) const {
  return post_transform(schema_.continuous[i].normalization, normalized * stats_.stddev[i] + stats_.mean[i]);
}

void Codec::encode_into(const Transaction& t, std::span<double> out) const {
  if (out.size() != layout_->dim) throw ShapeError("encode_into: output span has wrong length");
  if (t.continuous.size() != schema_.continuous.size() || t.categorical.size() != schema_.categorical.size()) {
    throw DataError("transaction " + t.id + " does not match schema field counts");
  }
  std::size_t off = 0;
  for (std::size_t i = 0; i < schema_.continuous.size(); ++i) out[off++] = normalize(i, t.continuous[i]);
  for (std::size_t i = 0; i < schema_.categorical.size(); ++i) {
    const int idx = t.categorical[i];
    const auto& f = schema_.categorical[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= f.cardinality) {
      throw DataError("encoding error: field '" + f.name + "' index " + std::to_string(idx) + " outside [0," +
                      std::to_string(f.cardinality) + ")");
    }
    const auto& table = embeddings_[i];
    for (std::size_t j = 0; j < f.embedding_dim; ++j) out[off++] = table.at(static_cast<std::size_t>(idx), j);
  }
}

FeatureVector Codec::encode(const Transaction& t) const {
  FeatureVector fv;
  fv.values.resize(layout_->dim);
  encode_into(t, fv.values);
  fv.layout = layout_;
  return fv;
}

std::size_t Codec::nearest_category(std::size_t field, std::span<const double> slice) const {
  const auto& table = embeddings_.at(field);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < table.rows(); ++r) {
    double d = 0.0;
    for (std::size_t j = 0; j < table.cols(); ++j) d += (slice[j] - table.at(r, j)) * (slice[j] - table.at(r, j));
    if (d < best_d) {
      best_d = d;
      best = r;
    }
  }
  return best;
}

Transaction Codec::decode(std::span<const double> values) const {
  if (values.size() != layout_->dim) throw ShapeError("decode: vector length does not match layout");
  Transaction t;
  for (const auto& s : layout_->slices) {
    if (!s.categorical) {
      t.continuous.push_back(denormalize(s.field_index, values[s.offset]));
    } else {
      t.categorical.push_back(static_cast<int>(nearest_category(s.field_index, values.subspan(s.offset, s.width))));
    }
  }
  return t;
}

json Codec::to_json() const {
  json j;
  j["format_version"] = kSchemaFormatVersion;
  j["schema"] = schema_.to_json();
  j["mean"] = stats_.mean;
  j["stddev"] = stats_.stddev;
  j["embeddings"] = json::array();
  for (const auto& t : embeddings_) j["embeddings"].push_back(tensor_json(t));
  return j;
}

Codec Codec::from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kSchemaFormatVersion) throw DataError("unsupported codec format_version");
    auto schema = TransactionSchema::from_json(j.at("schema"));
    NormalizationStats stats{j.at("mean").get<std::vector<double>>(), j.at("stddev").get<std::vector<double>>()};
    std::vector<ad::Tensor> tables;
    for (const auto& t : j.at("embeddings")) tables.push_back(tensor_from_json(t));
    return Codec(std::move(schema), std::move(stats), std::move(tables));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed codec file: ") + e.what());
  }
}

void Codec::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write codec " + path.string());
  // nlohmann emits shortest round-trip decimals, so doubles reload bit-exactly.
  f << to_json().dump() << '\n';
}

Codec Codec::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open codec " + path.string());
  try {
    return from_json(json::parse(f));
  } catch (const json::parse_error& e) {
    throw DataError("codec " + path.string() + ": " + e.what());
  }
}

std::vector<Transaction> read_stream(const std::filesystem::path& path, const TransactionSchema& schema) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open stream " + path.string());
  std::vector<Transaction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(transaction_from_json(json::parse(line), schema));
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    validate(out.back(), schema);
  }
  return out;
}

void write_stream(const std::filesystem::path& path, std::span<const Transaction> txs,
                  const TransactionSchema& schema) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write stream " + path.string());
  for (const auto& t : txs) f << to_json(t, schema).dump() << '\n';
}

void write_labels(const std::filesystem::path& path, std::span<const Transaction> txs) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write labels " + path.string());
  for (const auto& t : txs) f << json{{"id", t.id}, {"label", t.label}}.dump() << '\n';
}

void attach_labels(const std::filesystem::path& path, std::vector<Transaction>& txs) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open labels " + path.string());
  std::unordered_map<std::string, std::string> labels;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    labels[j.at("id").get<std::string>()] = j.at("label").get<std::string>();
  }
  for (auto& t : txs) {
    auto it = labels.find(t.id);
    if (it == labels.end()) throw DataError("no label for transaction " + t.id);
    t.label = it->second;
  }
}

}  // namespace dualpath::codec
