#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualpath/tensor.hpp"

namespace dualpath::codec {

using nlohmann::json;

enum class Normalization { z_score, log_z_score };

struct ContinuousField {
  std::string name;
  std::string unit;
  Normalization normalization = Normalization::z_score;
};

struct CategoricalField {
  std::string name;
  std::size_t cardinality = 2;
  std::size_t embedding_dim = 1;
};

inline constexpr int kSchemaFormatVersion = 1;

struct TransactionSchema {
  std::vector<ContinuousField> continuous;
  std::vector<CategoricalField> categorical;

  /// Throws DataError on duplicate names, cardinality < 2 or zero embedding dims.
  void validate() const;

  std::size_t field_count() const { return continuous.size() + categorical.size(); }
  /// Encoded vector length: #continuous + sum of embedding dims.
  std::size_t feature_dim() const;
  /// Continuous names first, then categorical, which is the field order used
  /// everywhere a per-field vector appears (e.g. Shapley attributions).
  std::vector<std::string> field_names() const;
  std::optional<std::size_t> continuous_index(const std::string& name) const;
  std::optional<std::size_t> categorical_index(const std::string& name) const;

  /// amount, time_delta, lat, lon, home_distance; mcc, channel, device.
  static TransactionSchema banking_default();

  json to_json() const;
  static TransactionSchema from_json(const json& j);
  static TransactionSchema load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Field indices of the default banking schema.
namespace banking {
inline constexpr std::size_t kAmount = 0;
inline constexpr std::size_t kTimeDelta = 1;
inline constexpr std::size_t kLat = 2;
inline constexpr std::size_t kLon = 3;
inline constexpr std::size_t kHomeDistance = 4;
inline constexpr std::size_t kMcc = 0;
inline constexpr std::size_t kChannel = 1;
inline constexpr std::size_t kDevice = 2;
inline constexpr std::size_t kMccCount = 16;
enum Channel : int { pos = 0, online = 1, atm = 2 };
enum Device : int { primary = 0, secondary = 1, unseen = 2 };
}  // namespace banking

inline const std::string kLegitimate = "legitimate";

struct Transaction {
  std::string id;
  std::int64_t account = -1;
  double timestamp = 0.0;
  std::vector<double> continuous;
  std::vector<int> categorical;
  /// Ground truth, simulator-only. Never serialized into stream records.
  std::string label = kLegitimate;

  bool is_fraud() const { return label != kLegitimate; }
};

/// Throws DataError describing the first violation.
void validate(const Transaction& t, const TransactionSchema& schema);

json to_json(const Transaction& t, const TransactionSchema& schema);
Transaction transaction_from_json(const json& j, const TransactionSchema& schema);

struct FieldSlice {
  std::string name;
  bool categorical = false;
  /// Index within the schema's continuous or categorical list.
  std::size_t field_index = 0;
  std::size_t offset = 0;
  std::size_t width = 0;

  bool operator==(const FieldSlice&) const = default;
};

struct Layout {
  std::vector<FieldSlice> slices;  // schema field order
  std::size_t dim = 0;
  std::size_t continuous_dim = 0;

  static Layout for_schema(const TransactionSchema& schema);
  bool operator==(const Layout&) const = default;
};

struct FeatureVector {
  std::vector<double> values;
  std::shared_ptr<const Layout> layout;
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Maps transactions to dense vectors: continuous fields are normalised with
/// frozen statistics, categorical fields are replaced by fixed embedding rows.
class Codec {
 public:
  Codec(TransactionSchema schema, NormalizationStats stats, std::vector<ad::Tensor> embeddings);

  /// Statistics from `legitimate`; embedding tables generated from `seed`.
  static Codec fit(const TransactionSchema& schema, std::span<const Transaction> legitimate, std::uint64_t seed);
  /// Identity statistics and embeddings (embedding_dim must equal cardinality).
  static Codec identity(const TransactionSchema& schema);

  FeatureVector encode(const Transaction& t) const;
  /// Allocation-free form; `out.size()` must equal layout().dim.
  void encode_into(const Transaction& t, std::span<double> out) const;
  /// Inverse map: continuous fields de-normalised, categorical slices mapped
  /// to the nearest embedding row.
  Transaction decode(std::span<const double> values) const;

  double normalize(std::size_t continuous_field, double raw) const;
  double denormalize(std::size_t continuous_field, double normalized) const;
  std::size_t nearest_category(std::size_t categorical_field, std::span<const double> slice) const;

  const TransactionSchema& schema() const { return schema_; }
  const Layout& layout() const { return *layout_; }
  std::shared_ptr<const Layout> layout_ptr() const { return layout_; }
  const NormalizationStats& stats() const { return stats_; }
  const ad::Tensor& embedding(std::size_t categorical_field) const { return embeddings_.at(categorical_field); }

  json to_json() const;
  static Codec from_json(const json& j);
  void save(const std::filesystem::path& path) const;
  static Codec load(const std::filesystem::path& path);

 private:
  TransactionSchema schema_;
  NormalizationStats stats_;
  std::vector<ad::Tensor> embeddings_;
  std::shared_ptr<const Layout> layout_;
};

/// Stream files: one JSON record per line.
std::vector<Transaction> read_stream(const std::filesystem::path& path, const TransactionSchema& schema);
void write_stream(const std::filesystem::path& path, std::span<const Transaction> txs,
                  const TransactionSchema& schema);
/// Label files: one {"id", "label"} record per line.
void write_labels(const std::filesystem::path& path, std::span<const Transaction> txs);
/// Attaches labels from a label file to `txs` by id.
void attach_labels(const std::filesystem::path& path, std::vector<Transaction>& txs);

}  // namespace dualpath::codec
