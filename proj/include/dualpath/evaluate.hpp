#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualpath/codec.hpp"

namespace dualpath::eval {

/// One scored transaction: `flagged` is the system's final fraud call.
struct ScoredRecord {
  std::string id;
  double score = 0.0;
  bool flagged = false;
};

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
};

struct ScenarioMetrics {
  std::size_t total = 0;
  std::size_t detected = 0;
  double recall = 0.0;
  /// detected / (detected + legitimate flagged)
  double precision = 0.0;
};

struct MetricsReport {
  Confusion confusion;
  double precision = 0.0;
  double recall = 0.0;
  double fpr = 0.0;
  /// Pooled over every fraud label; NaN when either class is empty.
  double auroc = 0.0;
  std::map<std::string, ScenarioMetrics> per_scenario;

  nlohmann::json to_json() const;
};

/// Mann-Whitney estimate with ties counted as one half.
double auroc(std::span<const double> positives, std::span<const double> negatives);

std::map<std::string, std::string> labels_of(std::span<const codec::Transaction> stream);

/// Throws DataError when a record id is missing from `labels` or repeated.
MetricsReport evaluate(std::span<const ScoredRecord> records, const std::map<std::string, std::string>& labels);

/// Recall of the rule "flag amount > threshold" on transactions labelled `label`.
double amount_rule_recall(std::span<const codec::Transaction> stream, const std::string& label, double threshold);

}  // namespace dualpath::eval
