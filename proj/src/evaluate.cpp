#include "dualpath/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "dualpath/errors.hpp"

namespace dualpath::eval {

namespace {

double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["confusion"] = {{"tp", confusion.tp}, {"fp", confusion.fp}, {"tn", confusion.tn}, {"fn", confusion.fn}};
  j["precision"] = precision;
  j["recall"] = recall;
  j["fpr"] = fpr;
  j["auroc"] = std::isnan(auroc) ? nlohmann::json(nullptr) : nlohmann::json(auroc);
  for (const auto& [name, m] : per_scenario) {
    j["per_scenario"][name] = {
        {"total", m.total}, {"detected", m.detected}, {"recall", m.recall}, {"precision", m.precision}};
  }
  return j;
}

double auroc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) return std::numeric_limits<double>::quiet_NaN();
  // Rank-sum over the pooled sample with average ranks for ties.
  std::vector<std::pair<double, bool>> all;
  all.reserve(positives.size() + negatives.size());
  for (double p : positives) all.emplace_back(p, true);
  for (double n : negatives) all.emplace_back(n, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second) rank_sum += avg;
    }
    i = j;
  }
  const double np = static_cast<double>(positives.size());
  const double nn = static_cast<double>(negatives.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::map<std::string, std::string> labels_of(std::span<const codec::Transaction> stream) {
  std::map<std::string, std::string> m;
  for (const auto& t : stream) m[t.id] = t.label;
  return m;
}

MetricsReport evaluate(std::span<const ScoredRecord> records, const std::map<std::string, std::string>& labels) {
  MetricsReport r;
  std::set<std::string> seen;
  std::vector<double> pos, neg;
  std::map<std::string, std::size_t> total, detected;
  for (const auto& rec : records) {
    const auto it = labels.find(rec.id);
    if (it == labels.end()) throw DataError("evaluation: no ground truth for transaction " + rec.id);
    if (!seen.insert(rec.id).second) throw DataError("evaluation: transaction " + rec.id + " scored twice");
    const bool fraud = it->second != codec::kLegitimate;
    if (fraud) {
      pos.push_back(rec.score);
      ++total[it->second];
      if (rec.flagged) ++detected[it->second];
      rec.flagged ? ++r.confusion.tp : ++r.confusion.fn;
    } else {
      neg.push_back(rec.score);
      rec.flagged ? ++r.confusion.fp : ++r.confusion.tn;
    }
  }
  const auto& c = r.confusion;
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.fpr = ratio(c.fp, c.fp + c.tn);
  r.auroc = auroc(pos, neg);
  for (const auto& [label, n] : total) {
    ScenarioMetrics m;
    m.total = n;
    m.detected = detected[label];
    m.recall = ratio(m.detected, n);
    m.precision = ratio(m.detected, m.detected + c.fp);
    r.per_scenario[label] = m;
  }
  return r;
}

double amount_rule_recall(std::span<const codec::Transaction> stream, const std::string& label, double threshold) {
  std::size_t n = 0, hit = 0;
  for (const auto& t : stream) {
    if (t.label != label) continue;
    ++n;
    if (t.continuous.at(codec::banking::kAmount) > threshold) ++hit;
  }
  return ratio(hit, n);
}

}  // namespace dualpath::eval
