#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualpath/buffer.hpp"
#include "dualpath/event_log.hpp"
#include "dualpath/model_store.hpp"
#include "dualpath/retraining.hpp"
#include "dualpath/shap.hpp"

namespace dualpath::pipeline {

enum class Outcome { approve, block, pending_review };
enum class PendingPolicy { hold, provisional_approve };
enum class ReviewState { open, confirmed_fraud, false_positive };
enum class ReviewVerdict { confirmed_fraud, false_positive };

std::string outcome_name(Outcome o);
std::string policy_name(PendingPolicy p);
PendingPolicy policy_from_name(const std::string& s);
std::string state_name(ReviewState s);
ReviewState state_from_name(const std::string& s);
/// Accepts "confirmed-fraud" and "false-positive".
ReviewVerdict verdict_from_name(const std::string& s);

struct Decision {
  std::string transaction_id;
  Outcome outcome = Outcome::approve;
  vae::ScoreResult score;
  /// "approve", "hold", "provisional-approve" or "block".
  std::string customer_action = "approve";
  /// Set for flagged transactions: where the explanation will appear.
  std::string explanation_ref;
  double decided_at = 0.0;
  double latency_us = 0.0;
  std::uint64_t generation = 0;
  /// Scoring failure that routed the transaction to review.
  std::string error;

  nlohmann::json to_json() const;
};

struct ReviewItem {
  std::string id;
  codec::Transaction transaction;
  vae::ScoreResult score;
  std::optional<shap::Explanation> explanation;
  std::string explanation_error;
  bool scoring_failed = false;
  double enqueued_at = 0.0;
  ReviewState state = ReviewState::open;
  std::string reviewer;
  double resolved_at = 0.0;
  std::uint64_t generation = 0;

  Outcome outcome() const;
  nlohmann::json to_json(const codec::TransactionSchema& schema) const;
};

/// Queue, buffer and false-positive set as projected from the event log.
struct ServiceState {
  std::map<std::string, ReviewItem> items;
  std::vector<buffer::BufferEntry> buffer;
  std::vector<std::string> false_positive_ids;
  /// Leading false positives already folded into a fine-tune.
  std::size_t false_positives_consumed = 0;
  std::size_t cycles = 0;

  nlohmann::json to_json(const codec::TransactionSchema& schema) const;
};

ServiceState replay(const std::vector<events::Event>& log, const codec::TransactionSchema& schema);

struct RetrainTrigger {
  bool enabled = false;
  std::size_t buffer_threshold = 50;
  /// <= 0 disables the wall-clock trigger.
  double interval_s = 0.0;
  double poll_s = 0.2;
};

struct PipelineConfig {
  std::size_t workers = 1;
  std::size_t queue_capacity = 10000;
  PendingPolicy pending_policy = PendingPolicy::hold;
  RetrainTrigger retrain;
  shap::ExplainConfig explain;
  std::optional<std::filesystem::path> log_path;
  std::optional<std::filesystem::path> explanation_dir;
  std::optional<std::filesystem::path> reports_dir;
  /// Run explanation workers and retraining in the idle scheduling class.
  bool low_priority_background = true;
  /// Latency samples kept per path for percentiles.
  std::size_t latency_window = 1000000;

  void validate() const;
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
};

struct LatencySummary {
  std::size_t count = 0;
  double p50 = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
  double max = 0.0;

  nlohmann::json to_json() const;
};

/// Nearest-rank percentiles of `samples` (microseconds).
LatencySummary summarize(std::vector<double> samples);

struct Metrics {
  LatencySummary approve_path;
  LatencySummary flag_path;
  std::size_t total = 0;
  std::size_t approved = 0;
  std::size_t flagged = 0;
  std::size_t explained = 0;
  std::size_t pending_explanations = 0;
  std::size_t blocked = 0;
  std::size_t false_positives = 0;
  std::size_t failed_closed = 0;
  std::size_t open_reviews = 0;
  std::size_t buffer_size = 0;
  std::size_t buffer_depth = 0;
  std::size_t cycles_run = 0;
  std::size_t cycles_failed = 0;
  std::size_t explanations_on_scoring_path = 0;
  double explained_fraction = 0.0;
  double tau = 0.0;
  std::uint64_t vae_version = 0;
  std::uint64_t gan_version = 0;
  std::uint64_t generation = 0;
  bool retraining_active = false;

  nlohmann::json to_json() const;
};

class Pipeline {
 public:
  /// With a log path that already holds events, the queue, buffer and
  /// false-positive set are rebuilt from it and open items that lack an
  /// explanation are queued again.
  Pipeline(store::ModelBundle initial, PipelineConfig config,
           std::shared_ptr<const retrain::CycleResources> resources = nullptr, retrain::CycleConfig cycle = {});
  ~Pipeline();

  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  /// Approve when E(x) <= tau; otherwise queue for review and schedule an
  /// explanation off this thread. Throws BackpressureError when the review
  /// queue is full and ConflictError for an id already under review.
  Decision process(const codec::Transaction& t);
  std::vector<Decision> process_batch(std::span<const codec::Transaction> batch);

  /// Throws NotFoundError for unknown ids and ConflictError if already resolved.
  ReviewItem resolve(const std::string& id, ReviewVerdict verdict, const std::string& reviewer,
                     const std::string& scenario_tag = "");

  /// Sorted by score, highest first.
  std::vector<ReviewItem> reviews(std::optional<ReviewState> filter) const;
  std::optional<ReviewItem> review(const std::string& id) const;

  Metrics metrics() const;
  std::shared_ptr<const store::ModelBundle> snapshot() const { return slot_.load(); }
  void publish(store::ModelBundle next);

  /// Runs a cycle now on the calling thread.
  retrain::CycleReport run_retraining_now(const retrain::StageHook& hook = {});
  /// Runs a cycle if the trigger condition holds; otherwise returns nothing.
  std::optional<retrain::CycleReport> maybe_run_retraining(const retrain::StageHook& hook = {});
  /// Starts one cycle on a background thread. Returns false if one is running.
  bool start_retraining_async(const retrain::StageHook& hook = {});
  bool retraining_active() const { return retraining_active_.load(); }
  /// Blocks until no cycle is running; returns the last report, if any.
  std::optional<retrain::CycleReport> wait_for_retraining();

  /// Blocks until every queued explanation has been computed.
  void wait_for_explanations();
  /// Stops the service. With `drain` queued explanations finish first;
  /// without it they are dropped and their items stay open.
  void shutdown(bool drain = true);

  ServiceState state() const;
  const events::EventLog& log() const { return *log_; }
  const codec::TransactionSchema& schema() const { return schema_; }
  std::vector<codec::FeatureVector> false_positive_vectors() const;
  const buffer::AdversarialBuffer& adversarial_buffer() const { return buffer_; }
  const PipelineConfig& config() const { return config_; }

 private:
  struct Work {
    std::string id;
    codec::Transaction transaction;
    std::shared_ptr<const store::ModelBundle> snapshot;
  };

  void worker_loop();
  void scheduler_loop();
  void recover();
  void record_latency(std::vector<double>& window, std::size_t& next, double us);
  void enqueue(Work w);
  /// Caller holds retrain_mu_.
  retrain::CycleReport run_cycle(const retrain::StageHook& hook);
  void finish_cycle(const retrain::CycleReport& report, const nlohmann::json& data);

  PipelineConfig config_;
  codec::TransactionSchema schema_;
  std::shared_ptr<const retrain::CycleResources> resources_;
  retrain::CycleConfig cycle_;
  nn::SnapshotSlot<store::ModelBundle> slot_;
  std::unique_ptr<events::EventLog> log_;
  buffer::AdversarialBuffer buffer_;

  mutable std::mutex state_mu_;
  std::map<std::string, ReviewItem> items_;
  std::vector<std::string> fp_ids_;
  std::vector<codec::FeatureVector> fp_vectors_;
  std::size_t fp_consumed_ = 0;
  std::size_t open_ = 0;
  std::size_t total_ = 0;
  std::size_t approved_ = 0;
  std::size_t flagged_ = 0;
  std::size_t explained_ = 0;
  std::size_t blocked_ = 0;
  std::size_t failed_closed_ = 0;
  std::size_t cycles_ = 0;
  std::size_t cycles_failed_ = 0;
  std::size_t on_scoring_path_ = 0;

  mutable std::mutex latency_mu_;
  std::vector<double> approve_latency_;
  std::vector<double> flag_latency_;
  std::size_t approve_next_ = 0;
  std::size_t flag_next_ = 0;

  std::mutex work_mu_;
  std::condition_variable work_cv_;
  std::condition_variable idle_cv_;
  std::deque<Work> work_;
  std::size_t busy_ = 0;
  bool stop_workers_ = false;
  std::vector<std::thread> workers_;

  std::mutex retrain_mu_;
  std::atomic<bool> retraining_active_{false};
  std::mutex async_mu_;
  std::thread retrain_thread_;
  std::optional<retrain::CycleReport> last_cycle_;
  double last_cycle_time_ = 0.0;

  std::mutex scheduler_mu_;
  std::condition_variable scheduler_cv_;
  bool stop_scheduler_ = false;
  std::thread scheduler_;

  std::atomic<bool> accepting_{true};
  std::mutex shutdown_mu_;
  bool shut_down_ = false;
};

struct LatencyReport {
  std::size_t transactions = 0;
  LatencySummary approve_path;
  LatencySummary flag_path;
  double explained_fraction = 0.0;
  // Sampled at the first and last scored transaction, before waiting on explanations.
  bool retraining_throughout = false;

  nlohmann::json to_json() const;
};

/// Replays `stream` through the pipeline and summarizes per-path latency.
/// Throws ContractError on an empty stream.
LatencyReport measure_latency(Pipeline& pipeline, std::span<const codec::Transaction> stream);

}  // namespace dualpath::pipeline
