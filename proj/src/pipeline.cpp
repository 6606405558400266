#include "dualpath/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "dualpath/errors.hpp"
#include "dualpath/sysutil.hpp"

namespace dualpath::pipeline {

using nlohmann::json;
using events::EventType;

namespace {

const char* const kScoringFailed = "not explained: scoring failed";

double us_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
}

json score_json(const vae::ScoreResult& s) {
  return {{"error", s.reconstruction_error},
          {"tau", s.tau},
          {"verdict", s.verdict == vae::Verdict::anomalous ? "anomalous" : "normal"},
          {"latency_us", s.latency_us},
          {"model_version", s.model_version}};
}

vae::ScoreResult score_from_json(const std::string& id, const json& j) {
  vae::ScoreResult s;
  s.transaction_id = id;
  s.reconstruction_error = j.at("error").get<double>();
  s.tau = j.at("tau").get<double>();
  s.verdict = j.at("verdict").get<std::string>() == "anomalous" ? vae::Verdict::anomalous : vae::Verdict::normal;
  s.latency_us = j.value("latency_us", 0.0);
  s.model_version = j.value("model_version", std::uint64_t{0});
  return s;
}

std::vector<double> to_vector(const json& j) { return j.get<std::vector<double>>(); }

void write_explanation(const std::filesystem::path& dir, const shap::Explanation& e) {
  std::filesystem::create_directories(dir);
  store::write_json_atomic(dir / (e.transaction_id + ".json"), e.to_json());
}

}  // namespace

std::string outcome_name(Outcome o) {
  switch (o) {
    case Outcome::approve: return "approve";
    case Outcome::block: return "block";
    case Outcome::pending_review: return "pending-review";
  }
  return "?";
}

std::string policy_name(PendingPolicy p) { return p == PendingPolicy::hold ? "hold" : "provisional-approve"; }

PendingPolicy policy_from_name(const std::string& s) {
  if (s == "hold") return PendingPolicy::hold;
  if (s == "provisional-approve") return PendingPolicy::provisional_approve;
  throw DataError("unknown pending policy '" + s + "' (expected hold or provisional-approve)");
}

std::string state_name(ReviewState s) {
  switch (s) {
    case ReviewState::open: return "open";
    case ReviewState::confirmed_fraud: return "confirmed-fraud";
    case ReviewState::false_positive: return "false-positive";
  }
  return "?";
}

ReviewState state_from_name(const std::string& s) {
  if (s == "open") return ReviewState::open;
  if (s == "confirmed-fraud") return ReviewState::confirmed_fraud;
  if (s == "false-positive") return ReviewState::false_positive;
  throw DataError("unknown review state '" + s + "'");
}

ReviewVerdict verdict_from_name(const std::string& s) {
  if (s == "confirmed-fraud") return ReviewVerdict::confirmed_fraud;
  if (s == "false-positive") return ReviewVerdict::false_positive;
  throw DataError("unknown verdict '" + s + "' (expected confirmed-fraud or false-positive)");
}

json Decision::to_json() const {
  json j{{"transaction_id", transaction_id},
         {"outcome", outcome_name(outcome)},
         {"customer_action", customer_action},
         {"score", score_json(score)},
         {"decided_at", decided_at},
         {"latency_us", latency_us},
         {"generation", generation}};
  if (!explanation_ref.empty()) j["explanation_ref"] = explanation_ref;
  if (!error.empty()) j["error"] = error;
  return j;
}

Outcome ReviewItem::outcome() const {
  switch (state) {
    case ReviewState::open: return Outcome::pending_review;
    case ReviewState::confirmed_fraud: return Outcome::block;
    case ReviewState::false_positive: return Outcome::approve;
  }
  return Outcome::pending_review;
}

json ReviewItem::to_json(const codec::TransactionSchema& schema) const {
  json j{{"id", id},
         {"transaction", codec::to_json(transaction, schema)},
         {"score", score_json(score)},
         {"state", state_name(state)},
         {"outcome", outcome_name(outcome())},
         {"enqueued_at", enqueued_at},
         {"generation", generation},
         {"scoring_failed", scoring_failed}};
  j["explanation"] = explanation ? explanation->to_json() : json(nullptr);
  if (!explanation_error.empty()) j["explanation_error"] = explanation_error;
  if (state != ReviewState::open) {
    j["reviewer"] = reviewer;
    j["resolved_at"] = resolved_at;
  }
  return j;
}

json ServiceState::to_json(const codec::TransactionSchema& schema) const {
  json j;
  j["items"] = json::array();
  for (const auto& [id, item] : items) j["items"].push_back(item.to_json(schema));
  j["buffer"] = json::array();
  for (const auto& e : buffer) j["buffer"].push_back(e.to_json(schema));
  j["false_positive_ids"] = false_positive_ids;
  j["false_positives_consumed"] = false_positives_consumed;
  j["cycles"] = cycles;
  return j;
}

ServiceState replay(const std::vector<events::Event>& log, const codec::TransactionSchema& schema) {
  ServiceState s;
  auto item_for = [&](const events::Event& e) -> ReviewItem& {
    auto it = s.items.find(e.transaction_id);
    if (it == s.items.end()) {
      throw DataError("event " + std::to_string(e.sequence) + " refers to unknown item '" + e.transaction_id + "'");
    }
    return it->second;
  };
  try {
    for (const auto& e : log) {
      switch (e.type) {
        case EventType::scored:
        case EventType::error:
          break;
        case EventType::explained: {
          auto& item = item_for(e);
          if (e.data.contains("explanation")) {
            item.explanation = shap::Explanation::from_json(e.data.at("explanation"));
          } else {
            item.explanation_error = e.data.value("error", std::string("explanation failed"));
          }
          break;
        }
        case EventType::flagged: {
          ReviewItem item;
          item.id = e.transaction_id;
          item.transaction = codec::transaction_from_json(e.data.at("transaction"), schema);
          item.score = score_from_json(item.id, e.data.at("score"));
          item.scoring_failed = e.data.value("scoring_failed", false);
          if (item.scoring_failed) item.explanation_error = kScoringFailed;
          item.generation = e.data.value("generation", std::uint64_t{0});
          item.enqueued_at = e.time;
          s.items[item.id] = std::move(item);
          break;
        }
        case EventType::reviewed: {
          auto& item = item_for(e);
          item.state = state_from_name(e.data.at("verdict").get<std::string>());
          item.reviewer = e.data.at("reviewer").get<std::string>();
          item.resolved_at = e.time;
          break;
        }
        case EventType::buffered: {
          const auto& item = item_for(e);
          buffer::BufferEntry b;
          b.index = e.data.at("index").get<std::uint64_t>();
          if (b.index != s.buffer.size()) throw DataError("buffer index out of order in event log");
          b.transaction = item.transaction;
          b.features = to_vector(e.data.at("features"));
          b.confirmed_at = e.time;
          b.scenario_tag = e.data.value("scenario_tag", std::string());
          b.reviewer = item.reviewer;
          s.buffer.push_back(std::move(b));
          break;
        }
        case EventType::fp_labeled:
          item_for(e);
          s.false_positive_ids.push_back(e.transaction_id);
          break;
        case EventType::retrain_cycle:
          ++s.cycles;
          if (e.data.value("succeeded", false)) {
            for (auto i : e.data.at("consumed").get<std::vector<std::uint64_t>>()) {
              if (i >= s.buffer.size()) throw DataError("retrain-cycle consumes unknown buffer index");
              s.buffer[i].consumed = true;
            }
            s.false_positives_consumed += e.data.value("false_positives_consumed", std::size_t{0});
          }
          break;
      }
    }
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed event during replay: ") + ex.what());
  }
  return s;
}

void PipelineConfig::validate() const {
  if (workers < 1) throw ContractError("pipeline needs at least one explanation worker");
  if (queue_capacity < 1) throw ContractError("review queue capacity must be positive");
  if (latency_window < 1) throw ContractError("latency window must be positive");
  if (retrain.poll_s <= 0.0) throw ContractError("retraining poll interval must be positive");
}

json PipelineConfig::to_json() const {
  json j{{"workers", workers},
         {"queue_capacity", queue_capacity},
         {"pending_policy", policy_name(pending_policy)},
         {"retrain",
          {{"enabled", retrain.enabled},
           {"buffer_threshold", retrain.buffer_threshold},
           {"interval_s", retrain.interval_s},
           {"poll_s", retrain.poll_s}}},
         {"explain", {{"permutations", explain.permutations}, {"seed", explain.seed}}},
         {"low_priority_background", low_priority_background},
         {"latency_window", latency_window}};
  j["log_path"] = log_path ? json(log_path->string()) : json(nullptr);
  j["explanation_dir"] = explanation_dir ? json(explanation_dir->string()) : json(nullptr);
  j["reports_dir"] = reports_dir ? json(reports_dir->string()) : json(nullptr);
  return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  try {
    PipelineConfig c;
    c.workers = j.value("workers", c.workers);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    c.pending_policy = policy_from_name(j.value("pending_policy", policy_name(c.pending_policy)));
    if (j.contains("retrain")) {
      const auto& r = j.at("retrain");
      c.retrain.enabled = r.value("enabled", c.retrain.enabled);
      c.retrain.buffer_threshold = r.value("buffer_threshold", c.retrain.buffer_threshold);
      c.retrain.interval_s = r.value("interval_s", c.retrain.interval_s);
      c.retrain.poll_s = r.value("poll_s", c.retrain.poll_s);
    }
    if (j.contains("explain")) {
      c.explain.permutations = j.at("explain").value("permutations", c.explain.permutations);
      c.explain.seed = j.at("explain").value("seed", c.explain.seed);
    }
    c.low_priority_background = j.value("low_priority_background", c.low_priority_background);
    c.latency_window = j.value("latency_window", c.latency_window);
    auto path = [&](const char* key) -> std::optional<std::filesystem::path> {
      if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
      return std::filesystem::path(j.at(key).get<std::string>());
    };
    c.log_path = path("log_path");
    c.explanation_dir = path("explanation_dir");
    c.reports_dir = path("reports_dir");
    c.validate();
    return c;
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed pipeline config: ") + ex.what());
  }
}

json LatencySummary::to_json() const {
  return {{"count", count}, {"p50_us", p50}, {"p95_us", p95}, {"p99_us", p99}, {"max_us", max}};
}

LatencySummary summarize(std::vector<double> samples) {
  LatencySummary s;
  s.count = samples.size();
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size()) - 1e-9));
    return samples[std::clamp<std::size_t>(k, 1, samples.size()) - 1];
  };
  s.p50 = rank(0.50);
  s.p95 = rank(0.95);
  s.p99 = rank(0.99);
  s.max = samples.back();
  return s;
}

json Metrics::to_json() const {
  return {{"latency", {{"approve_path", approve_path.to_json()}, {"flag_path", flag_path.to_json()}}},
          {"counts",
           {{"total", total},
            {"approved", approved},
            {"flagged", flagged},
            {"explained", explained},
            {"pending_explanations", pending_explanations},
            {"blocked", blocked},
            {"false_positives", false_positives},
            {"failed_closed", failed_closed},
            {"open_reviews", open_reviews},
            {"explanations_on_scoring_path", explanations_on_scoring_path}}},
          {"explained_fraction", explained_fraction},
          {"buffer", {{"size", buffer_size}, {"depth", buffer_depth}}},
          {"retraining", {{"active", retraining_active}, {"cycles", cycles_run}, {"failed", cycles_failed}}},
          {"tau", tau},
          {"versions", {{"vae", vae_version}, {"gan", gan_version}, {"generation", generation}}}};
}

Pipeline::Pipeline(store::ModelBundle initial, PipelineConfig config,
                   std::shared_ptr<const retrain::CycleResources> resources, retrain::CycleConfig cycle)
    : config_(std::move(config)), resources_(std::move(resources)), cycle_(std::move(cycle)) {
  config_.validate();
  if (!initial.vae) throw ServiceError("pipeline needs a trained VAE");
  schema_ = initial.vae->codec().schema();
  slot_.publish(std::make_shared<const store::ModelBundle>(std::move(initial)));
  log_ = config_.log_path ? std::make_unique<events::EventLog>(*config_.log_path) : std::make_unique<events::EventLog>();
  approve_latency_.reserve(std::min<std::size_t>(config_.latency_window, 1 << 17));
  last_cycle_time_ = events::now_seconds();
  recover();
  for (std::size_t i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
  if (config_.retrain.enabled) scheduler_ = std::thread([this] { scheduler_loop(); });
}

Pipeline::~Pipeline() { shutdown(true); }

void Pipeline::recover() {
  const auto events = log_->state_events();
  if (events.empty()) return;
  auto state = replay(events, schema_);
  for (auto& b : state.buffer) {
    const bool consumed = b.consumed;
    const auto index = buffer_.append(b);
    if (consumed) buffer_.mark_consumed(std::span<const std::uint64_t>(&index, 1));
  }
  const auto& codec = slot_.load()->vae->codec();
  for (const auto& id : state.false_positive_ids) {
    fp_ids_.push_back(id);
    fp_vectors_.push_back(codec.encode(state.items.at(id).transaction));
  }
  fp_consumed_ = state.false_positives_consumed;
  cycles_ = state.cycles;
  const auto snap = slot_.load();
  for (auto& [id, item] : state.items) {
    ++flagged_;
    if (item.explanation) ++explained_;
    if (item.state == ReviewState::confirmed_fraud) ++blocked_;
    if (item.state == ReviewState::open) {
      ++open_;
      if (!item.explanation && item.explanation_error.empty()) {
        // Explained under the current snapshot; the original one is gone.
        work_.push_back({id, item.transaction, snap});
      }
    }
  }
  items_ = std::move(state.items);
}

void Pipeline::record_latency(std::vector<double>& window, std::size_t& next, double us) {
  std::lock_guard lock(latency_mu_);
  if (window.size() < config_.latency_window) {
    window.push_back(us);
  } else {
    window[next] = us;
    next = (next + 1) % config_.latency_window;
  }
}

void Pipeline::enqueue(Work w) {
  {
    std::lock_guard lock(work_mu_);
    work_.push_back(std::move(w));
  }
  work_cv_.notify_one();
}

Decision Pipeline::process(const codec::Transaction& t) {
  const auto start = std::chrono::steady_clock::now();
  const auto explanations_before = shap::thread_explanation_count();
  if (!accepting_.load()) throw ServiceError("pipeline is shut down");
  const auto snap = slot_.load();

  Decision d;
  d.transaction_id = t.id;
  d.generation = snap->generation;
  bool failed = false;
  try {
    d.score = vae::score(*snap->vae, snap->threshold, t);
    if (!std::isfinite(d.score.reconstruction_error)) throw ContractError("non-finite reconstruction error");
  } catch (const std::exception& e) {
    failed = true;
    d.error = e.what();
    d.score = {};
    d.score.transaction_id = t.id;
    d.score.tau = snap->threshold.tau;
    d.score.verdict = vae::Verdict::anomalous;
    d.score.model_version = snap->vae_version();
  }

  if (!failed && d.score.verdict == vae::Verdict::normal) {
    log_->append(EventType::scored, t.id, d.score.model_version,
                 {{"error", d.score.reconstruction_error}, {"outcome", "approve"}});
    d.outcome = Outcome::approve;
    d.customer_action = "approve";
    {
      std::lock_guard lock(state_mu_);
      ++total_;
      ++approved_;
    }
  } else {
    json flagged{{"transaction", codec::to_json(t, schema_)},
                 {"score", score_json(d.score)},
                 {"generation", snap->generation},
                 {"scoring_failed", failed}};
    {
      std::lock_guard lock(state_mu_);
      if (items_.count(t.id)) throw ConflictError("transaction '" + t.id + "' is already under review");
      if (open_ >= config_.queue_capacity) {
        throw BackpressureError("review queue is full (" + std::to_string(config_.queue_capacity) + " open items)");
      }
      if (failed) log_->append(EventType::error, t.id, d.score.model_version, {{"message", d.error}});
      log_->append(EventType::scored, t.id, d.score.model_version,
                   {{"error", d.score.reconstruction_error}, {"outcome", "pending-review"}});
      const auto appended = log_->append(EventType::flagged, t.id, d.score.model_version, std::move(flagged));
      ReviewItem item;
      item.id = t.id;
      item.transaction = t;
      item.score = d.score;
      item.scoring_failed = failed;
      if (failed) item.explanation_error = kScoringFailed;
      item.enqueued_at = appended.time;
      item.generation = snap->generation;
      items_.emplace(t.id, std::move(item));
      ++open_;
      ++total_;
      ++flagged_;
      if (failed) ++failed_closed_;
    }
    d.outcome = Outcome::pending_review;
    d.customer_action = config_.pending_policy == PendingPolicy::hold ? "hold" : "provisional-approve";
    d.explanation_ref = "/explanations/" + t.id;
    if (!failed) enqueue({t.id, t, snap});
  }
  d.decided_at = events::now_seconds();
  d.latency_us = us_since(start);
  if (d.outcome == Outcome::approve) {
    record_latency(approve_latency_, approve_next_, d.latency_us);
  } else {
    record_latency(flag_latency_, flag_next_, d.latency_us);
  }
  const auto explanations_after = shap::thread_explanation_count();
  if (explanations_after != explanations_before) {
    std::lock_guard lock(state_mu_);
    on_scoring_path_ += explanations_after - explanations_before;
  }
  return d;
}

std::vector<Decision> Pipeline::process_batch(std::span<const codec::Transaction> batch) {
  std::vector<Decision> out;
  out.reserve(batch.size());
  for (const auto& t : batch) out.push_back(process(t));
  return out;
}

void Pipeline::worker_loop() {
  if (config_.low_priority_background) sys::lower_current_thread_priority();
  for (;;) {
    Work w;
    {
      std::unique_lock lock(work_mu_);
      work_cv_.wait(lock, [&] { return stop_workers_ || !work_.empty(); });
      if (work_.empty()) return;
      w = std::move(work_.front());
      work_.pop_front();
      ++busy_;
    }
    std::optional<shap::Explanation> e;
    std::string error;
    try {
      if (w.snapshot->background.empty()) throw ContractError("model bundle has no background set");
      e = shap::explain_transaction(*w.snapshot->vae, w.transaction, w.snapshot->background, config_.explain);
      if (config_.explanation_dir) write_explanation(*config_.explanation_dir, *e);
    } catch (const std::exception& ex) {
      error = ex.what();
    }
    {
      std::lock_guard lock(state_mu_);
      auto it = items_.find(w.id);
      if (it != items_.end()) {
        if (e) {
          log_->append(EventType::explained, w.id, e->model_version, {{"explanation", e->to_json()}});
          it->second.explanation = std::move(e);
          ++explained_;
        } else {
          log_->append(EventType::explained, w.id, w.snapshot->vae_version(), {{"error", error}});
          it->second.explanation_error = error;
        }
      }
    }
    {
      std::lock_guard lock(work_mu_);
      --busy_;
    }
    idle_cv_.notify_all();
  }
}

ReviewItem Pipeline::resolve(const std::string& id, ReviewVerdict verdict, const std::string& reviewer,
                             const std::string& scenario_tag) {
  if (reviewer.empty()) throw ContractError("a reviewer id is required");
  std::lock_guard lock(state_mu_);
  auto it = items_.find(id);
  if (it == items_.end()) throw NotFoundError("no review item '" + id + "'");
  auto& item = it->second;
  if (item.state != ReviewState::open) {
    throw ConflictError("review item '" + id + "' was already resolved as " + state_name(item.state) + " by " +
                        item.reviewer);
  }
  const auto snap = slot_.load();
  const auto version = snap->vae_version();
  // A transaction that failed scoring may not encode; its verdict is still
  // recorded but it cannot feed the buffer or the false-positive set.
  std::optional<codec::FeatureVector> features;
  if (!item.scoring_failed) features = snap->vae->codec().encode(item.transaction);
  const auto state = verdict == ReviewVerdict::confirmed_fraud ? ReviewState::confirmed_fraud : ReviewState::false_positive;
  const auto appended =
      log_->append(EventType::reviewed, id, version, {{"verdict", state_name(state)}, {"reviewer", reviewer}});
  item.state = state;
  item.reviewer = reviewer;
  item.resolved_at = appended.time;
  --open_;
  if (state == ReviewState::confirmed_fraud) ++blocked_;
  if (!features) return item;
  if (state == ReviewState::confirmed_fraud) {
    buffer::BufferEntry b;
    b.transaction = item.transaction;
    b.features = features->values;
    b.scenario_tag = scenario_tag;
    b.reviewer = reviewer;
    b.index = buffer_.size();
    const auto buffered = log_->append(EventType::buffered, id, version,
                                       {{"index", b.index}, {"scenario_tag", scenario_tag}, {"features", b.features}});
    b.confirmed_at = buffered.time;
    buffer_.append(std::move(b));
  } else {
    log_->append(EventType::fp_labeled, id, version, {{"features", features->values}});
    fp_ids_.push_back(id);
    fp_vectors_.push_back(*features);
  }
  return item;
}

std::vector<ReviewItem> Pipeline::reviews(std::optional<ReviewState> filter) const {
  std::vector<ReviewItem> out;
  {
    std::lock_guard lock(state_mu_);
    for (const auto& [id, item] : items_) {
      if (!filter || item.state == *filter) out.push_back(item);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ReviewItem& a, const ReviewItem& b) {
    return a.score.reconstruction_error > b.score.reconstruction_error;
  });
  return out;
}

std::optional<ReviewItem> Pipeline::review(const std::string& id) const {
  std::lock_guard lock(state_mu_);
  auto it = items_.find(id);
  if (it == items_.end()) return std::nullopt;
  return it->second;
}

Metrics Pipeline::metrics() const {
  Metrics m;
  {
    std::lock_guard lock(latency_mu_);
    m.approve_path = summarize(approve_latency_);
    m.flag_path = summarize(flag_latency_);
  }
  {
    std::lock_guard lock(state_mu_);
    m.total = total_;
    m.approved = approved_;
    m.flagged = flagged_;
    m.explained = explained_;
    m.blocked = blocked_;
    m.false_positives = fp_ids_.size();
    m.failed_closed = failed_closed_;
    m.open_reviews = open_;
    m.cycles_run = cycles_;
    m.cycles_failed = cycles_failed_;
    m.explanations_on_scoring_path = on_scoring_path_;
    std::size_t pending = 0;
    for (const auto& [id, item] : items_) {
      if (!item.explanation && item.explanation_error.empty()) ++pending;
    }
    m.pending_explanations = pending;
  }
  m.explained_fraction = m.total ? static_cast<double>(m.explained) / static_cast<double>(m.total) : 0.0;
  m.buffer_size = buffer_.size();
  m.buffer_depth = buffer_.unconsumed_count();
  const auto snap = slot_.load();
  m.tau = snap->threshold.tau;
  m.vae_version = snap->vae_version();
  m.gan_version = snap->gan_version();
  m.generation = snap->generation;
  m.retraining_active = retraining_active_.load();
  return m;
}

void Pipeline::publish(store::ModelBundle next) {
  if (!next.vae) throw ContractError("cannot publish a bundle without a VAE");
  if (next.vae->codec().layout() != slot_.load()->vae->codec().layout()) {
    throw ContractError("published bundle uses a different feature layout");
  }
  slot_.publish(std::make_shared<const store::ModelBundle>(std::move(next)));
}

void Pipeline::finish_cycle(const retrain::CycleReport& report, const json& data) {
  std::size_t n = 0;
  {
    std::lock_guard lock(state_mu_);
    log_->append(EventType::retrain_cycle, "", slot_.load()->vae_version(), data);
    n = ++cycles_;
    if (!report.succeeded) ++cycles_failed_;
  }
  last_cycle_ = report;
  last_cycle_time_ = events::now_seconds();
  if (config_.reports_dir) {
    std::filesystem::create_directories(*config_.reports_dir);
    store::write_json_atomic(*config_.reports_dir / ("cycle-" + std::to_string(n) + ".json"), report.to_json());
  }
}

retrain::CycleReport Pipeline::run_cycle(const retrain::StageHook& hook) {
  const auto current = slot_.load();
  retrain::CycleInputs inputs;
  inputs.entries = buffer_.unconsumed();
  std::size_t fp_count = 0;
  {
    std::lock_guard lock(state_mu_);
    inputs.false_positives.assign(fp_vectors_.begin() + static_cast<std::ptrdiff_t>(fp_consumed_), fp_vectors_.end());
    fp_count = inputs.false_positives.size();
  }
  auto fail = [&](retrain::CycleReport r, const std::string& stage, const std::string& error) {
    r.succeeded = false;
    r.failed_stage = stage;
    r.error = error;
    finish_cycle(r, {{"succeeded", false}, {"report", r.to_json()}});
    return r;
  };
  retrain::CycleReport pre;
  pre.entries_used = inputs.entries.size();
  pre.vae_version_before = current->vae_version();
  pre.gan_version_before = current->gan_version();
  pre.tau_before = current->threshold.tau;
  if (!resources_) return fail(pre, "setup", "no retraining resources configured");
  if (inputs.entries.size() < cycle_.min_entries) {
    return fail(pre, "setup",
                "buffer holds " + std::to_string(inputs.entries.size()) + " unconsumed entries; a cycle needs " +
                    std::to_string(cycle_.min_entries));
  }

  auto result = retrain::run_retraining_cycle(*current, inputs, *resources_, cycle_, hook);
  auto report = result.report;
  if (!report.succeeded) return fail(report, report.failed_stage, report.error);

  auto stage = retrain::Stage::mark_consumed;
  try {
    if (hook) hook(stage);
    stage = retrain::Stage::publish;
    if (hook) hook(stage);
  } catch (const std::exception& e) {
    return fail(report, retrain::stage_name(stage), e.what());
  }

  std::vector<std::uint64_t> consumed;
  for (const auto& e : inputs.entries) consumed.push_back(e.index);
  {
    std::lock_guard lock(state_mu_);
    buffer_.mark_consumed(consumed);
    fp_consumed_ += fp_count;
    slot_.publish(std::make_shared<const store::ModelBundle>(std::move(*result.next)));
  }
  finish_cycle(report, {{"succeeded", true},
                        {"consumed", consumed},
                        {"false_positives_consumed", fp_count},
                        {"report", report.to_json()}});
  return report;
}

retrain::CycleReport Pipeline::run_retraining_now(const retrain::StageHook& hook) {
  std::lock_guard lock(retrain_mu_);
  retraining_active_ = true;
  auto report = run_cycle(hook);
  retraining_active_ = false;
  return report;
}

std::optional<retrain::CycleReport> Pipeline::maybe_run_retraining(const retrain::StageHook& hook) {
  const auto depth = buffer_.unconsumed_count();
  bool due = depth >= std::max(config_.retrain.buffer_threshold, cycle_.min_entries);
  if (!due && config_.retrain.interval_s > 0.0 && depth >= cycle_.min_entries) {
    std::lock_guard lock(retrain_mu_);
    due = events::now_seconds() - last_cycle_time_ >= config_.retrain.interval_s;
  }
  if (!due || !resources_) return std::nullopt;
  return run_retraining_now(hook);
}

bool Pipeline::start_retraining_async(const retrain::StageHook& hook) {
  std::lock_guard lock(async_mu_);
  bool expected = false;
  if (!retraining_active_.compare_exchange_strong(expected, true)) return false;
  if (retrain_thread_.joinable()) retrain_thread_.join();
  retrain_thread_ = std::thread([this, hook] {
    if (config_.low_priority_background) sys::lower_current_thread_priority();
    std::lock_guard cycle_lock(retrain_mu_);
    run_cycle(hook);
    retraining_active_ = false;
  });
  return true;
}

std::optional<retrain::CycleReport> Pipeline::wait_for_retraining() {
  {
    std::lock_guard lock(async_mu_);
    if (retrain_thread_.joinable()) retrain_thread_.join();
  }
  std::lock_guard lock(retrain_mu_);
  return last_cycle_;
}

void Pipeline::scheduler_loop() {
  if (config_.low_priority_background) sys::lower_current_thread_priority();
  const auto poll = std::chrono::duration<double>(config_.retrain.poll_s);
  std::unique_lock lock(scheduler_mu_);
  while (!stop_scheduler_) {
    scheduler_cv_.wait_for(lock, poll, [&] { return stop_scheduler_; });
    if (stop_scheduler_) break;
    lock.unlock();
    maybe_run_retraining();
    lock.lock();
  }
}

void Pipeline::wait_for_explanations() {
  std::unique_lock lock(work_mu_);
  idle_cv_.wait(lock, [&] { return work_.empty() && busy_ == 0; });
}

void Pipeline::shutdown(bool drain) {
  std::lock_guard guard(shutdown_mu_);
  if (shut_down_) return;
  shut_down_ = true;
  accepting_ = false;
  {
    std::lock_guard lock(scheduler_mu_);
    stop_scheduler_ = true;
  }
  scheduler_cv_.notify_all();
  if (scheduler_.joinable()) scheduler_.join();
  wait_for_retraining();
  {
    std::lock_guard lock(work_mu_);
    if (!drain) work_.clear();
    stop_workers_ = true;
  }
  work_cv_.notify_all();
  for (auto& w : workers_) w.join();
  workers_.clear();
  idle_cv_.notify_all();
  log_->flush();
}

ServiceState Pipeline::state() const {
  ServiceState s;
  std::lock_guard lock(state_mu_);
  s.items = items_;
  s.buffer = buffer_.entries();
  s.false_positive_ids = fp_ids_;
  s.false_positives_consumed = fp_consumed_;
  s.cycles = cycles_;
  return s;
}

std::vector<codec::FeatureVector> Pipeline::false_positive_vectors() const {
  std::lock_guard lock(state_mu_);
  return fp_vectors_;
}

json LatencyReport::to_json() const {
  return {{"transactions", transactions},
          {"approve_path", approve_path.to_json()},
          {"flag_path", flag_path.to_json()},
          {"explained_fraction", explained_fraction},
          {"retraining_throughout", retraining_throughout}};
}

LatencyReport measure_latency(Pipeline& pipeline, std::span<const codec::Transaction> stream) {
  if (stream.empty()) throw ContractError("measure_latency: empty stream, nothing to report");
  std::vector<double> approve, flag;
  approve.reserve(stream.size());
  std::vector<std::string> flagged;
  const bool active_at_start = pipeline.retraining_active();
  for (const auto& t : stream) {
    const auto d = pipeline.process(t);
    if (d.outcome == Outcome::approve) {
      approve.push_back(d.latency_us);
    } else {
      flag.push_back(d.latency_us);
      flagged.push_back(d.transaction_id);
    }
  }
  const bool active_at_end = pipeline.retraining_active();
  pipeline.wait_for_explanations();
  std::size_t explained = 0;
  for (const auto& id : flagged) {
    const auto item = pipeline.review(id);
    if (item && item->explanation) ++explained;
  }
  LatencyReport r;
  r.transactions = stream.size();
  r.approve_path = summarize(std::move(approve));
  r.flag_path = summarize(std::move(flag));
  r.explained_fraction = static_cast<double>(explained) / static_cast<double>(stream.size());
  r.retraining_throughout = active_at_start && active_at_end;
  return r;
}

}  // namespace dualpath::pipeline
