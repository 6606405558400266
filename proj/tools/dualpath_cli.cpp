// dualpath: operator CLI. One subcommand per workflow; every run writes a
// manifest JSON next to its outputs.

#include <algorithm>
#include <chrono>
#include <pthread.h>
#include <signal.h>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dualpath/errors.hpp"
#include "dualpath/evaluate.hpp"
#include "dualpath/model_store.hpp"
#include "dualpath/pipeline.hpp"
#include "dualpath/retraining.hpp"
#include "dualpath/server.hpp"
#include "dualpath/simulator.hpp"

#ifndef DUALPATH_VERSION
#define DUALPATH_VERSION "dev"
#endif

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dualpath;

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kTraining = 4, kService = 5 };

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ContractError*>(&e)) return kUsage;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const NotFoundError*>(&e)) return kData;
  if (dynamic_cast<const TrainingError*>(&e) || dynamic_cast<const CalibrationError*>(&e) ||
      dynamic_cast<const ColdStartError*>(&e)) {
    return kTraining;
  }
  if (dynamic_cast<const ServiceError*>(&e) || dynamic_cast<const BackpressureError*>(&e) ||
      dynamic_cast<const ConflictError*>(&e)) {
    return kService;
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kData;
  return kService;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json seeds = json::object();
  json inputs = json::object();
  json outputs = json::object();
  json models = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const fs::path& path) const {
    json j{{"command", command},
           {"argv", argv},
           {"config", config},
           {"seeds", seeds},
           {"inputs", inputs},
           {"outputs", outputs},
           {"versions", {{"dualpath", DUALPATH_VERSION}, {"models", models}}},
           {"started_at", events::now_seconds() - seconds_since(start)},
           {"wall_clock_s", seconds_since(start)}};
    store::write_json_atomic(path, j);
  }
};

/// Section `name` of a JSON config file, or an empty object.
json config_section(const std::string& path, const std::string& name) {
  if (path.empty()) return json::object();
  const auto j = store::read_json(path);
  return j.contains(name) ? j.at(name) : json::object();
}

/// Takes `key` from the config section unless the flag was given.
template <class T>
void fill(const json& section, const char* key, const CLI::Option* opt, T& value) {
  if (opt->count() > 0 || !section.contains(key)) return;
  try {
    value = section.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(std::string("config key '") + key + "': " + e.what());
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<codec::FeatureVector> encode_all(const codec::Codec& c, const std::vector<codec::Transaction>& txs) {
  std::vector<codec::FeatureVector> out;
  out.reserve(txs.size());
  for (const auto& t : txs) out.push_back(c.encode(t));
  return out;
}

void print_metrics_table(const eval::MetricsReport& m, std::ostream& os) {
  os << std::left << std::setw(12) << "scenario" << std::right << std::setw(8) << "total" << std::setw(10) << "detected"
     << std::setw(9) << "recall" << '\n';
  for (const auto& [tag, s] : m.per_scenario) {
    os << std::left << std::setw(12) << tag << std::right << std::setw(8) << s.total << std::setw(10) << s.detected
       << std::setw(9) << std::fixed << std::setprecision(3) << s.recall << '\n';
  }
  os << std::defaultfloat;
}

void print_explanation(const json& e, std::ostream& os) {
  std::vector<std::pair<std::string, double>> rows;
  for (const auto& f : e.at("features")) rows.emplace_back(f.at("name").get<std::string>(), f.at("phi").get<double>());
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return std::abs(a.second) > std::abs(b.second); });
  os << "transaction " << e.at("transaction_id").get<std::string>() << " (" << e.at("method").get<std::string>()
     << ", model version " << e.at("model_version") << ")\n";
  double sum = 0.0;
  for (const auto& [name, phi] : rows) {
    os << "  " << std::left << std::setw(16) << name << std::right << std::setw(12) << std::fixed << std::setprecision(4)
       << phi << '\n';
    sum += phi;
  }
  os << "  base " << e.at("base").get<double>() << " + sum(phi) " << sum << " = " << e.at("base").get<double>() + sum
     << "  (E(x) = " << e.at("output").get<double>() << ")\n"
     << std::defaultfloat;
}

// ---------------------------------------------------------------- gen-data

struct GenDataOpts {
  std::string config, out, scenarios = "salami,cnp,ato", seed_set, ato_device = "unseen";
  std::size_t length = 100000, accounts = 20, seed_set_size = 256;
  std::uint64_t seed = 103, profile_seed = 1;
  double prevalence = sim::kDefaultPrevalence, ato_geo_jump_km = 8000.0;
};

int run_gen_data(const GenDataOpts& o, Manifest& m) {
  const auto schema = codec::TransactionSchema::banking_default();
  const auto profiles = sim::make_profiles(o.accounts, o.profile_seed);
  auto configure = [&](sim::ScenarioConfig& c) {
    c.ato.geo_jump_km = o.ato_geo_jump_km;
    if (o.ato_device == "secondary") {
      c.ato.device = codec::banking::secondary;
    } else if (o.ato_device != "unseen") {
      throw ContractError("--ato-device must be secondary or unseen");
    }
  };
  fs::create_directories(o.out);
  std::vector<codec::Transaction> txs;
  fs::path stream_path;
  if (!o.seed_set.empty()) {
    sim::ScenarioConfig c;
    c.scenario = sim::scenario_from_tag(o.seed_set);
    configure(c);
    c.validate();
    txs = sim::seed_set(profiles, c, o.seed_set_size, o.seed);
    stream_path = fs::path(o.out) / "seed_set.jsonl";
    m.config["scenario"] = c.to_json();
  } else {
    std::vector<sim::ScenarioConfig> scenarios;
    const auto tags = o.scenarios == "none" ? std::vector<std::string>{} : split(o.scenarios, ',');
    for (const auto& tag : tags) {
      sim::ScenarioConfig c;
      c.scenario = sim::scenario_from_tag(tag);
      c.prevalence = o.prevalence / static_cast<double>(tags.size());
      configure(c);
      c.validate();
      scenarios.push_back(c);
    }
    txs = sim::generate_stream(profiles, scenarios, o.length, o.seed);
    stream_path = fs::path(o.out) / "stream.jsonl";
    json sc = json::array();
    for (const auto& c : scenarios) sc.push_back(c.to_json());
    m.config["scenarios"] = sc;
  }
  const auto labels_path = fs::path(stream_path).replace_extension(".labels.jsonl");
  codec::write_stream(stream_path, txs, schema);
  codec::write_labels(labels_path, txs);
  schema.save(fs::path(o.out) / "schema.json");
  json pj = json::array();
  for (const auto& p : profiles) pj.push_back(p.to_json());
  store::write_json_atomic(fs::path(o.out) / "profiles.json", pj);

  const auto counts = sim::label_counts(txs);
  std::cout << "wrote " << txs.size() << " transactions to " << stream_path.string() << '\n';
  for (const auto& [label, n] : counts) std::cout << "  " << std::left << std::setw(12) << label << n << '\n';
  m.seeds = {{"stream", o.seed}, {"profiles", o.profile_seed}};
  m.config["length"] = o.length;
  m.config["accounts"] = o.accounts;
  m.config["prevalence"] = o.prevalence;
  m.outputs = {{"stream", stream_path.string()},
               {"labels", labels_path.string()},
               {"schema", (fs::path(o.out) / "schema.json").string()},
               {"profiles", (fs::path(o.out) / "profiles.json").string()},
               {"label_counts", counts}};
  m.write(fs::path(o.out) / (o.seed_set.empty() ? "manifest-gen-data.json" : "manifest-gen-data-seed-set.json"));
  return kOk;
}

// --------------------------------------------------------------- train-vae

struct TrainVaeOpts {
  std::string config, train, labels, calibration, model_dir, hidden = "64,64";
  std::size_t epochs = 10, batch = 128, latent = 8, validation_every = 10;
  std::uint64_t seed = 1, codec_seed = 5;
  double quantile = 0.995;
};

int run_train_vae(const TrainVaeOpts& o, Manifest& m) {
  const auto schema = codec::TransactionSchema::banking_default();
  auto train = codec::read_stream(o.train, schema);
  if (!o.labels.empty()) codec::attach_labels(o.labels, train);
  train = sim::only_legitimate(train);
  if (train.empty()) throw DataError("no legitimate transactions in " + o.train);
  const auto calibration = codec::read_stream(o.calibration, schema);

  auto cod = std::make_shared<const codec::Codec>(codec::Codec::fit(schema, train, o.codec_seed));
  std::vector<codec::FeatureVector> tr, va;
  for (std::size_t i = 0; i < train.size(); ++i) (i % o.validation_every == 0 ? va : tr).push_back(cod->encode(train[i]));
  const auto cal = encode_all(*cod, calibration);

  vae::TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.seed = o.seed;
  vae::VaeArchitecture arch;
  arch.latent_dim = o.latent;
  arch.hidden.clear();
  for (const auto& h : split(o.hidden, ',')) arch.hidden.push_back(std::stoul(h));

  auto result = vae::train(cod, tr, va, cfg, arch);
  const auto threshold = vae::calibrate_threshold(result.model, cal, o.quantile);

  store::ModelBundle bundle;
  bundle.vae = std::make_shared<const vae::VaeModel>(std::move(result.model));
  bundle.threshold = threshold;
  const std::size_t nb = std::min(cal.size(), shap::kDefaultBackgroundSize);
  bundle.background.assign(cal.begin(), cal.begin() + static_cast<std::ptrdiff_t>(nb));
  store::save_bundle(o.model_dir, bundle);

  store::ResourcePaths res;
  if (auto old = store::load_resource_paths(o.model_dir)) res.seed_set = old->seed_set;
  res.legitimate = fs::absolute(o.train);
  if (!o.labels.empty()) res.labels = fs::absolute(o.labels);
  res.calibration = fs::absolute(o.calibration);
  res.validation_every = o.validation_every;
  store::save_resource_paths(o.model_dir, res);

  json report{{"training", result.report.to_json()}, {"threshold", threshold.to_json()}};
  const auto report_path = fs::path(o.model_dir) / "train-vae-report.json";
  store::write_json_atomic(report_path, report);

  std::cout << "trained on " << tr.size() << " legitimate rows (" << va.size() << " validation)\n";
  for (const auto& e : result.report.epochs) {
    std::cout << "  epoch " << std::setw(3) << e.epoch << "  train " << std::fixed << std::setprecision(4) << e.train_loss
              << "  validation " << e.validation_loss << '\n';
  }
  std::cout << std::defaultfloat << "tau_a = " << threshold.tau << " (quantile " << threshold.quantile << " of "
            << threshold.calibration_size << " calibration rows)\n";

  m.config = {{"epochs", o.epochs},   {"batch", o.batch},       {"latent", o.latent},
              {"hidden", arch.hidden}, {"quantile", o.quantile}, {"validation_every", o.validation_every}};
  m.seeds = {{"train", o.seed}, {"codec", o.codec_seed}};
  m.inputs = {{"train", o.train}, {"labels", o.labels}, {"calibration", o.calibration}};
  m.outputs = {{"model_dir", o.model_dir}, {"report", report_path.string()}, {"tau", threshold.tau}};
  m.models = {{"vae", bundle.vae_version()}};
  m.write(fs::path(o.model_dir) / "manifest-train-vae.json");
  return kOk;
}

// --------------------------------------------------------------- train-gan

struct TrainGanOpts {
  std::string config, model_dir, seed_set;
  std::size_t steps = 1000, samples = 10000, batch = 64, n_critic = 5;
  std::uint64_t seed = 7;
  double lambda = 10.0;
};

int run_train_gan(const TrainGanOpts& o, Manifest& m) {
  auto vae_model = store::load_vae(o.model_dir);
  const auto cod = vae_model.codec_ptr();
  const auto seed_rows = codec::read_stream(o.seed_set, cod->schema());
  const auto real = encode_all(*cod, seed_rows);

  gan::GanConfig cfg;
  cfg.generator_steps = o.steps;
  cfg.batch_size = o.batch;
  cfg.n_critic = o.n_critic;
  cfg.lambda = o.lambda;
  cfg.seed = o.seed;
  auto result = gan::train_gan(cod, real, cfg, nullptr, o.samples);
  store::save_gan(o.model_dir, result.model);

  if (auto res = store::load_resource_paths(o.model_dir)) {
    res->seed_set = fs::absolute(o.seed_set);
    store::save_resource_paths(o.model_dir, *res);
  }
  const auto report_path = fs::path(o.model_dir) / "train-gan-report.json";
  store::write_json_atomic(report_path, result.report.to_json());

  const auto& r = result.report;
  std::cout << "trained WGAN-GP on " << real.size() << " seed rows: " << r.generator_steps << " generator / "
            << r.critic_steps << " critic steps\n"
            << "interpolate gradient norm: mean " << r.final_gradient_norms.mean << " (sd "
            << r.final_gradient_norms.stddev << ")\n"
            << "mode coverage: " << r.mode_coverage << " over " << r.sample_count << " samples\n";

  m.config = cfg.to_json();
  m.seeds = {{"gan", o.seed}};
  m.inputs = {{"model_dir", o.model_dir}, {"seed_set", o.seed_set}};
  m.outputs = {{"report", report_path.string()}, {"gradient_norm_mean", r.final_gradient_norms.mean}};
  m.models = {{"vae", vae_model.version()}, {"gan", result.model.version()}};
  m.write(fs::path(o.model_dir) / "manifest-train-gan.json");
  return kOk;
}

// ------------------------------------------------------------------- serve

struct ServeOpts {
  std::string config, model_dir, state_dir, host = "127.0.0.1", pending_policy = "hold";
  int port = 8080;
  std::size_t http_threads = 8, workers = 1, queue_capacity = 10000, retrain_threshold = 50;
  double retrain_interval = 0.0;
  bool retrain = false;
};

std::shared_ptr<const retrain::CycleResources> maybe_resources(const fs::path& model_dir, const codec::Codec& c) {
  const auto paths = store::load_resource_paths(model_dir);
  if (!paths) return nullptr;
  return std::make_shared<const retrain::CycleResources>(retrain::load_cycle_resources(*paths, c));
}

int run_serve(const ServeOpts& o, const json& file_config, Manifest& m) {
  auto bundle = store::load_bundle(o.model_dir);
  const fs::path state = o.state_dir.empty() ? fs::path(o.model_dir) / "state" : fs::path(o.state_dir);
  fs::create_directories(state);

  auto pc = pipeline::PipelineConfig::from_json(file_config.value("pipeline", json::object()));
  pc.workers = o.workers;
  pc.queue_capacity = o.queue_capacity;
  pc.pending_policy = pipeline::policy_from_name(o.pending_policy);
  pc.retrain.enabled = o.retrain;
  pc.retrain.buffer_threshold = o.retrain_threshold;
  pc.retrain.interval_s = o.retrain_interval;
  pc.log_path = state / "events.jsonl";
  pc.explanation_dir = state / "explanations";
  pc.reports_dir = state / "reports";

  auto sc = server::ServerConfig::from_json(file_config.value("server", json::object()));
  sc.host = o.host;
  sc.port = o.port;
  sc.threads = o.http_threads;

  std::shared_ptr<const retrain::CycleResources> resources;
  if (o.retrain) {
    resources = maybe_resources(o.model_dir, bundle.vae->codec());
    if (!resources) std::cerr << "warning: no " << store::files::kResources << " in model dir; retraining disabled\n";
  }

  // Signals are taken synchronously by this thread only.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  pipeline::Pipeline p(std::move(bundle), pc, resources);
  server::Server srv(p, sc);
  const int port = srv.start();
  std::cout << "listening on http://" << sc.host << ':' << port << "  (tau_a " << p.snapshot()->threshold.tau
            << ", state " << state.string() << ")" << std::endl;

  m.config = {{"pipeline", pc.to_json()}, {"server", sc.to_json()}};
  m.inputs = {{"model_dir", o.model_dir}};
  m.outputs = {{"state_dir", state.string()}, {"port", port}};
  m.models = {{"vae", p.snapshot()->vae_version()}, {"gan", p.snapshot()->gan_version()}};
  m.write(state / "manifest-serve.json");

  int sig = 0;
  sigwait(&signals, &sig);
  std::cout << "signal " << sig << ": draining explanations and shutting down" << std::endl;
  srv.stop();
  p.shutdown(true);
  m.outputs["metrics"] = p.metrics().to_json();
  m.write(state / "manifest-serve.json");
  return kOk;
}

// ---------------------------------------------------------------- simulate

struct SimulateOpts {
  std::string config, model_dir, stream, labels, out, url, pending_policy = "hold";
  double reviewer_error = 0.0;
  std::uint64_t reviewer_seed = 0;
  std::size_t workers = 1, batch = 256;
  bool retrain = false;
};

struct SimOutcome {
  std::vector<eval::ScoredRecord> detector;
  std::vector<eval::ScoredRecord> final_calls;
  json latency;
  json service_metrics;
  json cycle;
};

SimOutcome simulate_embedded(const SimulateOpts& o, const std::vector<codec::Transaction>& stream) {
  auto bundle = store::load_bundle(o.model_dir);
  const fs::path state = fs::path(o.out) / "state";
  fs::remove_all(state);
  pipeline::PipelineConfig pc;
  pc.workers = o.workers;
  pc.pending_policy = pipeline::policy_from_name(o.pending_policy);
  pc.log_path = state / "events.jsonl";
  pc.explanation_dir = state / "explanations";
  pc.reports_dir = state / "reports";
  std::shared_ptr<const retrain::CycleResources> resources;
  if (o.retrain) resources = maybe_resources(o.model_dir, bundle.vae->codec());
  pipeline::Pipeline p(std::move(bundle), pc, resources);

  SimOutcome out;
  std::vector<pipeline::Decision> decisions;
  decisions.reserve(stream.size());
  std::vector<double> approve, flag;
  for (const auto& t : stream) {
    decisions.push_back(p.process(t));
    (decisions.back().outcome == pipeline::Outcome::approve ? approve : flag).push_back(decisions.back().latency_us);
  }
  p.wait_for_explanations();
  out.latency = {{"approve_path", pipeline::summarize(approve).to_json()},
                 {"flag_path", pipeline::summarize(flag).to_json()}};

  sim::OracleReviewer oracle(stream, o.reviewer_error, o.reviewer_seed);
  for (const auto& item : p.reviews(pipeline::ReviewState::open)) {
    const bool fraud = oracle.confirms_fraud(item.id);
    p.resolve(item.id, fraud ? pipeline::ReviewVerdict::confirmed_fraud : pipeline::ReviewVerdict::false_positive,
              "oracle", fraud ? oracle.label(item.id) : "");
  }
  for (const auto& d : decisions) {
    const bool flagged = d.outcome != pipeline::Outcome::approve;
    out.detector.push_back({d.transaction_id, d.score.reconstruction_error, flagged});
    bool blocked = false;
    if (flagged) blocked = p.review(d.transaction_id)->state == pipeline::ReviewState::confirmed_fraud;
    out.final_calls.push_back({d.transaction_id, d.score.reconstruction_error, blocked});
  }
  if (o.retrain) {
    if (!resources) throw ServiceError("--retrain needs resources.json in the model dir (run train-vae)");
    out.cycle = p.run_retraining_now().to_json();
  }
  p.shutdown(true);
  out.service_metrics = p.metrics().to_json();
  return out;
}

SimOutcome simulate_http(const SimulateOpts& o, const std::vector<codec::Transaction>& stream,
                         const codec::TransactionSchema& schema) {
  httplib::Client cli(o.url);
  cli.set_read_timeout(60, 0);
  auto check = [&](const httplib::Result& r, const std::string& what) -> json {
    if (!r) throw ServiceError(what + ": " + httplib::to_string(r.error()));
    if (r->status >= 400) throw ServiceError(what + ": HTTP " + std::to_string(r->status) + " " + r->body);
    return json::parse(r->body);
  };
  SimOutcome out;
  std::vector<json> decisions;
  for (std::size_t i = 0; i < stream.size(); i += o.batch) {
    json body = json::array();
    for (std::size_t k = i; k < std::min(stream.size(), i + o.batch); ++k) body.push_back(codec::to_json(stream[k], schema));
    const auto r = check(cli.Post("/transactions/batch", body.dump(), "application/json"), "POST /transactions/batch");
    for (const auto& d : r.at("decisions")) decisions.push_back(d);
  }
  sim::OracleReviewer oracle(stream, o.reviewer_error, o.reviewer_seed);
  const auto open = check(cli.Get("/reviews?state=open"), "GET /reviews");
  std::map<std::string, bool> blocked;
  for (const auto& item : open.at("items")) {
    const auto id = item.at("id").get<std::string>();
    const bool fraud = oracle.confirms_fraud(id);
    json body{{"verdict", fraud ? "confirmed-fraud" : "false-positive"}, {"reviewer", "oracle"}};
    if (fraud) body["tag"] = oracle.label(id);
    check(cli.Post("/reviews/" + id + "/resolve", body.dump(), "application/json"), "POST resolve");
    blocked[id] = fraud;
  }
  for (const auto& d : decisions) {
    const auto id = d.at("transaction_id").get<std::string>();
    const double e = d.at("score").at("error").get<double>();
    const bool flagged = d.at("outcome").get<std::string>() != "approve";
    out.detector.push_back({id, e, flagged});
    out.final_calls.push_back({id, e, flagged && blocked[id]});
  }
  out.service_metrics = check(cli.Get("/metrics"), "GET /metrics");
  out.latency = out.service_metrics.at("latency");
  return out;
}

int run_simulate(const SimulateOpts& o, Manifest& m) {
  const auto schema = codec::TransactionSchema::banking_default();
  auto stream = codec::read_stream(o.stream, schema);
  codec::attach_labels(o.labels, stream);
  if (stream.empty()) throw DataError("stream " + o.stream + " is empty");
  fs::create_directories(o.out);

  const auto result = o.url.empty() ? simulate_embedded(o, stream) : simulate_http(o, stream, schema);
  const auto labels = eval::labels_of(stream);
  const auto detector = eval::evaluate(result.detector, labels);
  const auto final_calls = eval::evaluate(result.final_calls, labels);

  std::cout << "detector (E(x) > tau_a) on " << stream.size() << " transactions\n";
  print_metrics_table(detector, std::cout);
  std::cout << "AUROC " << detector.auroc << "  FPR " << detector.fpr << "  precision " << detector.precision << '\n';
  std::cout << "after review: blocked recall " << final_calls.recall << "  precision " << final_calls.precision << '\n';
  const auto& lat = result.latency;
  std::cout << "approve path p50/p95/p99 us: " << lat.at("approve_path").at("p50_us") << " / "
            << lat.at("approve_path").at("p95_us") << " / " << lat.at("approve_path").at("p99_us") << '\n'
            << "flag path    p50/p95/p99 us: " << lat.at("flag_path").at("p50_us") << " / "
            << lat.at("flag_path").at("p95_us") << " / " << lat.at("flag_path").at("p99_us") << '\n'
            << "explained fraction: " << result.service_metrics.at("explained_fraction") << '\n';
  if (!result.cycle.is_null()) {
    if (result.cycle.at("succeeded").get<bool>()) {
      std::cout << "retraining cycle succeeded: tau_a " << result.cycle.at("tau_before") << " -> "
                << result.cycle.at("tau_after") << '\n';
    } else {
      std::cout << "retraining cycle failed at " << result.cycle.at("failed_stage").get<std::string>() << ": "
                << result.cycle.at("error").get<std::string>() << '\n';
    }
  }

  const json metrics{{"detector", detector.to_json()},
                     {"after_review", final_calls.to_json()},
                     {"latency", result.latency},
                     {"service", result.service_metrics},
                     {"cycle", result.cycle}};
  const auto metrics_path = fs::path(o.out) / "metrics.json";
  store::write_json_atomic(metrics_path, metrics);
  m.config = {{"reviewer_error", o.reviewer_error}, {"workers", o.workers}, {"pending_policy", o.pending_policy},
              {"retrain", o.retrain}, {"url", o.url}};
  m.seeds = {{"reviewer", o.reviewer_seed}};
  m.inputs = {{"model_dir", o.model_dir}, {"stream", o.stream}, {"labels", o.labels}};
  m.outputs = {{"metrics", metrics_path.string()}};
  if (result.service_metrics.contains("versions")) m.models = result.service_metrics.at("versions");
  m.write(fs::path(o.out) / "manifest-simulate.json");
  return kOk;
}

// ----------------------------------------------------------------- explain

struct ExplainOpts {
  std::string config, model_dir, stream, txid, url, out;
  std::size_t permutations = 2000;
};

int run_explain(const ExplainOpts& o, Manifest& m) {
  const fs::path manifest_path =
      (!o.out.empty() ? fs::absolute(o.out).parent_path() : !o.model_dir.empty() ? fs::path(o.model_dir) : fs::path(".")) /
      "manifest-explain.json";
  json explanation;
  m.inputs = {{"txid", o.txid}};
  if (!o.url.empty()) {
    httplib::Client cli(o.url);
    cli.set_read_timeout(60, 0);
    const auto r = cli.Get("/explanations/" + o.txid);
    if (!r) throw ServiceError("GET /explanations: " + httplib::to_string(r.error()));
    if (r->status == 404 || r->status == 202) {
      const bool pending = r->status == 202;
      std::cout << (pending ? "explanation pending for " + o.txid : "not explained: below threshold (or unknown to the service)")
                << '\n';
      m.outputs = {{"explained", false}, {"pending", pending}};
      m.write(manifest_path);
      return kOk;
    }
    if (r->status != 200) throw ServiceError("GET /explanations: HTTP " + std::to_string(r->status) + " " + r->body);
    explanation = json::parse(r->body);
    m.inputs["url"] = o.url;
  } else {
    if (o.model_dir.empty() || o.stream.empty()) throw ContractError("explain needs --url or both --model-dir and --stream");
    const auto bundle = store::load_bundle(o.model_dir);
    const auto stream = codec::read_stream(o.stream, bundle.vae->codec().schema());
    const auto it = std::find_if(stream.begin(), stream.end(), [&](const auto& t) { return t.id == o.txid; });
    if (it == stream.end()) throw NotFoundError("transaction " + o.txid + " not in " + o.stream);
    const auto s = vae::score(*bundle.vae, bundle.threshold, *it);
    m.inputs["model_dir"] = o.model_dir;
    m.inputs["stream"] = o.stream;
    m.models = {{"vae", bundle.vae_version()}};
    if (s.verdict == vae::Verdict::normal) {
      std::cout << "not explained: below threshold (E(x) = " << s.reconstruction_error
                << " <= tau_a = " << s.tau << ")\n";
      m.outputs = {{"explained", false}, {"score", s.reconstruction_error}, {"tau", s.tau}};
      m.write(manifest_path);
      return kOk;
    }
    if (bundle.background.empty()) throw DataError("model dir has no background set");
    shap::ExplainConfig cfg;
    cfg.permutations = o.permutations;
    explanation = shap::explain_transaction(*bundle.vae, *it, bundle.background, cfg).to_json();
  }
  print_explanation(explanation, std::cout);
  m.outputs = {{"explained", true}};
  if (!o.out.empty()) {
    store::write_json_atomic(o.out, explanation);
    m.outputs["explanation"] = o.out;
  }
  m.write(manifest_path);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dualpath: VAE fraud scoring with triggered Shapley explanations and a WGAN-GP retraining loop"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DUALPATH_VERSION);
  Manifest manifest;
  manifest.argv.assign(argv, argv + argc);

  GenDataOpts gd;
  auto* gen = app.add_subcommand("gen-data", "Generate a labelled transaction stream or a fraud seed set");
  gen->add_option("--config", gd.config, "JSON config file (section \"gen-data\")");
  gen->add_option("--out", gd.out, "Output directory")->required();
  auto* gd_length = gen->add_option("--length", gd.length, "Stream length")->capture_default_str();
  auto* gd_seed = gen->add_option("--seed", gd.seed, "Stream seed")->capture_default_str();
  auto* gd_accounts = gen->add_option("--accounts", gd.accounts, "Number of accounts")->capture_default_str();
  auto* gd_pseed = gen->add_option("--profile-seed", gd.profile_seed, "Account profile seed")->capture_default_str();
  auto* gd_prev = gen->add_option("--prevalence", gd.prevalence, "Total fraud prevalence, split over scenarios")
                      ->capture_default_str();
  auto* gd_sc = gen->add_option("--scenarios", gd.scenarios, "Comma list of salami,cnp,ato or none")->capture_default_str();
  auto* gd_jump = gen->add_option("--ato-geo-jump-km", gd.ato_geo_jump_km, "ATO geo displacement")->capture_default_str();
  auto* gd_dev = gen->add_option("--ato-device", gd.ato_device, "ATO device: secondary or unseen")->capture_default_str();
  gen->add_option("--seed-set", gd.seed_set, "Emit a fraud-only seed set for this scenario instead of a stream");
  auto* gd_sss = gen->add_option("--seed-set-size", gd.seed_set_size, "Seed set size")->capture_default_str();

  TrainVaeOpts tv;
  auto* tvae = app.add_subcommand("train-vae", "Train the VAE on legitimate traffic and calibrate tau_a");
  tvae->add_option("--config", tv.config, "JSON config file (section \"train-vae\")");
  tvae->add_option("--train", tv.train, "Training stream")->required();
  tvae->add_option("--labels", tv.labels, "Label file; labelled fraud is dropped from training");
  tvae->add_option("--calibration", tv.calibration, "Legitimate calibration stream")->required();
  tvae->add_option("--model-dir", tv.model_dir, "Model directory")->required();
  auto* tv_epochs = tvae->add_option("--epochs", tv.epochs)->capture_default_str();
  auto* tv_batch = tvae->add_option("--batch", tv.batch)->capture_default_str();
  auto* tv_seed = tvae->add_option("--seed", tv.seed)->capture_default_str();
  auto* tv_cseed = tvae->add_option("--codec-seed", tv.codec_seed, "Embedding table seed")->capture_default_str();
  auto* tv_q = tvae->add_option("--quantile", tv.quantile, "Calibration quantile for tau_a")->capture_default_str();
  auto* tv_latent = tvae->add_option("--latent", tv.latent)->capture_default_str();
  auto* tv_hidden = tvae->add_option("--hidden", tv.hidden, "Hidden widths, comma separated")->capture_default_str();
  auto* tv_val = tvae->add_option("--validation-every", tv.validation_every)->capture_default_str();

  TrainGanOpts tg;
  auto* tgan = app.add_subcommand("train-gan", "Train the WGAN-GP synthesizer on a fraud seed set");
  tgan->add_option("--config", tg.config, "JSON config file (section \"train-gan\")");
  tgan->add_option("--model-dir", tg.model_dir, "Model directory (holds the codec)")->required();
  tgan->add_option("--seed-set", tg.seed_set, "Fraud seed set stream (gen-data --seed-set)")->required();
  auto* tg_steps = tgan->add_option("--steps", tg.steps, "Generator steps")->capture_default_str();
  auto* tg_samples = tgan->add_option("--samples", tg.samples, "Samples for the marginal report")->capture_default_str();
  auto* tg_batch = tgan->add_option("--batch", tg.batch)->capture_default_str();
  auto* tg_ncritic = tgan->add_option("--n-critic", tg.n_critic)->capture_default_str();
  auto* tg_lambda = tgan->add_option("--lambda", tg.lambda, "Gradient penalty weight")->capture_default_str();
  auto* tg_seed = tgan->add_option("--seed", tg.seed)->capture_default_str();

  ServeOpts sv;
  auto* serve = app.add_subcommand("serve", "Run the scoring service over HTTP");
  serve->add_option("--config", sv.config, "JSON config file (sections \"serve\", \"server\", \"pipeline\")");
  serve->add_option("--model-dir", sv.model_dir, "Model directory")->required();
  auto* sv_state = serve->add_option("--state-dir", sv.state_dir, "Event log, explanations, reports (default <model-dir>/state)");
  auto* sv_host = serve->add_option("--host", sv.host)->capture_default_str();
  auto* sv_port = serve->add_option("--port", sv.port, "0 picks a free port")->capture_default_str();
  auto* sv_http = serve->add_option("--http-threads", sv.http_threads)->capture_default_str();
  auto* sv_workers = serve->add_option("--workers", sv.workers, "Explanation workers")->capture_default_str();
  auto* sv_cap = serve->add_option("--queue-capacity", sv.queue_capacity)->capture_default_str();
  auto* sv_policy = serve->add_option("--pending-policy", sv.pending_policy, "hold or provisional-approve")
                        ->capture_default_str();
  auto* sv_retrain = serve->add_flag("--retrain", sv.retrain, "Enable the retraining scheduler");
  auto* sv_rthr = serve->add_option("--retrain-threshold", sv.retrain_threshold, "Unconsumed buffer entries per cycle")
                      ->capture_default_str();
  auto* sv_rint = serve->add_option("--retrain-interval", sv.retrain_interval, "Seconds between cycles, 0 = off")
                      ->capture_default_str();

  SimulateOpts sm;
  auto* simulate = app.add_subcommand("simulate", "Stream a file through the service with the oracle reviewer");
  simulate->add_option("--config", sm.config, "JSON config file (section \"simulate\")");
  simulate->add_option("--model-dir", sm.model_dir, "Model directory (embedded mode)");
  simulate->add_option("--stream", sm.stream)->required();
  simulate->add_option("--labels", sm.labels)->required();
  simulate->add_option("--out", sm.out, "Output directory")->required();
  simulate->add_option("--url", sm.url, "Running service, e.g. http://127.0.0.1:8080");
  auto* sm_err = simulate->add_option("--reviewer-error", sm.reviewer_error)->capture_default_str();
  auto* sm_rseed = simulate->add_option("--reviewer-seed", sm.reviewer_seed)->capture_default_str();
  auto* sm_workers = simulate->add_option("--workers", sm.workers)->capture_default_str();
  auto* sm_batch = simulate->add_option("--batch", sm.batch, "HTTP batch size")->capture_default_str();
  auto* sm_policy = simulate->add_option("--pending-policy", sm.pending_policy)->capture_default_str();
  simulate->add_flag("--retrain", sm.retrain, "Run one retraining cycle after the stream (embedded mode)");

  ExplainOpts ex;
  auto* explain = app.add_subcommand("explain", "Explain one stored transaction");
  explain->add_option("--config", ex.config, "JSON config file (section \"explain\")");
  explain->add_option("--txid", ex.txid)->required();
  explain->add_option("--model-dir", ex.model_dir);
  explain->add_option("--stream", ex.stream);
  explain->add_option("--url", ex.url, "Fetch from a running service instead");
  explain->add_option("--out", ex.out, "Write the explanation JSON here");
  auto* ex_perm = explain->add_option("--permutations", ex.permutations, "Budget for sampled Shapley")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) {
      manifest.command = "gen-data";
      const auto c = config_section(gd.config, "gen-data");
      fill(c, "length", gd_length, gd.length);
      fill(c, "seed", gd_seed, gd.seed);
      fill(c, "accounts", gd_accounts, gd.accounts);
      fill(c, "profile_seed", gd_pseed, gd.profile_seed);
      fill(c, "prevalence", gd_prev, gd.prevalence);
      fill(c, "scenarios", gd_sc, gd.scenarios);
      fill(c, "ato_geo_jump_km", gd_jump, gd.ato_geo_jump_km);
      fill(c, "ato_device", gd_dev, gd.ato_device);
      fill(c, "seed_set_size", gd_sss, gd.seed_set_size);
      return run_gen_data(gd, manifest);
    }
    if (tvae->parsed()) {
      manifest.command = "train-vae";
      const auto c = config_section(tv.config, "train-vae");
      fill(c, "epochs", tv_epochs, tv.epochs);
      fill(c, "batch", tv_batch, tv.batch);
      fill(c, "seed", tv_seed, tv.seed);
      fill(c, "codec_seed", tv_cseed, tv.codec_seed);
      fill(c, "quantile", tv_q, tv.quantile);
      fill(c, "latent", tv_latent, tv.latent);
      fill(c, "hidden", tv_hidden, tv.hidden);
      fill(c, "validation_every", tv_val, tv.validation_every);
      if (tv.validation_every < 2) throw ContractError("--validation-every must be at least 2");
      return run_train_vae(tv, manifest);
    }
    if (tgan->parsed()) {
      manifest.command = "train-gan";
      const auto c = config_section(tg.config, "train-gan");
      fill(c, "steps", tg_steps, tg.steps);
      fill(c, "samples", tg_samples, tg.samples);
      fill(c, "batch", tg_batch, tg.batch);
      fill(c, "n_critic", tg_ncritic, tg.n_critic);
      fill(c, "lambda", tg_lambda, tg.lambda);
      fill(c, "seed", tg_seed, tg.seed);
      return run_train_gan(tg, manifest);
    }
    if (serve->parsed()) {
      manifest.command = "serve";
      const json file = sv.config.empty() ? json::object() : store::read_json(sv.config);
      const auto c = file.value("serve", json::object());
      // Precedence: flags, then environment, then config file.
      fill(c, "state_dir", sv_state, sv.state_dir);
      fill(c, "host", sv_host, sv.host);
      fill(c, "port", sv_port, sv.port);
      fill(c, "http_threads", sv_http, sv.http_threads);
      fill(c, "workers", sv_workers, sv.workers);
      fill(c, "queue_capacity", sv_cap, sv.queue_capacity);
      fill(c, "pending_policy", sv_policy, sv.pending_policy);
      fill(c, "retrain", sv_retrain, sv.retrain);
      fill(c, "retrain_threshold", sv_rthr, sv.retrain_threshold);
      fill(c, "retrain_interval", sv_rint, sv.retrain_interval);
      server::ServerConfig env;
      env.host = sv.host;
      env.port = sv.port;
      env.threads = sv.http_threads;
      env.apply_env();
      if (sv_host->count() == 0) sv.host = env.host;
      if (sv_port->count() == 0) sv.port = env.port;
      if (sv_http->count() == 0) sv.http_threads = env.threads;
      return run_serve(sv, file, manifest);
    }
    if (simulate->parsed()) {
      manifest.command = "simulate";
      const auto c = config_section(sm.config, "simulate");
      fill(c, "reviewer_error", sm_err, sm.reviewer_error);
      fill(c, "reviewer_seed", sm_rseed, sm.reviewer_seed);
      fill(c, "workers", sm_workers, sm.workers);
      fill(c, "batch", sm_batch, sm.batch);
      fill(c, "pending_policy", sm_policy, sm.pending_policy);
      if (sm.url.empty() && sm.model_dir.empty()) throw ContractError("simulate needs --model-dir or --url");
      return run_simulate(sm, manifest);
    }
    if (explain->parsed()) {
      manifest.command = "explain";
      const auto c = config_section(ex.config, "explain");
      fill(c, "permutations", ex_perm, ex.permutations);
      return run_explain(ex, manifest);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kUsage;
}
