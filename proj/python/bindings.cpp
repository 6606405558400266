#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "dualpath/errors.hpp"
#include "dualpath/gumbel.hpp"
#include "dualpath/model_store.hpp"
#include "dualpath/pipeline.hpp"
#include "dualpath/shap.hpp"
#include "dualpath/simulator.hpp"
#include "dualpath/vae.hpp"

namespace py = pybind11;
using namespace dualpath;
using nlohmann::json;

namespace {

// Dicts cross the boundary as JSON text; the payloads are small.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::list transactions_to_py(const std::vector<codec::Transaction>& txs, const codec::TransactionSchema& schema) {
  py::list out;
  for (const auto& t : txs) {
    auto j = codec::to_json(t, schema);
    j["label"] = t.label;
    out.append(to_py(j));
  }
  return out;
}

std::vector<codec::Transaction> transactions_from_py(const py::list& rows, const codec::TransactionSchema& schema) {
  std::vector<codec::Transaction> out;
  for (const auto& r : rows) {
    auto j = from_py(r);
    auto t = codec::transaction_from_json(j, schema);
    if (j.contains("label")) t.label = j.at("label").get<std::string>();
    out.push_back(std::move(t));
  }
  return out;
}

shap::ValueFunction wrap_game(py::function fn) {
  return [fn](const std::vector<bool>& present) { return fn(present).cast<double>(); };
}

/// Scores and explains with a loaded model directory.
class Model {
 public:
  explicit Model(const std::string& dir) : bundle_(store::load_bundle(dir)) {}

  py::object score(const py::dict& tx) const {
    const auto t = codec::transaction_from_json(from_py(tx), schema());
    const auto s = vae::score(*bundle_.vae, bundle_.threshold, t);
    return to_py({{"transaction_id", s.transaction_id},
                  {"error", s.reconstruction_error},
                  {"tau", s.tau},
                  {"anomalous", s.verdict == vae::Verdict::anomalous},
                  {"model_version", s.model_version}});
  }

  py::object explain(const py::dict& tx, std::size_t permutations) const {
    const auto t = codec::transaction_from_json(from_py(tx), schema());
    shap::ExplainConfig cfg;
    cfg.permutations = permutations;
    shap::Explanation e;
    {
      py::gil_scoped_release release;
      e = shap::explain_transaction(*bundle_.vae, t, bundle_.background, cfg);
    }
    return to_py(e.to_json());
  }

  double tau() const { return bundle_.threshold.tau; }
  std::uint64_t vae_version() const { return bundle_.vae_version(); }
  const codec::TransactionSchema& schema() const { return bundle_.vae->codec().schema(); }
  const store::ModelBundle& bundle() const { return bundle_; }

 private:
  store::ModelBundle bundle_;
};

/// Embedded pipeline over a model directory.
class Service {
 public:
  Service(const std::string& dir, const py::dict& config)
      : pipeline_(store::load_bundle(dir), pipeline::PipelineConfig::from_json(from_py(config))) {}

  py::object process(const py::dict& tx) {
    const auto t = codec::transaction_from_json(from_py(tx), pipeline_.schema());
    pipeline::Decision d;
    {
      py::gil_scoped_release release;
      d = pipeline_.process(t);
    }
    return to_py(d.to_json());
  }

  py::object resolve(const std::string& id, const std::string& verdict, const std::string& reviewer,
                     const std::string& tag) {
    return to_py(pipeline_.resolve(id, pipeline::verdict_from_name(verdict), reviewer, tag).to_json(pipeline_.schema()));
  }

  py::list reviews(const std::string& state) const {
    std::optional<pipeline::ReviewState> filter;
    if (state != "all") filter = pipeline::state_from_name(state);
    py::list out;
    for (const auto& item : pipeline_.reviews(filter)) out.append(to_py(item.to_json(pipeline_.schema())));
    return out;
  }

  py::object metrics() const { return to_py(pipeline_.metrics().to_json()); }
  py::object state() const { return to_py(pipeline_.state().to_json(pipeline_.schema())); }

  void wait_for_explanations() {
    py::gil_scoped_release release;
    pipeline_.wait_for_explanations();
  }

  void shutdown(bool drain) {
    py::gil_scoped_release release;
    pipeline_.shutdown(drain);
  }

 private:
  pipeline::Pipeline pipeline_;
};

py::object train_vae(const py::list& train, const py::list& calibration, const std::string& model_dir,
                     std::size_t epochs, std::uint64_t seed, double quantile) {
  const auto schema = codec::TransactionSchema::banking_default();
  const auto tr = sim::only_legitimate(transactions_from_py(train, schema));
  const auto cal = transactions_from_py(calibration, schema);
  store::ModelBundle bundle;
  vae::TrainingReport report;
  {
    py::gil_scoped_release release;
    auto cod = std::make_shared<const codec::Codec>(codec::Codec::fit(schema, tr, 5));
    std::vector<codec::FeatureVector> rows, validation, cal_rows;
    for (std::size_t i = 0; i < tr.size(); ++i) (i % 10 == 0 ? validation : rows).push_back(cod->encode(tr[i]));
    for (const auto& t : cal) cal_rows.push_back(cod->encode(t));
    vae::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = seed;
    auto result = vae::train(cod, rows, validation, cfg);
    bundle.threshold = vae::calibrate_threshold(result.model, cal_rows, quantile);
    bundle.vae = std::make_shared<const vae::VaeModel>(std::move(result.model));
    const std::size_t nb = std::min(cal_rows.size(), shap::kDefaultBackgroundSize);
    bundle.background.assign(cal_rows.begin(), cal_rows.begin() + static_cast<std::ptrdiff_t>(nb));
    report = result.report;
    store::save_bundle(model_dir, bundle);
  }
  return to_py({{"tau", bundle.threshold.tau}, {"training", report.to_json()}});
}

}  // namespace

PYBIND11_MODULE(_dualpath, m) {
  m.doc() = "Python bindings for the dualpath fraud-detection core";

  auto base = py::register_exception<Error>(m, "DualpathError");
  py::register_exception<DataError>(m, "DataError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<TrainingError>(m, "TrainingError", base);
  py::register_exception<CalibrationError>(m, "CalibrationError", base);
  py::register_exception<ColdStartError>(m, "ColdStartError", base);
  py::register_exception<NotFoundError>(m, "NotFoundError", base);
  py::register_exception<ConflictError>(m, "ConflictError", base);
  py::register_exception<BackpressureError>(m, "BackpressureError", base);
  py::register_exception<ServiceError>(m, "ServiceError", base);

  m.def("sample_gumbel", py::overload_cast<std::size_t, std::uint64_t>(&codec::sample_gumbel), py::arg("k"),
        py::arg("seed"));
  m.def(
      "gumbel_softmax",
      [](const std::vector<double>& logits, const std::vector<double>& noise, double temperature, bool hard) {
        return codec::gumbel_softmax(logits, codec::GumbelConfig{temperature, hard}, noise);
      },
      py::arg("logits"), py::arg("noise"), py::arg("temperature") = 1.0, py::arg("hard") = false);
  m.def(
      "anneal_temperature",
      [](std::int64_t step, double initial, double rate, double minimum) {
        return codec::anneal_temperature(step, codec::AnnealSchedule{initial, rate, minimum});
      },
      py::arg("step"), py::arg("initial") = 1.0, py::arg("rate") = 1e-4, py::arg("minimum") = 0.1);
  m.def("closed_form_kl", &vae::closed_form_kl, py::arg("mu"), py::arg("sigma"));

  m.def(
      "shapley_exact",
      [](py::function game, const std::vector<std::string>& names) {
        return to_py(shap::explain_exact(wrap_game(std::move(game)), names).to_json());
      },
      py::arg("game"), py::arg("names"), "Exact Shapley values of a Python game v(present: list[bool]) -> float.");
  m.def(
      "shapley_sampled",
      [](py::function game, const std::vector<std::string>& names, std::size_t permutations, std::uint64_t seed) {
        return to_py(shap::explain_sampled(wrap_game(std::move(game)), names, permutations, seed).to_json());
      },
      py::arg("game"), py::arg("names"), py::arg("permutations") = 2000, py::arg("seed") = 11);
  m.def(
      "permutation_oracle",
      [](py::function game, std::size_t n) { return shap::permutation_oracle(wrap_game(std::move(game)), n); },
      py::arg("game"), py::arg("n"));

  m.def(
      "generate_stream",
      [](std::size_t length, std::uint64_t seed, double prevalence, std::size_t accounts, std::uint64_t profile_seed) {
        const auto profiles = sim::make_profiles(accounts, profile_seed);
        const auto scenarios = prevalence > 0.0 ? sim::default_scenarios(prevalence) : std::vector<sim::ScenarioConfig>{};
        return transactions_to_py(sim::generate_stream(profiles, scenarios, length, seed),
                                  codec::TransactionSchema::banking_default());
      },
      py::arg("length"), py::arg("seed"), py::arg("prevalence") = sim::kDefaultPrevalence, py::arg("accounts") = 20,
      py::arg("profile_seed") = 1, "Labelled stream as a list of dicts; `label` is ground truth.");

  m.def("train_vae", &train_vae, py::arg("train"), py::arg("calibration"), py::arg("model_dir"),
        py::arg("epochs") = 10, py::arg("seed") = 1, py::arg("quantile") = 0.995,
        "Trains on legitimate rows of `train`, calibrates tau_a on `calibration` and saves a model directory.");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("model_dir"))
      .def("score", &Model::score, py::arg("transaction"))
      .def("explain", &Model::explain, py::arg("transaction"), py::arg("permutations") = 2000)
      .def_property_readonly("tau", &Model::tau)
      .def_property_readonly("vae_version", &Model::vae_version);

  py::class_<Service>(m, "Pipeline")
      .def(py::init<const std::string&, const py::dict&>(), py::arg("model_dir"), py::arg("config") = py::dict())
      .def("process", &Service::process, py::arg("transaction"))
      .def("resolve", &Service::resolve, py::arg("id"), py::arg("verdict"), py::arg("reviewer"), py::arg("tag") = "")
      .def("reviews", &Service::reviews, py::arg("state") = "open")
      .def("metrics", &Service::metrics)
      .def("state", &Service::state)
      .def("wait_for_explanations", &Service::wait_for_explanations)
      .def("shutdown", &Service::shutdown, py::arg("drain") = true);
}
