#pragma once

// Small trained model shared by the pipeline and server tests.

#include <memory>
#include <vector>

#include "dualpath/model_store.hpp"
#include "dualpath/retraining.hpp"
#include "dualpath/simulator.hpp"
#include "dualpath/vae.hpp"

namespace testsupport {

namespace dp = dualpath;

struct ModelFixture {
  std::vector<dp::sim::LegitimateProfile> profiles;
  dp::store::ModelBundle bundle;
  std::shared_ptr<const dp::retrain::CycleResources> resources;
};

inline std::vector<dp::codec::FeatureVector> encode_all(const dp::codec::Codec& c,
                                                        const std::vector<dp::codec::Transaction>& txs) {
  std::vector<dp::codec::FeatureVector> out;
  out.reserve(txs.size());
  for (const auto& t : txs) out.push_back(c.encode(t));
  return out;
}

inline const ModelFixture& model_fixture() {
  static const ModelFixture f = [] {
    ModelFixture out;
    out.profiles = dp::sim::make_profiles(20, 1);
    const auto legit = dp::sim::generate_stream(out.profiles, {}, 5000, 101);
    const auto cal = dp::sim::generate_stream(out.profiles, {}, 2000, 102);
    auto c = std::make_shared<const dp::codec::Codec>(
        dp::codec::Codec::fit(dp::codec::TransactionSchema::banking_default(), legit, 5));
    const auto rows = encode_all(*c, legit);
    const auto cal_rows = encode_all(*c, cal);
    dp::vae::TrainConfig cfg;
    cfg.epochs = 5;
    auto trained = dp::vae::train(c, rows, {}, cfg);
    out.bundle.threshold = dp::vae::calibrate_threshold(trained.model, cal_rows, 0.995);
    out.bundle.vae = std::make_shared<const dp::vae::VaeModel>(std::move(trained.model));
    out.bundle.background.assign(cal_rows.begin(), cal_rows.begin() + 100);

    dp::sim::ScenarioConfig ato;
    ato.scenario = dp::sim::Scenario::ato;
    auto res = std::make_shared<dp::retrain::CycleResources>();
    res->legitimate = rows;
    res->calibration = cal_rows;
    res->seed_set = encode_all(*c, dp::sim::seed_set(out.profiles, ato, 128, 55));
    out.resources = std::move(res);
    return out;
  }();
  return f;
}

/// A legitimate-looking transaction pushed far off the manifold.
inline dp::codec::Transaction outlier(const ModelFixture& f, const std::string& id) {
  auto t = dp::sim::generate_stream(f.profiles, {}, 5, 900)[2];
  namespace bk = dp::codec::banking;
  t.id = id;
  t.continuous[bk::kAmount] = 40000.0;
  t.continuous[bk::kHomeDistance] = 15000.0;
  t.continuous[bk::kTimeDelta] = 1.0;
  t.categorical[bk::kDevice] = bk::unseen;
  return t;
}

}  // namespace testsupport
