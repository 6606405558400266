#include <doctest.h>

#include <cmath>
#include <random>

#include "dualpath/errors.hpp"
#include "dualpath/gan.hpp"
#include "dualpath/simulator.hpp"
#include "support/finite_diff.hpp"

using namespace dualpath;
using ad::Tensor;
using ad::Var;
using testsupport::numeric_gradient;
using testsupport::random_tensor;
using testsupport::relative_error;

namespace {

Tensor unit_column(std::size_t n, std::mt19937_64& rng) {
  Tensor w = random_tensor({n, 1}, rng);
  double norm = 0.0;
  for (double v : w.data()) norm += v * v;
  for (auto& v : w.storage()) v /= std::sqrt(norm);
  return w;
}

gan::CriticFn linear(const Tensor& w, double factor) {
  return [w, factor](const Var& x) { return ad::scale(ad::matmul(x, ad::constant(w)), factor); };
}

std::shared_ptr<const codec::Codec> banking_codec() {
  static const auto c = [] {
    const auto legit = sim::generate_stream(sim::make_profiles(20, 1), {}, 3000, 101);
    return std::make_shared<const codec::Codec>(
        codec::Codec::fit(codec::TransactionSchema::banking_default(), legit, 5));
  }();
  return c;
}

std::vector<Tensor> gumbel_noise(const codec::Codec& c, std::size_t m, std::mt19937_64& rng) {
  std::vector<Tensor> out;
  for (const auto& f : c.schema().categorical) {
    Tensor t({m, f.cardinality});
    const auto g = codec::sample_gumbel(t.size(), rng);
    std::copy(g.begin(), g.end(), t.storage().begin());
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<codec::FeatureVector> cnp_seed_set(std::size_t n) {
  sim::ScenarioConfig cnp;
  cnp.scenario = sim::Scenario::cnp_velocity;
  std::vector<codec::FeatureVector> out;
  for (const auto& t : sim::seed_set(sim::make_profiles(20, 1), cnp, n, 21)) out.push_back(banking_codec()->encode(t));
  return out;
}

}  // namespace

TEST_CASE("unit linear critic: identical batches give loss 0, doubled critic gives lambda") {
  std::mt19937_64 rng(1);
  const Tensor w = unit_column(6, rng);
  const Tensor batch = random_tensor({8, 6}, rng, -2, 2);
  const Tensor eps = random_tensor({8, 1}, rng, 0, 1);
  for (double lambda : {1.0, 10.0}) {
    const auto unit = gan::critic_loss(linear(w, 1.0), batch, batch, eps, lambda);
    CHECK(std::abs(unit.loss.value().item()) <= 1e-9);
    CHECK(std::abs(unit.penalty) <= 1e-9);
    const auto doubled = gan::critic_loss(linear(w, 2.0), batch, batch, eps, lambda);
    CHECK(std::abs(doubled.loss.value().item() - lambda) <= 1e-9);
  }
}

TEST_CASE("penalty vanishes for a unit-gradient critic on distinct batches") {
  std::mt19937_64 rng(2);
  const Tensor w = unit_column(5, rng);
  const Tensor real = random_tensor({10, 5}, rng), fake = random_tensor({10, 5}, rng);
  const auto t = gan::critic_loss(linear(w, 1.0), real, fake, random_tensor({10, 1}, rng, 0, 1), 10.0);
  CHECK(std::abs(t.penalty) <= 1e-9);
  for (double n : t.gradient_norms) CHECK(std::abs(n - 1.0) <= 1e-9);
  // Remaining loss is the Wasserstein estimate alone.
  CHECK(std::abs(t.loss.value().item() - (t.fake_mean - t.real_mean)) <= 1e-12);
}

TEST_CASE("interpolation boundaries") {
  std::mt19937_64 rng(3);
  const Tensor real = random_tensor({4, 3}, rng), fake = random_tensor({4, 3}, rng);
  CHECK(gan::interpolate(real, fake, Tensor({4, 1}, 1.0)) == real);
  CHECK(gan::interpolate(real, fake, Tensor({4, 1}, 0.0)) == fake);
}

TEST_CASE("generator gradients under simple critics") {
  const auto c = banking_codec();
  gan::GanConfig cfg;
  cfg.hidden = {16};
  const auto model = gan::GanModel::create(c, cfg);
  std::mt19937_64 rng(4);
  const std::size_t m = 6;
  const Tensor z = random_tensor({m, cfg.noise_dim}, rng);
  const auto g = gumbel_noise(*c, m, rng);
  const codec::GumbelConfig soft{0.7, false};
  const auto leaves = model.generator_params().leaves();
  const nn::Bindings b(model.generator_params(), leaves);

  SUBCASE("constant critic gives zero generator gradients") {
    const Tensor zero_w({model.feature_dim(), 1});
    auto constant = [&](const Var& x) {
      return ad::add(ad::matmul(x, ad::constant(zero_w)), ad::constant(Tensor::scalar(3.0)));
    };
    const Var loss = gan::generator_loss(constant, model.generate(ad::constant(z), g, soft, b));
    for (const auto& grad : ad::grad(loss, leaves)) {
      for (double v : grad.value().data()) CHECK(v == 0.0);
    }
  }

  SUBCASE("unit linear critic pushes samples along +w") {
    const Tensor w = unit_column(model.feature_dim(), rng);
    const Var generated = ad::leaf(model.generate(ad::constant(z), g, soft, b).value());
    const Var loss = gan::generator_loss(linear(w, 1.0), generated);
    const auto dx = ad::grad(loss, std::span<const Var>(&generated, 1))[0].value();
    // d(-mean(x w))/dx = -w / m for every row: descent moves each sample along +w.
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t k = 0; k < model.feature_dim(); ++k) CHECK(dx.at(r, k) == doctest::Approx(-w[k] / m));

    // One small gradient step on the generator raises the critic score.
    auto score = [&](const nn::ParameterSet& p) {
      const nn::Bindings bb(p, p.leaves(false));
      return ad::mean(ad::matmul(model.generate(ad::constant(z), g, soft, bb), ad::constant(w))).value().item();
    };
    const auto grads =
        ad::grad(gan::generator_loss(linear(w, 1.0), model.generate(ad::constant(z), g, soft, b)), leaves);
    nn::ParameterSet stepped = model.generator_params();
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto& v = stepped.entries()[i].value;
      for (std::size_t k = 0; k < v.size(); ++k) v[k] -= 1e-3 * grads[i].value()[k];
    }
    CHECK(score(stepped) > score(model.generator_params()));
  }

  SUBCASE("generator gradient matches finite differences with fixed noise") {
    const Tensor w = random_tensor({model.feature_dim(), 1}, rng);
    auto critic = [&](const Var& x) { return ad::tanh(ad::matmul(x, ad::constant(w))); };
    const auto grads = ad::grad(gan::generator_loss(critic, model.generate(ad::constant(z), g, soft, b)), leaves);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const auto& name = model.generator_params().entries()[i].name;
      CAPTURE(name);
      auto f = [&](const Tensor& v) {
        nn::ParameterSet p = model.generator_params();
        p.get(name) = v;
        const nn::Bindings bb(p, p.leaves(false));
        return gan::generator_loss(critic, model.generate(ad::constant(z), g, soft, bb)).value().item();
      };
      CHECK(relative_error(grads[i].value(), numeric_gradient(f, model.generator_params().entries()[i].value)) < 1e-5);
    }
  }
}

TEST_CASE("cold start below 64 real examples") {
  const auto real = cnp_seed_set(63);
  gan::GanConfig cfg;
  cfg.generator_steps = 1;
  try {
    gan::train_gan(banking_codec(), real, cfg);
    FAIL("expected ColdStartError");
  } catch (const ColdStartError& e) {
    CHECK(std::string(e.what()).find("seed") != std::string::npos);
  }
}

TEST_CASE("training is deterministic and synthesis is schema valid") {
  const auto real = cnp_seed_set(128);
  gan::GanConfig cfg;
  cfg.generator_steps = 20;
  const auto a = gan::train_gan(banking_codec(), real, cfg, nullptr, 500);
  const auto b = gan::train_gan(banking_codec(), real, cfg, nullptr, 500);
  CHECK(a.model.combined().serialize() == b.model.combined().serialize());
  CHECK(a.report.critic_steps == 20 * cfg.n_critic);
  CHECK(a.report.generator_steps == 20);

  CHECK(gan::synthesize(a.model, 0, 1).empty());
  const auto samples = gan::synthesize(a.model, 300, 9);
  CHECK(samples.size() == 300);
  for (const auto& t : samples) {
    CHECK_NOTHROW(codec::validate(t, banking_codec()->schema()));
    CHECK(t.label == gan::kSyntheticFraud);
  }
  CHECK(gan::synthesize(a.model, 50, 4).front().continuous == gan::synthesize(a.model, 50, 4).front().continuous);
}
