#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>
#include <vector>

#include "stagecast/evaluation.hpp"
#include "stagecast/training.hpp"

using namespace stagecast;

namespace {

// Outputs fixed (h, u) with zero partials.
class ConstantModel : public FlowModel {
 public:
  ConstantModel(double h, double u) : h_(h), u_(u) {}
  std::vector<FlowSample> predict_batch(std::span<const SpaceTime> pts) const override {
    return std::vector<FlowSample>(pts.size(), FlowSample{h_, u_, false});
  }
  std::vector<FlowJet> predict_jets(std::span<const SpaceTime> pts) const override {
    return std::vector<FlowJet>(pts.size(), FlowJet{h_, u_, 0, 0, 0, 0});
  }

 private:
  double h_, u_;
};

// h = 1, u = x (x in feet), so u_x = 1 per second.
class LinearVelocityModel : public FlowModel {
 public:
  std::vector<FlowSample> predict_batch(std::span<const SpaceTime> pts) const override {
    std::vector<FlowSample> out;
    for (const auto& p : pts) out.push_back({1.0, p.x_miles * kFeetPerMile, false});
    return out;
  }
  std::vector<FlowJet> predict_jets(std::span<const SpaceTime> pts) const override {
    std::vector<FlowJet> out;
    for (const auto& p : pts) out.push_back({1.0, p.x_miles * kFeetPerMile, 0.0, 0.0, 1.0, 0.0});
    return out;
  }
};

FlowField constant_field(double h, double u) {
  FlowField f;
  for (int j = 0; j < 6; ++j) f.x_grid_miles.push_back(0.74 * j);
  for (int k = 0; k <= 40; ++k) f.t_grid_hours.push_back(0.25 * k);
  f.h.assign(f.n_x() * f.n_t(), h);
  f.u.assign(f.n_x() * f.n_t(), u);
  return f;
}

SurrogateConfig tiny_arch(Activation act = Activation::Tanh) {
  SurrogateConfig c;
  c.fourier_rows = 8;
  c.width = 16;
  c.depth = 1;
  c.activation = act;
  return c;
}

TrainConfig quick_config(int iterations, double lambda) {
  TrainConfig c;
  c.lambda_physics = lambda;
  c.sigma = 1.0;
  c.batch_size = 64;
  c.collocation_points_per_batch = 32;
  c.max_iterations = iterations;
  c.lr_decay_every = 1000;
  c.log_every = 20;
  c.seed = 3;
  return c;
}

RiverScenario flat_scenario() { return make_flood_wave_scenario(6, 1.0, 2); }

std::vector<TrainingSample> random_samples(Rng& rng, const NormalizationBox& box, std::size_t n) {
  std::vector<TrainingSample> s(n);
  for (auto& x : s) {
    x = {rng.uniform(box.x_min, box.x_max), rng.uniform(box.t_min, box.t_max), rng.uniform(5.0, 20.0),
         rng.uniform(-1.0, 4.0)};
  }
  return s;
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("data_loss: hand examples and naive oracle") {
  const ConstantModel m(2.0, 1.0);
  const std::vector<TrainingSample> exact{{0, 0, 2.0, 1.0}, {1, 1, 2.0, 1.0}};
  CHECK(data_loss(m, exact) == 0.0);
  const std::vector<TrainingSample> unit{{0, 0, 1.0, 1.0}};
  CHECK(data_loss(m, unit) == 1.0);
  CHECK_THROWS(data_loss(m, std::vector<TrainingSample>{}));

  SurrogateConfig arch = tiny_arch();
  arch.box = {0.0, 10.0, 0.0, 24.0};
  const auto model = SurrogateModel::initialize(arch, {12.0, 2.0});
  Rng rng(4);
  const auto batch = random_samples(rng, arch.box, 300);
  double naive = 0.0;
  for (const auto& s : batch) {
    const auto p = model.predict(s.x_miles, s.t_hours);
    naive += (p.h - s.h_ft) * (p.h - s.h_ft) + (p.u - s.u_fps) * (p.u - s.u_fps);
  }
  naive /= static_cast<double>(batch.size());
  CHECK(data_loss(model, batch) == doctest::Approx(naive).epsilon(1e-12));

  ad::Tape tape(model.weights());
  CHECK(tape.scalar(record_data_loss(tape, model, batch)) == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("physics_loss: zero and hand-evaluated cases") {
  Rng rng(1);
  const auto pts = sample_collocation(rng, {0.0, 5.0, 0.0, 10.0}, 100);
  CHECK(physics_loss(ConstantModel(3.0, 1.5), pts) < 1e-12);

  const std::vector<SpaceTime> origin{{0.0, 0.0}};
  CHECK(physics_loss(LinearVelocityModel(), origin) == 1.0);
  const FlowJet jet{1.0, 7.0, 0.0, 0.0, 1.0, 0.0};
  const Residual r = physics_residual(jet, {});
  CHECK(r.continuity == 1.0);
  CHECK(r.momentum == 7.0);

  // A surrogate whose only nonzero weights are the head bias is constant.
  SurrogateConfig arch = tiny_arch();
  arch.box = {0.0, 5.0, 0.0, 10.0};
  auto model = SurrogateModel::initialize(arch, {4.0, 1.0});
  const auto& head_b = model.manifest().back();
  for (std::size_t i = 0; i < head_b.offset; ++i) model.mutable_weights()[i] = 0.0;
  CHECK(physics_loss(model, pts) < 1e-12);
}

TEST_CASE("physics_loss: extended momentum vanishes at normal depth") {
  const auto sc = flat_scenario();
  PhysicsOptions o;
  o.extended_momentum = true;
  o.geometry = sc.geometry;
  const double h0 = sc.boundaries.initial_depth_ft, u0 = sc.boundaries.initial_velocity_fps;
  const Residual r = physics_residual({h0, u0, 0, 0, 0, 0}, o);
  CHECK(std::abs(r.momentum) < 1e-12);
  o.momentum_scale = 3.0;
  o.continuity_scale = 2.0;
  const Residual s = physics_residual({h0, u0, 1e-3, 0, 0, 0}, o);
  CHECK(s.continuity == doctest::Approx(2.0 * 1e-3 * u0));
}

TEST_CASE("total_loss: combination") {
  CHECK(combine_losses(0.5, 0.25, 1.0) == 0.75);
  CHECK(combine_losses(0.5, 123.0, 0.0) == 0.5);
  SurrogateConfig arch = tiny_arch();
  arch.box = {0.0, 0.01, 0.0, 0.01};
  const auto model = SurrogateModel::initialize(arch, {3.0, 0.5});
  Rng rng(2);
  const auto batch = random_samples(rng, arch.box, 50);
  const auto colloc = sample_collocation(rng, arch.box, 40);
  CHECK(total_loss(model, batch, colloc, 0.0) == data_loss(model, batch));
  const double d = data_loss(model, batch), p = physics_loss(model, colloc);
  CHECK(std::abs(total_loss(model, batch, colloc, 0.1) - (d + 0.1 * p)) <= 1e-15 * (d + 0.1 * p));
  CHECK_THROWS(total_loss(model, batch, colloc, -1.0));
}

TEST_CASE("physics_loss: taped value matches the value path") {
  const auto sc = flat_scenario();
  for (bool extended : {false, true}) {
    for (auto act : {Activation::Tanh, Activation::Relu}) {
      SurrogateConfig arch = tiny_arch(act);
      arch.box = {0.0, 3.0, 0.0, 10.0};
      auto model = SurrogateModel::initialize(arch, {15.0, 3.0});
      Rng rng(9);
      for (double& w : model.mutable_weights()) w += 0.1 * rng.normal();
      const auto pts = sample_collocation(rng, arch.box, 64);
      PhysicsOptions o;
      o.extended_momentum = extended;
      o.geometry = sc.geometry;
      o.momentum_scale = 50.0;
      ad::Tape tape(model.weights());
      const double taped = tape.scalar(record_physics_loss(tape, model, pts, o));
      CHECK(taped == doctest::Approx(physics_loss(model, pts, o)).epsilon(1e-12));
    }
  }
}

TEST_CASE("total_loss gradient matches finite differences") {
  // A small box keeps the physical-unit residuals O(1) so both terms matter.
  const auto sc = flat_scenario();
  const double step = 1e-5;
  for (double lambda : {0.0, 0.1, 1.0}) {
    for (bool extended : {false, true}) {
      SurrogateConfig arch;
      arch.use_fourier = true;
      arch.fourier_rows = 4;
      arch.sigma = 1.0;
      arch.width = 8;
      arch.depth = 1;
      arch.activation = Activation::Tanh;
      arch.box = {0.0, 0.005, 0.0, 0.002};
      arch.seed = 17;
      auto model = SurrogateModel::initialize(arch, {2.0, 0.5});
      Rng rng(31);
      for (double& w : model.mutable_weights()) w += 0.2 * rng.normal();
      const auto batch = random_samples(rng, arch.box, 16);
      const auto colloc = sample_collocation(rng, arch.box, 16);
      PhysicsOptions o;
      o.extended_momentum = extended;
      o.geometry = sc.geometry;

      auto& w = model.mutable_weights();
      ad::Tape tape(w);
      const auto d = record_data_loss(tape, model, batch);
      const auto p = record_physics_loss(tape, model, colloc, o);
      const auto loss = tape.add(d, tape.scale(p, lambda));
      const auto grad = tape.grad_weights(loss);

      double worst = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double keep = w[i];
        w[i] = keep + step;
        const double up = total_loss(model, batch, colloc, lambda, o);
        w[i] = keep - step;
        const double down = total_loss(model, batch, colloc, lambda, o);
        w[i] = keep;
        const double fd = (up - down) / (2.0 * step);
        worst = std::max(worst, std::abs(fd - grad[i]) / std::max(std::abs(grad[i]), 1e-6));
      }
      CAPTURE(lambda);
      CAPTURE(extended);
      CHECK(worst < 1e-3);
    }
  }
}

TEST_CASE("adam: closed-form first step and zero gradient") {
  std::vector<double> w{0.5};
  AdamState st(1);
  const std::vector<double> g{1.0};
  adam_step(w, g, st, 1e-3);
  const double m_hat = (1.0 - AdamState::kBeta1) * 1.0 / (1.0 - AdamState::kBeta1);
  const double v_hat = (1.0 - AdamState::kBeta2) * 1.0 / (1.0 - AdamState::kBeta2);
  CHECK(st.step == 1);
  CHECK(w[0] == doctest::Approx(0.5 - 1e-3 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-15));
  CHECK(0.5 - w[0] == doctest::Approx(1e-3).epsilon(1e-7));

  std::vector<double> z{1.0, -2.0};
  AdamState zs(2);
  adam_step(z, std::vector<double>{0.0, 0.0}, zs, 1e-3);
  CHECK(z == std::vector<double>{1.0, -2.0});
  CHECK(zs.step == 1);

  std::vector<double> bad{1.0, 2.0, 3.0};
  AdamState bs(3);
  try {
    adam_step(bad, std::vector<double>{0.0, std::nan(""), 0.0}, bs, 1e-3);
    FAIL("expected a TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
  CHECK_THROWS(adam_step(bad, std::vector<double>{0.0}, bs, 1e-3));
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  CHECK(learning_rate(c, 0) == 1e-3);
  CHECK(learning_rate(c, 20000) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(learning_rate(c, 40000) == doctest::Approx(2.5e-4).epsilon(1e-15));
  CHECK(learning_rate(c, 10000) == doctest::Approx(1e-3 / std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("collocation sampling covers the box") {
  const NormalizationBox box{2.0, 16.0, 0.0, 36.0};
  Rng rng(8);
  const auto pts = sample_collocation(rng, box, 100000);
  double xmin = 1e9, xmax = -1e9, tmin = 1e9, tmax = -1e9;
  for (const auto& p : pts) {
    xmin = std::min(xmin, p.x_miles);
    xmax = std::max(xmax, p.x_miles);
    tmin = std::min(tmin, p.t_hours);
    tmax = std::max(tmax, p.t_hours);
    REQUIRE(p.x_miles >= box.x_min);
    REQUIRE(p.x_miles <= box.x_max);
  }
  CHECK(xmin - box.x_min <= 0.01 * (box.x_max - box.x_min));
  CHECK(box.x_max - xmax <= 0.01 * (box.x_max - box.x_min));
  CHECK(tmin - box.t_min <= 0.01 * (box.t_max - box.t_min));
  CHECK(box.t_max - tmax <= 0.01 * (box.t_max - box.t_min));
}

TEST_CASE("training set: split and box") {
  const auto field = constant_field(10.0, 2.0);
  const auto set = make_training_set(field, 0.1, 5);
  const std::size_t total = field.n_x() * field.n_t();
  CHECK(set.validation.size() == total / 10);
  CHECK(set.samples.size() + set.validation.size() == total);
  CHECK(set.box == NormalizationBox{0.0, 0.74 * 5, 0.0, 10.0});
  std::set<std::pair<double, double>> seen;
  for (const auto* part : {&set.samples, &set.validation}) {
    for (const auto& s : *part) seen.insert({s.x_miles, s.t_hours});
  }
  CHECK(seen.size() == total);
  const auto again = make_training_set(field, 0.1, 5);
  CHECK(again.validation.front().x_miles == set.validation.front().x_miles);
  CHECK(again.validation.front().t_hours == set.validation.front().t_hours);
  const auto other = make_training_set(field, 0.1, 6);
  bool differs = false;
  for (std::size_t i = 0; i < set.validation.size(); ++i) {
    differs |= other.validation[i].t_hours != set.validation[i].t_hours ||
               other.validation[i].x_miles != set.validation[i].x_miles;
  }
  CHECK(differs);
  CHECK(set.prior().mean_h == doctest::Approx(10.0));
  CHECK_THROWS(make_training_set(field, 1.0, 1));
}

TEST_CASE("train: zero iterations returns the initial model") {
  const auto set = make_training_set(constant_field(10.0, 2.0), 0.1, 1);
  const auto cfg = quick_config(0, 0.1);
  const auto init = make_initial_model(tiny_arch(), set, cfg);
  const auto r = train(init, set, flat_scenario(), cfg);
  CHECK(r.history.empty());
  CHECK(same_bits(r.model.weights(), init.weights()));
}

TEST_CASE("train: constant field is learned") {
  const auto set = make_training_set(constant_field(10.0, 2.0), 0.1, 1);
  auto cfg = quick_config(200, 0.0);
  cfg.lr_initial = 1e-2;
  const auto r = train(make_initial_model(tiny_arch(Activation::Relu), set, cfg), set, flat_scenario(), cfg);
  CHECK(data_loss(r.model, set.samples) < 1e-3);
  CHECK(r.history.size() == 10);
  CHECK(r.history[1].iteration == 20);
}

TEST_CASE("train: determinism, frozen encoder and best-so-far envelope") {
  const auto sc = make_flood_wave_scenario(6, 2.0, 4);
  SolverConfig sv;
  sv.n_cells = 60;
  const auto field = solve(sc, sv);
  const auto set = make_training_set(field, 0.1, 2);
  const auto cfg = quick_config(60, 0.1);
  const auto init = make_initial_model(tiny_arch(), set, cfg);
  const auto a = train(init, set, sc, cfg);
  const auto b = train(init, set, sc, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].total_loss == b.history[i].total_loss);
    CHECK(a.history[i].physics_loss == b.history[i].physics_loss);
  }
  CHECK(same_bits(a.model.weights(), b.model.weights()));
  CHECK(a.model.encoder().frequencies() == init.encoder().frequencies());

  double best = std::numeric_limits<double>::infinity();
  for (const auto& rec : a.history) best = std::min(best, rec.validation_loss);
  CHECK(a.best_validation_loss <= best);
  CHECK(data_loss(a.model, set.validation) == a.best_validation_loss);
}

TEST_CASE("train: lambda 0 equals a plain supervised loop") {
  const auto set = make_training_set(constant_field(8.0, 1.0), 0.1, 3);
  auto cfg = quick_config(40, 0.0);
  cfg.log_every = 1000;  // only iteration 0 is logged
  const auto init = make_initial_model(tiny_arch(), set, cfg);
  const auto trained = train(init, set, flat_scenario(), cfg);

  // Same sampler streams, data loss only, final weights.
  SurrogateModel model = init;
  auto& w = model.mutable_weights();
  AdamState adam(w.size());
  Rng batch_rng(Rng::derive(cfg.seed, 20));
  std::vector<TrainingSample> batch(static_cast<std::size_t>(cfg.batch_size));
  ad::Tape tape(w);
  for (int it = 0; it < cfg.max_iterations; ++it) {
    for (auto& s : batch) s = set.samples[batch_rng.index(set.samples.size())];
    tape.reset();
    const auto loss = record_data_loss(tape, model, batch);
    const auto g = tape.grad_weights(loss);
    adam_step(w, g, adam, learning_rate(cfg, it));
  }
  // The trainer keeps best-by-validation weights; force the final ones to compare.
  const double final_val = data_loss(model, set.validation);
  if (trained.best_iteration == cfg.max_iterations) {
    CHECK(same_bits(trained.model.weights(), model.weights()));
  } else {
    CHECK(trained.best_validation_loss <= final_val);
  }
  CHECK(trained.best_iteration == cfg.max_iterations);
}

TEST_CASE("train: divergence guard and grid search") {
  const auto set = make_training_set(constant_field(10.0, 2.0), 0.1, 1);
  auto cfg = quick_config(200, 0.0);
  cfg.lr_initial = 1e4;
  cfg.lr_decay_every = 1000000;
  const auto sc = flat_scenario();
  try {
    (void)train(make_initial_model(tiny_arch(Activation::Relu), set, cfg), set, sc, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK_FALSE(e.history().empty());
  }

  // Every cell diverges: all scores tie at +inf, smaller sigma then smaller lambda wins.
  const std::vector<double> lambdas{0.1, 0.0}, sigmas{4.0, 1.0};
  const auto all_bad = grid_search(set, sc, lambdas, sigmas, 200, tiny_arch(Activation::Relu), cfg);
  CHECK(all_bad.table.size() == 4);
  for (const auto& c : all_bad.table) {
    CHECK(c.diverged);
    CHECK(std::isinf(c.score));
  }
  CHECK(all_bad.best_sigma == 1.0);
  CHECK(all_bad.best_lambda == 0.0);

  auto good = quick_config(40, 0.0);
  const std::vector<double> one{0.0};
  const std::vector<double> s1{2.0};
  const auto single = grid_search(set, sc, one, s1, 40, tiny_arch(), good);
  CHECK(single.table.size() == 1);
  CHECK(single.best_sigma == 2.0);
  CHECK(std::isfinite(single.table[0].score));

  const std::vector<double> l2{0.0, 0.1}, s2{1.0, 4.0};
  const auto grid = grid_search(set, sc, l2, s2, 40, tiny_arch(), good);
  REQUIRE(grid.table.size() == 4);
  const auto best = std::min_element(grid.table.begin(), grid.table.end(),
                                     [](const GridCell& a, const GridCell& b) { return a.score < b.score; });
  CHECK(grid.best_lambda == best->lambda_physics);
  CHECK(grid.best_sigma == best->sigma);
  CHECK_THROWS(grid_search(set, sc, std::vector<double>{}, s2, 10, tiny_arch(), good));
}
