#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "stagecast/evaluation.hpp"

using namespace stagecast;

namespace {

struct Fixture {
  RiverScenario scenario;
  FlowField field;
};

const Fixture& small_flood() {
  static const Fixture f = [] {
    Fixture x;
    x.scenario = make_flood_wave_scenario(8, 3.0, 7);
    SolverConfig cfg;
    cfg.n_cells = 140;
    x.field = solve(x.scenario, cfg);
    return x;
  }();
  return f;
}

SurrogateConfig tiny_arch() {
  SurrogateConfig c;
  c.fourier_rows = 8;
  c.width = 16;
  c.depth = 1;
  c.activation = Activation::Tanh;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.batch_size = 64;
  c.collocation_points_per_batch = 32;
  c.lr_decay_every = 1000;
  c.log_every = 10;
  return c;
}

}  // namespace

TEST_CASE("mrae: hand examples") {
  const std::vector<double> t{1, 2, 3};
  CHECK(mrae(t, t) == 0.0);
  CHECK(mrae(std::vector<double>{1.1, 2.2, 3.3}, t) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(mrae(std::vector<double>{0.0}, std::vector<double>{5.0}) == 1.0);
  CHECK_THROWS_AS(mrae(std::vector<double>{1.0}, t), MetricError);
  CHECK_THROWS_AS(mrae(std::vector<double>{}, std::vector<double>{}), MetricError);
  CHECK_THROWS_AS(mrae(std::vector<double>{1.0, 1.0}, std::vector<double>{-1.0, 0.5}), MetricError);
}

TEST_CASE("mrae: scale covariance and permutation invariance") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(97), y(97);
    for (std::size_t i = 0; i < p.size(); ++i) {
      y[i] = rng.uniform(1.0, 20.0);
      p[i] = y[i] + rng.uniform(-2.0, 2.0);
    }
    const double base = mrae(p, y);
    const double c = rng.uniform(0.01, 100.0);
    std::vector<double> pc(p), yc(y);
    for (auto& v : pc) v *= c;
    for (auto& v : yc) v *= c;
    CHECK(std::abs(mrae(pc, yc) - base) <= 1e-12 * base);

    std::vector<std::size_t> perm(p.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    std::vector<double> pp(p.size()), yp(y.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      pp[i] = p[perm[i]];
      yp[i] = y[perm[i]];
    }
    CHECK(std::abs(mrae(pp, yp) - base) <= 1e-12 * base);
  }
}

TEST_CASE("interpolant: exact at nodes, clamped outside") {
  const auto& f = small_flood().field;
  const FieldInterpolant interp(f);
  const auto pts = field_points(f);
  const auto out = interp.predict_batch(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    REQUIRE(out[i].h == f.h[i]);
    REQUIRE(out[i].u == f.u[i]);
    REQUIRE_FALSE(out[i].clamped);
  }
  const SpaceTime outside{f.x_grid_miles.back() + 1.0, 3.0};
  CHECK(interp.predict_batch(std::span<const SpaceTime>(&outside, 1)).front().clamped);
  // Partials of a bilinear patch reproduce a linear field exactly.
  FlowField lin = f;
  for (std::size_t k = 0; k < lin.n_t(); ++k) {
    for (std::size_t j = 0; j < lin.n_x(); ++j) {
      lin.h[k * lin.n_x() + j] = 10.0 + 0.001 * lin.x_grid_miles[j] * kFeetPerMile + 2.0 * lin.t_grid_hours[k];
    }
  }
  const SpaceTime mid{1.3, 5.1};
  const auto jet = FieldInterpolant(lin).predict_jets(std::span<const SpaceTime>(&mid, 1)).front();
  CHECK(jet.h_x == doctest::Approx(0.001).epsilon(1e-9));
  CHECK(jet.h_t == doctest::Approx(2.0 / kSecondsPerHour).epsilon(1e-9));
}

TEST_CASE("evaluate: interpolant of the field scores zero") {
  const auto& fx = small_flood();
  const FieldInterpolant interp(fx.field);
  const auto r = evaluate(interp, fx.field, fx.scenario);
  CHECK(r.overall_mrae == 0.0);
  for (double v : r.per_station_mrae) CHECK(v == 0.0);
  CHECK(r.n_eval_points == fx.field.h.size());
  CHECK(r.per_station_mrae.size() == fx.field.n_x());
  CHECK(r.speedup == r.solver_seconds / r.surrogate_seconds);
  CHECK(r.solver_seconds == fx.field.wall_clock_seconds);

  // The reference field nearly satisfies the full momentum balance; the
  // inviscid form leaves the bed-slope and friction imbalance behind.
  EvalOptions ext;
  ext.physics.extended_momentum = true;
  const auto re = evaluate(interp, fx.field, fx.scenario, ext);
  CHECK(re.physics_residual < 1e-7);
  CHECK(re.physics_residual * 100.0 < r.physics_residual);
}

TEST_CASE("evaluate: overall MRAE equals pooled mrae") {
  const auto& fx = small_flood();
  SurrogateConfig arch = tiny_arch();
  const auto set = make_training_set(fx.field, 0.1, 1);
  arch.box = set.box;
  const auto model = SurrogateModel::initialize(arch, set.prior());
  const auto r = evaluate(model, fx.field, fx.scenario);
  const auto pts = field_points(fx.field);
  std::vector<double> pred;
  for (const auto& s : model.predict_batch(pts)) pred.push_back(s.h);
  CHECK(r.overall_mrae == mrae(pred, fx.field.h));
  CHECK(r.overall_mrae > 0.0);
  CHECK(std::isfinite(r.physics_residual));
}

TEST_CASE("evaluate: datum handling") {
  const auto& fx = small_flood();
  FlowField elev = fx.field;
  elev.datum = Datum::Elevation;
  for (std::size_t k = 0; k < elev.n_t(); ++k) {
    for (std::size_t j = 0; j < elev.n_x(); ++j) {
      elev.h[k * elev.n_x() + j] += fx.scenario.geometry.bed_elevation_ft(elev.x_grid_miles[j]);
    }
  }
  const FieldInterpolant depth_model(fx.field);
  CHECK_THROWS_AS(evaluate(depth_model, elev, fx.scenario), DatumMismatch);
  EvalOptions o;
  o.datum = Datum::Elevation;
  CHECK_THROWS_AS(evaluate(depth_model, fx.field, fx.scenario, o), DatumMismatch);
  const auto r = evaluate(depth_model, elev, fx.scenario, o);
  CHECK(r.overall_mrae < 1e-12);
  CHECK(r.datum == Datum::Elevation);
}

TEST_CASE("benchmark: structure and definition") {
  const auto& fx = small_flood();
  const FieldInterpolant interp(fx.field);
  SolverConfig cfg;
  cfg.n_cells = 60;
  const auto b = benchmark(interp, fx.scenario, cfg, 3);
  CHECK(b.solver_runs.size() == 3);
  CHECK(b.surrogate_runs.size() == 3);
  CHECK(b.solver_seconds == median(b.solver_runs));
  CHECK(b.surrogate_seconds == median(b.surrogate_runs));
  CHECK(b.speedup == b.solver_seconds / b.surrogate_seconds);
  CHECK(b.n_points == fx.field.h.size());
  CHECK_THROWS(benchmark(interp, fx.scenario, cfg, 2));
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("histogram: twenty uniform bins") {
  const std::vector<double> v{0.0, 0.01, 0.05, 0.1, 0.1, 0.2};
  const auto h = histogram(v);
  CHECK(h.counts.size() == 20);
  CHECK(h.edges.size() == 21);
  CHECK(h.edges.front() == 0.0);
  CHECK(h.edges.back() == 0.2);
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}) == v.size());
  CHECK(h.counts.back() == 1);
  CHECK(h.counts[0] == 2);
  CHECK(h.counts[10] == 2);
  const auto zero = histogram(std::vector<double>{0.0, 0.0});
  CHECK(zero.counts[0] == 2);
}

TEST_CASE("ablation: configuration semantics") {
  TrainConfig base = tiny_train();
  base.lambda_physics = 0.1;
  const auto plan = ablation_plan(tiny_arch(), base);
  REQUIRE(plan.size() == 3);
  CHECK(plan[0].name == "base");
  CHECK_FALSE(plan[0].architecture.use_fourier);
  CHECK(plan[0].train.lambda_physics == 0.0);
  CHECK(plan[1].architecture.use_fourier);
  CHECK(plan[1].train.lambda_physics == 0.0);
  CHECK(plan[2].architecture.use_fourier);
  CHECK(plan[2].train.lambda_physics == 0.1);
}

TEST_CASE("ablation: shared sampler and bitwise reruns") {
  const auto& fx = small_flood();
  TrainConfig base = tiny_train();
  base.lambda_physics = 0.1;
  const auto a = run_ablation(fx.scenario, fx.field, 30, 11, tiny_arch(), base);
  const auto b = run_ablation(fx.scenario, fx.field, 30, 11, tiny_arch(), base);
  REQUIRE(a.runs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK_FALSE(a.runs[i].diverged);
    CHECK(a.runs[i].train.seed == 11);
    CHECK(a.runs[i].report.overall_mrae == b.runs[i].report.overall_mrae);
    CHECK(a.runs[i].report.physics_residual == b.runs[i].report.physics_residual);
    CHECK(a.runs[i].training_data_loss == b.runs[i].training_data_loss);
    CHECK(a.runs[i].curve_predicted == b.runs[i].curve_predicted);
  }
  // Same initial weights and same first batch: identical first data loss.
  CHECK(a.run("fourier_only").history.front().data_loss == a.run("full").history.front().data_loss);
  CHECK(a.curve_truth.size() == fx.field.n_t());
  CHECK(a.run("base").curve_predicted.size() == fx.field.n_t());
  CHECK(std::isfinite(a.physics_ratio()));
}
