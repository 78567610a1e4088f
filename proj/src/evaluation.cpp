#include "stagecast/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "stagecast/kernels/dense.hpp"
#include "stagecast/random.hpp"

namespace stagecast {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Index i with grid[i] <= v <= grid[i+1], and the weight of grid[i+1].
std::pair<std::size_t, double> locate(const std::vector<double>& grid, double v) {
  if (grid.size() == 1) return {0, 0.0};
  const auto it = std::upper_bound(grid.begin(), grid.end(), v);
  std::size_t i = it == grid.begin() ? 0 : static_cast<std::size_t>(it - grid.begin()) - 1;
  i = std::min(i, grid.size() - 2);
  return {i, (v - grid[i]) / (grid[i + 1] - grid[i])};
}

}  // namespace

double mrae(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw MetricError("mrae: need equal, nonzero lengths");
  }
  std::vector<double> err(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) err[i] = std::abs(predicted[i] - truth[i]);
  const double denom = kernels::pairwise_sum(truth.data(), truth.size());
  if (!(denom > 0.0)) throw MetricError("mrae: mean of truth must be > 0");
  return kernels::pairwise_sum(err.data(), err.size()) / denom;
}

FieldInterpolant::FieldInterpolant(FlowField field) : field_(std::move(field)) {
  field_.validate();
  if (field_.n_x() < 2 || field_.n_t() < 2) throw std::invalid_argument("FieldInterpolant: grid needs 2 x 2 points");
}

FlowJet FieldInterpolant::at(double x, double t, bool* clamped) const {
  const auto& xs = field_.x_grid_miles;
  const auto& ts = field_.t_grid_hours;
  const double xc = std::clamp(x, xs.front(), xs.back());
  const double tc = std::clamp(t, ts.front(), ts.back());
  if (clamped) *clamped = xc != x || tc != t;
  const auto [i, wx] = locate(xs, xc);
  const auto [k, wt] = locate(ts, tc);
  const double dx_ft = (xs[i + 1] - xs[i]) * kFeetPerMile;
  const double dt_s = (ts[k + 1] - ts[k]) * kSecondsPerHour;
  auto blend = [&](const std::vector<double>& f, FlowJet& jet, double FlowJet::*val, double FlowJet::*fx,
                   double FlowJet::*ft) {
    const std::size_t n = field_.n_x();
    const double f00 = f[k * n + i], f01 = f[k * n + i + 1];
    const double f10 = f[(k + 1) * n + i], f11 = f[(k + 1) * n + i + 1];
    if (wx == 0.0 && wt == 0.0) {
      jet.*val = f00;  // exact at grid nodes
    } else {
      jet.*val = (1 - wt) * ((1 - wx) * f00 + wx * f01) + wt * ((1 - wx) * f10 + wx * f11);
    }
    jet.*fx = ((1 - wt) * (f01 - f00) + wt * (f11 - f10)) / dx_ft;
    jet.*ft = ((1 - wx) * (f10 - f00) + wx * (f11 - f01)) / dt_s;
  };
  FlowJet jet;
  blend(field_.h, jet, &FlowJet::h, &FlowJet::h_x, &FlowJet::h_t);
  blend(field_.u, jet, &FlowJet::u, &FlowJet::u_x, &FlowJet::u_t);
  return jet;
}

std::vector<FlowSample> FieldInterpolant::predict_batch(std::span<const SpaceTime> points) const {
  std::vector<FlowSample> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool clamped = false;
    const FlowJet j = at(points[i].x_miles, points[i].t_hours, &clamped);
    out[i] = {j.h, j.u, clamped};
  }
  return out;
}

std::vector<FlowJet> FieldInterpolant::predict_jets(std::span<const SpaceTime> points) const {
  std::vector<FlowJet> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = at(points[i].x_miles, points[i].t_hours, nullptr);
  return out;
}

std::vector<SpaceTime> field_points(const FlowField& field) {
  std::vector<SpaceTime> pts;
  pts.reserve(field.n_t() * field.n_x());
  for (double t : field.t_grid_hours) {
    for (double x : field.x_grid_miles) pts.push_back({x, t});
  }
  return pts;
}

std::vector<double> predicted_stage(const FlowModel& model, const FlowField& field,
                                    const RiverScenario& scenario, Datum target, std::size_t* clamped) {
  const auto pts = field_points(field);
  const auto pred = model.predict_batch(pts);
  std::vector<double> stage(pred.size());
  std::size_t n_clamped = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double h = pred[i].h;
    const double bed = scenario.geometry.bed_elevation_ft(pts[i].x_miles);
    if (model.datum() == Datum::Depth && target == Datum::Elevation) h += bed;
    if (model.datum() == Datum::Elevation && target == Datum::Depth) h -= bed;
    stage[i] = h;
    n_clamped += pred[i].clamped ? 1 : 0;
  }
  if (clamped) *clamped = n_clamped;
  return stage;
}

EvalReport evaluate(const FlowModel& model, const FlowField& field, const RiverScenario& scenario,
                    const EvalOptions& options) {
  if (field.datum != options.datum) {
    throw DatumMismatch(std::string("evaluate: field stage is stored as ") + to_string(field.datum) +
                        " but the report was requested as " + to_string(options.datum));
  }
  field.validate();
  EvalReport r;
  r.datum = options.datum;
  r.station_positions_miles = field.x_grid_miles;
  r.n_eval_points = field.n_t() * field.n_x();

  const auto pts = field_points(field);
  const auto start = Clock::now();
  (void)model.predict_batch(pts);
  r.surrogate_seconds = seconds_since(start);

  const auto pred = predicted_stage(model, field, scenario, options.datum, &r.n_clamped);
  r.overall_mrae = mrae(pred, field.h);
  const std::size_t nx = field.n_x(), nt = field.n_t();
  r.per_station_mrae.resize(nx);
  std::vector<double> p(nt), y(nt);
  for (std::size_t j = 0; j < nx; ++j) {
    for (std::size_t k = 0; k < nt; ++k) {
      p[k] = pred[k * nx + j];
      y[k] = field.h[k * nx + j];
    }
    r.per_station_mrae[j] = mrae(p, y);
  }

  PhysicsOptions physics = options.physics;
  physics.geometry = scenario.geometry;
  Rng rng(Rng::derive(options.seed, 30));
  const NormalizationBox box{field.x_grid_miles.front(), field.x_grid_miles.back(),
                             field.t_grid_hours.front(), field.t_grid_hours.back()};
  const auto colloc = sample_collocation(rng, box, options.collocation_points);
  r.physics_residual = physics_loss(model, colloc, physics);

  r.solver_seconds = field.wall_clock_seconds;
  r.speedup = r.surrogate_seconds > 0.0 ? r.solver_seconds / r.surrogate_seconds
                                        : std::numeric_limits<double>::infinity();
  return r;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

BenchmarkResult benchmark(const FlowModel& model, const RiverScenario& scenario,
                          const SolverConfig& solver, int repetitions) {
  if (repetitions < 3) throw std::invalid_argument("benchmark: repetitions must be >= 3");
  BenchmarkResult b;
  b.n_cells = solver.n_cells;
  // Warm-up, also fixes the query grid.
  const FlowField field = solve(scenario, solver);
  const auto pts = field_points(field);
  (void)model.predict_batch(pts);
  b.n_points = pts.size();
  for (int r = 0; r < repetitions; ++r) {
    auto start = Clock::now();
    (void)solve(scenario, solver);
    b.solver_runs.push_back(seconds_since(start));
    start = Clock::now();
    (void)model.predict_batch(pts);
    b.surrogate_runs.push_back(seconds_since(start));
  }
  b.solver_seconds = median(b.solver_runs);
  b.surrogate_seconds = median(b.surrogate_runs);
  b.speedup = b.surrogate_seconds > 0.0 ? b.solver_seconds / b.surrogate_seconds
                                        : std::numeric_limits<double>::infinity();
  return b;
}

const AblationRun& AblationResult::run(const std::string& name) const {
  for (const auto& r : runs) {
    if (r.name == name) return r;
  }
  throw std::out_of_range("no ablation run named " + name);
}

bool AblationResult::fourier_beats_base() const {
  const auto& f = run("fourier_only");
  const auto& b = run("base");
  return !f.diverged && (b.diverged || f.training_data_loss < b.training_data_loss);
}

double AblationResult::physics_ratio() const {
  const auto& f = run("fourier_only");
  const auto& full = run("full");
  if (f.diverged || full.diverged) return std::numeric_limits<double>::quiet_NaN();
  return f.report.physics_residual / full.report.physics_residual;
}

std::vector<AblationRun> ablation_plan(const SurrogateConfig& architecture, const TrainConfig& base) {
  std::vector<AblationRun> plan(3);
  plan[0].name = "base";
  plan[1].name = "fourier_only";
  plan[2].name = "full";
  for (auto& r : plan) {
    r.architecture = architecture;
    r.train = base;
  }
  plan[0].architecture.use_fourier = false;
  plan[0].train.lambda_physics = 0.0;
  plan[1].train.lambda_physics = 0.0;
  return plan;
}

AblationResult run_ablation(const RiverScenario& scenario, const FlowField& field, int budget_iters,
                            std::uint64_t seed, const SurrogateConfig& architecture,
                            const TrainConfig& base, const EvalOptions& eval) {
  AblationResult out;
  out.seed = seed;
  out.budget_iters = budget_iters;
  out.curve_station = field.n_x() / 2;
  out.curve_times_hours = field.t_grid_hours;
  for (std::size_t k = 0; k < field.n_t(); ++k) out.curve_truth.push_back(field.h_at(k, out.curve_station));

  const TrainingSet set = make_training_set(field, 0.1, seed);
  out.runs = ablation_plan(architecture, base);
  for (auto& run : out.runs) {
    run.train.seed = seed;
    run.train.max_iterations = budget_iters;
    try {
      auto trained = train(make_initial_model(run.architecture, set, run.train), set, scenario, run.train);
      run.history = std::move(trained.history);
      run.training_data_loss = data_loss(trained.model, set.samples);
      run.report = evaluate(trained.model, field, scenario, eval);
      const auto stage = predicted_stage(trained.model, field, scenario, eval.datum);
      for (std::size_t k = 0; k < field.n_t(); ++k) {
        run.curve_predicted.push_back(stage[k * field.n_x() + out.curve_station]);
      }
      run.model = std::move(trained.model);
    } catch (const DivergenceError& e) {
      run.diverged = true;
      run.error = e.what();
      run.history = e.history();
    } catch (const TrainingError& e) {
      run.diverged = true;
      run.error = e.what();
    }
  }
  return out;
}

AblationResult run_ablation(const RiverScenario& scenario, int budget_iters, std::uint64_t seed,
                            const SurrogateConfig& architecture, const TrainConfig& base) {
  return run_ablation(scenario, solve(scenario, SolverConfig{}), budget_iters, seed, architecture, base);
}

Histogram histogram(std::span<const double> values, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
  Histogram h;
  double hi = 0.0;
  for (double v : values) hi = std::max(hi, v);
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) h.edges[static_cast<std::size_t>(b)] = hi * b / bins;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    auto b = hi > 0.0 ? static_cast<std::size_t>(v / hi * bins) : 0;
    h.counts[std::min(b, static_cast<std::size_t>(bins) - 1)] += 1;
  }
  return h;
}

}  // namespace stagecast
