#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stagecast/flow_model.hpp"
#include "stagecast/geometry.hpp"
#include "stagecast/reference_solver.hpp"
#include "stagecast/surrogate.hpp"
#include "stagecast/training.hpp"

namespace stagecast {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DatumMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// sum |predicted - truth| / sum truth.
double mrae(std::span<const double> predicted, std::span<const double> truth);

/**
 * Bilinear interpolant of a field over its (x, t) grid. Partials are the
 * cell-wise slopes converted to feet and seconds; queries outside the grid
 * are clamped.
 */
class FieldInterpolant : public FlowModel {
 public:
  explicit FieldInterpolant(FlowField field);
  const FlowField& field() const { return field_; }

  std::vector<FlowSample> predict_batch(std::span<const SpaceTime> points) const override;
  std::vector<FlowJet> predict_jets(std::span<const SpaceTime> points) const override;
  Datum datum() const override { return field_.datum; }

 private:
  FlowJet at(double x_miles, double t_hours, bool* clamped) const;
  FlowField field_;
};

/// Station/output-time grid of a field as query points, time-major.
std::vector<SpaceTime> field_points(const FlowField& field);

/// Model stage on the field's points, converted to `target` using the bed profile.
std::vector<double> predicted_stage(const FlowModel& model, const FlowField& field,
                                    const RiverScenario& scenario, Datum target,
                                    std::size_t* clamped = nullptr);

struct EvalOptions {
  Datum datum = Datum::Depth;  // datum the report is computed in; must match the field
  PhysicsOptions physics;      // geometry is taken from the scenario
  std::size_t collocation_points = 10000;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::vector<double> station_positions_miles;
  std::vector<double> per_station_mrae;
  double overall_mrae = 0.0;
  double physics_residual = 0.0;
  double solver_seconds = 0.0;
  double surrogate_seconds = 0.0;
  double speedup = 0.0;
  std::size_t n_eval_points = 0;
  std::size_t n_clamped = 0;
  Datum datum = Datum::Depth;
};

/**
 * MRAE per station and pooled, mean physics residual on fresh uniform
 * collocation points, and surrogate wall clock over the station-time grid
 * compared with the field's recorded solve time.
 */
EvalReport evaluate(const FlowModel& model, const FlowField& field, const RiverScenario& scenario,
                    const EvalOptions& options = {});

struct BenchmarkResult {
  std::vector<double> solver_runs;     // seconds, warm-up excluded
  std::vector<double> surrogate_runs;
  double solver_seconds = 0.0;  // medians
  double surrogate_seconds = 0.0;
  double speedup = 0.0;
  std::size_t n_points = 0;
  int n_cells = 0;
};

double median(std::vector<double> values);

BenchmarkResult benchmark(const FlowModel& model, const RiverScenario& scenario,
                          const SolverConfig& solver, int repetitions);

struct AblationRun {
  std::string name;  // base, fourier_only, full
  SurrogateConfig architecture;
  TrainConfig train;
  bool diverged = false;
  std::string error;
  std::optional<SurrogateModel> model;
  std::vector<LossRecord> history;
  double training_data_loss = 0.0;  // data_loss of the returned model over the training split
  EvalReport report;
  std::vector<double> curve_predicted;  // stage at the curve station, per output time
};

struct AblationResult {
  std::uint64_t seed = 0;
  int budget_iters = 0;
  std::size_t curve_station = 0;
  std::vector<double> curve_times_hours;
  std::vector<double> curve_truth;
  std::vector<AblationRun> runs;

  const AblationRun& run(const std::string& name) const;
  /// fourier_only data loss strictly below base.
  bool fourier_beats_base() const;
  /// fourier_only physics residual / full physics residual.
  double physics_ratio() const;
};

/// The three configurations: no Fourier with lambda 0, Fourier with lambda 0, Fourier with the base lambda.
std::vector<AblationRun> ablation_plan(const SurrogateConfig& architecture, const TrainConfig& base);

AblationResult run_ablation(const RiverScenario& scenario, const FlowField& field, int budget_iters,
                            std::uint64_t seed, const SurrogateConfig& architecture,
                            const TrainConfig& base, const EvalOptions& eval = {});
/// Solves the scenario with default solver settings first.
AblationResult run_ablation(const RiverScenario& scenario, int budget_iters, std::uint64_t seed,
                            const SurrogateConfig& architecture, const TrainConfig& base);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
};

/// Uniform bins over [0, max(values)].
Histogram histogram(std::span<const double> values, int bins = 20);

}  // namespace stagecast
