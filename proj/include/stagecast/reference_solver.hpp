#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "stagecast/geometry.hpp"
#include "stagecast/parallel.hpp"

namespace stagecast {

/// Vertical reference of stored stages.
enum class Datum { Depth, Elevation };

const char* to_string(Datum datum);
Datum datum_from_string(const std::string& text);

/**
 * Gridded solution at stations (x) and output times (t). h and u are
 * row-major with one row per output time. h is stage above bed in feet.
 */
struct FlowField {
  std::vector<double> x_grid_miles;
  std::vector<double> t_grid_hours;
  std::vector<double> h;
  std::vector<double> u;
  double wall_clock_seconds = 0.0;
  Datum datum = Datum::Depth;

  std::size_t n_x() const { return x_grid_miles.size(); }
  std::size_t n_t() const { return t_grid_hours.size(); }
  double h_at(std::size_t it, std::size_t ix) const { return h[it * n_x() + ix]; }
  double u_at(std::size_t it, std::size_t ix) const { return u[it * n_x() + ix]; }

  /// Throws std::invalid_argument on shape mismatch, non-finite or non-positive depth.
  void validate() const;

  bool operator==(const FlowField&) const = default;
};

struct SolverConfig {
  int n_cells = 400;
  double cfl_number = 0.9;
  bool include_friction = true;
  bool include_bed_slope = true;
  Exec exec = Exec::Parallel;
  /// Time-step floor in seconds below which the run is declared collapsed.
  double min_dt_seconds = 1e-6;

  void validate() const;
};

/// Solver failure; the message names the phase, step and cell.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& phase, long step, long cell, const std::string& detail);
  const std::string& phase() const { return phase_; }
  long step() const { return step_; }
  long cell() const { return cell_; }

 private:
  std::string phase_;
  long step_;
  long cell_;
};

/// Optional initial state on the solver's node grid (n_cells + 1 nodes).
struct InitialState {
  std::vector<double> h;
  std::vector<double> u;
};

struct SolveStats {
  long steps = 0;
};

/**
 * Explicit MacCormack solution of the rectangular-channel Saint-Venant
 * system, sampled onto stations and output times by linear interpolation.
 * Upstream: velocity from discharge with depth extrapolated from the
 * interior. Downstream: prescribed stage with extrapolated velocity.
 */
FlowField solve(const RiverScenario& scenario, const SolverConfig& config);
FlowField solve(const RiverScenario& scenario, const SolverConfig& config,
                const InitialState& initial, SolveStats* stats = nullptr);

/**
 * Relative volume-balance error |dStorage - (Inflow - Outflow)| / Inflow
 * over the run, with trapezoidal quadrature in space and time between the
 * first and last stations. Runs with zero inflow are normalised by the
 * initial storage instead.
 */
double check_mass_balance(const FlowField& field, const RiverScenario& scenario);

}  // namespace stagecast
