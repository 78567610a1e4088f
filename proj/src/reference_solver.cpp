#include "stagecast/reference_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "stagecast/kernels/saint_venant.hpp"

namespace stagecast {

const char* to_string(Datum datum) { return datum == Datum::Depth ? "depth" : "elevation"; }

Datum datum_from_string(const std::string& text) {
  if (text == "depth") return Datum::Depth;
  if (text == "elevation") return Datum::Elevation;
  throw std::invalid_argument("unknown datum '" + text + "'");
}

void FlowField::validate() const {
  const std::size_t n = n_x() * n_t();
  if (h.size() != n || u.size() != n) throw std::invalid_argument("FlowField: array size does not match grid");
  if (!std::is_sorted(x_grid_miles.begin(), x_grid_miles.end()) ||
      !std::is_sorted(t_grid_hours.begin(), t_grid_hours.end())) {
    throw std::invalid_argument("FlowField: grids must be sorted");
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!std::isfinite(h[k]) || !std::isfinite(u[k])) throw std::invalid_argument("FlowField: non-finite state");
    if (datum == Datum::Depth && !(h[k] > 0.0)) throw std::invalid_argument("FlowField: non-positive depth");
  }
}

void SolverConfig::validate() const {
  if (n_cells < 2) throw std::invalid_argument("SolverConfig: n_cells must be >= 2");
  if (!(cfl_number > 0.0 && cfl_number <= 1.0)) {
    throw std::invalid_argument("SolverConfig: cfl_number must lie in (0, 1]");
  }
}

SolverError::SolverError(const std::string& phase, long step, long cell, const std::string& detail)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "solver " << phase << " failure at step " << step << ", cell " << cell << ": " << detail;
        return os.str();
      }()),
      phase_(phase),
      step_(step),
      cell_(cell) {}

namespace {

// Linear interpolation weights of station positions on the node grid.
struct Sampler {
  std::vector<std::size_t> left;
  std::vector<double> weight;

  Sampler(const std::vector<double>& stations_ft, double dx, std::size_t n_nodes) {
    for (double x : stations_ft) {
      auto i = static_cast<std::size_t>(std::floor(x / dx));
      i = std::min(i, n_nodes - 2);
      left.push_back(i);
      weight.push_back(std::clamp(x / dx - static_cast<double>(i), 0.0, 1.0));
    }
  }

  void sample(const std::vector<double>& nodes, double* out) const {
    for (std::size_t k = 0; k < left.size(); ++k) {
      const double a = nodes[left[k]];
      const double b = nodes[left[k] + 1];
      out[k] = weight[k] == 0.0 ? a : a + weight[k] * (b - a);
    }
  }
};

}  // namespace

FlowField solve(const RiverScenario& scenario, const SolverConfig& config) {
  const auto nodes = static_cast<std::size_t>(config.n_cells) + 1;
  InitialState init{std::vector<double>(nodes, scenario.boundaries.initial_depth_ft),
                    std::vector<double>(nodes, scenario.boundaries.initial_velocity_fps)};
  return solve(scenario, config, init);
}

FlowField solve(const RiverScenario& scenario, const SolverConfig& config,
                const InitialState& initial, SolveStats* stats) {
  const auto start = std::chrono::steady_clock::now();
  scenario.validate();
  config.validate();
  if (static_cast<std::size_t>(config.n_cells) < scenario.station_positions_miles.size()) {
    throw std::invalid_argument("solve: n_cells must be >= number of stations");
  }
  const auto& geo = scenario.geometry;
  const auto& bc = scenario.boundaries;
  const std::size_t n = static_cast<std::size_t>(config.n_cells) + 1;
  if (initial.h.size() != n || initial.u.size() != n) {
    throw std::invalid_argument("solve: initial state must have n_cells + 1 nodes");
  }

  const double dx = geo.length_ft() / config.n_cells;
  kernels::ChannelStep step_params;
  step_params.dx = dx;
  step_params.gravity = kGravity;
  step_params.width = geo.width_ft;
  step_params.manning_n = geo.manning_n;
  step_params.bed_slope = geo.bed_slope_S0;
  step_params.friction = config.include_friction;
  step_params.bed_slope_term = config.include_bed_slope;

  std::vector<double> stations_ft;
  for (double x : scenario.station_positions_miles) stations_ft.push_back(x * kFeetPerMile);
  const Sampler sampler(stations_ft, dx, n);

  FlowField field;
  field.x_grid_miles = scenario.station_positions_miles;
  field.t_grid_hours = scenario.output_times_hours();
  const std::size_t nx = field.n_x();
  field.h.resize(nx * field.n_t());
  field.u.resize(nx * field.n_t());

  std::vector<double> h = initial.h;
  std::vector<double> u = initial.u;
  std::vector<double> h_new(n), u_new(n);
  kernels::MacCormackScratch scratch;

  long step = 0;
  auto check_state = [&](const char* phase) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(h[i]) || !std::isfinite(u[i])) {
        throw SolverError(phase, step, static_cast<long>(i), "non-finite state");
      }
      if (!(h[i] > 0.0)) {
        std::ostringstream os;
        os << "non-positive depth h=" << h[i] << " ft";
        throw SolverError(phase, step, static_cast<long>(i), os.str());
      }
    }
  };
  check_state("initial-state");

  double t = 0.0;  // seconds
  std::size_t next_out = 0;
  auto record = [&](std::size_t k) {
    sampler.sample(h, field.h.data() + k * nx);
    sampler.sample(u, field.u.data() + k * nx);
  };
  const double eps_t = 1e-9;
  while (next_out < field.n_t()) {
    const double t_out = field.t_grid_hours[next_out] * kSecondsPerHour;
    if (t >= t_out - eps_t) {
      record(next_out++);
      continue;
    }
    const double speed = kernels::max_wave_speed(config.exec, h, u, kGravity);
    double dt = speed > 0.0 ? config.cfl_number * dx / speed : t_out - t;
    if (dt < config.min_dt_seconds) {
      std::ostringstream os;
      os << "CFL time step " << dt << " s below floor " << config.min_dt_seconds << " s";
      throw SolverError("time-step", step, -1, os.str());
    }
    if (t + dt > t_out - eps_t) dt = t_out - t;
    step_params.dt = dt;

    kernels::maccormack_interior(config.exec, step_params, h, u, h_new, u_new, scratch);

    const double t_next_hours = std::min((t + dt) / kSecondsPerHour, scenario.t_total_hours);
    // Downstream: prescribed stage, extrapolated velocity.
    h_new[n - 1] = interpolate_boundary(bc.downstream_stage, t_next_hours);
    u_new[n - 1] = 2.0 * u_new[n - 2] - u_new[n - 3];
    // Upstream: depth extrapolated from the interior, velocity from discharge.
    h_new[0] = 2.0 * h_new[1] - h_new[2];
    if (!(h_new[0] > 0.0)) {
      throw SolverError("upstream-boundary", step, 0, "extrapolated depth is non-positive");
    }
    u_new[0] = interpolate_boundary(bc.upstream_discharge, t_next_hours) / (geo.width_ft * h_new[0]);

    h.swap(h_new);
    u.swap(u_new);
    t = (next_out < field.n_t() && t + dt >= t_out - eps_t) ? t_out : t + dt;
    ++step;
    check_state("time-step");
  }

  if (stats) stats->steps = step;
  field.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return field;
}

double check_mass_balance(const FlowField& field, const RiverScenario& scenario) {
  const std::size_t nx = field.n_x();
  const std::size_t nt = field.n_t();
  const double width = scenario.geometry.width_ft;

  auto storage = [&](std::size_t it) {
    double v = 0.0;
    for (std::size_t ix = 1; ix < nx; ++ix) {
      const double dx = (field.x_grid_miles[ix] - field.x_grid_miles[ix - 1]) * kFeetPerMile;
      v += 0.5 * dx * (field.h_at(it, ix) + field.h_at(it, ix - 1));
    }
    return width * v;
  };
  auto discharge = [&](std::size_t it, std::size_t ix) {
    return width * field.h_at(it, ix) * field.u_at(it, ix);
  };

  double inflow = 0.0;
  double outflow = 0.0;
  for (std::size_t it = 1; it < nt; ++it) {
    const double dt = (field.t_grid_hours[it] - field.t_grid_hours[it - 1]) * kSecondsPerHour;
    inflow += 0.5 * dt * (discharge(it, 0) + discharge(it - 1, 0));
    outflow += 0.5 * dt * (discharge(it, nx - 1) + discharge(it - 1, nx - 1));
  }
  const double initial_storage = storage(0);
  const double imbalance = std::abs(storage(nt - 1) - initial_storage - (inflow - outflow));
  if (imbalance == 0.0) return 0.0;
  const double scale = inflow > 0.0 ? inflow : initial_storage;
  return imbalance / scale;
}

}  // namespace stagecast
