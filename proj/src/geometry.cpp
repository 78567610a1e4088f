#include "stagecast/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "stagecast/random.hpp"

namespace stagecast {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ScenarioError(what);
}

void validate_series(const TimeSeries& s, const char* name, double t_total,
                     bool strictly_positive) {
  require(s.size() >= 2, std::string(name) + ": need at least two knots");
  for (std::size_t i = 0; i < s.size(); ++i) {
    require(std::isfinite(s[i].t_hours) && std::isfinite(s[i].value),
            std::string(name) + ": non-finite knot");
    if (i > 0) {
      require(s[i].t_hours > s[i - 1].t_hours,
              std::string(name) + ": times must be strictly increasing");
    }
    if (strictly_positive) {
      require(s[i].value > 0.0, std::string(name) + ": values must be > 0");
    } else {
      require(s[i].value >= 0.0, std::string(name) + ": values must be >= 0");
    }
  }
  require(s.front().t_hours <= 0.0 && s.back().t_hours >= t_total,
          std::string(name) + ": series must cover [0, t_total]");
}

}  // namespace

void ChannelGeometry::validate() const {
  require(length_miles > 0.0 && std::isfinite(length_miles), "length_miles must be > 0");
  require(width_ft > 0.0 && std::isfinite(width_ft), "width_ft must be > 0");
  require(manning_n > 0.0 && std::isfinite(manning_n), "manning_n must be > 0");
  require(std::isfinite(bed_slope_S0), "bed_slope_S0 must be finite");
  require(std::isfinite(bed_elevation_upstream_ft), "bed_elevation_upstream_ft must be finite");
}

double ChannelGeometry::friction_slope(double h, double u) const {
  const double radius = width_ft * h / (width_ft + 2.0 * h);
  return manning_n * manning_n * u * std::abs(u) / (kManningUS2 * std::pow(radius, 4.0 / 3.0));
}

double ChannelGeometry::normal_depth(double q_cfs) const {
  require(bed_slope_S0 > 0.0, "normal depth requires a positive bed slope");
  require(q_cfs > 0.0, "normal depth requires positive discharge");
  auto discharge = [&](double h) {
    const double area = width_ft * h;
    const double radius = area / (width_ft + 2.0 * h);
    return std::sqrt(kManningUS2) / manning_n * area * std::pow(radius, 2.0 / 3.0) *
           std::sqrt(bed_slope_S0);
  };
  double lo = 1e-6;
  double hi = 1.0;
  while (discharge(hi) < q_cfs) hi *= 2.0;
  // Bisection to machine precision; discharge is monotone in depth.
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (discharge(mid) < q_cfs ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double interpolate_boundary(const TimeSeries& series, double t_hours) {
  if (series.empty()) throw ScenarioError("interpolate_boundary: empty series");
  if (!(t_hours >= series.front().t_hours && t_hours <= series.back().t_hours)) {
    std::ostringstream os;
    os << "interpolate_boundary: t=" << t_hours << " h outside ["
       << series.front().t_hours << ", " << series.back().t_hours << "]";
    throw ScenarioError(os.str());
  }
  auto it = std::lower_bound(series.begin(), series.end(), t_hours,
                             [](const TimeSeriesPoint& p, double t) { return p.t_hours < t; });
  if (it->t_hours == t_hours) return it->value;
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double w = (t_hours - a.t_hours) / (b.t_hours - a.t_hours);
  return a.value + w * (b.value - a.value);
}

void BoundaryConditions::validate(double t_total_hours) const {
  validate_series(upstream_discharge, "upstream_discharge", t_total_hours, false);
  validate_series(downstream_stage, "downstream_stage", t_total_hours, true);
  require(initial_depth_ft > 0.0 && std::isfinite(initial_depth_ft), "initial_depth_ft must be > 0");
  require(std::isfinite(initial_velocity_fps), "initial_velocity_fps must be finite");
}

void RiverScenario::validate() const {
  geometry.validate();
  require(t_total_hours > 0.0 && std::isfinite(t_total_hours), "t_total_hours must be > 0");
  require(output_dt_hours > 0.0 && std::isfinite(output_dt_hours), "output_dt_hours must be > 0");
  boundaries.validate(t_total_hours);
  require(station_positions_miles.size() >= 2, "need at least two stations");
  for (std::size_t i = 0; i < station_positions_miles.size(); ++i) {
    const double x = station_positions_miles[i];
    require(x >= 0.0 && x <= geometry.length_miles, "station outside [0, length_miles]");
    if (i > 0) require(x > station_positions_miles[i - 1], "stations must be strictly increasing");
  }
}

double RiverScenario::mean_station_spacing_miles() const {
  if (station_positions_miles.size() < 2) return 0.0;
  return (station_positions_miles.back() - station_positions_miles.front()) /
         static_cast<double>(station_positions_miles.size() - 1);
}

std::vector<double> RiverScenario::output_times_hours() const {
  std::vector<double> times;
  const auto n = static_cast<std::size_t>(std::ceil(t_total_hours / output_dt_hours - 1e-9));
  times.reserve(n + 1);
  for (std::size_t k = 0; k < n; ++k) times.push_back(static_cast<double>(k) * output_dt_hours);
  times.push_back(t_total_hours);
  return times;
}

RiverScenario make_flood_wave_scenario(int n_stations, double peak_factor, std::uint64_t seed,
                                       const FloodWaveOptions& opt) {
  if (n_stations < 4) throw ScenarioError("make_flood_wave_scenario: n_stations must be >= 4");
  if (!(peak_factor >= 1.0)) throw ScenarioError("make_flood_wave_scenario: peak_factor must be >= 1");

  Rng rng(seed);
  RiverScenario s;
  auto& g = s.geometry;
  g.length_miles = static_cast<double>(n_stations - 1) * opt.station_spacing_miles;
  g.bed_elevation_upstream_ft = opt.bed_elevation_upstream_ft;
  g.bed_slope_S0 = opt.bed_slope;
  g.width_ft = opt.width_ft;
  g.manning_n = 0.028 + 0.007 * rng.uniform();
  const double pulse_width = opt.pulse_width_hours * (0.9 + 0.2 * rng.uniform());

  s.t_total_hours = opt.t_total_hours;
  s.output_dt_hours = opt.output_dt_hours;
  s.station_positions_miles.resize(static_cast<std::size_t>(n_stations));
  for (int i = 0; i < n_stations; ++i) {
    s.station_positions_miles[static_cast<std::size_t>(i)] = static_cast<double>(i) * opt.station_spacing_miles;
  }
  s.station_positions_miles.back() = g.length_miles;

  const double qb = opt.baseflow_cfs;
  auto inflow = [&](double t) {
    const double z = (t - opt.pulse_center_hours) / pulse_width;
    return qb * (1.0 + (peak_factor - 1.0) * std::exp(-0.5 * z * z));
  };

  const double h0 = g.normal_depth(qb);
  const double u0 = qb / (g.width_ft * h0);
  // Kinematic wave celerity 5/3 u for a wide channel.
  const double lag_hours = g.length_ft() / (5.0 / 3.0 * u0) / kSecondsPerHour;

  auto& bc = s.boundaries;
  bc.initial_depth_ft = h0;
  bc.initial_velocity_fps = u0;
  const auto n_knots = static_cast<std::size_t>(std::ceil(opt.t_total_hours / opt.knot_dt_hours - 1e-9));
  for (std::size_t k = 0; k <= n_knots; ++k) {
    const double t = std::min(static_cast<double>(k) * opt.knot_dt_hours, opt.t_total_hours);
    bc.upstream_discharge.push_back({t, inflow(t)});
    const double lagged = t - lag_hours;
    const double q_out = lagged <= 0.0 ? qb : inflow(lagged);
    bc.downstream_stage.push_back({t, g.normal_depth(q_out)});
  }
  s.validate();
  return s;
}

namespace {

RiverScenario evenly_spaced(int n_stations, double spacing, double t_total_hours, double output_dt) {
  if (n_stations < 2) throw ScenarioError("need at least two stations");
  RiverScenario s;
  s.geometry.length_miles = static_cast<double>(n_stations - 1) * spacing;
  for (int i = 0; i < n_stations; ++i) s.station_positions_miles.push_back(static_cast<double>(i) * spacing);
  s.station_positions_miles.back() = s.geometry.length_miles;
  s.t_total_hours = t_total_hours;
  s.output_dt_hours = output_dt;
  return s;
}

}  // namespace

RiverScenario make_still_water_scenario(int n_stations, double depth_ft, double t_total_hours,
                                        double station_spacing_miles) {
  RiverScenario s = evenly_spaced(n_stations, station_spacing_miles, t_total_hours, t_total_hours / 4.0);
  s.geometry.bed_elevation_upstream_ft = 100.0;
  s.geometry.bed_slope_S0 = 0.0;
  s.geometry.width_ft = 500.0;
  s.geometry.manning_n = 0.03;
  s.boundaries.upstream_discharge = {{0.0, 0.0}, {t_total_hours, 0.0}};
  s.boundaries.downstream_stage = {{0.0, depth_ft}, {t_total_hours, depth_ft}};
  s.boundaries.initial_depth_ft = depth_ft;
  s.boundaries.initial_velocity_fps = 0.0;
  s.validate();
  return s;
}

RiverScenario make_uniform_flow_scenario(int n_stations, double q_cfs, double t_total_hours,
                                         const FloodWaveOptions& opt) {
  RiverScenario s = evenly_spaced(n_stations, opt.station_spacing_miles, t_total_hours, opt.output_dt_hours);
  s.geometry.bed_elevation_upstream_ft = opt.bed_elevation_upstream_ft;
  s.geometry.bed_slope_S0 = opt.bed_slope;
  s.geometry.width_ft = opt.width_ft;
  s.geometry.manning_n = 0.03;
  const double h = s.geometry.normal_depth(q_cfs);
  s.boundaries.upstream_discharge = {{0.0, q_cfs}, {t_total_hours, q_cfs}};
  s.boundaries.downstream_stage = {{0.0, h}, {t_total_hours, h}};
  s.boundaries.initial_depth_ft = h;
  s.boundaries.initial_velocity_fps = q_cfs / (s.geometry.width_ft * h);
  s.validate();
  return s;
}

}  // namespace stagecast
