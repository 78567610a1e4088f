#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace stagecast {

inline constexpr double kFeetPerMile = 5280.0;
inline constexpr double kSecondsPerHour = 3600.0;
inline constexpr double kGravity = 32.174;  // ft/s^2
/// 1.486^2, the US-unit Manning constant squared.
inline constexpr double kManningUS2 = 2.208;

/// Raised when a scenario or one of its parts violates an invariant.
class ScenarioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/**
 * Rectangular prismatic channel. Elevations in feet, length in river miles,
 * positive slope means the bed drops in the flow direction.
 */
struct ChannelGeometry {
  double length_miles = 0.0;
  double bed_elevation_upstream_ft = 0.0;
  double bed_slope_S0 = 0.0;
  double width_ft = 0.0;
  double manning_n = 0.0;

  void validate() const;

  double bed_elevation_ft(double river_mile) const {
    return bed_elevation_upstream_ft - bed_slope_S0 * river_mile * kFeetPerMile;
  }
  double length_ft() const { return length_miles * kFeetPerMile; }

  /// Manning friction slope for depth h (ft) and velocity u (ft/s).
  double friction_slope(double h, double u) const;

  /// Depth at which the friction slope balances the bed slope for discharge q_cfs.
  double normal_depth(double q_cfs) const;

  bool operator==(const ChannelGeometry&) const = default;
};

struct TimeSeriesPoint {
  double t_hours = 0.0;
  double value = 0.0;
  bool operator==(const TimeSeriesPoint&) const = default;
};

/// Piecewise-linear series, strictly increasing in time.
using TimeSeries = std::vector<TimeSeriesPoint>;

/**
 * Piecewise-linear interpolation at t. Exact at knots; throws
 * ScenarioError when t lies outside [first, last] knot.
 */
double interpolate_boundary(const TimeSeries& series, double t_hours);

struct BoundaryConditions {
  TimeSeries upstream_discharge;  // (t_hours, Q_cfs)
  TimeSeries downstream_stage;    // (t_hours, h_ft above bed)
  double initial_depth_ft = 0.0;
  double initial_velocity_fps = 0.0;

  void validate(double t_total_hours) const;
  bool operator==(const BoundaryConditions&) const = default;
};

struct RiverScenario {
  ChannelGeometry geometry;
  BoundaryConditions boundaries;
  std::vector<double> station_positions_miles;
  double t_total_hours = 0.0;
  double output_dt_hours = 0.0;

  void validate() const;
  double mean_station_spacing_miles() const;
  /// Output times 0, dt, 2dt, ... ending exactly at t_total_hours.
  std::vector<double> output_times_hours() const;

  bool operator==(const RiverScenario&) const = default;
};

inline constexpr double kDefaultStationSpacingMiles = 0.74;

struct FloodWaveOptions {
  double station_spacing_miles = kDefaultStationSpacingMiles;
  double baseflow_cfs = 11000.0;
  double width_ft = 500.0;
  double bed_slope = 1.0e-4;
  double bed_elevation_upstream_ft = 100.0;
  double pulse_center_hours = 10.0;
  double pulse_width_hours = 3.0;  // Gaussian standard deviation
  double t_total_hours = 36.0;
  double output_dt_hours = 0.25;
  double knot_dt_hours = 0.25;
};

/**
 * Synthetic flood: constant baseflow plus one Gaussian pulse of height
 * (peak_factor - 1) * baseflow at the configured center time. Stations are
 * evenly spaced from mile 0 to the channel end; the seed jitters roughness
 * and pulse width, and the same seed yields a bit-identical scenario.
 */
RiverScenario make_flood_wave_scenario(int n_stations, double peak_factor,
                                       std::uint64_t seed,
                                       const FloodWaveOptions& options = {});

/// Flat channel at rest: zero inflow, constant downstream stage.
RiverScenario make_still_water_scenario(int n_stations, double depth_ft, double t_total_hours,
                                        double station_spacing_miles = kDefaultStationSpacingMiles);

/// Steady normal-depth flow for discharge q_cfs on the flood-wave channel.
RiverScenario make_uniform_flow_scenario(int n_stations, double q_cfs, double t_total_hours,
                                         const FloodWaveOptions& options = {});

}  // namespace stagecast
