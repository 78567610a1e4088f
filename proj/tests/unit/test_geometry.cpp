#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "stagecast/geometry.hpp"

using namespace stagecast;

TEST_CASE("interpolate_boundary is piecewise linear and refuses to extrapolate") {
  const TimeSeries s{{0.0, 100.0}, {2.0, 300.0}};
  CHECK(interpolate_boundary(s, 1.0) == 200.0);
  CHECK(interpolate_boundary(s, 0.0) == 100.0);
  CHECK(interpolate_boundary(s, 2.0) == 300.0);
  CHECK_THROWS_AS(interpolate_boundary(s, 2.5), ScenarioError);
  CHECK_THROWS_AS(interpolate_boundary(s, -0.1), ScenarioError);
}

TEST_CASE("bed elevation follows the slope") {
  ChannelGeometry g{10.0, 100.0, 1e-4, 500.0, 0.03};
  CHECK(g.bed_elevation_ft(0.0) == 100.0);
  CHECK(g.bed_elevation_ft(2.0) == doctest::Approx(100.0 - 1e-4 * 2.0 * 5280.0).epsilon(1e-15));
}

TEST_CASE("normal depth balances friction and bed slope") {
  ChannelGeometry g{10.0, 100.0, 1e-4, 500.0, 0.03};
  const double h = g.normal_depth(11000.0);
  const double u = 11000.0 / (500.0 * h);
  CHECK(g.friction_slope(h, u) == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("flat flood wave when peak factor is one") {
  const auto s = make_flood_wave_scenario(20, 1.0, 7);
  const double base = s.boundaries.upstream_discharge.front().value;
  for (const auto& p : s.boundaries.upstream_discharge) CHECK(p.value == base);
}

TEST_CASE("flood pulse peaks at peak_factor times baseflow at the pulse center") {
  FloodWaveOptions opt;
  const auto s = make_flood_wave_scenario(20, 3.0, 7, opt);
  const auto& q = s.boundaries.upstream_discharge;
  const auto peak = std::max_element(q.begin(), q.end(),
                                     [](const auto& a, const auto& b) { return a.value < b.value; });
  CHECK(peak->value == doctest::Approx(3.0 * opt.baseflow_cfs).epsilon(1e-14));
  CHECK(peak->t_hours == opt.pulse_center_hours);
}

TEST_CASE("scenario generation is deterministic per seed") {
  const auto a = make_flood_wave_scenario(20, 3.0, 7);
  const auto b = make_flood_wave_scenario(20, 3.0, 7);
  CHECK(a == b);
  CHECK_FALSE(a == make_flood_wave_scenario(20, 3.0, 8));
}

TEST_CASE("too few stations are rejected") {
  CHECK_THROWS_AS(make_flood_wave_scenario(3, 2.0, 1), ScenarioError);
  CHECK_THROWS_AS(make_flood_wave_scenario(10, 0.5, 1), ScenarioError);
}

TEST_CASE("generated scenarios keep spacing and non-negative hydrographs for many seeds") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const int n = 4 + static_cast<int>(seed % 30);
    const auto s = make_flood_wave_scenario(n, 1.0 + 0.1 * static_cast<double>(seed), seed);
    CHECK(std::abs(s.mean_station_spacing_miles() - 0.74) <= 1e-9 * 0.74);
    for (std::size_t i = 1; i < s.station_positions_miles.size(); ++i) {
      const double gap = s.station_positions_miles[i] - s.station_positions_miles[i - 1];
      CHECK(std::abs(gap - 0.74) <= 1e-9 * 0.74);
    }
    for (const auto& p : s.boundaries.upstream_discharge) CHECK(p.value >= 0.0);
    for (const auto& p : s.boundaries.downstream_stage) CHECK(p.value > 0.0);
  }
}

TEST_CASE("validation catches broken invariants") {
  auto s = make_flood_wave_scenario(6, 2.0, 3);
  SUBCASE("unsorted stations") {
    std::swap(s.station_positions_miles[1], s.station_positions_miles[2]);
    CHECK_THROWS_AS(s.validate(), ScenarioError);
  }
  SUBCASE("station beyond channel end") {
    s.station_positions_miles.back() = s.geometry.length_miles + 1.0;
    CHECK_THROWS_AS(s.validate(), ScenarioError);
  }
  SUBCASE("negative discharge") {
    s.boundaries.upstream_discharge[3].value = -1.0;
    CHECK_THROWS_AS(s.validate(), ScenarioError);
  }
  SUBCASE("series not covering the run") {
    s.boundaries.downstream_stage.pop_back();
    CHECK_THROWS_AS(s.validate(), ScenarioError);
  }
  SUBCASE("zero width") {
    s.geometry.width_ft = 0.0;
    CHECK_THROWS_AS(s.validate(), ScenarioError);
  }
}
