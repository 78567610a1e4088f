#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "stagecast/geometry.hpp"
#include "stagecast/random.hpp"
#include "stagecast/surrogate.hpp"

using namespace stagecast;

namespace {

SurrogateConfig small_config(Activation act, std::uint64_t seed, bool fourier = true) {
  SurrogateConfig c;
  c.fourier_rows = 8;
  c.sigma = 1.0;
  c.use_fourier = fourier;
  c.width = 16;
  c.depth = 2;
  c.activation = act;
  c.box = {0.0, 10.0, 0.0, 24.0};
  c.seed = seed;
  return c;
}

// Perturbs all weights so the zero-initialized residual branches are active.
void jitter(SurrogateModel& m, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (double& w : m.mutable_weights()) w += scale * rng.normal();
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

TEST_CASE("encoder: known frequencies") {
  const FourierEncoder enc(1.0, {1.0, 0.0, 0.0, 2.0});
  std::vector<double> out(4);
  enc.encode(0.0, 0.0, out);
  CHECK(out == std::vector<double>{1.0, 1.0, 0.0, 0.0});
  enc.encode(0.25, 0.125, out);
  // rows: 2 pi * 0.25 = pi/2, 2 pi * 2 * 0.125 = pi/2
  CHECK(out[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(out[2] == doctest::Approx(1.0));
  CHECK(out[3] == doctest::Approx(1.0));

  std::vector<double> d0(4), d1(4), vals(4);
  enc.encode_dual(0.1, 0.2, vals, d0, d1);
  const double a0 = 2.0 * std::numbers::pi * 0.1;
  CHECK(d0[0] == doctest::Approx(-2.0 * std::numbers::pi * std::sin(a0)));
  CHECK(d0[2] == doctest::Approx(2.0 * std::numbers::pi * std::cos(a0)));
  CHECK(d1[0] == 0.0);
  CHECK(d0[1] == 0.0);
}

TEST_CASE("encoder: frequency draws follow sigma") {
  const FourierEncoder enc(4000, 2.5, 7);
  double sum = 0.0, sq = 0.0;
  for (double b : enc.frequencies()) {
    sum += b;
    sq += b * b;
  }
  const double n = static_cast<double>(enc.frequencies().size());
  CHECK(std::abs(sum / n) < 0.1);
  CHECK(std::sqrt(sq / n) == doctest::Approx(2.5).epsilon(0.03));
  CHECK(FourierEncoder(4000, 2.5, 7).frequencies() == enc.frequencies());
  CHECK_THROWS(FourierEncoder(0, 1.0, 1));
  CHECK_THROWS(FourierEncoder(4, 0.0, 1));
}

TEST_CASE("surrogate: manifest layout") {
  const auto c = small_config(Activation::Relu, 1);
  const auto layers = SurrogateModel::build_manifest(c);
  REQUIRE(layers.size() == 2 + 4 * 2 + 2);
  std::size_t expect = 0;
  for (const auto& l : layers) {
    CHECK(l.offset == expect);
    expect += l.rows * l.cols;
  }
  // 16*16 input + 16 + 2 blocks of (2*16*16 + 32) + 16*2 + 2
  CHECK(expect == 16 * 16 + 16 + 2 * (2 * 256 + 32) + 32 + 2);
  const auto m = SurrogateModel::initialize(c);
  CHECK(m.weights().size() == expect);
  CHECK(m.feature_dim() == 16);
}

TEST_CASE("surrogate: residual blocks start as identity") {
  for (auto act : {Activation::Relu, Activation::Tanh}) {
    auto c = small_config(act, 3);
    const auto deep = SurrogateModel::initialize(c, {12.0, 4.0});
    auto c0 = c;
    c0.depth = 0;
    // Shallow twin sharing input projection and head.
    const auto manifest0 = SurrogateModel::build_manifest(c0);
    std::vector<double> w0(manifest0.back().offset + 2);
    const auto& md = deep.manifest();
    for (const auto& l : manifest0) {
      const auto it = std::find_if(md.begin(), md.end(), [&](const LayerShape& d) { return d.name == l.name; });
      REQUIRE(it != md.end());
      std::copy_n(deep.weights().begin() + static_cast<std::ptrdiff_t>(it->offset), l.rows * l.cols,
                  w0.begin() + static_cast<std::ptrdiff_t>(l.offset));
    }
    const SurrogateModel shallow(c0, deep.encoder(), w0);
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
      const double x = rng.uniform(0.0, 10.0), t = rng.uniform(0.0, 24.0);
      const auto a = deep.predict(x, t);
      const auto b = shallow.predict(x, t);
      CHECK(a.h == b.h);
      CHECK(a.u == b.u);
    }
  }
}

TEST_CASE("surrogate: output prior sets the head bias") {
  const auto m = SurrogateModel::initialize(small_config(Activation::Tanh, 5), {14.5, 3.25});
  const auto& head_b = m.manifest().back();
  CHECK(softplus(m.weights()[head_b.offset]) + kDepthFloorFt == doctest::Approx(14.5).epsilon(1e-12));
  CHECK(m.weights()[head_b.offset + 1] == 3.25);
}

TEST_CASE("surrogate: depth stays above the floor") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = SurrogateModel::initialize(small_config(Activation::Relu, seed), {0.5, 0.0});
    jitter(m, seed + 100, 3.0);
    Rng rng(seed);
    std::vector<SpaceTime> pts(200);
    for (auto& p : pts) p = {rng.uniform(-5.0, 15.0), rng.uniform(-10.0, 40.0)};
    for (const auto& s : m.predict_batch(pts)) CHECK(s.h >= kDepthFloorFt);
  }
}

TEST_CASE("surrogate: batch equals pointwise and chunking is invisible") {
  auto m = SurrogateModel::initialize(small_config(Activation::Tanh, 9), {10.0, 2.0});
  jitter(m, 4, 0.2);
  Rng rng(2);
  std::vector<SpaceTime> pts(2500);
  for (auto& p : pts) p = {rng.uniform(0.0, 10.0), rng.uniform(0.0, 24.0)};
  const auto batch = m.predict_batch(pts);
  const auto jets = m.predict_jets(pts);
  for (std::size_t i = 0; i < pts.size(); i += 97) {
    const auto s = m.predict(pts[i].x_miles, pts[i].t_hours);
    CHECK(s.h == batch[i].h);
    CHECK(s.u == batch[i].u);
    CHECK(jets[i].h == batch[i].h);
    CHECK(jets[i].u == batch[i].u);
  }
}

TEST_CASE("surrogate: clamping outside the training box") {
  const auto m = SurrogateModel::initialize(small_config(Activation::Relu, 1));
  CHECK_FALSE(m.predict(5.0, 12.0).clamped);
  const auto out = m.predict(12.0, 12.0);
  CHECK(out.clamped);
  const auto edge = m.predict(10.0, 12.0);
  CHECK(out.h == edge.h);
  CHECK(m.predict(5.0, -1.0).clamped);
}

TEST_CASE("surrogate: input partials match finite differences") {
  // Central differences with step 1e-4 in normalized units.
  const double step = 1e-4;
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const bool fourier = seed % 3 != 0;
    auto m = SurrogateModel::initialize(small_config(Activation::Tanh, seed, fourier), {8.0, 2.0});
    jitter(m, seed + 50, 0.05);
    const auto& box = m.config().box;
    Rng rng(seed + 1000);
    for (int k = 0; k < 10; ++k) {
      const double v0 = rng.uniform(0.05, 0.95), v1 = rng.uniform(0.05, 0.95);
      const double x = box.x_min + v0 * (box.x_max - box.x_min);
      const double t = box.t_min + v1 * (box.t_max - box.t_min);
      const double dx_mi = step * (box.x_max - box.x_min);
      const double dt_h = step * (box.t_max - box.t_min);
      const SpaceTime p{x, t};
      const auto jet = m.predict_jets(std::span<const SpaceTime>(&p, 1)).front();
      const auto xp = m.predict(x + dx_mi, t), xm = m.predict(x - dx_mi, t);
      const auto tp = m.predict(x, t + dt_h), tm = m.predict(x, t - dt_h);
      const double fd_hx = (xp.h - xm.h) / (2.0 * dx_mi * kFeetPerMile);
      const double fd_ux = (xp.u - xm.u) / (2.0 * dx_mi * kFeetPerMile);
      const double fd_ht = (tp.h - tm.h) / (2.0 * dt_h * kSecondsPerHour);
      const double fd_ut = (tp.u - tm.u) / (2.0 * dt_h * kSecondsPerHour);
      // Compared in normalized units: relative error, absolute below magnitude 1.
      const double sx = box.x_scale_per_ft(), st = box.t_scale_per_s();
      CHECK(std::abs(jet.h_x - fd_hx) / sx <= 1e-5 * std::max(1.0, std::abs(jet.h_x / sx)));
      CHECK(std::abs(jet.u_x - fd_ux) / sx <= 1e-5 * std::max(1.0, std::abs(jet.u_x / sx)));
      CHECK(std::abs(jet.h_t - fd_ht) / st <= 1e-5 * std::max(1.0, std::abs(jet.h_t / st)));
      CHECK(std::abs(jet.u_t - fd_ut) / st <= 1e-5 * std::max(1.0, std::abs(jet.u_t / st)));
      ++checked;
    }
  }
  CHECK(checked == 300);
}

TEST_CASE("surrogate: rejects bad parts") {
  auto c = small_config(Activation::Relu, 1);
  const auto m = SurrogateModel::initialize(c);
  std::vector<double> w(m.weights().begin(), m.weights().end());
  w.pop_back();
  CHECK_THROWS(SurrogateModel(c, m.encoder(), w));
  std::vector<double> bad(m.weights().begin(), m.weights().end());
  bad[3] = std::nan("");
  CHECK_THROWS(SurrogateModel(c, m.encoder(), bad));
  CHECK_THROWS(SurrogateModel(c, FourierEncoder(1.0, {1.0, 2.0}), std::vector<double>(m.weights().begin(), m.weights().end())));
  c.box = {1.0, 1.0, 0.0, 1.0};
  CHECK_THROWS(SurrogateModel::initialize(c));
  CHECK(activation_from_string("tanh") == Activation::Tanh);
  CHECK_THROWS(activation_from_string("gelu"));
}
