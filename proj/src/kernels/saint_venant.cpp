#include "stagecast/kernels/saint_venant.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace stagecast::kernels {

namespace {

inline double source(const ChannelStep& s, double h, double u) {
  double slope = 0.0;
  if (s.bed_slope_term) slope += s.bed_slope;
  if (s.friction) {
    const double radius = s.width * h / (s.width + 2.0 * h);
    slope -= s.manning_n * s.manning_n * u * std::abs(u) /
             (2.208 * std::pow(radius, 4.0 / 3.0));
  }
  return s.gravity * slope;
}

// One predictor or corrector stage at node i using the one-sided difference
// (hb - ha, ub - ua) of the stage's input state.
inline void advance(const ChannelStep& s, double lambda, double h0, double u0, double hs,
                    double us, double dh, double du, double& h_out, double& u_out) {
  h_out = h0 - lambda * (us * dh + hs * du);
  u_out = u0 - lambda * (us * du + s.gravity * dh) + s.dt * source(s, hs, us);
}

template <class Body>
void for_nodes(Exec exec, std::size_t begin, std::size_t end, Body&& body) {
  const bool parallel = exec == Exec::Parallel && end - begin >= kParallelGrain && worker_count() > 1;
  const auto b = static_cast<std::ptrdiff_t>(begin);
  const auto e = static_cast<std::ptrdiff_t>(end);
#pragma omp parallel for schedule(static) num_threads(worker_count()) if (parallel)
  for (std::ptrdiff_t i = b; i < e; ++i) body(static_cast<std::size_t>(i));
}

}  // namespace

void maccormack_interior(Exec exec, const ChannelStep& s, std::span<const double> h,
                         std::span<const double> u, std::span<double> h_new,
                         std::span<double> u_new, MacCormackScratch& w) {
  const std::size_t n = h.size();
  const double lambda = s.dt / s.dx;
  w.h_pred.resize(n);
  w.u_pred.resize(n);
  w.h_fb.resize(n);
  w.u_fb.resize(n);
  auto& hp = w.h_pred;
  auto& up = w.u_pred;

  // Forward predictor on 0..n-2, backward corrector on 1..n-2.
  for_nodes(exec, 0, n - 1, [&](std::size_t i) {
    advance(s, lambda, h[i], u[i], h[i], u[i], h[i + 1] - h[i], u[i + 1] - u[i], hp[i], up[i]);
  });
  for_nodes(exec, 1, n - 1, [&](std::size_t i) {
    double hc, uc;
    advance(s, lambda, h[i], u[i], hp[i], up[i], hp[i] - hp[i - 1], up[i] - up[i - 1], hc, uc);
    w.h_fb[i] = 0.5 * (hp[i] + hc);
    w.u_fb[i] = 0.5 * (up[i] + uc);
  });

  // Backward predictor on 1..n-1, forward corrector on 1..n-2.
  for_nodes(exec, 1, n, [&](std::size_t i) {
    advance(s, lambda, h[i], u[i], h[i], u[i], h[i] - h[i - 1], u[i] - u[i - 1], hp[i], up[i]);
  });
  for_nodes(exec, 1, n - 1, [&](std::size_t i) {
    double hc, uc;
    advance(s, lambda, h[i], u[i], hp[i], up[i], hp[i + 1] - hp[i], up[i + 1] - up[i], hc, uc);
    const double h_bf = 0.5 * (hp[i] + hc);
    const double u_bf = 0.5 * (up[i] + uc);
    h_new[i] = 0.5 * (w.h_fb[i] + h_bf);
    u_new[i] = 0.5 * (w.u_fb[i] + u_bf);
  });
}

double max_wave_speed(Exec exec, std::span<const double> h, std::span<const double> u,
                      double gravity) {
  const std::size_t n = h.size();
  double speed = 0.0;
  const bool parallel = exec == Exec::Parallel && n >= kParallelGrain && worker_count() > 1;
  const auto e = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for reduction(max : speed) num_threads(worker_count()) if (parallel)
  for (std::ptrdiff_t i = 0; i < e; ++i) {
    const auto k = static_cast<std::size_t>(i);
    speed = std::max(speed, std::abs(u[k]) + std::sqrt(gravity * std::max(h[k], 0.0)));
  }
  return speed;
}

}  // namespace stagecast::kernels
