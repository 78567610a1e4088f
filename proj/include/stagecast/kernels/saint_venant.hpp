#pragma once

#include <span>
#include <vector>

#include "stagecast/parallel.hpp"

namespace stagecast::kernels {

/// Coefficients of one explicit step on a uniform node grid (feet, seconds).
struct ChannelStep {
  double dt = 0.0;
  double dx = 0.0;
  double gravity = 0.0;
  double width = 0.0;
  double manning_n = 0.0;
  double bed_slope = 0.0;
  bool friction = true;
  bool bed_slope_term = true;
};

/// Scratch arrays reused across steps; sized on first use.
struct MacCormackScratch {
  std::vector<double> h_pred, u_pred, h_fb, u_fb;
};

/**
 * Symmetrized MacCormack update of interior nodes 1..n-2 for
 *   h_t + u h_x + h u_x = 0,
 *   u_t + u u_x + g h_x = g (S0 - Sf).
 * The forward-backward and backward-forward predictor/corrector variants are
 * averaged, which makes the scheme mirror-symmetric. Boundary nodes of
 * h_new/u_new are left untouched. Serial and Parallel give identical bits.
 */
void maccormack_interior(Exec exec, const ChannelStep& step, std::span<const double> h,
                         std::span<const double> u, std::span<double> h_new,
                         std::span<double> u_new, MacCormackScratch& scratch);

/// Largest |u| + sqrt(g h) over all nodes.
double max_wave_speed(Exec exec, std::span<const double> h, std::span<const double> u,
                      double gravity);

}  // namespace stagecast::kernels
