#pragma once

#include <algorithm>
#include <cmath>

namespace stagecast::ad {

/**
 * Forward-mode value carrying partials along the two input directions
 * (x, t). Constants have zero partials.
 */
struct Dual {
  double value = 0.0;
  double dx = 0.0;
  double dt = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double v) : value(v) {}  // NOLINT: constants promote implicitly
  constexpr Dual(double v, double d_x, double d_t) : value(v), dx(d_x), dt(d_t) {}

  static constexpr Dual seed_x(double v) { return {v, 1.0, 0.0}; }
  static constexpr Dual seed_t(double v) { return {v, 0.0, 1.0}; }

  Dual& operator+=(const Dual& o) { return *this = *this + o; }
  Dual& operator-=(const Dual& o) { return *this = *this - o; }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }

  friend constexpr Dual operator+(const Dual& a, const Dual& b) {
    return {a.value + b.value, a.dx + b.dx, a.dt + b.dt};
  }
  friend constexpr Dual operator-(const Dual& a, const Dual& b) {
    return {a.value - b.value, a.dx - b.dx, a.dt - b.dt};
  }
  friend constexpr Dual operator-(const Dual& a) { return {-a.value, -a.dx, -a.dt}; }
  friend constexpr Dual operator*(const Dual& a, const Dual& b) {
    return {a.value * b.value, a.value * b.dx + b.value * a.dx, a.value * b.dt + b.value * a.dt};
  }
  friend constexpr Dual operator/(const Dual& a, const Dual& b) {
    const double q = a.value / b.value;
    return {q, (a.dx - q * b.dx) / b.value, (a.dt - q * b.dt) / b.value};
  }
};

namespace detail {
inline Dual chain(const Dual& a, double f, double df) { return {f, df * a.dx, df * a.dt}; }
}  // namespace detail

inline Dual sin(const Dual& a) { return detail::chain(a, std::sin(a.value), std::cos(a.value)); }
inline Dual cos(const Dual& a) { return detail::chain(a, std::cos(a.value), -std::sin(a.value)); }
inline Dual exp(const Dual& a) {
  const double e = std::exp(a.value);
  return detail::chain(a, e, e);
}
inline Dual log(const Dual& a) { return detail::chain(a, std::log(a.value), 1.0 / a.value); }
inline Dual sqrt(const Dual& a) {
  const double s = std::sqrt(a.value);
  return detail::chain(a, s, 0.5 / s);
}
inline Dual tanh(const Dual& a) {
  const double y = std::tanh(a.value);
  return detail::chain(a, y, 1.0 - y * y);
}
/// Subgradient 0 at the kink.
inline Dual relu(const Dual& a) {
  return a.value > 0.0 ? a : Dual{0.0, 0.0, 0.0};
}
inline Dual square(const Dual& a) { return a * a; }
inline Dual softplus(const Dual& a) {
  const double y = std::max(a.value, 0.0) + std::log1p(std::exp(-std::abs(a.value)));
  const double s = 1.0 / (1.0 + std::exp(-a.value));
  return detail::chain(a, y, s);
}

struct DualResult {
  double value = 0.0;
  double dfdx = 0.0;
  double dfdt = 0.0;
};

/**
 * Evaluates f(x, t) with seeds (1, 0) on x and (0, 1) on t. f must be
 * written against Dual; using an operation Dual lacks fails to compile.
 */
template <class F>
DualResult forward_dual(F&& f, double x, double t) {
  const Dual r = f(Dual::seed_x(x), Dual::seed_t(t));
  return {r.value, r.dx, r.dt};
}

}  // namespace stagecast::ad
