#pragma once

#include <span>
#include <vector>

#include "stagecast/reference_solver.hpp"

namespace stagecast {

/// A river-mile / hour query point.
struct SpaceTime {
  double x_miles = 0.0;
  double t_hours = 0.0;
};

struct FlowSample {
  double h = 0.0;  // ft
  double u = 0.0;  // ft/s
  bool clamped = false;  // query fell outside the model's domain and was clamped
};

/// Values and first partials in feet and seconds.
struct FlowJet {
  double h = 0.0;
  double u = 0.0;
  double h_x = 0.0;
  double h_t = 0.0;
  double u_x = 0.0;
  double u_t = 0.0;
};

/// Anything that maps (x, t) to (h, u): the surrogate, or a field interpolant.
class FlowModel {
 public:
  virtual ~FlowModel() = default;
  virtual std::vector<FlowSample> predict_batch(std::span<const SpaceTime> points) const = 0;
  virtual std::vector<FlowJet> predict_jets(std::span<const SpaceTime> points) const = 0;
  /// Vertical reference of predicted h.
  virtual Datum datum() const { return Datum::Depth; }
};

}  // namespace stagecast
