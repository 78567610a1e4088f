#include "stagecast/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "stagecast/autodiff/dual.hpp"
#include "stagecast/geometry.hpp"
#include "stagecast/random.hpp"

namespace stagecast {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::size_t kChunkRows = 1024;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

ad::Op activation_op(Activation a) { return a == Activation::Relu ? ad::Op::Relu : ad::Op::Tanh; }

double inverse_softplus(double y) {
  // log(exp(y) - 1), stable for large y
  return y > 30.0 ? y : std::log(std::expm1(y));
}

}  // namespace

const char* to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& text) {
  if (text == "relu") return Activation::Relu;
  if (text == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + text + "' (expected relu or tanh)");
}

void NormalizationBox::validate() const {
  require(std::isfinite(x_min) && std::isfinite(x_max) && x_max > x_min,
          "normalization box: need x_max > x_min");
  require(std::isfinite(t_min) && std::isfinite(t_max) && t_max > t_min,
          "normalization box: need t_max > t_min");
}

std::pair<double, double> NormalizationBox::normalize(double x_miles, double t_hours,
                                                      bool* clamped) const {
  double v0 = (x_miles - x_min) / (x_max - x_min);
  double v1 = (t_hours - t_min) / (t_max - t_min);
  bool c = false;
  if (!(v0 >= 0.0 && v0 <= 1.0) || !(v1 >= 0.0 && v1 <= 1.0)) {
    c = true;
    v0 = std::isnan(v0) ? 0.0 : std::clamp(v0, 0.0, 1.0);
    v1 = std::isnan(v1) ? 0.0 : std::clamp(v1, 0.0, 1.0);
  }
  if (clamped) *clamped = c;
  return {v0, v1};
}

double NormalizationBox::x_scale_per_ft() const { return 1.0 / ((x_max - x_min) * kFeetPerMile); }
double NormalizationBox::t_scale_per_s() const { return 1.0 / ((t_max - t_min) * kSecondsPerHour); }

void SurrogateConfig::validate() const {
  require(!use_fourier || fourier_rows >= 1, "fourier_rows must be >= 1");
  require(!use_fourier || (std::isfinite(sigma) && sigma > 0.0), "sigma must be > 0");
  require(width >= 1, "width must be >= 1");
  require(depth >= 0, "depth must be >= 0");
  box.validate();
}

FourierEncoder::FourierEncoder(int rows, double sigma, std::uint64_t seed) : sigma_(sigma) {
  require(rows >= 1, "FourierEncoder: rows must be >= 1");
  require(std::isfinite(sigma) && sigma > 0.0, "FourierEncoder: sigma must be > 0");
  Rng rng(seed);
  frequencies_.resize(static_cast<std::size_t>(rows) * 2);
  for (double& b : frequencies_) b = sigma * rng.normal();
}

FourierEncoder::FourierEncoder(double sigma, std::vector<double> frequencies)
    : sigma_(sigma), frequencies_(std::move(frequencies)) {
  require(frequencies_.size() % 2 == 0, "FourierEncoder: frequency matrix must have 2 columns");
  for (double b : frequencies_) require(std::isfinite(b), "FourierEncoder: non-finite frequency");
}

void FourierEncoder::encode(double v0, double v1, std::span<double> out) const {
  const std::size_t m = rows();
  for (std::size_t r = 0; r < m; ++r) {
    const double a = kTwoPi * (frequencies_[2 * r] * v0 + frequencies_[2 * r + 1] * v1);
    out[r] = std::cos(a);
    out[m + r] = std::sin(a);
  }
}

void FourierEncoder::encode_dual(double v0, double v1, std::span<double> out,
                                 std::span<double> d0, std::span<double> d1) const {
  const std::size_t m = rows();
  const ad::Dual x = ad::Dual::seed_x(v0);
  const ad::Dual t = ad::Dual::seed_t(v1);
  for (std::size_t r = 0; r < m; ++r) {
    const ad::Dual a = ad::Dual(kTwoPi) * (ad::Dual(frequencies_[2 * r]) * x +
                                           ad::Dual(frequencies_[2 * r + 1]) * t);
    const ad::Dual c = ad::cos(a);
    const ad::Dual s = ad::sin(a);
    out[r] = c.value;
    out[m + r] = s.value;
    d0[r] = c.dx;
    d0[m + r] = s.dx;
    d1[r] = c.dt;
    d1[m + r] = s.dt;
  }
}

std::vector<LayerShape> SurrogateModel::build_manifest(const SurrogateConfig& c) {
  std::vector<LayerShape> layers;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    layers.push_back({std::move(name), rows, cols, offset});
    offset += rows * cols;
  };
  const auto width = static_cast<std::size_t>(c.width);
  const std::size_t features = c.use_fourier ? 2 * static_cast<std::size_t>(c.fourier_rows) : 2;
  add("input.W", features, width);
  add("input.b", 1, width);
  for (int k = 0; k < c.depth; ++k) {
    const std::string p = "block" + std::to_string(k);
    add(p + ".W1", width, width);
    add(p + ".b1", 1, width);
    add(p + ".W2", width, width);
    add(p + ".b2", 1, width);
  }
  add("head.W", width, 2);
  add("head.b", 1, 2);
  return layers;
}

SurrogateModel::SurrogateModel(SurrogateConfig config, FourierEncoder encoder)
    : config_(std::move(config)), encoder_(std::move(encoder)) {
  config_.validate();
  manifest_ = build_manifest(config_);
  if (config_.use_fourier) {
    require(encoder_.rows() == static_cast<std::size_t>(config_.fourier_rows),
            "SurrogateModel: encoder rows do not match config");
  }
}

SurrogateModel::SurrogateModel(SurrogateConfig config, FourierEncoder encoder,
                               std::vector<double> weights)
    : SurrogateModel(std::move(config), std::move(encoder)) {
  const auto& last = manifest_.back();
  require(weights.size() == last.offset + last.rows * last.cols,
          "SurrogateModel: weight count does not match architecture");
  for (double w : weights) require(std::isfinite(w), "SurrogateModel: non-finite weight");
  weights_ = std::move(weights);
}

SurrogateModel SurrogateModel::initialize(const SurrogateConfig& config, const OutputPrior& prior) {
  FourierEncoder enc;
  if (config.use_fourier) enc = FourierEncoder(config.fourier_rows, config.sigma, Rng::derive(config.seed, 1));
  SurrogateModel model(config, std::move(enc));
  const auto& last = model.manifest_.back();
  model.weights_.assign(last.offset + last.rows * last.cols, 0.0);

  Rng rng(Rng::derive(config.seed, 2));
  const double gain = config.activation == Activation::Relu ? 2.0 : 1.0;
  for (const auto& layer : model.manifest_) {
    const bool is_bias = layer.rows == 1;
    const bool zero_last = layer.name.ends_with(".W2");
    if (is_bias || zero_last) continue;
    const double fan_in_gain = layer.name == "head.W" ? 1.0 : gain;
    const double std = std::sqrt(fan_in_gain / static_cast<double>(layer.rows));
    for (std::size_t i = 0; i < layer.rows * layer.cols; ++i) {
      model.weights_[layer.offset + i] = std * rng.normal();
    }
  }
  model.weights_[last.offset] = inverse_softplus(std::max(prior.mean_h - kDepthFloorFt, 1e-6));
  model.weights_[last.offset + 1] = prior.mean_u;
  return model;
}

std::size_t SurrogateModel::feature_dim() const { return manifest_.front().rows; }

TapedOutputs SurrogateModel::record(ad::Tape& tape, std::span<const SpaceTime> points,
                                    bool with_tangents) const {
  const std::size_t n = points.size();
  const std::size_t f = feature_dim();
  std::vector<double> feat(n * f), d0, d1;
  if (with_tangents) {
    d0.resize(n * f);
    d1.resize(n * f);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto [v0, v1] = config_.box.normalize(points[i].x_miles, points[i].t_hours);
    std::span<double> row(feat.data() + i * f, f);
    if (config_.use_fourier) {
      if (with_tangents) {
        encoder_.encode_dual(v0, v1, row, {d0.data() + i * f, f}, {d1.data() + i * f, f});
      } else {
        encoder_.encode(v0, v1, row);
      }
    } else {
      row[0] = v0;
      row[1] = v1;
      if (with_tangents) {
        d0[i * f] = 1.0;
        d1[i * f + 1] = 1.0;
      }
    }
  }
  // Chain rule to feet and seconds is folded into the input tangents.
  if (with_tangents) {
    const double sx = config_.box.x_scale_per_ft();
    const double st = config_.box.t_scale_per_s();
    for (double& v : d0) v *= sx;
    for (double& v : d1) v *= st;
  }
  const ad::NodeId in = with_tangents ? tape.input(n, f, feat, d0, d1) : tape.input(n, f, feat);

  const ad::Op act = activation_op(config_.activation);
  std::size_t li = 0;
  auto next_affine = [&](ad::NodeId x) {
    const ad::NodeId w = tape.param(manifest_[li].ref());
    const ad::NodeId b = tape.param(manifest_[li + 1].ref());
    li += 2;
    return tape.affine(x, w, b);
  };
  ad::NodeId z = tape.unary(act, next_affine(in));
  for (int k = 0; k < config_.depth; ++k) {
    const ad::NodeId a = tape.unary(act, next_affine(z));
    z = tape.add(z, next_affine(a));
  }
  const ad::NodeId out = next_affine(z);
  const ad::NodeId h = tape.add_const(tape.unary(ad::Op::Softplus, tape.column(out, 0)), kDepthFloorFt);
  const ad::NodeId u = tape.column(out, 1);
  return {h, u};
}

std::vector<FlowSample> SurrogateModel::predict_batch(std::span<const SpaceTime> points) const {
  std::vector<FlowSample> result(points.size());
  ad::Tape tape(weights_);
  for (std::size_t start = 0; start < points.size(); start += kChunkRows) {
    const std::size_t n = std::min(kChunkRows, points.size() - start);
    tape.reset();
    const auto out = record(tape, points.subspan(start, n), false);
    const auto& h = tape.node(out.h).value;
    const auto& u = tape.node(out.u).value;
    for (std::size_t i = 0; i < n; ++i) {
      bool clamped = false;
      config_.box.normalize(points[start + i].x_miles, points[start + i].t_hours, &clamped);
      result[start + i] = {h[i], u[i], clamped};
    }
  }
  return result;
}

FlowSample SurrogateModel::predict(double x_miles, double t_hours) const {
  const SpaceTime p{x_miles, t_hours};
  return predict_batch(std::span<const SpaceTime>(&p, 1)).front();
}

std::vector<FlowJet> SurrogateModel::predict_jets(std::span<const SpaceTime> points) const {
  std::vector<FlowJet> result(points.size());
  ad::Tape tape(weights_);
  for (std::size_t start = 0; start < points.size(); start += kChunkRows) {
    const std::size_t n = std::min(kChunkRows, points.size() - start);
    tape.reset();
    const auto out = record(tape, points.subspan(start, n), true);
    const auto& h = tape.node(out.h);
    const auto& u = tape.node(out.u);
    for (std::size_t i = 0; i < n; ++i) {
      result[start + i] = {h.value[i], u.value[i], h.dx[i], h.dt[i], u.dx[i], u.dt[i]};
    }
  }
  return result;
}

}  // namespace stagecast
