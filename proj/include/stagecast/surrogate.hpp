#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stagecast/autodiff/tape.hpp"
#include "stagecast/flow_model.hpp"

namespace stagecast {

enum class Activation { Relu, Tanh };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& text);

/// Maps river miles and hours onto the unit square.
struct NormalizationBox {
  double x_min = 0.0;
  double x_max = 1.0;
  double t_min = 0.0;
  double t_max = 1.0;

  void validate() const;
  /// Normalized coordinates, clamped to [0, 1]; sets *clamped when clamping happened.
  std::pair<double, double> normalize(double x_miles, double t_hours, bool* clamped = nullptr) const;
  /// d(normalized x)/d(feet) and d(normalized t)/d(seconds).
  double x_scale_per_ft() const;
  double t_scale_per_s() const;

  bool operator==(const NormalizationBox&) const = default;
};

/// Architecture hyperparameters; all of them are stored in checkpoints.
struct SurrogateConfig {
  int fourier_rows = 128;  // m; the encoding has 2m features
  double sigma = 4.0;
  bool use_fourier = true;
  int width = 512;
  int depth = 6;  // residual blocks
  Activation activation = Activation::Relu;
  NormalizationBox box;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SurrogateConfig&) const = default;
};

inline constexpr double kDepthFloorFt = 0.01;

/**
 * Random Fourier features gamma(v) = [cos(2 pi B v), sin(2 pi B v)] with B
 * of shape (m, 2) drawn from Normal(0, sigma^2). B is frozen.
 */
class FourierEncoder {
 public:
  FourierEncoder() = default;
  FourierEncoder(int rows, double sigma, std::uint64_t seed);
  FourierEncoder(double sigma, std::vector<double> frequencies);

  std::size_t rows() const { return frequencies_.size() / 2; }
  std::size_t output_dim() const { return frequencies_.size(); }
  double sigma() const { return sigma_; }
  /// Row-major (m, 2).
  const std::vector<double>& frequencies() const { return frequencies_; }

  /// Writes 2m features for the normalized point (v0, v1): cos block then sin block.
  void encode(double v0, double v1, std::span<double> out) const;
  /// Same, plus partials with respect to v0 and v1.
  void encode_dual(double v0, double v1, std::span<double> out, std::span<double> d0,
                   std::span<double> d1) const;

 private:
  double sigma_ = 0.0;
  std::vector<double> frequencies_;
};

/// Named slice of the flat weight vector.
struct LayerShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  ad::ParamRef ref() const { return {offset, rows, cols}; }
};

/// Data-dependent starting point for the output head.
struct OutputPrior {
  double mean_h = 1.0;
  double mean_u = 0.0;
};

/// Output nodes of a taped forward pass.
struct TapedOutputs {
  ad::NodeId h;  // ft, with tangent planes when requested
  ad::NodeId u;  // ft/s
};

/**
 * Implicit neural representation (x, t) -> (h, u):
 *   features = Fourier(normalized x, t)       (or the raw normalized pair)
 *   z0 = act(features W_in + b_in)
 *   z_{k+1} = z_k + act(z_k W1_k + b1_k) W2_k + b2_k
 *   [raw_h, raw_u] = z W_out + b_out
 *   h = softplus(raw_h) + 0.01 ft, u = raw_u.
 */
class SurrogateModel : public FlowModel {
 public:
  /// Kaiming fan-in initialization, zero last layer in each block.
  static SurrogateModel initialize(const SurrogateConfig& config, const OutputPrior& prior = {});

  /// Rebuilds a model from stored parts; rejects non-finite or mis-sized arrays.
  SurrogateModel(SurrogateConfig config, FourierEncoder encoder, std::vector<double> weights);

  const SurrogateConfig& config() const { return config_; }
  const FourierEncoder& encoder() const { return encoder_; }
  const std::vector<LayerShape>& manifest() const { return manifest_; }
  std::span<const double> weights() const { return weights_; }
  std::vector<double>& mutable_weights() { return weights_; }
  std::size_t feature_dim() const;

  FlowSample predict(double x_miles, double t_hours) const;
  std::vector<FlowSample> predict_batch(std::span<const SpaceTime> points) const override;
  std::vector<FlowJet> predict_jets(std::span<const SpaceTime> points) const override;

  /// Records the forward pass for a batch on `tape` (bound to weights()).
  TapedOutputs record(ad::Tape& tape, std::span<const SpaceTime> points, bool with_tangents) const;

  /// Layer layout for an architecture.
  static std::vector<LayerShape> build_manifest(const SurrogateConfig& config);

 private:
  SurrogateModel(SurrogateConfig config, FourierEncoder encoder);

  SurrogateConfig config_;
  FourierEncoder encoder_;
  std::vector<LayerShape> manifest_;
  std::vector<double> weights_;
};

}  // namespace stagecast
