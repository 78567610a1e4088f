#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "stagecast/geometry.hpp"
#include "stagecast/random.hpp"
#include "stagecast/reference_solver.hpp"
#include "stagecast/surrogate.hpp"

namespace stagecast {

struct TrainingSample {
  double x_miles = 0.0;
  double t_hours = 0.0;
  double h_ft = 0.0;
  double u_fps = 0.0;
};

/// Station/output-time samples of a field, split into training and validation parts.
struct TrainingSet {
  std::vector<TrainingSample> samples;
  std::vector<TrainingSample> validation;
  NormalizationBox box;

  void validate() const;
  /// Mean depth and velocity of the training part.
  OutputPrior prior() const;
};

/// Every (station, output time) pair of `field`; a seeded fraction goes to validation.
TrainingSet make_training_set(const FlowField& field, double validation_fraction = 0.1,
                              std::uint64_t seed = 0);

/**
 * Residual definition. The default is continuity plus inviscid momentum in
 * feet and seconds; extended_momentum adds g (Sf - S0) using `geometry`.
 * The scales multiply each residual before squaring.
 */
struct PhysicsOptions {
  bool extended_momentum = false;
  double continuity_scale = 1.0;
  double momentum_scale = 1.0;
  ChannelGeometry geometry;

  bool operator==(const PhysicsOptions&) const = default;
};

/// Per-point continuity and momentum residuals from values and partials.
struct Residual {
  double continuity = 0.0;
  double momentum = 0.0;
};
Residual physics_residual(const FlowJet& jet, const PhysicsOptions& options);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// mean[(h_hat - h)^2 + (u_hat - u)^2].
double data_loss(const FlowModel& model, std::span<const TrainingSample> batch);
/// mean over points of (continuity^2 + momentum^2).
double physics_loss(const FlowModel& model, std::span<const SpaceTime> collocation,
                    const PhysicsOptions& options = {});
double total_loss(const FlowModel& model, std::span<const TrainingSample> batch,
                  std::span<const SpaceTime> collocation, double lambda_physics,
                  const PhysicsOptions& options = {});
inline double combine_losses(double data, double physics, double lambda_physics) {
  return lambda_physics == 0.0 ? data : data + lambda_physics * physics;
}

/// Taped counterparts; they return 1 x 1 nodes.
ad::NodeId record_data_loss(ad::Tape& tape, const SurrogateModel& model,
                            std::span<const TrainingSample> batch);
ad::NodeId record_physics_loss(ad::Tape& tape, const SurrogateModel& model,
                               std::span<const SpaceTime> collocation, const PhysicsOptions& options);

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update; throws TrainingError naming a non-finite gradient entry.
void adam_step(std::span<double> weights, std::span<const double> grads, AdamState& state, double lr);

struct TrainConfig {
  double lambda_physics = 0.1;
  double sigma = 4.0;
  int batch_size = 1024;
  double lr_initial = 1e-3;
  double lr_decay_rate = 0.5;
  int lr_decay_every = 20000;
  int max_iterations = 100000;
  int collocation_points_per_batch = 1024;
  std::uint64_t seed = 0;
  int log_every = 100;
  PhysicsOptions physics;  // geometry is taken from the scenario by train()

  void validate() const;
};

/// lr_initial * lr_decay_rate^(iteration / lr_decay_every), continuous exponent.
double learning_rate(const TrainConfig& config, int iteration);

/// Uniform points over the box.
std::vector<SpaceTime> sample_collocation(Rng& rng, const NormalizationBox& box, std::size_t n);

struct LossRecord {
  int iteration = 0;
  double data_loss = 0.0;
  double physics_loss = 0.0;
  double total_loss = 0.0;
  double lr = 0.0;
  double validation_loss = 0.0;
};

struct TrainResult {
  SurrogateModel model;
  std::vector<LossRecord> history;
  int best_iteration = 0;
  double best_validation_loss = std::numeric_limits<double>::infinity();
};

/// Raised when training blows up; carries the history recorded so far.
class DivergenceError : public TrainingError {
 public:
  DivergenceError(const std::string& what, std::vector<LossRecord> history)
      : TrainingError(what), history_(std::move(history)) {}
  const std::vector<LossRecord>& history() const { return history_; }

 private:
  std::vector<LossRecord> history_;
};

/// Fresh model for a training set: the config's sigma and seed, the set's box and prior.
SurrogateModel make_initial_model(SurrogateConfig architecture, const TrainingSet& set,
                                  const TrainConfig& config);

/**
 * Adam on data_loss + lambda * physics_loss. Batches are drawn with
 * replacement from one seeded stream and collocation points from another,
 * so the supervised batch sequence does not depend on lambda. The returned
 * model holds the weights with the lowest validation loss seen at a log step.
 */
TrainResult train(SurrogateModel model, const TrainingSet& set, const RiverScenario& scenario,
                  const TrainConfig& config);

/// Validation MRAE of stage.
double validation_mrae(const SurrogateModel& model, const TrainingSet& set);

struct GridCell {
  double lambda_physics = 0.0;
  double sigma = 0.0;
  double score = std::numeric_limits<double>::infinity();
  bool diverged = false;
};

struct GridSearchResult {
  double best_lambda = 0.0;
  double best_sigma = 0.0;
  std::vector<GridCell> table;
};

GridSearchResult grid_search(const TrainingSet& set, const RiverScenario& scenario,
                             std::span<const double> lambda_grid, std::span<const double> sigma_grid,
                             int budget_iters, const SurrogateConfig& architecture,
                             const TrainConfig& base);

}  // namespace stagecast
