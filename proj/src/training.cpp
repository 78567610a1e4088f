#include "stagecast/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stagecast/evaluation.hpp"
#include "stagecast/kernels/dense.hpp"

namespace stagecast {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

std::vector<SpaceTime> points_of(std::span<const TrainingSample> batch) {
  std::vector<SpaceTime> pts(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) pts[i] = {batch[i].x_miles, batch[i].t_hours};
  return pts;
}

double mean_of(const std::vector<double>& terms) {
  return kernels::pairwise_sum(terms.data(), terms.size()) / static_cast<double>(terms.size());
}

void check_finite_loss(double value, const char* what, int iteration,
                       const std::vector<LossRecord>& history) {
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << what << " is non-finite at iteration " << iteration;
    throw DivergenceError(os.str(), history);
  }
}

}  // namespace

void TrainingSet::validate() const {
  require(!samples.empty(), "training set is empty");
  box.validate();
  auto check = [&](const TrainingSample& s) {
    require(std::isfinite(s.x_miles) && std::isfinite(s.t_hours) && std::isfinite(s.h_ft) &&
                std::isfinite(s.u_fps),
            "training set: non-finite sample");
    require(s.x_miles >= box.x_min && s.x_miles <= box.x_max && s.t_hours >= box.t_min &&
                s.t_hours <= box.t_max,
            "training set: sample outside normalization box");
  };
  std::for_each(samples.begin(), samples.end(), check);
  std::for_each(validation.begin(), validation.end(), check);
}

OutputPrior TrainingSet::prior() const {
  std::vector<double> h(samples.size()), u(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    h[i] = samples[i].h_ft;
    u[i] = samples[i].u_fps;
  }
  if (samples.empty()) return {};
  return {mean_of(h), mean_of(u)};
}

TrainingSet make_training_set(const FlowField& field, double validation_fraction, std::uint64_t seed) {
  require(validation_fraction >= 0.0 && validation_fraction < 1.0,
          "validation_fraction must be in [0, 1)");
  field.validate();
  std::vector<TrainingSample> all;
  all.reserve(field.n_t() * field.n_x());
  for (std::size_t k = 0; k < field.n_t(); ++k) {
    for (std::size_t j = 0; j < field.n_x(); ++j) {
      all.push_back({field.x_grid_miles[j], field.t_grid_hours[k], field.h_at(k, j), field.u_at(k, j)});
    }
  }
  // Fisher-Yates over a seeded stream, then the first block is held out.
  Rng rng(Rng::derive(seed, 10));
  for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng.index(i)]);
  const auto n_val = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(all.size())));

  TrainingSet set;
  set.validation.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_val));
  set.samples.assign(all.begin() + static_cast<std::ptrdiff_t>(n_val), all.end());
  set.box = {field.x_grid_miles.front(), field.x_grid_miles.back(), field.t_grid_hours.front(),
             field.t_grid_hours.back()};
  set.validate();
  return set;
}

Residual physics_residual(const FlowJet& j, const PhysicsOptions& o) {
  Residual r;
  r.continuity = j.h_t + j.h_x * j.u + j.h * j.u_x;
  r.momentum = j.u_t + j.u * j.u_x + kGravity * j.h_x;
  if (o.extended_momentum) {
    r.momentum = r.momentum + kGravity * (o.geometry.friction_slope(j.h, j.u) - o.geometry.bed_slope_S0);
  }
  r.continuity *= o.continuity_scale;
  r.momentum *= o.momentum_scale;
  return r;
}

double data_loss(const FlowModel& model, std::span<const TrainingSample> batch) {
  require(!batch.empty(), "data_loss: empty batch");
  const auto pts = points_of(batch);
  const auto pred = model.predict_batch(pts);
  std::vector<double> terms(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double dh = pred[i].h - batch[i].h_ft;
    const double du = pred[i].u - batch[i].u_fps;
    terms[i] = dh * dh + du * du;
  }
  const double loss = mean_of(terms);
  if (!std::isfinite(loss)) throw TrainingError("data_loss: non-finite prediction");
  return loss;
}

double physics_loss(const FlowModel& model, std::span<const SpaceTime> collocation,
                    const PhysicsOptions& options) {
  require(!collocation.empty(), "physics_loss: empty collocation set");
  const auto jets = model.predict_jets(collocation);
  std::vector<double> terms(jets.size());
  for (std::size_t i = 0; i < jets.size(); ++i) {
    const Residual r = physics_residual(jets[i], options);
    terms[i] = r.continuity * r.continuity + r.momentum * r.momentum;
  }
  const double loss = mean_of(terms);
  if (!std::isfinite(loss)) throw TrainingError("physics_loss: non-finite prediction");
  return loss;
}

double total_loss(const FlowModel& model, std::span<const TrainingSample> batch,
                  std::span<const SpaceTime> collocation, double lambda_physics,
                  const PhysicsOptions& options) {
  require(lambda_physics >= 0.0, "total_loss: lambda must be >= 0");
  const double data = data_loss(model, batch);
  if (lambda_physics == 0.0) return data;
  return combine_losses(data, physics_loss(model, collocation, options), lambda_physics);
}

ad::NodeId record_data_loss(ad::Tape& tape, const SurrogateModel& model,
                            std::span<const TrainingSample> batch) {
  require(!batch.empty(), "data_loss: empty batch");
  const auto pts = points_of(batch);
  const auto out = model.record(tape, pts, false);
  std::vector<double> h(batch.size()), u(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    h[i] = batch[i].h_ft;
    u[i] = batch[i].u_fps;
  }
  const auto th = tape.input(batch.size(), 1, h);
  const auto tu = tape.input(batch.size(), 1, u);
  const auto eh = tape.unary(ad::Op::Square, tape.sub(out.h, th));
  const auto eu = tape.unary(ad::Op::Square, tape.sub(out.u, tu));
  return tape.mean(tape.add(eh, eu));
}

ad::NodeId record_physics_loss(ad::Tape& tape, const SurrogateModel& model,
                               std::span<const SpaceTime> collocation, const PhysicsOptions& o) {
  require(!collocation.empty(), "physics_loss: empty collocation set");
  const auto out = model.record(tape, collocation, true);
  const auto h = tape.value_of(out.h);
  const auto u = tape.value_of(out.u);
  const auto h_x = tape.tangent(out.h, ad::Direction::X);
  const auto h_t = tape.tangent(out.h, ad::Direction::T);
  const auto u_x = tape.tangent(out.u, ad::Direction::X);
  const auto u_t = tape.tangent(out.u, ad::Direction::T);

  auto rc = tape.add(tape.add(h_t, tape.mul(h_x, u)), tape.mul(h, u_x));
  auto rm = tape.add(tape.add(u_t, tape.mul(u, u_x)), tape.scale(h_x, kGravity));
  if (o.extended_momentum) {
    const auto& g = o.geometry;
    // Sf = n^2 u |u| / (2.208 R^(4/3)), R = B h / (B + 2h)
    const auto radius = tape.div(tape.scale(h, g.width_ft), tape.add_const(tape.scale(h, 2.0), g.width_ft));
    const auto num = tape.scale(tape.mul(u, tape.unary(ad::Op::Abs, u)), g.manning_n * g.manning_n);
    const auto sf = tape.div(num, tape.scale(tape.pow_const(radius, 4.0 / 3.0), kManningUS2));
    rm = tape.add(rm, tape.scale(tape.add_const(sf, -g.bed_slope_S0), kGravity));
  }
  if (o.continuity_scale != 1.0) rc = tape.scale(rc, o.continuity_scale);
  if (o.momentum_scale != 1.0) rm = tape.scale(rm, o.momentum_scale);
  return tape.mean(tape.add(tape.unary(ad::Op::Square, rc), tape.unary(ad::Op::Square, rm)));
}

void adam_step(std::span<double> weights, std::span<const double> grads, AdamState& state, double lr) {
  require(weights.size() == grads.size() && state.m.size() == weights.size() &&
              state.v.size() == weights.size(),
          "adam_step: size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw TrainingError("adam_step: non-finite gradient at parameter index " + std::to_string(i));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double g = grads[i];
    state.m[i] = AdamState::kBeta1 * state.m[i] + (1.0 - AdamState::kBeta1) * g;
    state.v[i] = AdamState::kBeta2 * state.v[i] + (1.0 - AdamState::kBeta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    weights[i] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
  }
}

void TrainConfig::validate() const {
  require(lambda_physics >= 0.0 && std::isfinite(lambda_physics), "lambda_physics must be >= 0");
  require(sigma > 0.0 && std::isfinite(sigma), "sigma must be > 0");
  require(batch_size > 0, "batch_size must be > 0");
  require(lr_initial > 0.0, "lr_initial must be > 0");
  require(lr_decay_rate > 0.0 && lr_decay_rate < 1.0, "lr_decay_rate must be in (0, 1)");
  require(lr_decay_every > 0, "lr_decay_every must be > 0");
  require(max_iterations >= 0, "max_iterations must be >= 0");
  require(collocation_points_per_batch > 0, "collocation_points_per_batch must be > 0");
  require(log_every > 0, "log_every must be > 0");
}

double learning_rate(const TrainConfig& c, int iteration) {
  return c.lr_initial *
         std::pow(c.lr_decay_rate, static_cast<double>(iteration) / static_cast<double>(c.lr_decay_every));
}

std::vector<SpaceTime> sample_collocation(Rng& rng, const NormalizationBox& box, std::size_t n) {
  std::vector<SpaceTime> pts(n);
  for (auto& p : pts) {
    p.x_miles = rng.uniform(box.x_min, box.x_max);
    p.t_hours = rng.uniform(box.t_min, box.t_max);
  }
  return pts;
}

SurrogateModel make_initial_model(SurrogateConfig architecture, const TrainingSet& set,
                                  const TrainConfig& config) {
  architecture.sigma = config.sigma;
  architecture.seed = config.seed;
  architecture.box = set.box;
  return SurrogateModel::initialize(architecture, set.prior());
}

TrainResult train(SurrogateModel model, const TrainingSet& set, const RiverScenario& scenario,
                  const TrainConfig& config) {
  config.validate();
  set.validate();
  TrainResult result{model, {}, 0, std::numeric_limits<double>::infinity()};
  const std::span<const TrainingSample> validation =
      set.validation.empty() ? std::span<const TrainingSample>(set.samples) : set.validation;
  if (config.max_iterations == 0) {
    result.best_validation_loss = data_loss(model, validation);
    return result;
  }

  PhysicsOptions physics = config.physics;
  physics.geometry = scenario.geometry;

  Rng batch_rng(Rng::derive(config.seed, 20));
  Rng colloc_rng(Rng::derive(config.seed, 21));
  auto& weights = model.mutable_weights();
  AdamState adam(weights.size());
  ad::Tape tape(weights);
  std::vector<double> grad(weights.size());
  std::vector<TrainingSample> batch(static_cast<std::size_t>(config.batch_size));
  double initial_total = 0.0;

  auto consider = [&](int iteration) {
    const double val = data_loss(model, validation);
    if (val < result.best_validation_loss) {
      result.best_validation_loss = val;
      result.best_iteration = iteration;
      result.model = model;
    }
    return val;
  };

  for (int it = 0; it < config.max_iterations; ++it) {
    const double lr = learning_rate(config, it);
    for (auto& s : batch) s = set.samples[batch_rng.index(set.samples.size())];
    const auto colloc = sample_collocation(colloc_rng, set.box,
                                           static_cast<std::size_t>(config.collocation_points_per_batch));
    tape.reset();
    const auto data_node = record_data_loss(tape, model, batch);
    const double data = tape.scalar(data_node);
    check_finite_loss(data, "data loss", it, result.history);
    double physics_value = 0.0;
    ad::NodeId loss_node = data_node;
    if (config.lambda_physics > 0.0) {
      const auto phys_node = record_physics_loss(tape, model, colloc, physics);
      physics_value = tape.scalar(phys_node);
      check_finite_loss(physics_value, "physics loss", it, result.history);
      loss_node = tape.add(data_node, tape.scale(phys_node, config.lambda_physics));
    }
    const double total = tape.scalar(loss_node);
    if (it == 0) initial_total = total;

    const bool log_now = it % config.log_every == 0;
    if (log_now) {
      // With lambda = 0 the physics term is monitored only, outside the gradient.
      if (config.lambda_physics == 0.0) physics_value = physics_loss(model, colloc, physics);
      LossRecord rec{it, data, physics_value, total, lr, 0.0};
      rec.validation_loss = consider(it);
      result.history.push_back(rec);
    }
    if (!(total <= 1e6 * initial_total)) {
      std::ostringstream os;
      os << "training diverged at iteration " << it << ": total loss " << total
         << " exceeds 1e6 x initial " << initial_total;
      throw DivergenceError(os.str(), result.history);
    }

    std::fill(grad.begin(), grad.end(), 0.0);
    try {
      tape.accumulate_grad(loss_node, grad);
      adam_step(weights, grad, adam, lr);
    } catch (const TrainingError& e) {
      throw DivergenceError(std::string(e.what()) + " at iteration " + std::to_string(it), result.history);
    }
  }
  consider(config.max_iterations);
  return result;
}

double validation_mrae(const SurrogateModel& model, const TrainingSet& set) {
  const auto& v = set.validation.empty() ? set.samples : set.validation;
  std::vector<SpaceTime> pts(v.size());
  std::vector<double> truth(v.size()), pred(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    pts[i] = {v[i].x_miles, v[i].t_hours};
    truth[i] = v[i].h_ft;
  }
  const auto out = model.predict_batch(pts);
  for (std::size_t i = 0; i < v.size(); ++i) pred[i] = out[i].h;
  return mrae(pred, truth);
}

GridSearchResult grid_search(const TrainingSet& set, const RiverScenario& scenario,
                             std::span<const double> lambda_grid, std::span<const double> sigma_grid,
                             int budget_iters, const SurrogateConfig& architecture,
                             const TrainConfig& base) {
  require(!lambda_grid.empty() && !sigma_grid.empty(), "grid_search: grids must be nonempty");
  GridSearchResult out;
  for (double lambda : lambda_grid) {
    for (double sigma : sigma_grid) {
      TrainConfig cfg = base;
      cfg.lambda_physics = lambda;
      cfg.sigma = sigma;
      cfg.max_iterations = budget_iters;
      GridCell cell{lambda, sigma};
      try {
        auto trained = train(make_initial_model(architecture, set, cfg), set, scenario, cfg);
        cell.score = validation_mrae(trained.model, set);
        if (!std::isfinite(cell.score)) cell.score = std::numeric_limits<double>::infinity();
      } catch (const TrainingError&) {
        cell.diverged = true;
      }
      out.table.push_back(cell);
    }
  }
  // Ties go to the smaller sigma, then the smaller lambda.
  const auto best = std::min_element(out.table.begin(), out.table.end(), [](const GridCell& a, const GridCell& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.sigma != b.sigma) return a.sigma < b.sigma;
    return a.lambda_physics < b.lambda_physics;
  });
  out.best_lambda = best->lambda_physics;
  out.best_sigma = best->sigma;
  return out;
}

}  // namespace stagecast
