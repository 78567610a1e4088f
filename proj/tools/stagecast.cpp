#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "stagecast/evaluation.hpp"
#include "stagecast/io.hpp"
#include "stagecast/parallel.hpp"

using namespace stagecast;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kParse = 1, kSolver = 2, kConsistency = 3, kDivergence = 4 };

struct ArchFlags {
  int fourier_rows = 128;
  int width = 512;
  int depth = 6;
  std::string activation = "relu";
  bool no_fourier = false;

  void add(CLI::App* app, bool fourier_switch = true) {
    app->add_option("--fourier-rows", fourier_rows, "Fourier frequency rows m (encoding has 2m features)")
        ->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--width", width, "Hidden width")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--depth", depth, "Residual blocks")->capture_default_str()->check(CLI::NonNegativeNumber);
    app->add_option("--activation", activation, "Hidden activation")
        ->capture_default_str()->check(CLI::IsMember({"relu", "tanh"}));
    if (fourier_switch) app->add_flag("--no-fourier", no_fourier, "Feed normalized (x, t) directly, without Fourier features");
  }

  SurrogateConfig config() const {
    SurrogateConfig c;
    c.fourier_rows = fourier_rows;
    c.width = width;
    c.depth = depth;
    c.activation = activation_from_string(activation);
    c.use_fourier = !no_fourier;
    return c;
  }
};

struct TrainFlags {
  TrainConfig config;
  double residual_scale = 1.0;

  void add(CLI::App* app, bool iterations_flag = true) {
    app->add_option("--lambda", config.lambda_physics, "Physics loss weight (0 disables the physics term)")
        ->capture_default_str()->check(CLI::NonNegativeNumber);
    app->add_option("--sigma", config.sigma, "Fourier frequency standard deviation")
        ->capture_default_str()->check(CLI::PositiveNumber);
    if (iterations_flag) {
      app->add_option("--iterations", config.max_iterations, "Adam iterations")
          ->capture_default_str()->check(CLI::NonNegativeNumber);
    }
    app->add_option("--seed", config.seed, "Seed for initialization, sampling and the validation split")
        ->capture_default_str();
    app->add_option("--batch", config.batch_size, "Supervised samples per iteration")
        ->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--collocation", config.collocation_points_per_batch, "Collocation points per iteration")
        ->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--lr", config.lr_initial, "Initial learning rate")->capture_default_str();
    app->add_option("--decay-rate", config.lr_decay_rate, "Learning-rate decay factor")->capture_default_str();
    app->add_option("--decay-every", config.lr_decay_every, "Iterations per decay factor")->capture_default_str();
    app->add_option("--log-every", config.log_every, "Iterations between history rows and validation checks")
        ->capture_default_str();
    app->add_flag("--extended-momentum", config.physics.extended_momentum,
                  "Add the friction and bed-slope source g(Sf - S0) to the momentum residual");
    app->add_option("--residual-scale", residual_scale,
                    "Multiplier applied to both residuals before squaring")
        ->capture_default_str()->check(CLI::PositiveNumber);
  }

  TrainConfig resolved() const {
    TrainConfig c = config;
    c.physics.continuity_scale = residual_scale;
    c.physics.momentum_scale = residual_scale;
    return c;
  }
};

struct Inputs {
  RiverScenario scenario;
  std::string hash;
};

Inputs read_scenario(const std::string& path) {
  Inputs in;
  in.scenario = io::load_scenario(path);
  in.hash = io::scenario_hash(in.scenario);
  return in;
}

FlowField read_field(const std::string& path, const Inputs& in) {
  auto file = io::load_field(path);
  io::require_hash(file.scenario_hash, in.scenario, "field " + path);
  return std::move(file.field);
}

void save_text(const fs::path& path, const std::string& text) { io::write_file_atomic(path, text); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stagecast: river-stage surrogate pipeline (scenario -> reference field -> surrogate)"};
  app.require_subcommand(1);
  app.footer("Environment: STAGECAST_THREADS caps worker threads (default: available parallelism).\n"
             "Exit codes: 0 ok, 1 parse/usage, 2 solver failure, 3 consistency (hash/datum), 4 divergence.");

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic scenario file");
  std::string gen_kind = "flood", gen_out;
  int gen_stations = 20;
  double gen_peak = 3.0, gen_depth = 10.0, gen_discharge = 11000.0, gen_hours = 36.0, gen_pulse = 3.0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--kind", gen_kind, "flood (Gaussian inflow pulse), still (lake at rest) or uniform (normal depth)")
      ->capture_default_str()->check(CLI::IsMember({"flood", "still", "uniform"}));
  gen->add_option("--stations", gen_stations, "Number of stations, 0.74 mi apart")->capture_default_str();
  gen->add_option("--peak", gen_peak, "Flood peak as a multiple of baseflow")->capture_default_str();
  gen->add_option("--pulse-width", gen_pulse, "Flood pulse standard deviation, hours")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Flood roughness/pulse jitter seed")->capture_default_str();
  gen->add_option("--depth", gen_depth, "Still-water depth, ft")->capture_default_str();
  gen->add_option("--discharge", gen_discharge, "Uniform-flow discharge, cfs")->capture_default_str();
  gen->add_option("--hours", gen_hours, "Simulated duration, hours")->capture_default_str();
  gen->add_option("-o,--out", gen_out, "Scenario file to write")->required();

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run the reference solver and write a field file");
  std::string sim_scenario, sim_out;
  SolverConfig sim_cfg;
  bool sim_no_friction = false, sim_no_slope = false, sim_serial = false;
  sim->add_option("-s,--scenario", sim_scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  sim->add_option("-o,--out", sim_out, "Field file to write")->required();
  sim->add_option("--cells", sim_cfg.n_cells, "Solver cells")->capture_default_str();
  sim->add_option("--cfl", sim_cfg.cfl_number, "CFL number in (0, 1]")->capture_default_str();
  sim->add_flag("--no-friction", sim_no_friction, "Drop the friction source");
  sim->add_flag("--no-bed-slope", sim_no_slope, "Drop the bed-slope source");
  sim->add_flag("--serial", sim_serial, "Use the serial reference kernels");

  // train
  auto* tr = app.add_subcommand("train", "Train a surrogate on a field and write a checkpoint");
  std::string tr_scenario, tr_field, tr_out, tr_history;
  ArchFlags tr_arch;
  TrainFlags tr_flags;
  tr->add_option("-s,--scenario", tr_scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  tr->add_option("-f,--field", tr_field, "Field file produced from the scenario")->required()->check(CLI::ExistingFile);
  tr->add_option("-o,--out", tr_out, "Checkpoint to write")->required();
  tr->add_option("--history", tr_history, "Loss-history CSV (default: <out>.history.csv)");
  tr_arch.add(tr);
  tr_flags.add(tr);

  // mock-checkpoint
  auto* mock = app.add_subcommand("mock-checkpoint", "Write a checkpoint that replays the field by interpolation");
  std::string mock_scenario, mock_field, mock_out;
  mock->add_option("-s,--scenario", mock_scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  mock->add_option("-f,--field", mock_field, "Field file")->required()->check(CLI::ExistingFile);
  mock->add_option("-o,--out", mock_out, "Checkpoint to write")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint against a field");
  std::string ev_scenario, ev_field, ev_ckpt, ev_out, ev_datum = "depth";
  EvalOptions ev_opts;
  ev->add_option("-s,--scenario", ev_scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  ev->add_option("-f,--field", ev_field, "Field file")->required()->check(CLI::ExistingFile);
  ev->add_option("-c,--checkpoint", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("-o,--out", ev_out, "Report directory")->required();
  ev->add_option("--collocation", ev_opts.collocation_points, "Points for the physics residual")->capture_default_str();
  ev->add_option("--seed", ev_opts.seed, "Seed for the residual points")->capture_default_str();
  ev->add_option("--datum", ev_datum, "Stage datum of the report; must match the field")
      ->capture_default_str()->check(CLI::IsMember({"depth", "elevation"}));
  ev->add_flag("--extended-momentum", ev_opts.physics.extended_momentum, "Include g(Sf - S0) in the residual");

  // benchmark
  auto* bm = app.add_subcommand("benchmark", "Time the reference solve against surrogate inference");
  std::string bm_scenario, bm_ckpt, bm_out;
  SolverConfig bm_cfg;
  int bm_reps = 5;
  bm->add_option("-s,--scenario", bm_scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  bm->add_option("-c,--checkpoint", bm_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  bm->add_option("-o,--out", bm_out, "Directory for benchmark.txt and benchmark.json");
  bm->add_option("--reps", bm_reps, "Timed repetitions after one warm-up (>= 3)")->capture_default_str();
  bm->add_option("--cells", bm_cfg.n_cells, "Solver cells")->capture_default_str();

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train base, fourier_only and full at one budget and seed");
  std::string ab_scenario, ab_field, ab_out;
  ArchFlags ab_arch;
  TrainFlags ab_flags;
  int ab_budget = 2000;
  ab->add_option("-s,--scenario", ab_scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  ab->add_option("-f,--field", ab_field, "Field file (solved with default settings when omitted)")
      ->check(CLI::ExistingFile);
  ab->add_option("-o,--out", ab_out, "Output directory")->required();
  ab->add_option("--iterations", ab_budget, "Iterations per configuration")->capture_default_str();
  ab_arch.add(ab, false);
  ab_flags.add(ab, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kParse;
  }

  try {
    if (*gen) {
      RiverScenario s;
      if (gen_kind == "flood") {
        FloodWaveOptions opt;
        opt.t_total_hours = gen_hours;
        opt.pulse_width_hours = gen_pulse;
        s = make_flood_wave_scenario(gen_stations, gen_peak, gen_seed, opt);
      } else if (gen_kind == "still") {
        s = make_still_water_scenario(gen_stations, gen_depth, gen_hours);
      } else {
        s = make_uniform_flow_scenario(gen_stations, gen_discharge, gen_hours);
      }
      io::save_scenario(gen_out, s);
      std::cout << "wrote " << gen_out << " (hash " << io::scenario_hash(s) << ")\n";
    } else if (*sim) {
      const auto in = read_scenario(sim_scenario);
      sim_cfg.include_friction = !sim_no_friction;
      sim_cfg.include_bed_slope = !sim_no_slope;
      sim_cfg.exec = sim_serial ? Exec::Serial : Exec::Parallel;
      sim_cfg.validate();
      const auto field = solve(in.scenario, sim_cfg);
      io::save_field(sim_out, field, in.hash);
      std::printf("mass_balance_error %.6e\nwall_clock_seconds %.6f\nthreads %d\n",
                  check_mass_balance(field, in.scenario), field.wall_clock_seconds, worker_count());
    } else if (*tr) {
      const auto in = read_scenario(tr_scenario);
      const auto field = read_field(tr_field, in);
      const auto cfg = tr_flags.resolved();
      cfg.validate();
      const auto set = make_training_set(field, 0.1, cfg.seed);
      const std::string history_path = tr_history.empty() ? tr_out + ".history.csv" : tr_history;
      try {
        auto result = train(make_initial_model(tr_arch.config(), set, cfg), set, in.scenario, cfg);
        io::Checkpoint c;
        c.scenario_hash = in.hash;
        c.surrogate = std::move(result.model);
        io::save_checkpoint(tr_out, c);
        save_text(history_path, io::history_csv(result.history));
        std::printf("best_iteration %d\nbest_validation_loss %.6e\nvalidation_mrae %.6e\n", result.best_iteration,
                    result.best_validation_loss, validation_mrae(*c.surrogate, set));
      } catch (const DivergenceError& e) {
        save_text(history_path, io::history_csv(e.history()));
        std::cerr << "diverged: " << e.what() << " (partial history in " << history_path << ")\n";
        return kDivergence;
      }
    } else if (*mock) {
      const auto in = read_scenario(mock_scenario);
      io::Checkpoint c;
      c.kind = io::CheckpointKind::Interpolant;
      c.scenario_hash = in.hash;
      c.field = read_field(mock_field, in);
      io::save_checkpoint(mock_out, c);
    } else if (*ev) {
      const auto in = read_scenario(ev_scenario);
      const auto field = read_field(ev_field, in);
      const auto ckpt = io::load_checkpoint(ev_ckpt);
      io::require_hash(ckpt.scenario_hash, in.scenario, "checkpoint " + ev_ckpt);
      ev_opts.datum = datum_from_string(ev_datum);
      const auto model = ckpt.make_model();
      const auto report = evaluate(*model, field, in.scenario, ev_opts);
      const fs::path dir = ev_out;
      save_text(dir / "report.json", io::report_json(report, in.hash, ev_opts.seed));
      save_text(dir / "timing.json", io::timing_json(report));
      save_text(dir / "stations.csv", io::station_csv(report));
      save_text(dir / "histogram.csv", io::histogram_csv(histogram(report.per_station_mrae)));
      std::printf("overall_mrae %.6e\nphysics_residual %.6e\nspeedup %s\n", report.overall_mrae,
                  report.physics_residual, io::format_sig3(report.speedup).c_str());
    } else if (*bm) {
      const auto in = read_scenario(bm_scenario);
      const auto ckpt = io::load_checkpoint(bm_ckpt);
      io::require_hash(ckpt.scenario_hash, in.scenario, "checkpoint " + bm_ckpt);
      const auto model = ckpt.make_model();
      const auto result = benchmark(*model, in.scenario, bm_cfg, bm_reps);
      const auto table = io::benchmark_table(result);
      std::cout << table;
      if (!bm_out.empty()) {
        save_text(fs::path(bm_out) / "benchmark.txt", table);
        save_text(fs::path(bm_out) / "benchmark.json", io::benchmark_json(result));
      }
    } else if (*ab) {
      const auto in = read_scenario(ab_scenario);
      const auto field = ab_field.empty() ? solve(in.scenario, SolverConfig{}) : read_field(ab_field, in);
      const auto cfg = ab_flags.resolved();
      cfg.validate();
      const auto result = run_ablation(in.scenario, field, ab_budget, cfg.seed, ab_arch.config(), cfg);
      io::write_ablation(ab_out, result, in.hash);
      for (const auto& run : result.runs) {
        if (run.diverged) {
          std::printf("%-13s diverged: %s\n", run.name.c_str(), run.error.c_str());
        } else {
          std::printf("%-13s data_loss %.6e  physics_residual %.6e  mrae %.6e\n", run.name.c_str(),
                      run.training_data_loss, run.report.physics_residual, run.report.overall_mrae);
        }
      }
      for (const auto& run : result.runs) {
        if (run.diverged) return kDivergence;
      }
    }
  } catch (const io::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kParse;
  } catch (const SolverError& e) {
    std::cerr << "solver failure in phase '" << e.phase() << "': " << e.what() << "\n";
    return kSolver;
  } catch (const io::HashMismatch& e) {
    std::cerr << "consistency error: " << e.what() << "\n";
    return kConsistency;
  } catch (const DatumMismatch& e) {
    std::cerr << "consistency error: " << e.what() << "\n";
    return kConsistency;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kParse;
  }
  return kOk;
}
