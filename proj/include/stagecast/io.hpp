#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stagecast/evaluation.hpp"
#include "stagecast/geometry.hpp"
#include "stagecast/reference_solver.hpp"
#include "stagecast/surrogate.hpp"
#include "stagecast/training.hpp"

namespace stagecast::io {

/// Malformed file content. line() is 1-based, 0 when no single line is to blame.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, int line, const std::string& detail);
  int line() const { return line_; }

 private:
  int line_;
};

/// Stored artifact belongs to a different scenario.
class HashMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest text that parses back to the same double.
std::string format_double(double value);
double parse_double(std::string_view text);

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

// Scenario: [geometry], [boundaries], [stations], [run]; series as csv blocks.
std::string serialize_scenario(const RiverScenario& scenario);
RiverScenario parse_scenario(std::string_view text, const std::string& source = "<scenario>");
RiverScenario load_scenario(const std::filesystem::path& path);
void save_scenario(const std::filesystem::path& path, const RiverScenario& scenario);

/// 64-bit FNV-1a of the canonical serialization, as 16 lowercase hex digits.
std::string scenario_hash(const RiverScenario& scenario);
std::uint64_t fnv1a64(std::string_view bytes);

struct FieldFile {
  FlowField field;
  std::string scenario_hash;
};

std::string serialize_field(const FlowField& field, const std::string& scenario_hash);
FieldFile parse_field(std::string_view text, const std::string& source = "<field>");
FieldFile load_field(const std::filesystem::path& path);
void save_field(const std::filesystem::path& path, const FlowField& field,
                const std::string& scenario_hash);

/// Throws HashMismatch unless `stored` equals the hash of `scenario`.
void require_hash(const std::string& stored, const RiverScenario& scenario, const std::string& what);

enum class CheckpointKind { Surrogate, Interpolant };

/**
 * Binary checkpoint: a text header ending in "end\n", then little-endian
 * f64 payload. Surrogate payload is B followed by the weights in manifest
 * order; interpolant payload is x grid, t grid, h, u.
 */
struct Checkpoint {
  CheckpointKind kind = CheckpointKind::Surrogate;
  std::string scenario_hash;
  std::optional<SurrogateModel> surrogate;
  std::optional<FlowField> field;

  std::unique_ptr<FlowModel> make_model() const;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes, const std::string& source = "<checkpoint>");
Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

std::string history_csv(const std::vector<LossRecord>& history);
std::vector<LossRecord> parse_history_csv(std::string_view text);

/// Deterministic metrics only; timings go through timing_json.
std::string report_json(const EvalReport& report, const std::string& scenario_hash,
                        std::uint64_t seed);
std::string timing_json(const EvalReport& report);
std::string station_csv(const EvalReport& report);
std::string histogram_csv(const Histogram& histogram);
std::string benchmark_json(const BenchmarkResult& result);
/// Aligned text table with the speedup to 3 significant figures.
std::string benchmark_table(const BenchmarkResult& result);
std::string format_sig3(double value);

/**
 * One directory per ablation configuration (report, timing, history,
 * station errors, histogram, curve, checkpoint when trained) plus a combined
 * curves.csv and summary.json at `dir`.
 */
void write_ablation(const std::filesystem::path& dir, const AblationResult& result,
                    const std::string& scenario_hash);

}  // namespace stagecast::io
