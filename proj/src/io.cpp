#include "stagecast/io.hpp"

#include <unistd.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

#include "json.hpp"

namespace stagecast::io {

namespace fs = std::filesystem;

ParseError::ParseError(const std::string& source, int line, const std::string& detail)
    : std::runtime_error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + detail),
      line_(line) {}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last) {
    throw std::invalid_argument("not a number: '" + std::string(text) + "'");
  }
  return value;
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("rename to " + path.string() + " failed: " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

struct Line {
  int number;
  std::string_view text;
};

/// Non-blank, non-comment lines with their 1-based numbers.
std::vector<Line> content_lines(std::string_view text) {
  std::vector<Line> lines;
  int number = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = text.find('\n', start);
    const auto raw = text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    ++number;
    const auto t = trim(raw);
    if (!t.empty() && t.front() != '#') lines.push_back({number, t});
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return lines;
}

class Reader {
 public:
  Reader(std::string_view text, std::string source) : lines_(content_lines(text)), source_(std::move(source)) {}

  bool done() const { return pos_ >= lines_.size(); }
  const Line& peek() const { return lines_[pos_]; }
  const Line& next() {
    if (done()) fail(0, "unexpected end of file");
    return lines_[pos_++];
  }
  [[noreturn]] void fail(int line, const std::string& what) const { throw ParseError(source_, line, what); }
  const std::string& source() const { return source_; }

  double number(const Line& line, std::string_view text) const {
    try {
      return parse_double(text);
    } catch (const std::invalid_argument& e) {
      fail(line.number, e.what());
    }
  }

  /// Rows of a csv block up to "end", with the header checked against `columns`.
  /// Without `terminated`, rows run to the end of the file.
  std::vector<std::vector<double>> csv_block(const std::vector<std::string>& columns, bool terminated = true) {
    const Line& header = next();
    const auto names = split(header.text, ',');
    if (names.size() != columns.size() ||
        !std::equal(names.begin(), names.end(), columns.begin())) {
      std::string expected;
      for (const auto& c : columns) expected += (expected.empty() ? "" : ",") + c;
      fail(header.number, "expected csv header '" + expected + "'");
    }
    std::vector<std::vector<double>> rows;
    while (terminated || !done()) {
      const Line& line = next();
      if (terminated && line.text == "end") break;
      const auto cells = split(line.text, ',');
      if (cells.size() != columns.size()) {
        fail(line.number, "expected " + std::to_string(columns.size()) + " columns, got " +
                              std::to_string(cells.size()));
      }
      std::vector<double> row;
      for (auto c : cells) row.push_back(number(line, c));
      rows.push_back(std::move(row));
    }
    return rows;
  }

 private:
  std::vector<Line> lines_;
  std::size_t pos_ = 0;
  std::string source_;
};

std::pair<std::string_view, std::string_view> key_value(const Reader& r, const Line& line) {
  const auto eq = line.text.find('=');
  if (eq == std::string_view::npos) r.fail(line.number, "expected 'key = value', got '" + std::string(line.text) + "'");
  const auto key = trim(line.text.substr(0, eq));
  const auto value = trim(line.text.substr(eq + 1));
  if (key.empty()) r.fail(line.number, "empty key");
  return {key, value};
}

void put(std::string& out, const std::string& key, double value) {
  out += key + " = " + format_double(value) + "\n";
}

void put_series(std::string& out, const std::string& key, const TimeSeries& series) {
  out += key + " = csv\nt_hours,value\n";
  for (const auto& p : series) out += format_double(p.t_hours) + "," + format_double(p.value) + "\n";
  out += "end\n";
}

enum class Slot { Scalar, Series, List };

struct KeySpec {
  const char* section;
  const char* key;
  Slot slot;
};

constexpr KeySpec kScenarioKeys[] = {
    {"geometry", "length_miles", Slot::Scalar},
    {"geometry", "bed_elevation_upstream_ft", Slot::Scalar},
    {"geometry", "bed_slope_S0", Slot::Scalar},
    {"geometry", "width_ft", Slot::Scalar},
    {"geometry", "manning_n", Slot::Scalar},
    {"boundaries", "initial_depth_ft", Slot::Scalar},
    {"boundaries", "initial_velocity_fps", Slot::Scalar},
    {"boundaries", "upstream_discharge", Slot::Series},
    {"boundaries", "downstream_stage", Slot::Series},
    {"stations", "station_positions_miles", Slot::List},
    {"run", "t_total_hours", Slot::Scalar},
    {"run", "output_dt_hours", Slot::Scalar},
};

double* scalar_slot(RiverScenario& s, std::string_view key) {
  if (key == "length_miles") return &s.geometry.length_miles;
  if (key == "bed_elevation_upstream_ft") return &s.geometry.bed_elevation_upstream_ft;
  if (key == "bed_slope_S0") return &s.geometry.bed_slope_S0;
  if (key == "width_ft") return &s.geometry.width_ft;
  if (key == "manning_n") return &s.geometry.manning_n;
  if (key == "initial_depth_ft") return &s.boundaries.initial_depth_ft;
  if (key == "initial_velocity_fps") return &s.boundaries.initial_velocity_fps;
  if (key == "t_total_hours") return &s.t_total_hours;
  if (key == "output_dt_hours") return &s.output_dt_hours;
  return nullptr;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  static constexpr char kDigits[] = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = kDigits[v & 0xF];
    v >>= 4;
  }
  buf[16] = '\0';
  return buf;
}

}  // namespace

std::string serialize_scenario(const RiverScenario& s) {
  std::string out = "# stagecast scenario\n[geometry]\n";
  put(out, "length_miles", s.geometry.length_miles);
  put(out, "bed_elevation_upstream_ft", s.geometry.bed_elevation_upstream_ft);
  put(out, "bed_slope_S0", s.geometry.bed_slope_S0);
  put(out, "width_ft", s.geometry.width_ft);
  put(out, "manning_n", s.geometry.manning_n);
  out += "\n[boundaries]\n";
  put(out, "initial_depth_ft", s.boundaries.initial_depth_ft);
  put(out, "initial_velocity_fps", s.boundaries.initial_velocity_fps);
  put_series(out, "upstream_discharge", s.boundaries.upstream_discharge);
  put_series(out, "downstream_stage", s.boundaries.downstream_stage);
  out += "\n[stations]\nstation_positions_miles = csv\nx_miles\n";
  for (double x : s.station_positions_miles) out += format_double(x) + "\n";
  out += "end\n\n[run]\n";
  put(out, "t_total_hours", s.t_total_hours);
  put(out, "output_dt_hours", s.output_dt_hours);
  return out;
}

RiverScenario parse_scenario(std::string_view text, const std::string& source) {
  Reader r(text, source);
  RiverScenario s;
  std::string section;
  std::set<std::string> seen_sections;
  std::set<std::string> seen_keys;
  int last_line = 0;

  while (!r.done()) {
    const Line& line = r.next();
    last_line = line.number;
    if (line.text.front() == '[') {
      if (line.text.back() != ']') r.fail(line.number, "malformed section header");
      section = std::string(trim(line.text.substr(1, line.text.size() - 2)));
      const bool known = section == "geometry" || section == "boundaries" || section == "stations" || section == "run";
      if (!known) r.fail(line.number, "unknown section [" + section + "]");
      if (!seen_sections.insert(section).second) r.fail(line.number, "duplicate section [" + section + "]");
      continue;
    }
    if (section.empty()) r.fail(line.number, "key outside of any section");
    const auto [key, value] = key_value(r, line);
    const KeySpec* entry = nullptr;
    for (const auto& k : kScenarioKeys) {
      if (k.section == section && k.key == key) entry = &k;
    }
    if (!entry) r.fail(line.number, "unknown key '" + std::string(key) + "' in [" + section + "]");
    if (!seen_keys.insert(std::string(key)).second) r.fail(line.number, "duplicate key '" + std::string(key) + "'");

    switch (entry->slot) {
      case Slot::Scalar:
        *scalar_slot(s, key) = r.number(line, value);
        break;
      case Slot::Series: {
        if (value != "csv") r.fail(line.number, "expected 'csv' for series '" + std::string(key) + "'");
        TimeSeries series;
        for (const auto& row : r.csv_block({"t_hours", "value"})) series.push_back({row[0], row[1]});
        (key == "upstream_discharge" ? s.boundaries.upstream_discharge : s.boundaries.downstream_stage) =
            std::move(series);
        break;
      }
      case Slot::List: {
        if (value != "csv") r.fail(line.number, "expected 'csv' for '" + std::string(key) + "'");
        for (const auto& row : r.csv_block({"x_miles"})) s.station_positions_miles.push_back(row[0]);
        break;
      }
    }
  }

  for (const auto& k : kScenarioKeys) {
    if (!seen_keys.count(k.key)) {
      r.fail(last_line, std::string("missing key '") + k.key + "' in [" + k.section + "]");
    }
  }
  try {
    s.validate();
  } catch (const ScenarioError& e) {
    r.fail(0, std::string("invalid scenario: ") + e.what());
  }
  return s;
}

RiverScenario load_scenario(const fs::path& path) { return parse_scenario(read_file(path), path.string()); }

void save_scenario(const fs::path& path, const RiverScenario& scenario) {
  write_file_atomic(path, serialize_scenario(scenario));
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string scenario_hash(const RiverScenario& scenario) { return hex64(fnv1a64(serialize_scenario(scenario))); }

void require_hash(const std::string& stored, const RiverScenario& scenario, const std::string& what) {
  const auto expected = scenario_hash(scenario);
  if (stored != expected) {
    throw HashMismatch(what + " was produced for scenario " + stored + ", not " + expected);
  }
}

// ---------------------------------------------------------------- fields

std::string serialize_field(const FlowField& f, const std::string& hash) {
  std::string out = "# stagecast field\n";
  out += "n_t = " + std::to_string(f.n_t()) + "\n";
  out += "n_x = " + std::to_string(f.n_x()) + "\n";
  out += "units = hours,miles,ft,ft/s\n";
  out += std::string("datum = ") + to_string(f.datum) + "\n";
  out += "scenario_hash = " + hash + "\n";
  put(out, "wall_clock_seconds", f.wall_clock_seconds);
  out += "t_hours,x_miles,h,u\n";
  for (std::size_t it = 0; it < f.n_t(); ++it) {
    for (std::size_t ix = 0; ix < f.n_x(); ++ix) {
      out += format_double(f.t_grid_hours[it]) + "," + format_double(f.x_grid_miles[ix]) + "," +
             format_double(f.h_at(it, ix)) + "," + format_double(f.u_at(it, ix)) + "\n";
    }
  }
  return out;
}

FieldFile parse_field(std::string_view text, const std::string& source) {
  if (text.empty() || text.back() != '\n') throw ParseError(source, 0, "truncated: missing final newline");
  Reader r(text, source);
  FieldFile file;
  FlowField& f = file.field;
  std::map<std::string, std::string> header;
  static const std::set<std::string> kHeaderKeys = {"n_t", "n_x", "units", "datum", "scenario_hash",
                                                    "wall_clock_seconds"};
  int line_no = 0;
  while (!r.done() && r.peek().text.find('=') != std::string_view::npos) {
    const Line& line = r.next();
    line_no = line.number;
    const auto [key, value] = key_value(r, line);
    if (!kHeaderKeys.count(std::string(key))) r.fail(line.number, "unknown key '" + std::string(key) + "'");
    if (!header.emplace(key, value).second) r.fail(line.number, "duplicate key '" + std::string(key) + "'");
  }
  for (const auto& k : kHeaderKeys) {
    if (!header.count(k)) r.fail(line_no, "missing key '" + k + "'");
  }
  auto count = [&](const std::string& key) {
    const auto& v = header[key];
    std::size_t n = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || ptr != v.data() + v.size() || n == 0) r.fail(0, key + " must be a positive integer");
    return n;
  };
  const std::size_t n_t = count("n_t");
  const std::size_t n_x = count("n_x");
  if (header["units"] != "hours,miles,ft,ft/s") r.fail(0, "unsupported units '" + header["units"] + "'");
  try {
    f.datum = datum_from_string(header["datum"]);
    f.wall_clock_seconds = parse_double(header["wall_clock_seconds"]);
  } catch (const std::exception& e) {
    r.fail(0, e.what());
  }
  file.scenario_hash = header["scenario_hash"];

  const auto rows = r.csv_block({"t_hours", "x_miles", "h", "u"}, false);
  if (rows.size() != n_t * n_x) {
    r.fail(0, "expected " + std::to_string(n_t * n_x) + " rows, got " + std::to_string(rows.size()));
  }
  f.t_grid_hours.resize(n_t);
  f.x_grid_miles.resize(n_x);
  f.h.resize(n_t * n_x);
  f.u.resize(n_t * n_x);
  for (std::size_t it = 0; it < n_t; ++it) {
    for (std::size_t ix = 0; ix < n_x; ++ix) {
      const auto& row = rows[it * n_x + ix];
      if (ix == 0) f.t_grid_hours[it] = row[0];
      if (it == 0) f.x_grid_miles[ix] = row[1];
      if (row[0] != f.t_grid_hours[it] || row[1] != f.x_grid_miles[ix]) {
        r.fail(0, "row " + std::to_string(it * n_x + ix + 1) + " breaks the time-major grid layout");
      }
      f.h[it * n_x + ix] = row[2];
      f.u[it * n_x + ix] = row[3];
    }
  }
  try {
    f.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(0, std::string("invalid field: ") + e.what());
  }
  return file;
}

FieldFile load_field(const fs::path& path) { return parse_field(read_file(path), path.string()); }

void save_field(const fs::path& path, const FlowField& field, const std::string& hash) {
  write_file_atomic(path, serialize_field(field, hash));
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr std::string_view kCheckpointMagic = "STAGECAST-CHECKPOINT 1\n";

void append_f64(std::string& out, std::span<const double> values) {
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      out.push_back(static_cast<char>(bits & 0xFF));
      bits >>= 8;
    }
  }
}

class PayloadReader {
 public:
  PayloadReader(std::string_view bytes, const Reader& r) : bytes_(bytes), r_(r) {}
  std::vector<double> take(std::size_t n) {
    if ((bytes_.size() - pos_) / 8 < n) r_.fail(0, "payload truncated");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 7; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(bytes_[pos_ + b]);
      values[i] = std::bit_cast<double>(bits);
      pos_ += 8;
    }
    return values;
  }
  void finish() const {
    if (pos_ != bytes_.size()) r_.fail(0, "trailing bytes after payload");
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  const Reader& r_;
};

}  // namespace

std::unique_ptr<FlowModel> Checkpoint::make_model() const {
  if (kind == CheckpointKind::Surrogate) {
    if (!surrogate) throw std::logic_error("surrogate checkpoint without a model");
    return std::make_unique<SurrogateModel>(*surrogate);
  }
  if (!field) throw std::logic_error("interpolant checkpoint without a field");
  return std::make_unique<FieldInterpolant>(*field);
}

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kCheckpointMagic);
  out += std::string("kind = ") + (c.kind == CheckpointKind::Surrogate ? "surrogate" : "interpolant") + "\n";
  out += "scenario_hash = " + c.scenario_hash + "\n";
  std::string payload;
  if (c.kind == CheckpointKind::Surrogate) {
    if (!c.surrogate) throw std::logic_error("surrogate checkpoint without a model");
    const auto& m = *c.surrogate;
    const auto& a = m.config();
    out += "fourier_rows = " + std::to_string(a.fourier_rows) + "\n";
    put(out, "sigma", a.sigma);
    out += std::string("use_fourier = ") + (a.use_fourier ? "1" : "0") + "\n";
    out += "width = " + std::to_string(a.width) + "\n";
    out += "depth = " + std::to_string(a.depth) + "\n";
    out += std::string("activation = ") + to_string(a.activation) + "\n";
    put(out, "x_min", a.box.x_min);
    put(out, "x_max", a.box.x_max);
    put(out, "t_min", a.box.t_min);
    put(out, "t_max", a.box.t_max);
    out += "seed = " + std::to_string(a.seed) + "\n";
    put(out, "encoder_sigma", m.encoder().sigma());
    out += "n_frequencies = " + std::to_string(m.encoder().frequencies().size()) + "\n";
    out += "n_weights = " + std::to_string(m.weights().size()) + "\n";
    append_f64(payload, m.encoder().frequencies());
    append_f64(payload, m.weights());
  } else {
    if (!c.field) throw std::logic_error("interpolant checkpoint without a field");
    const auto& f = *c.field;
    out += "n_t = " + std::to_string(f.n_t()) + "\n";
    out += "n_x = " + std::to_string(f.n_x()) + "\n";
    out += std::string("datum = ") + to_string(f.datum) + "\n";
    put(out, "wall_clock_seconds", f.wall_clock_seconds);
    append_f64(payload, f.x_grid_miles);
    append_f64(payload, f.t_grid_hours);
    append_f64(payload, f.h);
    append_f64(payload, f.u);
  }
  out += "end\n";
  return out + payload;
}

Checkpoint parse_checkpoint(std::string_view bytes, const std::string& source) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw ParseError(source, 1, "not a stagecast checkpoint");
  }
  const auto end = bytes.find("\nend\n");
  if (end == std::string_view::npos) throw ParseError(source, 0, "checkpoint header has no 'end' line");
  const auto header_text = bytes.substr(0, end + 1);
  Reader r(header_text, source);
  r.next();  // magic
  std::map<std::string, std::pair<std::string, int>> header;
  while (!r.done()) {
    const Line& line = r.next();
    const auto [key, value] = key_value(r, line);
    if (!header.emplace(key, std::make_pair(std::string(value), line.number)).second) {
      r.fail(line.number, "duplicate key '" + std::string(key) + "'");
    }
  }
  std::set<std::string> used;
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = header.find(key);
    if (it == header.end()) r.fail(0, "missing key '" + key + "'");
    used.insert(key);
    return it->second.first;
  };
  auto line_of = [&](const std::string& key) { return header.at(key).second; };
  auto integer = [&](const std::string& key) {
    const auto& v = get(key);
    long long n = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || ptr != v.data() + v.size() || n < 0) r.fail(line_of(key), key + " must be a non-negative integer");
    return static_cast<std::uint64_t>(n);
  };
  auto real = [&](const std::string& key) {
    const auto& text = get(key);
    return r.number(Line{line_of(key), {}}, text);
  };

  Checkpoint c;
  const auto& kind = get("kind");
  c.scenario_hash = get("scenario_hash");
  PayloadReader payload(bytes.substr(end + 5), r);
  if (kind == "surrogate") {
    c.kind = CheckpointKind::Surrogate;
    SurrogateConfig a;
    a.fourier_rows = static_cast<int>(integer("fourier_rows"));
    a.sigma = real("sigma");
    const auto& uf = get("use_fourier");
    if (uf != "0" && uf != "1") r.fail(line_of("use_fourier"), "use_fourier must be 0 or 1");
    a.use_fourier = uf == "1";
    a.width = static_cast<int>(integer("width"));
    a.depth = static_cast<int>(integer("depth"));
    try {
      a.activation = activation_from_string(get("activation"));
    } catch (const std::invalid_argument& e) {
      r.fail(line_of("activation"), e.what());
    }
    a.box = {real("x_min"), real("x_max"), real("t_min"), real("t_max")};
    a.seed = integer("seed");
    const double encoder_sigma = real("encoder_sigma");
    const auto n_freq = integer("n_frequencies");
    const auto n_weights = integer("n_weights");
    auto freqs = payload.take(n_freq);
    auto weights = payload.take(n_weights);
    payload.finish();
    try {
      c.surrogate.emplace(a, FourierEncoder(encoder_sigma, std::move(freqs)), std::move(weights));
    } catch (const std::invalid_argument& e) {
      r.fail(0, std::string("invalid model: ") + e.what());
    }
  } else if (kind == "interpolant") {
    c.kind = CheckpointKind::Interpolant;
    FlowField f;
    const auto n_t = integer("n_t");
    const auto n_x = integer("n_x");
    try {
      f.datum = datum_from_string(get("datum"));
    } catch (const std::invalid_argument& e) {
      r.fail(line_of("datum"), e.what());
    }
    f.wall_clock_seconds = real("wall_clock_seconds");
    f.x_grid_miles = payload.take(n_x);
    f.t_grid_hours = payload.take(n_t);
    f.h = payload.take(n_t * n_x);
    f.u = payload.take(n_t * n_x);
    payload.finish();
    try {
      f.validate();
    } catch (const std::invalid_argument& e) {
      r.fail(0, std::string("invalid field: ") + e.what());
    }
    c.field = std::move(f);
  } else {
    r.fail(line_of("kind"), "unknown checkpoint kind '" + kind + "'");
  }
  for (const auto& [key, value] : header) {
    if (!used.count(key)) r.fail(value.second, "unknown key '" + key + "'");
  }
  return c;
}

Checkpoint load_checkpoint(const fs::path& path) { return parse_checkpoint(read_file(path), path.string()); }

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

// ---------------------------------------------------------------- reports

std::string history_csv(const std::vector<LossRecord>& history) {
  std::string out = "iteration,data_loss,physics_loss,total_loss,lr,validation_loss\n";
  for (const auto& h : history) {
    out += std::to_string(h.iteration) + "," + format_double(h.data_loss) + "," + format_double(h.physics_loss) +
           "," + format_double(h.total_loss) + "," + format_double(h.lr) + "," + format_double(h.validation_loss) +
           "\n";
  }
  return out;
}

std::vector<LossRecord> parse_history_csv(std::string_view text) {
  Reader r(text, "<history>");
  std::vector<LossRecord> history;
  for (const auto& row : r.csv_block({"iteration", "data_loss", "physics_loss", "total_loss", "lr", "validation_loss"},
                                     false)) {
    history.push_back({static_cast<int>(row[0]), row[1], row[2], row[3], row[4], row[5]});
  }
  return history;
}

namespace {

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string report_json(const EvalReport& report, const std::string& hash, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["scenario_hash"] = hash;
  j["seed"] = seed;
  j["datum"] = to_string(report.datum);
  j["overall_mrae"] = finite_or_null(report.overall_mrae);
  j["physics_residual"] = finite_or_null(report.physics_residual);
  j["n_eval_points"] = report.n_eval_points;
  j["n_clamped"] = report.n_clamped;
  auto& stations = j["stations"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < report.per_station_mrae.size(); ++i) {
    stations.push_back({{"x_miles", report.station_positions_miles[i]},
                        {"mrae", finite_or_null(report.per_station_mrae[i])}});
  }
  return j.dump(2) + "\n";
}

std::string timing_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["solver_seconds"] = report.solver_seconds;
  j["surrogate_seconds"] = report.surrogate_seconds;
  j["speedup"] = finite_or_null(report.speedup);
  return j.dump(2) + "\n";
}

std::string station_csv(const EvalReport& report) {
  std::string out = "x_miles,mrae\n";
  for (std::size_t i = 0; i < report.per_station_mrae.size(); ++i) {
    out += format_double(report.station_positions_miles[i]) + "," + format_double(report.per_station_mrae[i]) + "\n";
  }
  return out;
}

std::string histogram_csv(const Histogram& h) {
  std::string out = "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out += format_double(h.edges[i]) + "," + format_double(h.edges[i + 1]) + "," + std::to_string(h.counts[i]) + "\n";
  }
  return out;
}

std::string format_sig3(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", value);
  return buf;
}

std::string benchmark_json(const BenchmarkResult& b) {
  nlohmann::ordered_json j;
  j["n_cells"] = b.n_cells;
  j["n_points"] = b.n_points;
  j["solver_seconds_median"] = b.solver_seconds;
  j["surrogate_seconds_median"] = b.surrogate_seconds;
  j["speedup"] = finite_or_null(b.speedup);
  j["solver_runs"] = b.solver_runs;
  j["surrogate_runs"] = b.surrogate_runs;
  return j.dump(2) + "\n";
}

std::string benchmark_table(const BenchmarkResult& b) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %14s\n", "stage", "median (s)");
  os << line;
  std::snprintf(line, sizeof line, "%-28s %14.6f\n", "reference solve", b.solver_seconds);
  os << line;
  std::snprintf(line, sizeof line, "%-28s %14.6f\n", "surrogate inference", b.surrogate_seconds);
  os << line;
  os << "grid points: " << b.n_points << ", solver cells: " << b.n_cells << ", runs: " << b.solver_runs.size()
     << "\n";
  os << "speedup: " << format_sig3(b.speedup) << "x\n";
  return os.str();
}

void write_ablation(const fs::path& dir, const AblationResult& result, const std::string& hash) {
  std::string curves = "t_hours,truth";
  for (const auto& run : result.runs) curves += "," + run.name;
  curves += "\n";
  for (std::size_t k = 0; k < result.curve_times_hours.size(); ++k) {
    curves += format_double(result.curve_times_hours[k]) + "," + format_double(result.curve_truth[k]);
    for (const auto& run : result.runs) {
      curves += ",";
      if (k < run.curve_predicted.size()) curves += format_double(run.curve_predicted[k]);
    }
    curves += "\n";
  }

  nlohmann::ordered_json summary;
  summary["scenario_hash"] = hash;
  summary["seed"] = result.seed;
  summary["budget_iters"] = result.budget_iters;
  summary["curve_station"] = result.curve_station;
  auto& runs = summary["runs"] = nlohmann::ordered_json::array();

  for (const auto& run : result.runs) {
    const fs::path sub = dir / run.name;
    nlohmann::ordered_json meta;
    meta["name"] = run.name;
    meta["seed"] = result.seed;
    meta["budget_iters"] = result.budget_iters;
    meta["use_fourier"] = run.architecture.use_fourier;
    meta["sigma"] = run.train.sigma;
    meta["lambda_physics"] = run.train.lambda_physics;
    meta["diverged"] = run.diverged;
    meta["error"] = run.error;
    meta["training_data_loss"] = finite_or_null(run.training_data_loss);
    meta["overall_mrae"] = finite_or_null(run.report.overall_mrae);
    meta["physics_residual"] = finite_or_null(run.report.physics_residual);
    write_file_atomic(sub / "run.json", meta.dump(2) + "\n");
    write_file_atomic(sub / "history.csv", history_csv(run.history));
    if (run.model) {
      write_file_atomic(sub / "report.json", report_json(run.report, hash, result.seed));
      write_file_atomic(sub / "timing.json", timing_json(run.report));
      write_file_atomic(sub / "stations.csv", station_csv(run.report));
      write_file_atomic(sub / "histogram.csv", histogram_csv(histogram(run.report.per_station_mrae)));
      std::string curve = "t_hours,truth,predicted\n";
      for (std::size_t k = 0; k < result.curve_times_hours.size() && k < run.curve_predicted.size(); ++k) {
        curve += format_double(result.curve_times_hours[k]) + "," + format_double(result.curve_truth[k]) + "," +
                 format_double(run.curve_predicted[k]) + "\n";
      }
      write_file_atomic(sub / "curve.csv", curve);
      Checkpoint c;
      c.scenario_hash = hash;
      c.surrogate = *run.model;
      save_checkpoint(sub / "checkpoint.bin", c);
    }
    runs.push_back(meta);
  }
  bool ok = true;
  for (const auto& run : result.runs) ok = ok && !run.diverged;
  if (ok && result.runs.size() == 3) {
    summary["fourier_beats_base"] = result.fourier_beats_base();
    summary["physics_ratio"] = finite_or_null(result.physics_ratio());
  }
  write_file_atomic(dir / "curves.csv", curves);
  write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace stagecast::io
