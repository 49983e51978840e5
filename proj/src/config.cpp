#include "omgms/config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "omgms/errors.hpp"

namespace omgms {

namespace {

using nlohmann::json;

// JSON object cursor that remembers its path and which keys were consumed.
class Reader {
 public:
  Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& get(const std::string& key) {
    seen_.insert(key);
    return node_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number()) fail(at(key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(at(key), "expected a finite number");
    return x;
  }
  double positive(const std::string& key, double fallback) {
    const double x = number(key, fallback);
    if (!(x > 0.0)) fail(at(key), "must be positive");
    return x;
  }
  int integer(const std::string& key, int fallback, int lo, int hi) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number_integer()) fail(at(key), "expected an integer");
    const long x = v.get<long>();
    if (x < lo || x > hi) fail(at(key), "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(x);
  }
  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_boolean()) fail(at(key), "expected true or false");
    return v.get<bool>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::vector<double> numbers(const std::string& key, std::size_t min_size, std::size_t max_size) {
    const json& v = node_.at(key);
    if (!v.is_array()) fail(at(key), "expected an array");
    if (v.size() < min_size || v.size() > max_size)
      fail(at(key), "expected " + std::to_string(min_size) + (min_size == max_size ? "" : " to " + std::to_string(max_size)) +
                        " entries, found " + std::to_string(v.size()));
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number() || !std::isfinite(v[i].get<double>()))
        fail(at(key) + "[" + std::to_string(i) + "]", "expected a finite number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }
  std::vector<int> integers(const std::string& key, std::size_t min_size, std::size_t max_size, int lo, int hi) {
    const json& v = node_.at(key);
    const std::vector<double> raw = numbers(key, min_size, max_size);
    std::vector<int> out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const std::string p = at(key) + "[" + std::to_string(i) + "]";
      if (!v[i].is_number_integer()) fail(p, "expected an integer");
      if (raw[i] < lo || raw[i] > hi) fail(p, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      out.push_back(static_cast<int>(raw[i]));
    }
    return out;
  }
  Reader object(const std::string& key) { return Reader(get(key), at(key)); }
  /// Rejects any key that was never asked for.
  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it)
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown key");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& message) {
    throw ValidationError(path.empty() ? "<root>" : path, message);
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

GridSpec read_grid(Reader r) {
  GridSpec g;
  g.dim = r.integer("dim", 2, 2, 3);
  if (!r.has("coarse")) Reader::fail(r.at("coarse"), "required");
  const std::vector<int> c = r.integers("coarse", static_cast<std::size_t>(g.dim), static_cast<std::size_t>(g.dim), 1, 100000);
  for (int a = 0; a < g.dim; ++a) g.coarse[static_cast<std::size_t>(a)] = c[static_cast<std::size_t>(a)];
  if (!r.has("n")) Reader::fail(r.at("n"), "required");
  g.n = r.integer("n", 1, 1, 100000);
  if (r.has("extent")) {
    const std::vector<double> e = r.numbers("extent", static_cast<std::size_t>(g.dim), static_cast<std::size_t>(g.dim));
    for (int a = 0; a < g.dim; ++a) {
      if (!(e[static_cast<std::size_t>(a)] > 0.0)) Reader::fail(r.at("extent") + "[" + std::to_string(a) + "]", "must be positive");
      g.extent[static_cast<std::size_t>(a)] = e[static_cast<std::size_t>(a)];
    }
  }
  r.finish();
  return g;
}

FieldSpec read_field(Reader r) {
  FieldSpec f;
  f.kind = r.string("kind", "uniform");
  static const std::set<std::string> kinds{"uniform", "model1", "model3", "channelized", "boxes", "raster"};
  if (!kinds.count(f.kind)) Reader::fail(r.at("kind"), "unknown field kind '" + f.kind + "'");
  if (f.kind == "uniform") f.value = r.positive("value", 1.0);
  if (f.kind == "model3" || f.kind == "channelized") f.k0 = r.positive("k0", f.kind == "model3" ? 1e4 : 1e3);
  if (f.kind == "channelized" || f.kind == "boxes") f.background = r.positive("background", 1.0);
  if (f.kind == "boxes") {
    f.feature = r.positive("feature", 1e3);
    if (!r.has("boxes")) Reader::fail(r.at("boxes"), "required");
    const json& arr = r.get("boxes");
    if (!arr.is_array()) Reader::fail(r.at("boxes"), "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Reader b(arr[i], r.at("boxes") + "[" + std::to_string(i) + "]");
      FeatureBox box;
      for (const char* key : {"lo", "hi"}) {
        if (!b.has(key)) Reader::fail(b.at(key), "required");
        const std::vector<double> v = b.numbers(key, 2, 3);
        auto& dst = std::string(key) == "lo" ? box.lo : box.hi;
        for (std::size_t a = 0; a < v.size(); ++a) {
          if (v[a] < 0.0 || v[a] > 1.0) Reader::fail(b.at(key) + "[" + std::to_string(a) + "]", "must lie in [0, 1]");
          dst[a] = v[a];
        }
      }
      for (int a = 0; a < 3; ++a)
        if (box.lo[static_cast<std::size_t>(a)] > box.hi[static_cast<std::size_t>(a)])
          Reader::fail(b.at("lo"), "lower corner exceeds upper corner");
      b.finish();
      f.boxes.push_back(box);
    }
  }
  if (f.kind == "raster") {
    f.path = r.string("path", "");
    if (f.path.empty()) Reader::fail(r.at("path"), "required for raster fields");
  }
  r.finish();
  return f;
}

EllipticSpec read_elliptic(Reader r) {
  EllipticSpec e;
  if (r.has("cases")) {
    e.cases = r.integers("cases", 1, 3, 1, 3);
  }
  if (r.has("offsets")) {
    const std::vector<int> o = r.integers("offsets", 4, 4, 0, 100000);
    e.offsets = OversamplingOffsets{o[0], o[1], o[2], o[3]};
  }
  e.offline = r.integer("offline", 1, 1, 100000);
  e.iterations = r.integer("iterations", 7, 0, 1000);
  e.tolerance = r.number("tolerance", 0.0);
  if (e.tolerance < 0.0) Reader::fail(r.at("tolerance"), "must be non-negative");
  const std::string schedule = r.string("schedule", "jacobi");
  if (schedule == "jacobi") e.schedule = Schedule::Jacobi;
  else if (schedule == "coloring") e.schedule = Schedule::Coloring;
  else Reader::fail(r.at("schedule"), "expected 'jacobi' or 'coloring'");
  e.source_correction = r.boolean("source_correction", true);
  r.finish();
  return e;
}

ContrastSpec read_contrast(Reader r) {
  ContrastSpec c;
  if (!r.has("k0")) Reader::fail(r.at("k0"), "required");
  c.k0 = r.numbers("k0", 0, 1000);
  if (c.k0.empty()) Reader::fail(r.at("k0"), "list must not be empty");
  for (std::size_t i = 0; i < c.k0.size(); ++i)
    if (!(c.k0[i] > 0.0)) Reader::fail(r.at("k0") + "[" + std::to_string(i) + "]", "must be positive");
  c.case_id = r.integer("case", 2, 1, 3);
  r.finish();
  return c;
}

FluidModel read_fluid(Reader r) {
  FluidModel f;
  f.mu_w = r.positive("mu_w", f.mu_w);
  f.mu_o = r.positive("mu_o", f.mu_o);
  f.porosity = r.positive("porosity", f.porosity);
  if (f.porosity > 1.0) Reader::fail(r.at("porosity"), "must not exceed 1");
  f.rho_w = r.positive("rho_w", f.rho_w);
  f.n_w = r.number("n_w", f.n_w);
  if (f.n_w < 1.0) Reader::fail(r.at("n_w"), "must be at least 1");
  f.n_o = r.number("n_o", f.n_o);
  if (f.n_o < 1.0) Reader::fail(r.at("n_o"), "must be at least 1");
  r.finish();
  return f;
}

TwoPhaseSpec read_two_phase(Reader r) {
  TwoPhaseSpec t;
  if (r.has("fluid")) t.fluid = read_fluid(r.object("fluid"));
  t.dt = r.positive("dt", t.dt);
  t.end_time = r.positive("end_time", t.end_time);
  if (t.end_time < t.dt) Reader::fail(r.at("end_time"), "must be at least dt");
  t.pore_volumes = r.positive("pore_volumes", t.pore_volumes);
  t.cfl = r.positive("cfl", t.cfl);
  if (t.cfl > 1.0) Reader::fail(r.at("cfl"), "must not exceed 1");
  t.initial_saturation = r.number("initial_saturation", 0.0);
  if (t.initial_saturation < 0.0 || t.initial_saturation > 1.0) Reader::fail(r.at("initial_saturation"), "must lie in [0, 1]");
  t.reference = r.boolean("reference", true);
  if (r.has("snapshot_times")) {
    t.snapshot_times = r.numbers("snapshot_times", 0, 100000);
    for (std::size_t i = 0; i < t.snapshot_times.size(); ++i)
      if (t.snapshot_times[i] < 0.0) Reader::fail(r.at("snapshot_times") + "[" + std::to_string(i) + "]", "must be non-negative");
  }
  if (r.has("runs")) {
    const json& arr = r.get("runs");
    if (!arr.is_array() || arr.empty()) Reader::fail(r.at("runs"), "expected a non-empty array");
    t.runs.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Reader q(arr[i], r.at("runs") + "[" + std::to_string(i) + "]");
      TwoPhaseRunSpec run;
      const std::string velocity = q.string("velocity", "multiscale");
      if (velocity != "multiscale" && velocity != "fine") Reader::fail(q.at("velocity"), "expected 'multiscale' or 'fine'");
      run.fine = velocity == "fine";
      run.offline = q.integer("offline", 1, 1, 100000);
      run.online = q.integer("online", 0, 0, 1000);
      run.case_id = q.integer("case", 1, 1, 3);
      run.update_every = q.integer("update_every", 0, 0, 1000000);
      q.finish();
      t.runs.push_back(run);
    }
  }
  r.finish();
  return t;
}

}  // namespace

GridHierarchy GridSpec::build() const { return GridHierarchy::build(dim, coarse, n, extent); }

FieldRecipe FieldSpec::recipe(const GridSpec& grid, std::optional<double> k0_override) const {
  FieldRecipe r;
  if (kind == "uniform") {
    r.kind = FieldRecipe::Kind::Uniform;
    r.background = k0_override.value_or(value);
    r.feature = r.background;
  } else if (kind == "model1") {
    r = model1_standin();
    if (k0_override) r.feature = *k0_override;
  } else if (kind == "model3") {
    r = model3_standin(k0_override.value_or(k0));
  } else if (kind == "channelized") {
    r = channelized_standin(k0_override.value_or(k0), background);
  } else if (kind == "boxes") {
    r.kind = FieldRecipe::Kind::InclusionsAndChannels;
    r.background = background;
    r.feature = k0_override.value_or(feature);
    r.boxes = boxes;
  } else if (kind == "raster") {
    if (k0_override) throw ValidationError("field.kind", "raster fields cannot be rescaled by k0");
    r.kind = FieldRecipe::Kind::Raster;
    r.raster_path = path;
    r.raster_dims = {grid.coarse[0] * grid.n, grid.coarse[1] * grid.n, grid.dim == 3 ? grid.coarse[2] * grid.n : 1};
    const std::string sidecar = path + ".json";
    if (std::filesystem::exists(sidecar)) {
      const RasterDescriptor d = load_descriptor(sidecar);
      if (d.dims != r.raster_dims) throw ValidationError("field.path", "raster descriptor dims do not match the grid");
    }
  } else {
    throw ValidationError("field.kind", "unknown field kind '" + kind + "'");
  }
  return r;
}

std::string TwoPhaseRunSpec::label() const {
  if (fine) return "fine";
  std::string s = std::to_string(offline) + " + " + std::to_string(online);
  if (update_every > 0) s += " updating";
  return s;
}

TwoPhaseOptions TwoPhaseSpec::options(const TwoPhaseRunSpec& run, const GridSpec& grid) const {
  TwoPhaseOptions o;
  o.fluid = fluid;
  o.dt = dt;
  o.end_time = end_time;
  o.pore_volumes = pore_volumes;
  o.cfl = cfl;
  o.initial_saturation = initial_saturation;
  o.reference = reference;
  o.snapshot_times = snapshot_times;
  if (!run.fine) {
    MultiscaleVelocityOptions m;
    m.offline_count = run.offline;
    m.online_iterations = run.online;
    m.enrichment.offsets = OversamplingOffsets::for_case(run.case_id, grid.n);
    o.multiscale = m;
    o.update_every = run.update_every;
  }
  return o;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what(), static_cast<long>(e.byte));
  }
  RunConfig cfg;
  Reader r(root, "");
  if (!r.has("grid")) Reader::fail("grid", "required");
  cfg.grid = read_grid(r.object("grid"));
  if (r.has("field")) cfg.field = read_field(r.object("field"));
  if (r.has("elliptic")) cfg.elliptic = read_elliptic(r.object("elliptic"));
  if (r.has("contrast")) cfg.contrast = read_contrast(r.object("contrast"));
  if (r.has("two_phase")) cfg.two_phase = read_two_phase(r.object("two_phase"));
  cfg.output_dir = r.string("output", cfg.output_dir);
  r.finish();

  // Cross-field checks.
  if (cfg.elliptic.offsets) {
    const OversamplingOffsets& o = *cfg.elliptic.offsets;
    if (o.d11 < 1 || o.d22 < 1) throw ValidationError("elliptic.offsets", "normal extents d11 and d22 must be at least 1");
  }
  const int per_face = cfg.grid.dim == 3 ? cfg.grid.n * cfg.grid.n : cfg.grid.n;
  if (cfg.elliptic.offline > per_face)
    throw ValidationError("elliptic.offline", "exceeds the " + std::to_string(per_face) + " snapshots per face");
  for (std::size_t i = 0; i < cfg.two_phase.runs.size(); ++i)
    if (cfg.two_phase.runs[i].offline > per_face)
      throw ValidationError("two_phase.runs[" + std::to_string(i) + "].offline",
                            "exceeds the " + std::to_string(per_face) + " snapshots per face");
  // Canonical text: sorted keys, no whitespace.
  cfg.canonical = root.dump();
  cfg.hash = fnv1a(cfg.canonical);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace omgms
