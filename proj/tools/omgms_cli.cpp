// Command-line front end: elliptic, contrast-sweep, two-phase and make-field.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <Eigen/Core>

#include "CLI11.hpp"
#include "json.hpp"

#include "omgms/config.hpp"
#include "omgms/errors.hpp"
#include "omgms/metrics.hpp"
#include "omgms/online.hpp"
#include "omgms/transport.hpp"

#ifndef OMGMS_VERSION
#define OMGMS_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace omgms;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kValidation = 2, kCompute = 3, kIo = 4 };

// Wall times per phase plus the files written, collected for the manifest.
struct Manifest {
  std::string command;
  const RunConfig* config = nullptr;
  std::vector<std::pair<std::string, double>> timings;
  std::vector<std::string> outputs;

  void write(const fs::path& dir, const std::string& status, const std::string& message) const {
    json m;
    m["tool"] = "omgms";
    m["version"] = OMGMS_VERSION;
    m["command"] = command;
    m["status"] = status;
    if (!message.empty()) m["message"] = message;
    if (config) {
      m["config"] = json::parse(config->canonical);
      char hash[20];
      std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config->hash));
      m["config_hash"] = hash;
    }
#ifdef _OPENMP
    m["threads"] = omp_get_max_threads();
#else
    m["threads"] = 1;
#endif
    m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    m["compiler"] = __VERSION__;
    json t = json::object();
    for (const auto& [phase, seconds] : timings) t[phase] = seconds;
    m["wall_seconds"] = t;
    m["outputs"] = outputs;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir.string());
    out << m.dump(2) << '\n';
  }
};

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

std::string slug(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  std::string out;
  for (char c : s)
    if (!(c == '_' && !out.empty() && out.back() == '_')) out += c;
  return out;
}

void print_table(const std::vector<std::string>& labels, const std::vector<OnlineRun>& runs) {
  std::printf("%-6s %-8s", "N_b", "Dim");
  for (const auto& l : labels) std::printf(" %-12s", l.c_str());
  std::printf("\n");
  std::size_t rows = 0;
  for (const auto& r : runs) rows = std::max(rows, r.levels.size());
  for (std::size_t i = 0; i < rows; ++i) {
    const LevelReport* first = nullptr;
    for (const auto& r : runs)
      if (i < r.levels.size()) {
        first = &r.levels[i];
        break;
      }
    std::printf("%-6d %-8ld", first->num_basis, first->dimension);
    for (const auto& r : runs) std::printf(" %-12s", i < r.levels.size() ? format_error(r.levels[i].e_v).c_str() : "-");
    std::printf("\n");
  }
}

void append_reports(std::vector<ErrorReport>& out, const std::string& label, const OnlineRun& run) {
  for (const LevelReport& l : run.levels) out.push_back({l.num_basis, l.dimension, label, l.e_v});
}

OnlineRunOptions online_options(const EllipticSpec& e, const OversamplingOffsets& offsets) {
  OnlineRunOptions o;
  o.offline_count = e.offline;
  o.iterations = e.iterations;
  o.tolerance = e.tolerance;
  o.enrichment.offsets = offsets;
  o.enrichment.schedule = e.schedule;
  o.source_correction = e.source_correction;
  return o;
}

void cmd_elliptic(const RunConfig& cfg, const fs::path& dir, Manifest& man) {
  Stopwatch sw;
  const GridHierarchy grid = cfg.grid.build();
  const PermeabilityField kappa = synthesize(cfg.field.recipe(cfg.grid), grid);
  const Eigen::VectorXd F = five_spot_sources(grid);
  man.timings.emplace_back("setup", sw.lap());
  std::vector<std::pair<std::string, OversamplingOffsets>> variants;
  if (cfg.elliptic.offsets) variants.emplace_back("custom", *cfg.elliptic.offsets);
  else
    for (int c : cfg.elliptic.cases) variants.emplace_back("case" + std::to_string(c), OversamplingOffsets::for_case(c, cfg.grid.n));
  std::vector<ErrorReport> reports;
  std::vector<std::string> labels;
  std::vector<OnlineRun> runs;
  for (const auto& [label, offsets] : variants) {
    OnlineRun run = run_online(grid, kappa, F, online_options(cfg.elliptic, offsets));
    man.timings.emplace_back(label + ".offline", run.offline_seconds);
    man.timings.emplace_back(label + ".online", run.online_seconds);
    sw.lap();
    const std::string trace = "trace_" + label + ".csv";
    write_enrichment_trace((dir / trace).string(), run.trace, run.levels);
    man.outputs.push_back(trace);
    append_reports(reports, label, run);
    labels.push_back(label);
    runs.push_back(std::move(run));
  }
  emit_table((dir / "table.csv").string(), reports);
  man.outputs.push_back("table.csv");
  print_table(labels, runs);
}

void cmd_contrast(const RunConfig& cfg, const fs::path& dir, Manifest& man) {
  if (cfg.contrast.k0.empty()) throw ValidationError("contrast.k0", "list must not be empty");
  const GridHierarchy grid = cfg.grid.build();
  const Eigen::VectorXd F = five_spot_sources(grid);
  const OversamplingOffsets offsets = cfg.elliptic.offsets.value_or(OversamplingOffsets::for_case(cfg.contrast.case_id, cfg.grid.n));
  std::vector<ErrorReport> reports;
  std::vector<std::string> labels;
  std::vector<OnlineRun> runs;
  for (double k0 : cfg.contrast.k0) {
    char label[32];
    std::snprintf(label, sizeof label, "k0=%.0e", k0);
    const PermeabilityField kappa = synthesize(cfg.field.recipe(cfg.grid, k0), grid);
    OnlineRun run = run_online(grid, kappa, F, online_options(cfg.elliptic, offsets));
    man.timings.emplace_back(std::string(label) + ".offline", run.offline_seconds);
    man.timings.emplace_back(std::string(label) + ".online", run.online_seconds);
    append_reports(reports, label, run);
    labels.emplace_back(label);
    runs.push_back(std::move(run));
  }
  emit_table((dir / "contrast.csv").string(), reports);
  man.outputs.push_back("contrast.csv");
  print_table(labels, runs);
}

void cmd_two_phase(const RunConfig& cfg, const fs::path& dir, Manifest& man) {
  const GridHierarchy grid = cfg.grid.build();
  const PermeabilityField kappa = synthesize(cfg.field.recipe(cfg.grid), grid);
  std::ofstream summary(dir / "summary.csv");
  if (!summary) throw IoError("cannot write summary in " + dir.string());
  summary << "label,mean_e_s,final_water_cut,max_clamp,max_mass_defect\n";
  std::printf("%-20s %-12s %-12s\n", "run", "mean e_s", "water cut");
  for (const TwoPhaseRunSpec& spec : cfg.two_phase.runs) {
    const std::string label = spec.label();
    const std::string name = slug(label);
    TwoPhaseOptions opt = cfg.two_phase.options(spec, cfg.grid);
    if (!opt.snapshot_times.empty()) opt.output_dir = (dir / ("snapshots_" + name)).string();
    const TwoPhaseRun run = run_two_phase(grid, kappa, opt);
    man.timings.emplace_back(name + ".setup", run.setup_seconds);
    man.timings.emplace_back(name + ".run", run.run_seconds);
    const std::string series = "series_" + name + ".csv";
    write_time_series((dir / series).string(), run.steps);
    man.outputs.push_back(series);
    double clamp = 0.0, defect = 0.0;
    for (const StepRecord& r : run.steps) {
      clamp = std::max(clamp, r.max_clamp);
      defect = std::max(defect, r.mass_defect);
    }
    const double wc = run.steps.empty() ? 0.0 : run.steps.back().water_cut;
    char line[256];
    std::snprintf(line, sizeof line, "%s,%.6e,%.6f,%.3e,%.3e\n", label.c_str(), run.mean_e_s, wc, clamp, defect);
    summary << line;
    std::printf("%-20s %-12s %-12.4f\n", label.c_str(), std::isnan(run.mean_e_s) ? "-" : format_error(run.mean_e_s).c_str(), wc);
  }
  man.outputs.push_back("summary.csv");
}

void cmd_make_field(const RunConfig& cfg, const fs::path& dir, Manifest& man) {
  const GridHierarchy grid = cfg.grid.build();
  const PermeabilityField kappa = synthesize(cfg.field.recipe(cfg.grid), grid);
  save_raster((dir / "field.txt").string(), kappa);
  save_descriptor((dir / "field.txt.json").string(), RasterDescriptor{kappa.dims()});
  Eigen::VectorXd logk(static_cast<Eigen::Index>(kappa.size()));
  for (Eigen::Index i = 0; i < logk.size(); ++i) logk[i] = std::log10(kappa[i]);
  write_vtk((dir / "field.vtk").string(), grid, {{"log10_kappa", logk}});
  man.outputs.insert(man.outputs.end(), {"field.txt", "field.txt.json", "field.vtk"});
  std::printf("wrote %zu cells to %s\n", kappa.size(), (dir / "field.txt").string().c_str());
}

int apply_thread_override() {
  const char* env = std::getenv("OMGMS_THREADS");
  if (!env || !*env) return kOk;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) {
    std::fprintf(stderr, "error: OMGMS_THREADS must be a positive integer, got '%s'\n", env);
    return kValidation;
  }
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(n));
#endif
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Oversampled mixed multiscale Darcy flow and two-phase transport"};
  app.require_subcommand(1);
  app.set_version_flag("--version", OMGMS_VERSION);
  std::string config_path, output;
  const std::map<std::string, std::string> commands{
      {"elliptic", "offline build and online enrichment, error decay per case"},
      {"contrast-sweep", "error decay for each contrast value k0"},
      {"two-phase", "sequential waterflood with multiscale or fine velocity"},
      {"make-field", "synthesize a permeability field and save it"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "JSON configuration file")->required();
    sub->add_option("-o,--output", output, "output directory (overrides the config)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  if (const int code = apply_thread_override(); code != kOk) return code;

  const std::string command = app.get_subcommands().front()->get_name();
  Manifest man;
  man.command = command;
  RunConfig cfg;
  fs::path dir;
  try {
    cfg = load_config(config_path);
    if (!output.empty()) cfg.output_dir = output;
    man.config = &cfg;
    dir = cfg.output_dir;
    fs::create_directories(dir);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  }

  const auto fail = [&](int code, const std::string& message) {
    std::fprintf(stderr, "error: %s\n", message.c_str());
    try {
      man.write(dir, "failed", message);
    } catch (const std::exception&) {
    }
    return code;
  };
  try {
    const auto t0 = std::chrono::steady_clock::now();
    if (command == "elliptic") cmd_elliptic(cfg, dir, man);
    else if (command == "contrast-sweep") cmd_contrast(cfg, dir, man);
    else if (command == "two-phase") cmd_two_phase(cfg, dir, man);
    else cmd_make_field(cfg, dir, man);
    man.timings.emplace_back("total", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    man.write(dir, "ok", "");
  } catch (const ValidationError& e) {
    return fail(kValidation, e.what());
  } catch (const InvalidArgument& e) {
    return fail(kValidation, e.what());
  } catch (const ParseError& e) {
    return fail(kValidation, e.what());
  } catch (const IoError& e) {
    return fail(kIo, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kIo, e.what());
  } catch (const std::exception& e) {
    return fail(kCompute, e.what());
  }
  return kOk;
}
