#include "omgms/transport.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "omgms/errors.hpp"
#include "omgms/metrics.hpp"
#include "omgms/offline.hpp"

namespace omgms {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void FluidModel::validate() const {
  if (!(mu_w > 0.0) || !(mu_o > 0.0)) throw InvalidArgument("viscosities must be positive");
  if (!(porosity > 0.0) || porosity > 1.0) throw InvalidArgument("porosity must lie in (0, 1]");
  if (!(rho_w > 0.0)) throw InvalidArgument("water density must be positive");
  if (!(n_w >= 1.0) || !(n_o >= 1.0)) throw InvalidArgument("Corey exponents must be at least 1");
}

double FluidModel::krw(double s) const { return n_w == 2.0 ? s * s : std::pow(s, n_w); }
double FluidModel::kro(double s) const { return n_o == 2.0 ? (1.0 - s) * (1.0 - s) : std::pow(1.0 - s, n_o); }

double FluidModel::max_flow_derivative() const {
  // Dense sampling of the centred difference, padded for the sampling error.
  constexpr int samples = 4000;
  constexpr double h = 1.0 / samples;
  double best = 0.0;
  for (int i = 0; i < samples; ++i)
    best = std::max(best, std::abs(fractional_flow((i + 1) * h) - fractional_flow(i * h)) / h);
  return 1.05 * best;
}

std::vector<Well> five_spot_wells(const GridHierarchy& grid, double total_rate) {
  if (!(total_rate > 0.0)) throw InvalidArgument("injection rate must be positive");
  const auto& n = grid.fine_counts();
  const int nz = n[2];
  std::vector<Well> wells;
  const std::array<std::array<int, 2>, 4> corners{{{0, 0}, {n[0] - 1, 0}, {0, n[1] - 1}, {n[0] - 1, n[1] - 1}}};
  for (int k = 0; k < nz; ++k)
    for (const auto& c : corners) wells.push_back({grid.cell({c[0], c[1], k}), 0.25 * total_rate / nz});
  for (int k = 0; k < nz; ++k) wells.push_back({grid.cell({n[0] / 2, n[1] / 2, k}), -total_rate / nz});
  return wells;
}

Eigen::VectorXd well_sources(const GridHierarchy& grid, const std::vector<Well>& wells) {
  Eigen::VectorXd F = Eigen::VectorXd::Zero(grid.num_cells());
  double net = 0.0, scale = 0.0;
  for (const Well& w : wells) {
    if (w.cell < 0 || w.cell >= grid.num_cells()) throw InvalidArgument("well cell out of range");
    F[w.cell] += w.rate;
    net += w.rate;
    scale += std::abs(w.rate);
  }
  if (std::abs(net) > 1e-12 * scale) throw InvalidArgument("well rates do not balance");
  return F;
}

PermeabilityField total_mobility_field(const Eigen::VectorXd& saturation, const FluidModel& fluid,
                                       const PermeabilityField& kappa) {
  if (saturation.size() != static_cast<Eigen::Index>(kappa.size()))
    throw InvalidArgument("saturation size does not match the field");
  std::vector<double> factor(kappa.size());
  for (std::size_t i = 0; i < factor.size(); ++i) {
    const double s = saturation[static_cast<Eigen::Index>(i)];
    if (!(s >= 0.0 && s <= 1.0))
      throw StateError("saturation " + std::to_string(s) + " at cell " + std::to_string(i) + " is outside [0, 1]");
    factor[i] = fluid.total_mobility(s);
  }
  return kappa.scaled(factor);
}

// ---------------------------------------------------------------------------

FineVelocitySolver::FineVelocitySolver(const GridHierarchy& grid, Eigen::VectorXd sources)
    : grid_(&grid), sources_(std::move(sources)) {}

Eigen::VectorXd FineVelocitySolver::solve(const PermeabilityField& effective) {
  const SaddleSystem sys = assemble_global(*grid_, effective, sources_);
  return solve_global(sys, Eigen::VectorXd::Zero(sys.num_boundary())).velocity;
}

MultiscaleVelocitySolver::MultiscaleVelocitySolver(const GridHierarchy& grid, const PermeabilityField& initial,
                                                   Eigen::VectorXd sources, const MultiscaleVelocityOptions& options)
    : grid_(&grid), sources_(std::move(sources)) {
  if (options.online_iterations < 0) throw InvalidArgument("online iteration count must be non-negative");
  const auto t0 = std::chrono::steady_clock::now();
  space_ = build_offline(grid, initial, options.offline_count).space;
  if (options.online_iterations > 0) {
    const CoarseProblem problem(grid, initial, sources_);
    const OnlineEnricher enricher(problem, initial, options.enrichment);
    for (int it = 0; it < options.online_iterations; ++it) {
      const CoarseSolver solver = problem.factor(space_);
      enricher.enrich(space_, solver, solver.solve());
    }
  }
  build_seconds_ = seconds_since(t0);
}

Eigen::VectorXd MultiscaleVelocitySolver::solve(const PermeabilityField& effective) {
  const CoarseProblem problem(*grid_, effective, sources_);
  return problem.factor(space_).solve().velocity;
}

void MultiscaleVelocitySolver::update_basis(const PermeabilityField& effective) { relift(space_, effective); }

// ---------------------------------------------------------------------------

FluxLayout::FluxLayout(const GridHierarchy& grid) : grid_(&grid) {
  for (FaceIndex f = 0; f < grid.num_faces(); ++f) {
    const auto c = grid.face_cells(f);
    if (c[0] < 0 || c[1] < 0) continue;
    left_.push_back(c[0]);
    right_.push_back(c[1]);
    area_.push_back(grid.face_area(grid.face_axis(f)));
  }
}

double FluxLayout::cfl_limit(const Eigen::VectorXd& velocity, const std::vector<Well>& wells,
                             const FluidModel& fluid) const {
  if (velocity.size() != num_faces()) throw InvalidArgument("velocity does not match the flux layout");
  Eigen::VectorXd outflow = Eigen::VectorXd::Zero(grid_->num_cells());
  for (int i = 0; i < num_faces(); ++i) {
    const double q = velocity[i] * area_[static_cast<std::size_t>(i)];
    outflow[q > 0.0 ? left(i) : right(i)] += std::abs(q);
  }
  for (const Well& w : wells)
    if (w.rate < 0.0) outflow[w.cell] -= w.rate;
  const double worst = outflow.maxCoeff();
  if (!(worst > 0.0)) return std::numeric_limits<double>::infinity();
  return fluid.porosity * grid_->cell_volume() / (fluid.max_flow_derivative() * worst);
}

namespace {

// Upwind update with a precomputed CFL limit for the current velocity.
SaturationStepStats upwind_update(TwoPhaseState& state, const FluxLayout& layout, const FluidModel& fluid, double dt,
                                  double limit) {
  const GridHierarchy& grid = layout.grid();
  if (!(dt > 0.0)) throw TimeStepError("time step must be positive", 0.0);
  if (state.saturation.size() != grid.num_cells()) throw StateError("saturation does not match the grid");
  if (dt > limit * (1.0 + 1e-12)) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "time step %.6g violates the CFL limit; use dt <= %.6g", dt, limit);
    throw TimeStepError(buf, limit);
  }
  const Eigen::VectorXd& s = state.saturation;
  Eigen::VectorXd fw(s.size());
  for (Eigen::Index c = 0; c < s.size(); ++c) fw[c] = fluid.fractional_flow(s[c]);

  // Net water volume entering each cell over dt.
  Eigen::VectorXd gain = Eigen::VectorXd::Zero(s.size());
  for (int i = 0; i < layout.num_faces(); ++i) {
    const double q = state.velocity[i] * layout.area(i);  // left -> right
    const double w = q * (q > 0.0 ? fw[layout.left(i)] : fw[layout.right(i)]);
    gain[layout.left(i)] -= w;
    gain[layout.right(i)] += w;
  }
  double injected = 0.0, produced = 0.0, throughput = 0.0;
  for (const Well& w : state.wells) {
    if (w.rate > 0.0) {
      gain[w.cell] += w.rate / fluid.rho_w;
      injected += w.rate / fluid.rho_w;
    } else {
      gain[w.cell] += fw[w.cell] * w.rate;
      produced -= fw[w.cell] * w.rate;
    }
    throughput += std::abs(w.rate);
  }
  const double pore = fluid.porosity * grid.cell_volume();
  Eigen::VectorXd next = s + (dt / pore) * gain;

  SaturationStepStats stats;
  const double stored = pore * (next - s).sum();
  const double expected = dt * (injected - produced);
  if (throughput > 0.0) stats.mass_defect = std::abs(stored - expected) / (dt * throughput);
  for (Eigen::Index c = 0; c < next.size(); ++c) {
    const double clamped = std::clamp(next[c], 0.0, 1.0);
    if (clamped != next[c]) {
      ++stats.clamped;
      stats.max_clamp = std::max(stats.max_clamp, std::abs(clamped - next[c]));
      next[c] = clamped;
    }
  }
  state.saturation = std::move(next);
  state.time += dt;
  return stats;
}

}  // namespace

SaturationStepStats saturation_step(TwoPhaseState& state, const FluxLayout& layout, const FluidModel& fluid, double dt) {
  return upwind_update(state, layout, fluid, dt, layout.cfl_limit(state.velocity, state.wells, fluid));
}

void pressure_step(TwoPhaseState& state, const FluidModel& fluid, const PermeabilityField& kappa,
                   VelocitySolver& solver) {
  state.velocity = solver.solve(total_mobility_field(state.saturation, fluid, kappa));
}

double water_cut(const TwoPhaseState& state, const FluidModel& fluid) {
  double water = 0.0, total = 0.0;
  for (const Well& w : state.wells)
    if (w.rate < 0.0) {
      water -= w.rate * fluid.fractional_flow(state.saturation[w.cell]);
      total -= w.rate;
    }
  if (!(total > 0.0)) throw StateError("no producing well");
  return water / total;
}

// ---------------------------------------------------------------------------

namespace {

// Advances one outer step in CFL-admissible sub-steps and fills the per-step record.
void advance(TwoPhaseState& state, const FluxLayout& layout, const FluidModel& fluid, double dt, double cfl,
             StepRecord& rec) {
  const double limit = layout.cfl_limit(state.velocity, state.wells, fluid);
  const int sub = std::isfinite(limit) ? std::max(1, static_cast<int>(std::ceil(dt / (cfl * limit)))) : 1;
  const double start = state.time;
  for (int k = 0; k < sub; ++k) {
    const SaturationStepStats st = upwind_update(state, layout, fluid, dt / sub, limit);
    rec.clamped += st.clamped;
    rec.max_clamp = std::max(rec.max_clamp, st.max_clamp);
    rec.mass_defect = std::max(rec.mass_defect, st.mass_defect);
  }
  state.time = start + dt;  // no drift from summing sub-steps
  ++state.step;
  rec.substeps += sub;
}

std::string snapshot_name(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "saturation_t%g.vtk", t);
  return buf;
}

}  // namespace

TwoPhaseRun run_two_phase(const GridHierarchy& grid, const PermeabilityField& kappa, const TwoPhaseOptions& options) {
  const FluidModel& fluid = options.fluid;
  fluid.validate();
  if (!(options.dt > 0.0) || !(options.end_time > 0.0)) throw InvalidArgument("dt and end time must be positive");
  if (!(options.pore_volumes > 0.0)) throw InvalidArgument("pore volumes injected must be positive");
  if (!(options.cfl > 0.0) || options.cfl > 1.0) throw InvalidArgument("CFL number must lie in (0, 1]");
  if (!(options.initial_saturation >= 0.0 && options.initial_saturation <= 1.0))
    throw InvalidArgument("initial saturation must lie in [0, 1]");
  if (options.update_every < 0) throw InvalidArgument("update interval must be non-negative");
  if (!kappa.matches(grid)) throw InvalidArgument("permeability does not match the grid");

  const auto t0 = std::chrono::steady_clock::now();
  double domain = 1.0;
  for (int a = 0; a < grid.dim(); ++a) domain *= grid.extent()[static_cast<std::size_t>(a)];
  const double rate = options.pore_volumes * fluid.porosity * domain / options.end_time;

  TwoPhaseState state;
  state.saturation = Eigen::VectorXd::Constant(grid.num_cells(), options.initial_saturation);
  state.wells = five_spot_wells(grid, rate);
  const Eigen::VectorXd sources = well_sources(grid, state.wells);
  const FluxLayout layout(grid);

  std::unique_ptr<VelocitySolver> solver;
  if (options.multiscale)
    solver = std::make_unique<MultiscaleVelocitySolver>(grid, total_mobility_field(state.saturation, fluid, kappa),
                                                        sources, *options.multiscale);
  else
    solver = std::make_unique<FineVelocitySolver>(grid, sources);

  std::optional<TwoPhaseState> ref;
  std::unique_ptr<VelocitySolver> ref_solver;
  if (options.reference) {
    ref = state;
    ref_solver = std::make_unique<FineVelocitySolver>(grid, sources);
  }
  if (!options.output_dir.empty()) std::filesystem::create_directories(options.output_dir);

  TwoPhaseRun run;
  run.setup_seconds = seconds_since(t0);
  const auto t1 = std::chrono::steady_clock::now();
  const int steps = static_cast<int>(std::llround(options.end_time / options.dt));
  std::vector<double> pending = options.snapshot_times;
  std::sort(pending.begin(), pending.end());
  double e_sum = 0.0;
  for (int i = 1; i <= steps; ++i) {
    if (options.multiscale && options.update_every > 0 && i > 1 && (i - 1) % options.update_every == 0)
      solver->update_basis(total_mobility_field(state.saturation, fluid, kappa));
    StepRecord rec;
    rec.step = i;
    pressure_step(state, fluid, kappa, *solver);
    advance(state, layout, fluid, options.dt, options.cfl, rec);
    rec.time = state.time;
    rec.water_cut = water_cut(state, fluid);
    rec.min_saturation = state.saturation.minCoeff();
    rec.max_saturation = state.saturation.maxCoeff();
    rec.e_s = std::numeric_limits<double>::quiet_NaN();
    if (ref) {
      StepRecord ref_rec;
      pressure_step(*ref, fluid, kappa, *ref_solver);
      advance(*ref, layout, fluid, options.dt, options.cfl, ref_rec);
      rec.e_s = saturation_error(state.saturation, ref->saturation, grid);
      e_sum += rec.e_s;
    }
    while (!pending.empty() && pending.front() <= state.time + 1e-9 * options.dt) {
      if (!options.output_dir.empty()) {
        std::vector<CellArray> arrays{{"saturation", state.saturation}};
        if (ref) arrays.push_back({"reference_saturation", ref->saturation});
        write_vtk((std::filesystem::path(options.output_dir) / snapshot_name(pending.front())).string(), grid, arrays);
      }
      pending.erase(pending.begin());
    }
    run.steps.push_back(rec);
  }
  run.run_seconds = seconds_since(t1);
  run.mean_e_s = ref && steps > 0 ? e_sum / steps : std::numeric_limits<double>::quiet_NaN();
  if (ref) run.reference_saturation = ref->saturation;
  run.final_state = std::move(state);
  return run;
}

void write_time_series(const std::string& path, const std::vector<StepRecord>& steps) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write time series: " + path);
  out << "step,t,water_cut,e_s\n";
  char buf[160];
  for (const StepRecord& r : steps) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g\n", r.step, r.time, r.water_cut, r.e_s);
    out << buf;
  }
  if (!out) throw IoError("failed writing time series: " + path);
}

}  // namespace omgms
