#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "omgms/errors.hpp"
#include "omgms/metrics.hpp"
#include "omgms/transport.hpp"
#include "oracles.hpp"

using namespace omgms;

namespace {

FluidModel linear_fluid() {
  FluidModel f;
  f.mu_w = f.mu_o = 1.0;
  f.n_w = f.n_o = 1.0;
  return f;
}

}  // namespace

TEST_CASE("fluid model curves") {
  FluidModel f;
  CHECK_NOTHROW(f.validate());
  CHECK(f.krw(0.0) == 0.0);
  CHECK(f.kro(1.0) == 0.0);
  // lambda(0.5) = 0.25 / 0.1 + 0.25 / 1.
  CHECK(f.total_mobility(0.5) == doctest::Approx(2.75).epsilon(1e-15));
  CHECK(f.total_mobility(1.0) == doctest::Approx(1.0 / f.mu_w));
  CHECK(f.fractional_flow(0.0) == 0.0);
  CHECK(f.fractional_flow(1.0) == 1.0);
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double fw = f.fractional_flow(i / 100.0);
    CHECK(fw >= prev);
    prev = fw;
  }
  // Analytic derivative of s^2 / (s^2 + M (1-s)^2), M = mu_w / mu_o, maximized by sampling.
  const double M = f.mu_w / f.mu_o;
  double dmax = 0.0;
  for (int i = 0; i <= 100000; ++i) {
    const double s = i / 100000.0;
    const double d = s * s + M * (1 - s) * (1 - s);
    dmax = std::max(dmax, 2.0 * M * s * (1 - s) / (d * d));
  }
  CHECK(f.max_flow_derivative() >= dmax);
  CHECK(f.max_flow_derivative() <= 1.1 * dmax);

  FluidModel unit;
  unit.mu_w = unit.mu_o = 1.0;
  CHECK(unit.total_mobility(0.0) == 1.0);

  FluidModel bad = f;
  bad.mu_w = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = f;
  bad.porosity = 1.5;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = f;
  bad.n_o = 0.5;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("total mobility field") {
  const auto g = GridHierarchy::build(2, {2, 2, 1}, 2);
  const auto k = oracle::random_kappa(g, 1e-2, 1e2, 1);
  FluidModel unit;
  unit.mu_w = unit.mu_o = 1.0;
  const auto same = total_mobility_field(Eigen::VectorXd::Zero(g.num_cells()), unit, k);
  for (int c = 0; c < g.num_cells(); ++c) CHECK(same[c] == k[c]);
  const FluidModel f;
  const auto half = total_mobility_field(Eigen::VectorXd::Constant(g.num_cells(), 0.5), f, k);
  for (int c = 0; c < g.num_cells(); ++c) CHECK(half[c] == doctest::Approx(2.75 * k[c]));
  Eigen::VectorXd s = Eigen::VectorXd::Zero(g.num_cells());
  s[3] = 1.1;
  CHECK_THROWS_AS(total_mobility_field(s, f, k), StateError);
  s[3] = -1e-3;
  CHECK_THROWS_AS(total_mobility_field(s, f, k), StateError);
  s[3] = std::nan("");
  CHECK_THROWS_AS(total_mobility_field(s, f, k), StateError);
}

TEST_CASE("five-spot wells") {
  const auto g = GridHierarchy::build(3, {2, 2, 2}, 3);
  const auto wells = five_spot_wells(g, 2.0);
  CHECK(wells.size() == 5u * 6u);
  const Eigen::VectorXd F = well_sources(g, wells);
  CHECK(std::abs(F.sum()) < 1e-15);
  CHECK((F - five_spot_sources(g, 2.0)).norm() < 1e-15);
  std::vector<Well> unbalanced{{0, 1.0}, {5, -0.5}};
  CHECK_THROWS_AS(well_sources(g, unbalanced), InvalidArgument);
  CHECK_THROWS_AS(five_spot_wells(g, 0.0), InvalidArgument);
}

TEST_CASE("pressure step") {
  const auto g = GridHierarchy::build(2, {3, 3, 1}, 4);
  const auto k = oracle::random_kappa(g, 1e-3, 1e3, 2);
  const FluidModel fluid;
  TwoPhaseState state;
  state.saturation = Eigen::VectorXd::Constant(g.num_cells(), 0.3);

  SUBCASE("no wells give no flow") {
    FineVelocitySolver solver(g, Eigen::VectorXd::Zero(g.num_cells()));
    pressure_step(state, fluid, k, solver);
    CHECK(state.velocity.norm() == 0.0);
  }
  SUBCASE("constant saturation factors out of the velocity") {
    const Eigen::VectorXd F = five_spot_sources(g, 1.0);
    FineVelocitySolver solver(g, F);
    pressure_step(state, fluid, k, solver);
    const SaddleSystem single = assemble_global(g, k, F);
    const MixedSolution ref = solve_global(single, Eigen::VectorXd::Zero(single.num_boundary()));
    CHECK(oracle::rel(state.velocity, ref.velocity) < 1e-9);
    // The pressure carries the 1/lambda factor instead.
    const auto eff = total_mobility_field(state.saturation, fluid, k);
    const SaddleSystem scaled = assemble_global(g, eff, F);
    const MixedSolution p = solve_global(scaled, Eigen::VectorXd::Zero(scaled.num_boundary()));
    CHECK(oracle::rel(p.pressure * fluid.total_mobility(0.3), ref.pressure) < 1e-9);
  }
  SUBCASE("multiscale velocity approaches the fine one with more online bases") {
    Eigen::VectorXd s(g.num_cells());
    for (int c = 0; c < g.num_cells(); ++c) s[c] = 0.5 + 0.4 * std::sin(0.37 * c);
    state.saturation = s;
    const Eigen::VectorXd F = five_spot_sources(g, 1.0);
    const auto eff = total_mobility_field(s, fluid, k);
    FineVelocitySolver fine(g, F);
    pressure_step(state, fluid, k, fine);
    const Eigen::VectorXd ref = state.velocity;
    const SaddleSystem sys = assemble_global(g, eff, F);
    double prev = 1e300;
    for (int online = 0; online <= 2; ++online) {
      MultiscaleVelocityOptions opt;
      opt.online_iterations = online;
      opt.enrichment.offsets = OversamplingOffsets::for_case(2, 4);
      MultiscaleVelocitySolver ms(g, eff, F, opt);
      pressure_step(state, fluid, k, ms);
      const double e = velocity_error(state.velocity, ref, sys.A);
      CHECK(std::isfinite(e));
      CHECK(e < prev);
      prev = e;
      // Cell-wise conservation of the prolonged velocity.
      const Eigen::VectorXd defect = sys.B * state.velocity - F;
      CHECK(defect.cwiseAbs().maxCoeff() <= 1e-10 * F.cwiseAbs().maxCoeff());
    }
  }
}

TEST_CASE("saturation step") {
  SUBCASE("no flow leaves the saturation unchanged") {
    const auto g = GridHierarchy::build(2, {2, 2, 1}, 3);
    const FluxLayout layout(g);
    TwoPhaseState state;
    state.saturation = Eigen::VectorXd::LinSpaced(g.num_cells(), 0.0, 1.0);
    state.velocity = Eigen::VectorXd::Zero(layout.num_faces());
    const Eigen::VectorXd before = state.saturation;
    const auto st = saturation_step(state, layout, FluidModel{}, 10.0);
    CHECK(state.saturation == before);
    CHECK(st.clamped == 0);
    CHECK(state.time == 10.0);
  }
  SUBCASE("two cells with unit flux") {
    const auto g = GridHierarchy::build(2, {2, 1, 1}, 1);
    const FluxLayout layout(g);
    REQUIRE(layout.num_faces() == 1);
    CHECK(layout.area(0) == 1.0);
    TwoPhaseState state;
    state.saturation = Eigen::Vector2d(1.0, 0.0);
    state.velocity = Eigen::VectorXd::Ones(1);
    const FluidModel f = linear_fluid();
    // phi * vol = 0.1; f_w(1) * flux * dt = 0.05.
    saturation_step(state, layout, f, 0.05);
    CHECK(state.saturation[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(state.saturation[1] == doctest::Approx(0.5).epsilon(1e-14));
    TwoPhaseState again;
    again.saturation = Eigen::Vector2d(1.0, 0.0);
    again.velocity = Eigen::VectorXd::Ones(1);
    const double limit = layout.cfl_limit(again.velocity, again.wells, f);
    CHECK(limit == doctest::Approx(0.1 / f.max_flow_derivative()));
    try {
      saturation_step(again, layout, f, 2.0 * limit);
      FAIL("expected a time-step error");
    } catch (const TimeStepError& e) {
      CHECK(e.admissible_dt() == doctest::Approx(limit));
    }
    CHECK(again.saturation == Eigen::Vector2d(1.0, 0.0));
  }
  SUBCASE("global mass balance") {
    const auto g = GridHierarchy::build(2, {3, 3, 1}, 4);
    const auto k = oracle::random_kappa(g, 1e-2, 1e2, 5);
    const FluidModel fluid;
    const FluxLayout layout(g);
    TwoPhaseState state;
    state.saturation.resize(g.num_cells());
    for (int c = 0; c < g.num_cells(); ++c) state.saturation[c] = 0.3 + 0.2 * std::cos(1.3 * c);
    state.wells = five_spot_wells(g, 1.0);
    FineVelocitySolver solver(g, well_sources(g, state.wells));
    pressure_step(state, fluid, k, solver);
    const double dt = layout.cfl_limit(state.velocity, state.wells, fluid);
    const Eigen::VectorXd before = state.saturation;
    double expect = 0.0;
    for (const Well& w : state.wells)
      expect += dt * (w.rate > 0.0 ? w.rate / fluid.rho_w : w.rate * fluid.fractional_flow(before[w.cell]));
    const auto st = saturation_step(state, layout, fluid, dt);
    REQUIRE(st.clamped == 0);
    const double stored = fluid.porosity * g.cell_volume() * (state.saturation - before).sum();
    CHECK(std::abs(stored - expect) <= 1e-10 * std::abs(expect));
    CHECK(st.mass_defect <= 1e-12);
  }
}

TEST_CASE("fine-reference run is self-consistent") {
  const auto g = GridHierarchy::build(2, {4, 4, 1}, 3);
  const auto k = synthesize(channelized_standin(), g);
  TwoPhaseOptions opt;
  opt.reference = true;
  const TwoPhaseRun run = run_two_phase(g, k, opt);
  REQUIRE(run.steps.size() == 100);
  CHECK(run.final_state.time == doctest::Approx(5000.0));
  CHECK(run.final_state.step == 100);
  double sum = 0.0;
  for (const StepRecord& r : run.steps) {
    CHECK(r.e_s == 0.0);
    CHECK(r.min_saturation >= 0.0);
    CHECK(r.max_saturation <= 1.0);
    CHECK(r.mass_defect <= 1e-10);
    CHECK(r.max_clamp <= 1e-8);
    sum += r.e_s;
  }
  CHECK(run.mean_e_s == sum / 100.0);
  CHECK(run.reference_saturation == run.final_state.saturation);
}

TEST_CASE("homogeneous five-spot water cut") {
  const auto g = GridHierarchy::build(2, {3, 3, 1}, 5);
  const auto k = PermeabilityField::uniform(g, 1.0);
  TwoPhaseOptions opt;
  const TwoPhaseRun run = run_two_phase(g, k, opt);
  bool broke = false;
  double prev = 0.0;
  for (const StepRecord& r : run.steps) {
    if (!broke) {
      if (r.water_cut > 0.0) broke = true;
      else CHECK(r.water_cut == 0.0);
    }
    if (broke) CHECK(r.water_cut >= prev);
    prev = r.water_cut;
  }
  CHECK(broke);
  CHECK(run.steps.front().water_cut == 0.0);
  CHECK(std::isnan(run.mean_e_s));
}

TEST_CASE("online bases reduce the saturation error") {
  const auto g = GridHierarchy::build(2, {4, 4, 1}, 6);
  const auto k = synthesize(channelized_standin(), g);
  std::vector<double> mean;
  for (int online = 0; online <= 2; ++online) {
    TwoPhaseOptions opt;
    opt.reference = true;
    opt.end_time = 2500.0;
    MultiscaleVelocityOptions ms;
    ms.online_iterations = online;
    opt.multiscale = ms;
    const TwoPhaseRun run = run_two_phase(g, k, opt);
    for (const StepRecord& r : run.steps) {
      CHECK(r.mass_defect <= 1e-10);
      CHECK(r.max_clamp <= 1e-8);
    }
    mean.push_back(run.mean_e_s);
  }
  CHECK(mean[0] > 0.0);
  CHECK(mean[1] <= 1.1 * mean[0]);
  CHECK(mean[2] <= 1.1 * mean[1]);
}

TEST_CASE("basis update with the initial field keeps the velocity") {
  const auto g = GridHierarchy::build(2, {3, 3, 1}, 4);
  const auto k = oracle::random_kappa(g, 1e-2, 1e2, 9);
  const FluidModel fluid;
  const Eigen::VectorXd F = five_spot_sources(g);
  const auto eff = total_mobility_field(Eigen::VectorXd::Zero(g.num_cells()), fluid, k);
  MultiscaleVelocityOptions opt;
  opt.online_iterations = 1;
  MultiscaleVelocitySolver ms(g, eff, F, opt);
  const Eigen::VectorXd before = ms.solve(eff);
  ms.update_basis(eff);
  CHECK(oracle::rel(ms.solve(eff), before) < 1e-9);
}

TEST_CASE("outputs and option validation") {
  const auto g = GridHierarchy::build(2, {2, 2, 1}, 3);
  const auto k = PermeabilityField::uniform(g, 1.0);
  const std::string dir = (std::filesystem::temp_directory_path() / "omgms_two_phase").string();
  std::filesystem::remove_all(dir);
  TwoPhaseOptions opt;
  opt.end_time = 500.0;
  opt.snapshot_times = {200.0, 450.0};
  opt.output_dir = dir;
  const TwoPhaseRun run = run_two_phase(g, k, opt);
  CHECK(run.steps.size() == 10);
  CHECK(std::filesystem::exists(dir + "/saturation_t200.vtk"));
  CHECK(std::filesystem::exists(dir + "/saturation_t450.vtk"));
  const std::string csv = dir + "/series.csv";
  write_time_series(csv, run.steps);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,t,water_cut,e_s");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 10);
  std::filesystem::remove_all(dir);

  TwoPhaseOptions bad;
  bad.dt = 0.0;
  CHECK_THROWS_AS(run_two_phase(g, k, bad), InvalidArgument);
  bad = TwoPhaseOptions{};
  bad.cfl = 1.5;
  CHECK_THROWS_AS(run_two_phase(g, k, bad), InvalidArgument);
  bad = TwoPhaseOptions{};
  bad.initial_saturation = 2.0;
  CHECK_THROWS_AS(run_two_phase(g, k, bad), InvalidArgument);
  bad = TwoPhaseOptions{};
  bad.fluid.mu_o = -1.0;
  CHECK_THROWS_AS(run_two_phase(g, k, bad), InvalidArgument);
  CHECK_THROWS_AS(write_time_series("/nonexistent/dir/s.csv", run.steps), IoError);
}
