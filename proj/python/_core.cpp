#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "omgms/config.hpp"
#include "omgms/errors.hpp"
#include "omgms/fields.hpp"
#include "omgms/grid.hpp"
#include "omgms/metrics.hpp"
#include "omgms/mixed_problem.hpp"
#include "omgms/online.hpp"
#include "omgms/space.hpp"
#include "omgms/transport.hpp"

namespace py = pybind11;
using namespace omgms;

namespace {

Index3 to_index3(const std::vector<int>& v, const char* what) {
  if (v.empty() || v.size() > 3) throw InvalidArgument(std::string(what) + " needs 1 to 3 entries");
  Index3 out{1, 1, 1};
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i];
  return out;
}

PermeabilityField field_from_array(const GridHierarchy& g, py::array_t<double, py::array::c_style | py::array::forcecast> a) {
  if (a.size() != g.num_cells()) throw InvalidArgument("field needs one value per fine cell");
  // Numpy arrays are indexed [z][y][x] or [y][x]; x-fastest matches the flat layout.
  return {g.fine_counts(), std::vector<double>(a.data(), a.data() + a.size())};
}

py::array_t<double> field_to_array(const PermeabilityField& k) {
  const auto& d = k.dims();
  std::vector<py::ssize_t> shape;
  if (d[2] > 1) shape.push_back(d[2]);
  shape.push_back(d[1]);
  shape.push_back(d[0]);
  py::array_t<double> out(shape);
  std::copy(k.values().begin(), k.values().end(), out.mutable_data());
  return out;
}

OversamplingOffsets offsets_for(int case_id, const std::optional<std::vector<int>>& offsets, int n) {
  if (!offsets) return OversamplingOffsets::for_case(case_id, n);
  if (offsets->size() != 4) throw InvalidArgument("offsets needs (d11, d12, d21, d22)");
  return {(*offsets)[0], (*offsets)[1], (*offsets)[2], (*offsets)[3]};
}

py::dict fine_solve(const GridHierarchy& g, const PermeabilityField& k, const Eigen::VectorXd& sources) {
  SaddleSystem sys;
  MixedSolution sol;
  {
    py::gil_scoped_release release;
    sys = assemble_global(g, k, sources);
    sol = solve_global(sys, Eigen::VectorXd::Zero(sys.num_boundary()));
  }
  py::dict out;
  out["velocity"] = sol.velocity;
  out["pressure"] = sol.pressure;
  out["active_faces"] = sys.active_faces;
  out["balance"] = Eigen::VectorXd(sys.B * sol.velocity - sys.F);
  return out;
}

py::dict online(const GridHierarchy& g, const PermeabilityField& k, const Eigen::VectorXd& sources, int case_id,
                const std::optional<std::vector<int>>& offsets, int offline, int iterations, double tolerance) {
  OnlineRunOptions o;
  o.offline_count = offline;
  o.iterations = iterations;
  o.tolerance = tolerance;
  o.enrichment.offsets = offsets_for(case_id, offsets, g.fine_per_coarse());
  OnlineRun run;
  {
    py::gil_scoped_release release;
    run = run_online(g, k, sources, o);
  }
  py::list levels;
  for (const LevelReport& l : run.levels) {
    py::dict d;
    d["iteration"] = l.iteration;
    d["num_basis"] = l.num_basis;
    d["dimension"] = l.dimension;
    d["e_v"] = l.e_v;
    d["residual_norm"] = l.residual_norm;
    d["accepted"] = l.accepted;
    d["skipped"] = l.skipped;
    levels.append(d);
  }
  py::dict out;
  out["levels"] = levels;
  out["velocity"] = run.solution.velocity;
  out["reference_velocity"] = run.reference_velocity;
  out["offline_seconds"] = run.offline_seconds;
  out["online_seconds"] = run.online_seconds;
  return out;
}

py::dict two_phase(const GridHierarchy& g, const PermeabilityField& k, double dt, double end_time,
                   std::optional<int> online, int offline, int case_id, int update_every, bool reference) {
  TwoPhaseOptions o;
  o.dt = dt;
  o.end_time = end_time;
  o.reference = reference;
  o.update_every = update_every;
  if (online) {
    MultiscaleVelocityOptions m;
    m.offline_count = offline;
    m.online_iterations = *online;
    m.enrichment.offsets = OversamplingOffsets::for_case(case_id, g.fine_per_coarse());
    o.multiscale = m;
  }
  TwoPhaseRun run;
  {
    py::gil_scoped_release release;
    run = run_two_phase(g, k, o);
  }
  const auto n = static_cast<Eigen::Index>(run.steps.size());
  Eigen::VectorXd t(n), cut(n), es(n), defect(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const StepRecord& r = run.steps[static_cast<std::size_t>(i)];
    t[i] = r.time;
    cut[i] = r.water_cut;
    es[i] = r.e_s;
    defect[i] = r.mass_defect;
  }
  py::dict out;
  out["time"] = t;
  out["water_cut"] = cut;
  out["e_s"] = es;
  out["mass_defect"] = defect;
  out["mean_e_s"] = run.mean_e_s;
  out["saturation"] = run.final_state.saturation;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multiscale mixed Darcy solver with online enrichment and two-phase transport";

  auto base = py::register_exception<Error>(m, "OmgmsError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());

  py::enum_<RasterLayout>(m, "RasterLayout").value("XFastest", RasterLayout::XFastest);

  py::class_<GridHierarchy>(m, "Grid")
      .def_static(
          "build",
          [](int dim, const std::vector<int>& coarse, int n) { return GridHierarchy::build(dim, to_index3(coarse, "coarse"), n); },
          py::arg("dim"), py::arg("coarse"), py::arg("n"))
      .def_property_readonly("dim", &GridHierarchy::dim)
      .def_property_readonly("n", &GridHierarchy::fine_per_coarse)
      .def_property_readonly("coarse_counts", &GridHierarchy::coarse_counts)
      .def_property_readonly("fine_counts", &GridHierarchy::fine_counts)
      .def_property_readonly("num_cells", &GridHierarchy::num_cells)
      .def_property_readonly("num_faces", &GridHierarchy::num_faces)
      .def_property_readonly("num_blocks", &GridHierarchy::num_blocks)
      .def_property_readonly("interior_faces", &GridHierarchy::interior_faces)
      .def("__repr__", [](const GridHierarchy& g) {
        const auto& c = g.coarse_counts();
        return "<Grid dim=" + std::to_string(g.dim()) + " coarse=" + std::to_string(c[0]) + "x" + std::to_string(c[1]) +
               (g.dim() == 3 ? "x" + std::to_string(c[2]) : "") + " n=" + std::to_string(g.fine_per_coarse()) + ">";
      });

  py::class_<PermeabilityField>(m, "Field")
      .def(py::init(&field_from_array), py::arg("grid"), py::arg("values"))
      .def_static("uniform", &PermeabilityField::uniform, py::arg("grid"), py::arg("value") = 1.0)
      .def_static(
          "model1", [](const GridHierarchy& g) { return synthesize(model1_standin(), g); }, py::arg("grid"))
      .def_static(
          "model3", [](const GridHierarchy& g, double k0) { return synthesize(model3_standin(k0), g); },
          py::arg("grid"), py::arg("k0") = 1e4)
      .def_static(
          "channelized",
          [](const GridHierarchy& g, double k0, double background) { return synthesize(channelized_standin(k0, background), g); },
          py::arg("grid"), py::arg("k0") = 1e3, py::arg("background") = 1.0)
      .def_static("load", &load_raster, py::arg("path"), py::arg("dims"), py::arg("layout") = RasterLayout::XFastest)
      .def("save", [](const PermeabilityField& k, const std::string& path) { save_raster(path, k); }, py::arg("path"))
      .def("to_numpy", &field_to_array)
      .def("__len__", &PermeabilityField::size);

  m.def("five_spot_sources", &five_spot_sources, py::arg("grid"), py::arg("rate") = 1.0);
  m.def("expected_dimension", &expected_dimension, py::arg("grid"), py::arg("per_face"), py::arg("iterations"));
  m.def("fine_solve", &fine_solve, py::arg("grid"), py::arg("kappa"), py::arg("sources"),
        "Fine RT0 solve with no-flow boundary. Velocities are per active face, pressure per cell.");
  m.def("run_online", &online, py::arg("grid"), py::arg("kappa"), py::arg("sources"), py::arg("case") = 1,
        py::arg("offsets") = std::nullopt, py::arg("offline") = 1, py::arg("iterations") = 7,
        py::arg("tolerance") = 0.0, "Offline build followed by online enrichment; one report per level.");
  m.def("run_two_phase", &two_phase, py::arg("grid"), py::arg("kappa"), py::arg("dt") = 50.0,
        py::arg("end_time") = 5000.0, py::arg("online") = std::nullopt, py::arg("offline") = 1, py::arg("case") = 1,
        py::arg("update_every") = 0, py::arg("reference") = true,
        "Sequential two-phase run. `online=None` uses the fine velocity.");
  m.def("config_hash", [](const std::string& text) {
    const RunConfig c = parse_config(text);
    return py::make_tuple(c.canonical, c.hash);
  }, py::arg("text"), "Canonical JSON and FNV-1a hash of a validated configuration.");
}
