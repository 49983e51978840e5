#include "omgms/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "omgms/errors.hpp"

namespace omgms {

double velocity_error(const Eigen::VectorXd& v_ms, const Eigen::VectorXd& v_ref, const SparseMatrix& A) {
  if (v_ms.size() != v_ref.size() || v_ref.size() != A.rows())
    throw InvalidArgument("velocity error: field sizes differ");
  const double ref = v_ref.dot(A * v_ref);
  if (!(ref > 0.0)) throw MetricError("velocity error undefined for a zero reference field");
  const Eigen::VectorXd d = v_ms - v_ref;
  return std::sqrt(std::max(d.dot(A * d), 0.0) / ref);
}

double saturation_error(const Eigen::VectorXd& s_ms, const Eigen::VectorXd& s_ref, const GridHierarchy& grid) {
  if (s_ms.size() != s_ref.size() || s_ref.size() != grid.num_cells())
    throw InvalidArgument("saturation error: field sizes differ");
  // Uniform cells: the volume factor cancels.
  const double ref = s_ref.squaredNorm();
  if (!(ref > 0.0)) throw MetricError("saturation error undefined for a zero reference field");
  return std::sqrt((s_ms - s_ref).squaredNorm() / ref);
}

std::string format_error(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", value);
  return buf;
}

void emit_table(std::ostream& out, const std::vector<ErrorReport>& reports) {
  out << "N_b,Dim,case,e_v\n";
  for (const ErrorReport& r : reports)
    out << r.num_basis << ',' << r.dimension << ',' << r.label << ',' << format_error(r.e_v) << '\n';
}

void emit_table(const std::string& path, const std::vector<ErrorReport>& reports) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write table: " + path);
  emit_table(out, reports);
  if (!out) throw IoError("failed writing table: " + path);
}

std::vector<ErrorReport> parse_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "N_b,Dim,case,e_v") throw ParseError("table header mismatch");
  std::vector<ErrorReport> out;
  long index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string nb, dim, label, ev;
    if (!std::getline(row, nb, ',') || !std::getline(row, dim, ',') || !std::getline(row, label, ',') ||
        !std::getline(row, ev))
      throw ParseError("malformed table row " + std::to_string(index), index);
    try {
      out.push_back({std::stoi(nb), std::stol(dim), label, std::stod(ev)});
    } catch (const std::exception&) {
      throw ParseError("non-numeric field in table row " + std::to_string(index), index);
    }
    ++index;
  }
  return out;
}

void write_vtk(const std::string& path, const GridHierarchy& grid, const std::vector<CellArray>& arrays,
               const std::string& title) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write VTK file: " + path);
  const auto& n = grid.fine_counts();
  const auto& h = grid.h();
  out << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET STRUCTURED_POINTS\n";
  out << "DIMENSIONS " << n[0] + 1 << ' ' << n[1] + 1 << ' ' << (grid.dim() == 3 ? n[2] + 1 : 1) << '\n';
  out << "ORIGIN 0 0 0\n";
  out << "SPACING " << h[0] << ' ' << h[1] << ' ' << (grid.dim() == 3 ? h[2] : 1.0) << '\n';
  out << "CELL_DATA " << grid.num_cells() << '\n';
  char buf[32];
  for (const CellArray& a : arrays) {
    if (a.values.size() != grid.num_cells()) throw InvalidArgument("VTK array " + a.name + " has wrong size");
    out << "SCALARS " << a.name << " double 1\nLOOKUP_TABLE default\n";
    for (Eigen::Index i = 0; i < a.values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", a.values[i]);
      out << buf << ((i + 1) % n[0] == 0 ? '\n' : ' ');
    }
  }
  if (!out) throw IoError("failed writing VTK file: " + path);
}

}  // namespace omgms
