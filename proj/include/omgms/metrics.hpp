#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "omgms/grid.hpp"
#include "omgms/mixed_problem.hpp"

namespace omgms {

/// ||v_ms - v_ref||_A / ||v_ref||_A with A the fine velocity mass matrix
/// (integral of kappa^{-1} |v|^2). Throws MetricError when v_ref has zero norm.
double velocity_error(const Eigen::VectorXd& v_ms, const Eigen::VectorXd& v_ref, const SparseMatrix& A);

/// Cell-volume weighted relative L2 error. Throws MetricError for a zero reference.
double saturation_error(const Eigen::VectorXd& s_ms, const Eigen::VectorXd& s_ref, const GridHierarchy& grid);

struct ErrorReport {
  int num_basis = 0;  ///< N_b: basis functions per coarse face
  long dimension = 0;
  std::string label;  ///< e.g. "case1" or "k0=1e+04"
  double e_v = 0.0;
};

/// "%.2e" formatting, e.g. 7.38e-02.
std::string format_error(double value);

/// CSV with header N_b,Dim,case,e_v and one row per report, in input order.
void emit_table(std::ostream& out, const std::vector<ErrorReport>& reports);
void emit_table(const std::string& path, const std::vector<ErrorReport>& reports);
std::vector<ErrorReport> parse_table(std::istream& in);

/// Legacy VTK structured-points ASCII file with cell data arrays.
struct CellArray {
  std::string name;
  Eigen::VectorXd values;
};
void write_vtk(const std::string& path, const GridHierarchy& grid, const std::vector<CellArray>& arrays,
               const std::string& title = "omgms");

}  // namespace omgms
