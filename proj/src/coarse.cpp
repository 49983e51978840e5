#include "omgms/coarse.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "omgms/errors.hpp"
#include "parallel.hpp"

namespace omgms {

SparseMatrix block_injection(const GridHierarchy& grid, const SaddleSystem& fine) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(fine.cells.size());
  for (int i = 0; i < fine.num_cells(); ++i)
    t.emplace_back(i, grid.block_of_cell(fine.cells[static_cast<std::size_t>(i)]), 1.0);
  SparseMatrix G(fine.num_cells(), grid.num_blocks());
  G.setFromTriplets(t.begin(), t.end());
  return G;
}

Eigen::VectorXd block_source_correction(const GridHierarchy& grid, const PermeabilityField& kappa,
                                        const SaddleSystem& fine) {
  Eigen::VectorXd vp = Eigen::VectorXd::Zero(fine.num_active());
  const long nb = grid.num_blocks();
  std::vector<std::vector<std::pair<int, double>>> pieces(static_cast<std::size_t>(nb));
  detail::parallel_for(nb, [&](long b) {
    const std::vector<CellIndex> cells = grid.cells_in(grid.block_box(static_cast<int>(b)));
    Eigen::VectorXd F(static_cast<Eigen::Index>(cells.size()));
    for (std::size_t i = 0; i < cells.size(); ++i) F[static_cast<Eigen::Index>(i)] = fine.F[fine.cell_index(cells[i])];
    const double scale = F.cwiseAbs().maxCoeff();
    F.array() -= F.mean();
    if (F.cwiseAbs().maxCoeff() <= 1e-15 * scale || scale == 0.0) return;
    const SaddleSolver solver(assemble(grid, kappa, cells));
    const SaddleSystem& loc = solver.system();
    const MixedSolution s = solver.solve(F, Eigen::VectorXd::Zero(loc.num_boundary()));
    auto& out = pieces[static_cast<std::size_t>(b)];
    for (int i = 0; i < loc.num_active(); ++i)
      out.emplace_back(fine.active_index(loc.active_faces[static_cast<std::size_t>(i)]), s.velocity[i]);
  });
  for (const auto& piece : pieces)
    for (const auto& [row, value] : piece) vp[row] = value;
  return vp;
}

CoarseSystem assemble_coarse(const SparseMatrix& R, const SaddleSystem& fine, const SparseMatrix& G,
                             const Eigen::VectorXd& particular) {
  if (R.rows() != fine.num_active()) throw InvalidArgument("basis rows must match the fine active faces");
  if (G.rows() != fine.num_cells()) throw InvalidArgument("injection rows must match the fine cells");
  CoarseSystem cs;
  cs.R = R;
  cs.G = G;
  const SparseMatrix AR = fine.A * R;
  cs.M = SparseMatrix(R.transpose() * AR);
  cs.C = SparseMatrix(G.transpose() * (fine.B * R));
  cs.particular = particular.size() ? particular : Eigen::VectorXd::Zero(fine.num_active());
  cs.velocity_rhs = -(AR.transpose() * cs.particular);
  cs.pressure_rhs = G.transpose() * fine.F;
  if (particular.size()) {
    // Net block divergence of the particular velocity; zero up to round-off.
    cs.pressure_rhs -= G.transpose() * (fine.B * cs.particular);
  }
  return cs;
}

CoarseSolver::CoarseSolver(CoarseSystem system) : sys_(std::move(system)) {
  auto llt = std::make_shared<Eigen::SimplicialLLT<SparseMatrix>>(sys_.M);
  if (llt->info() != Eigen::Success)
    throw ConditioningError("coarse velocity Gram matrix is not positive definite");
  // Squared pivot over diagonal: the energy fraction of each column (in
  // elimination order) orthogonal to the columns eliminated before it.
  const Eigen::VectorXd d = SparseMatrix(llt->matrixL()).diagonal();
  const Eigen::VectorXd md = llt->permutationP() * Eigen::VectorXd(sys_.M.diagonal());
  for (Eigen::Index j = 0; j < d.size(); ++j) {
    const double fraction = d[j] * d[j] / md[j];
    if (!(fraction > 1e-22))
      throw ConditioningError("coarse velocity Gram matrix is numerically singular", fraction);
  }
  llt_ = llt;
  const Eigen::MatrixXd Ct = Eigen::MatrixXd(SparseMatrix(sys_.C.transpose()));
  MinvCt_ = llt_->solve(Ct);
  Eigen::MatrixXd S = sys_.C * MinvCt_;
  S = 0.5 * (S + S.transpose()).eval();
  // Constants span the kernel of S; a rank-one shift fixes the gauge.
  const auto nb = S.rows();
  const double shift = nb > 0 ? S.diagonal().mean() / static_cast<double>(nb) : 0.0;
  S.array() += shift;
  schur_.compute(S);
  if (schur_.info() != Eigen::Success) throw ConditioningError("coarse pressure Schur complement factorization failed");
}

Eigen::MatrixXd CoarseSolver::mass_solve(const Eigen::MatrixXd& b) const { return llt_->solve(b); }

CoarseSolution CoarseSolver::solve() const {
  const Eigen::VectorXd& fp = sys_.pressure_rhs;
  const double defect = fp.sum();
  if (std::abs(defect) > 1e-10 * std::max(fp.lpNorm<1>(), 1e-300) && std::abs(defect) > 1e-300)
    throw CompatibilityError("coarse block sources do not balance (sum " + std::to_string(defect) + ")",
                             defect);
  CoarseSolution sol;
  sol.dimension = sys_.dimension();
  const Eigen::VectorXd Minv_fv = llt_->solve(sys_.velocity_rhs);
  Eigen::VectorXd rhs = fp - sys_.C * Minv_fv;
  rhs.array() -= rhs.mean();
  sol.block_pressure = schur_.solve(rhs);
  sol.block_pressure.array() -= sol.block_pressure.mean();
  sol.coefficients = Minv_fv + MinvCt_ * sol.block_pressure;
  sol.velocity = sys_.R * sol.coefficients + sys_.particular;
  sol.pressure = sys_.G * sol.block_pressure;
  return sol;
}

CoarseSolution solve_coarse(const CoarseSystem& system) { return CoarseSolver(system).solve(); }

CoarseProblem::CoarseProblem(const GridHierarchy& grid, const PermeabilityField& kappa,
                             const Eigen::VectorXd& cell_sources, bool source_correction)
    : grid_(&grid), fine_(assemble_global(grid, kappa, cell_sources)) {
  G_ = block_injection(grid, fine_);
  particular_ = source_correction ? block_source_correction(grid, kappa, fine_)
                                  : Eigen::VectorXd::Zero(fine_.num_active());
}

CoarseSystem CoarseProblem::assemble(const MultiscaleSpace& space) const {
  return assemble_coarse(space.prolongation(fine_), fine_, G_, particular_);
}

}  // namespace omgms
