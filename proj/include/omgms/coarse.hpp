#pragma once

#include <memory>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "omgms/fields.hpp"
#include "omgms/grid.hpp"
#include "omgms/mixed_problem.hpp"
#include "omgms/space.hpp"

namespace omgms {

/// Piecewise-constant injection G_H: one column per coarse block holding the
/// indicators of its fine cells (rows follow fine.cells).
SparseMatrix block_injection(const GridHierarchy& grid, const SaddleSystem& fine);

/// Velocity on the active faces of `fine` whose divergence removes the
/// within-block variation of the source: on every coarse block it solves the
/// no-flow problem with source F - mean_K(F). Zero when F is constant per block.
Eigen::VectorXd block_source_correction(const GridHierarchy& grid, const PermeabilityField& kappa,
                                        const SaddleSystem& fine);

/// Galerkin blocks of the multiscale saddle problem for v = R c + v_p:
///   M c - C^T p_H = f_v,   C c = f_p
/// with M = R^T A R, C = G^T B R, f_v = -R^T A v_p and f_p = G^T F.
struct CoarseSystem {
  SparseMatrix R;
  SparseMatrix G;
  SparseMatrix M;
  SparseMatrix C;
  Eigen::VectorXd velocity_rhs;
  Eigen::VectorXd pressure_rhs;
  Eigen::VectorXd particular;  ///< v_p on active fine faces (may be zero)

  int num_columns() const { return static_cast<int>(R.cols()); }
  int num_blocks() const { return static_cast<int>(G.cols()); }
  int dimension() const { return num_columns() + num_blocks(); }
};

CoarseSystem assemble_coarse(const SparseMatrix& R, const SaddleSystem& fine, const SparseMatrix& G,
                             const Eigen::VectorXd& particular = Eigen::VectorXd());

struct CoarseSolution {
  Eigen::VectorXd coefficients;    ///< c
  Eigen::VectorXd block_pressure;  ///< p_H, zero mean
  Eigen::VectorXd velocity;        ///< R c + v_p on active fine faces
  Eigen::VectorXd pressure;        ///< G p_H on fine cells
  int dimension = 0;
};

/// Factors M (sparse Cholesky) and the dense pressure Schur complement C M^{-1} C^T.
class CoarseSolver {
 public:
  /// Throws ConditioningError when M is not numerically positive definite.
  explicit CoarseSolver(CoarseSystem system);

  const CoarseSystem& system() const { return sys_; }
  /// Throws CompatibilityError when the block sources do not sum to zero.
  CoarseSolution solve() const;
  /// M^{-1} b.
  Eigen::MatrixXd mass_solve(const Eigen::MatrixXd& b) const;

 private:
  CoarseSystem sys_;
  std::shared_ptr<const Eigen::SimplicialLLT<SparseMatrix>> llt_;
  Eigen::MatrixXd MinvCt_;
  Eigen::LDLT<Eigen::MatrixXd> schur_;
};

CoarseSolution solve_coarse(const CoarseSystem& system);

/// Fine system, block injection and source correction shared by every level
/// of a multiscale run.
class CoarseProblem {
 public:
  CoarseProblem(const GridHierarchy& grid, const PermeabilityField& kappa,
                const Eigen::VectorXd& cell_sources, bool source_correction = true);

  const GridHierarchy& grid() const { return *grid_; }
  const SaddleSystem& fine() const { return fine_; }
  const SparseMatrix& injection() const { return G_; }
  const Eigen::VectorXd& particular() const { return particular_; }

  CoarseSystem assemble(const MultiscaleSpace& space) const;
  CoarseSolver factor(const MultiscaleSpace& space) const { return CoarseSolver(assemble(space)); }

 private:
  const GridHierarchy* grid_;
  SaddleSystem fine_;
  SparseMatrix G_;
  Eigen::VectorXd particular_;
};

}  // namespace omgms
