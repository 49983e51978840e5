#pragma once

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "omgms/fields.hpp"
#include "omgms/grid.hpp"

namespace omgms {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Lowest-order Raviart-Thomas discretization of
///   kappa^{-1} v + grad p = 0,  div v = f
/// on a set of fine cells. Velocity unknowns are normal velocity values on fine
/// faces (oriented along +axis); pressures are cell constants.
///
/// Faces with both neighbours inside the subdomain are "active" unknowns;
/// faces with one neighbour inside are "boundary" faces carrying prescribed
/// normal flux. The discrete equations are
///   A v - B^T p = -A_boundary g
///   B v         =  F - B_boundary g
/// with B(c, f) = integral over c of div(phi_f).
struct SaddleSystem {
  std::vector<CellIndex> cells;
  std::vector<FaceIndex> active_faces;
  std::vector<FaceIndex> boundary_faces;
  /// +1 when the +axis normal of a boundary face points out of the subdomain.
  std::vector<int> boundary_sign;
  std::vector<double> boundary_area;
  std::vector<double> cell_volume;

  SparseMatrix A;
  SparseMatrix A_boundary;
  SparseMatrix B;
  SparseMatrix B_boundary;
  /// Boundary-boundary block of the mass matrix, used only by full_A().
  SparseMatrix A_bb;
  Eigen::VectorXd F;

  int num_active() const { return static_cast<int>(active_faces.size()); }
  int num_boundary() const { return static_cast<int>(boundary_faces.size()); }
  int num_cells() const { return static_cast<int>(cells.size()); }
  /// Local index of a global face or cell, -1 when absent.
  int active_index(FaceIndex f) const;
  int boundary_index(FaceIndex f) const;
  int cell_index(CellIndex c) const;

  /// Velocity mass matrix over [active, boundary] faces, before Neumann elimination.
  SparseMatrix full_A() const;
  SparseMatrix full_B() const;
};

/// Assembles the RT0 system on `cells` (any order, deduplicated) with zero source.
/// Mass-matrix entries are exact cell integrals of kappa^{-1} phi_f . phi_g, so the
/// diagonal weight of a face shared by two cells uses the harmonic mean of their
/// permeabilities.
SaddleSystem assemble(const GridHierarchy& grid, const PermeabilityField& kappa,
                      std::vector<CellIndex> cells);
/// Whole-domain system with cell-integrated sources (one entry per fine cell).
SaddleSystem assemble_global(const GridHierarchy& grid, const PermeabilityField& kappa,
                             const Eigen::VectorXd& cell_sources);

struct MixedSolution {
  Eigen::VectorXd velocity;       ///< per active face
  Eigen::VectorXd boundary_flux;  ///< per boundary face, as prescribed
  Eigen::VectorXd pressure;       ///< per cell, zero mean
  int iterations = 0;
};

/// Solves a SaddleSystem by eliminating the velocity and running preconditioned
/// conjugate gradients on the pressure Schur complement B A^{-1} B^T.
///
/// A is block diagonal with tridiagonal blocks (one per grid line and axis), so
/// A^{-1} is applied exactly. The preconditioner is the two-point flux matrix
/// built from the row-lumped mass matrix, which is spectrally equivalent to the
/// Schur complement within a factor of 3 regardless of the permeability.
class SaddleSolver {
 public:
  explicit SaddleSolver(SaddleSystem system, double tolerance = 1e-13);

  const SaddleSystem& system() const { return sys_; }

  /// Throws CompatibilityError when sum(F) differs from the net outward boundary
  /// flux by more than 1e-10 of the data scale.
  MixedSolution solve(const Eigen::VectorXd& F, const Eigen::VectorXd& boundary_flux) const;
  MixedSolution solve() const;

  Eigen::VectorXd apply_mass_inverse(const Eigen::VectorXd& rhs) const;
  Eigen::VectorXd apply_schur(const Eigen::VectorXd& p) const;
  /// Zero-mean solution of (B A^{-1} B^T) p = rhs; rhs must sum to zero up to roundoff.
  Eigen::VectorXd schur_solve(const Eigen::VectorXd& rhs, int* iterations = nullptr) const;
  /// Column-wise schur_solve. Small systems with many columns use a temporary
  /// dense factorization with iterative refinement, falling back to PCG for any
  /// column that misses the acceptance bound.
  Eigen::MatrixXd schur_solve_block(const Eigen::MatrixXd& rhs) const;

 private:
  SaddleSystem sys_;
  double tol_;
  // Tridiagonal chains in factored form: order_ lists active indices chain by
  // chain; chain_start_ delimits chains.
  std::vector<int> order_;
  std::vector<int> chain_start_;
  std::vector<double> pivot_;
  std::vector<double> lower_;
  // Factored two-point matrix; the backend depends on problem size.
  struct Factor;
  std::shared_ptr<const Factor> precond_;

  void factor_chains();
  void build_preconditioner();
  Eigen::VectorXd precondition(const Eigen::VectorXd& r) const;
  /// Residual bound shared by the iterative and dense paths.
  bool schur_accepts(const Eigen::VectorXd& b, const Eigen::VectorXd& x, const SparseMatrix& absB) const;
};

MixedSolution solve_global(const SaddleSystem& sys, const Eigen::VectorXd& boundary_flux);

/// How the source of a local Neumann problem is chosen.
enum class Compatibility {
  /// Constant source per part equal to its net outward flux over its volume.
  PerPartConstant,
  /// No source; the prescribed flux must have zero net value on every part.
  ZeroSource,
};

/// Velocity fields of local Neumann problems over a fixed face set.
struct LocalField {
  std::vector<FaceIndex> faces;  ///< sorted global face ids
  Eigen::MatrixXd values;        ///< faces x columns
  Eigen::MatrixXd compat;        ///< parts x columns: source constant per part
  /// Pressures per part, cells in each part's sorted order, one column per case.
  std::vector<Eigen::MatrixXd> pressure;
  std::vector<std::vector<CellIndex>> part_cells;

  int row_of(FaceIndex f) const;
};

/// Linear map from interface normal flux data to the velocity of local Neumann
/// problems solved independently on each part (disjoint, connected cell sets).
/// Interface faces carry the prescribed flux; the rest of every part boundary
/// carries zero flux.
class LocalNeumannOperator {
 public:
  LocalNeumannOperator(const GridHierarchy& grid, const PermeabilityField& kappa,
                       std::vector<std::vector<CellIndex>> parts,
                       std::vector<FaceIndex> interface,
                       Compatibility mode = Compatibility::PerPartConstant);

  const std::vector<FaceIndex>& interface() const { return interface_; }
  /// Sorted global faces on which results live: active faces of every part
  /// plus the interface faces.
  const std::vector<FaceIndex>& faces() const { return faces_; }
  int num_parts() const { return static_cast<int>(solvers_.size()); }
  const SaddleSolver& part_solver(int k) const { return solvers_[static_cast<std::size_t>(k)]; }

  /// One column of interface data per case.
  LocalField apply(const Eigen::MatrixXd& interface_flux) const;
  /// Transpose of apply: given weights r on faces(), returns the vector t with
  /// t . g = r . apply(g) for every interface vector g.
  Eigen::VectorXd adjoint(const Eigen::VectorXd& r) const;

 private:
  std::vector<SaddleSolver> solvers_;
  std::vector<FaceIndex> interface_;
  std::vector<FaceIndex> faces_;
  Compatibility mode_;
  // Per part: interface position of every boundary face (-1 when not on the interface).
  std::vector<std::vector<int>> boundary_to_interface_;
  // Per part: row in faces_ of every active face.
  std::vector<std::vector<int>> active_rows_;
  std::vector<int> interface_rows_;
};

/// Convenience wrapper around LocalNeumannOperator::apply.
LocalField solve_local_neumann(const GridHierarchy& grid, const PermeabilityField& kappa,
                               const std::vector<std::vector<CellIndex>>& parts,
                               std::span<const FaceIndex> interface,
                               const Eigen::MatrixXd& interface_flux,
                               Compatibility mode = Compatibility::PerPartConstant);

/// Cell divergence (B v) / |c| of a field given on `faces` over `cells`;
/// faces absent from the list carry zero flux.
Eigen::VectorXd cell_divergence(const GridHierarchy& grid, std::span<const CellIndex> cells,
                                std::span<const FaceIndex> faces, const Eigen::VectorXd& values);

/// Exact mass matrix (integral of kappa^{-1} phi_f . phi_g over `cells`) on a sorted face list.
SparseMatrix local_mass_matrix(const GridHierarchy& grid, const PermeabilityField& kappa,
                               std::span<const CellIndex> cells, std::span<const FaceIndex> faces);

/// Exact integral of kappa^{-1} u . w over `cells` for fields given on `faces`.
Eigen::MatrixXd local_mass_gram(const GridHierarchy& grid, const PermeabilityField& kappa,
                                std::span<const CellIndex> cells,
                                std::span<const FaceIndex> faces, const Eigen::MatrixXd& u,
                                const Eigen::MatrixXd& w);

}  // namespace omgms
