#pragma once

#include <vector>

#include <Eigen/Dense>

#include "omgms/fields.hpp"
#include "omgms/grid.hpp"
#include "omgms/snapshot.hpp"
#include "omgms/space.hpp"

namespace omgms {

struct SpectralForms {
  Eigen::MatrixXd A;  ///< interface form: integral over E_i of kappa^{-1} (psi_a.n)(psi_b.n)
  Eigen::MatrixXd S;  ///< (1/H) (integral of kappa^{-1} psi_a.psi_b + div psi_a div psi_b)
};

/// Forms of the local spectral problem on a plain-neighborhood snapshot space.
/// kappa^{-1} on a fine face is the mean of kappa^{-1} over its two cells, and
/// H is the coarse spacing normal to the face.
SpectralForms spectral_forms(const GridHierarchy& grid, const PermeabilityField& kappa,
                             const SnapshotSpace& space);

struct SpectralPair {
  int face_id = -1;
  Eigen::VectorXd eigenvalues;   ///< ascending
  Eigen::MatrixXd eigenvectors;  ///< S-orthonormal columns
};

/// Full generalized eigendecomposition A phi = lambda S phi. Each eigenvector
/// has its first entry above 1e-12 of its largest magnitude made positive;
/// eigenvalues equal to 1e-12 relative are ordered by the index of their
/// eigenvector's dominant entry. Throws ConditioningError when S is not
/// numerically positive definite.
SpectralPair solve_spectral(const Eigen::MatrixXd& A, const Eigen::MatrixXd& S, int face_id = -1);

struct OfflineSpace {
  MultiscaleSpace space;
  std::vector<SpectralPair> spectra;  ///< interior_faces() order
};

/// First `per_face` eigenvectors of every interior face, lifted to fine-face
/// coefficient columns supported on the face neighborhood.
OfflineSpace build_offline(const GridHierarchy& grid, const PermeabilityField& kappa, int per_face);

}  // namespace omgms
