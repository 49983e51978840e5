#include "omgms/offline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>

#include "omgms/errors.hpp"
#include "omgms/mixed_problem.hpp"
#include "parallel.hpp"

namespace omgms {

SpectralForms spectral_forms(const GridHierarchy& grid, const PermeabilityField& kappa,
                             const SnapshotSpace& space) {
  const CoarseFace& cf = grid.coarse_face(space.face_id);
  const double area = grid.face_area(cf.axis);
  const auto J = static_cast<Eigen::Index>(space.size());

  // Interface rows of the columns, weighted by |e| kappa_e^{-1}.
  Eigen::MatrixXd trace(static_cast<Eigen::Index>(space.interface.size()), J);
  Eigen::VectorXd weight(trace.rows());
  for (std::size_t k = 0; k < space.interface.size(); ++k) {
    const FaceIndex f = space.interface[k];
    const auto cells = grid.face_cells(f);
    weight[static_cast<Eigen::Index>(k)] = area * 0.5 * (1.0 / kappa[cells[0]] + 1.0 / kappa[cells[1]]);
    trace.row(static_cast<Eigen::Index>(k)) = space.columns.row(space.row_of(f));
  }

  SpectralForms out;
  out.A = trace.transpose() * weight.asDiagonal() * trace;

  const std::vector<CellIndex> cells = space.cells();
  Eigen::MatrixXd div(static_cast<Eigen::Index>(cells.size()), J);
  for (Eigen::Index j = 0; j < J; ++j)
    div.col(j) = cell_divergence(grid, cells, space.faces, space.columns.col(j));
  const double H = grid.coarse_h()[static_cast<std::size_t>(cf.axis)];
  out.S = (snapshot_gram(grid, kappa, space) + grid.cell_volume() * div.transpose() * div) / H;
  out.S = 0.5 * (out.S + out.S.transpose()).eval();
  out.A = 0.5 * (out.A + out.A.transpose()).eval();
  return out;
}

SpectralPair solve_spectral(const Eigen::MatrixXd& A, const Eigen::MatrixXd& S, int face_id) {
  if (A.rows() != A.cols() || S.rows() != S.cols() || A.rows() != S.rows())
    throw InvalidArgument("spectral forms must be square and of equal size");
  const Eigen::Index n = A.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> sdec(S, Eigen::EigenvaluesOnly);
  const double smax = sdec.eigenvalues().cwiseAbs().maxCoeff();
  const double smin = sdec.eigenvalues().minCoeff();
  if (!(smin > 1e-14 * smax))
    throw ConditioningError("spectral mass form is not positive definite (smallest eigenvalue " +
                                std::to_string(smin) + ")",
                            smin);

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(A, S);
  if (es.info() != Eigen::Success) throw ConditioningError("generalized eigensolver failed", smin);
  Eigen::VectorXd lam = es.eigenvalues();
  Eigen::MatrixXd vec = es.eigenvectors();

  std::vector<Eigen::Index> dominant(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const double big = vec.col(j).cwiseAbs().maxCoeff();
    Eigen::Index first = 0;
    while (first < n && std::abs(vec(first, j)) <= 1e-12 * big) ++first;
    if (first < n && vec(first, j) < 0.0) vec.col(j) = -vec.col(j);
    vec.col(j).cwiseAbs().maxCoeff(&dominant[static_cast<std::size_t>(j)]);
  }

  const double scale = std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (std::abs(lam[a] - lam[b]) > 1e-12 * scale) return lam[a] < lam[b];
    return dominant[static_cast<std::size_t>(a)] < dominant[static_cast<std::size_t>(b)];
  });

  SpectralPair out;
  out.face_id = face_id;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    // Round-off can push the smallest eigenvalues of a PSD form slightly negative.
    out.eigenvalues[k] = std::abs(lam[src]) <= 1e-13 * scale ? 0.0 : lam[src];
    out.eigenvectors.col(k) = vec.col(src);
  }
  return out;
}

OfflineSpace build_offline(const GridHierarchy& grid, const PermeabilityField& kappa, int per_face) {
  if (per_face < 1) throw InvalidArgument("offline basis count must be at least 1");
  const auto& interior = grid.interior_faces();
  for (int id : interior) {
    const int J = static_cast<int>(grid.coarse_face(id).fine_faces.size());
    if (per_face > J)
      throw InvalidArgument("offline basis count " + std::to_string(per_face) +
                            " exceeds the " + std::to_string(J) + " fine faces of coarse face " +
                            std::to_string(id));
  }
  OfflineSpace out{MultiscaleSpace(grid), std::vector<SpectralPair>(interior.size())};
  const long nfaces = static_cast<long>(interior.size());

  detail::parallel_for(nfaces, [&](long k) {
    const int id = interior[static_cast<std::size_t>(k)];
    const SnapshotSpace snap = build_snapshots(grid, kappa, id);
    const SpectralForms forms = spectral_forms(grid, kappa, snap);
    SpectralPair pair = solve_spectral(forms.A, forms.S, id);

    FaceBasis& b = out.space.bases()[static_cast<std::size_t>(k)];
    b.parts = snap.parts;
    b.interface = snap.interface;
    b.faces = snap.faces;
    b.traces = pair.eigenvectors.leftCols(per_face);
    b.columns = snap.columns * b.traces;
    b.levels.assign(static_cast<std::size_t>(per_face), 0);
    out.spectra[static_cast<std::size_t>(k)] = std::move(pair);
  });
  return out;
}

}  // namespace omgms
