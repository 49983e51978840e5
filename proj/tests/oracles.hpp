// Independent reference implementations used by the test suites.
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "omgms/fields.hpp"
#include "omgms/grid.hpp"

namespace oracle {

using omgms::GridHierarchy;
using omgms::Index3;

/// Log-uniform random permeability in [lo, hi].
inline omgms::PermeabilityField random_kappa(const GridHierarchy& g, double lo, double hi,
                                             unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  std::vector<double> v(static_cast<std::size_t>(g.num_cells()));
  for (double& x : v) x = std::exp(u(rng));
  return {g.fine_counts(), v};
}

/// Dense mixed system on the whole domain with no-flow boundary, built cell by
/// cell from the RT0 element matrices, and solved with a Lagrange multiplier
/// fixing the pressure mean. Unknowns: one per face of the global lattice
/// (boundary ones pinned to zero), one per cell.
struct DenseResult {
  Eigen::VectorXd face_velocity;  // indexed by global face id
  Eigen::VectorXd pressure;       // indexed by cell id
};

inline DenseResult dense_global_solve(const GridHierarchy& g, const omgms::PermeabilityField& k,
                                      const Eigen::VectorXd& F) {
  const int nf = g.num_faces(), nc = g.num_cells();
  const int N = nf + nc + 1;
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(N, N);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N);
  const auto& h = g.h();
  const double vol = h[0] * h[1] * h[2];
  const auto& fc = g.fine_counts();
  for (int c = 0; c < nc; ++c) {
    const int i = c % fc[0], j = (c / fc[0]) % fc[1], kk = c / (fc[0] * fc[1]);
    for (int a = 0; a < g.dim(); ++a) {
      Index3 lo{i, j, kk}, hi{i, j, kk};
      hi[a] += 1;
      const int fl = g.face(a, lo), fr = g.face(a, hi);
      // phi_L = (1 - t) e_a, phi_R = t e_a for the local coordinate t in [0,1].
      const double m = vol / k[c];
      K(fl, fl) += m / 3;
      K(fr, fr) += m / 3;
      K(fl, fr) += m / 6;
      K(fr, fl) += m / 6;
      const double area = vol / h[a];
      // -B^T p block and B block.
      K(fl, nf + c) += area;
      K(fr, nf + c) -= area;
      K(nf + c, fl) -= area;
      K(nf + c, fr) += area;
    }
    rhs[nf + c] = F[c];
    K(nf + c, N - 1) = 1.0;
    K(N - 1, nf + c) = 1.0;
  }
  for (int f = 0; f < nf; ++f) {
    if (g.boundary_face(f)) {
      K.row(f).setZero();
      K.col(f).setZero();
      K(f, f) = 1.0;
    }
  }
  const Eigen::VectorXd x = K.fullPivLu().solve(rhs);
  return {x.head(nf), x.segment(nf, nc)};
}

/// Relative 2-norm difference.
inline double rel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double s = std::max(b.norm(), 1e-300);
  return (a - b).norm() / s;
}

/// Zero-sum random cell sources.
inline Eigen::VectorXd random_sources(int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> d;
  Eigen::VectorXd f(n);
  for (int i = 0; i < n; ++i) f[i] = d(rng);
  f.array() -= f.mean();
  return f;
}

}  // namespace oracle
