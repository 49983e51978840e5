#include "omgms/mixed_problem.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "omgms/errors.hpp"

#ifdef OMGMS_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

namespace omgms {

namespace {

template <class T>
int find_sorted(const std::vector<T>& v, T x) {
  const auto it = std::lower_bound(v.begin(), v.end(), x);
  return (it != v.end() && *it == x) ? static_cast<int>(it - v.begin()) : -1;
}

int find_sorted(std::span<const FaceIndex> v, FaceIndex x) {
  const auto it = std::lower_bound(v.begin(), v.end(), x);
  return (it != v.end() && *it == x) ? static_cast<int>(it - v.begin()) : -1;
}

double mean(const Eigen::VectorXd& x) { return x.size() ? x.mean() : 0.0; }

std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

}  // namespace

int SaddleSystem::active_index(FaceIndex f) const { return find_sorted(active_faces, f); }
int SaddleSystem::boundary_index(FaceIndex f) const { return find_sorted(boundary_faces, f); }
int SaddleSystem::cell_index(CellIndex c) const { return find_sorted(cells, c); }

SparseMatrix SaddleSystem::full_A() const {
  const int na = num_active(), nb = num_boundary();
  std::vector<Eigen::Triplet<double>> t;
  for (int j = 0; j < A.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(A, j); it; ++it) t.emplace_back(it.row(), j, it.value());
  for (int j = 0; j < A_boundary.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(A_boundary, j); it; ++it) {
      t.emplace_back(it.row(), na + j, it.value());
      t.emplace_back(na + j, it.row(), it.value());
    }
  for (int j = 0; j < A_bb.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(A_bb, j); it; ++it)
      t.emplace_back(na + it.row(), na + j, it.value());
  SparseMatrix M(na + nb, na + nb);
  M.setFromTriplets(t.begin(), t.end());
  return M;
}

SparseMatrix SaddleSystem::full_B() const {
  const int na = num_active(), nb = num_boundary();
  std::vector<Eigen::Triplet<double>> t;
  for (int j = 0; j < B.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(B, j); it; ++it) t.emplace_back(it.row(), j, it.value());
  for (int j = 0; j < B_boundary.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(B_boundary, j); it; ++it)
      t.emplace_back(it.row(), na + j, it.value());
  SparseMatrix M(num_cells(), na + nb);
  M.setFromTriplets(t.begin(), t.end());
  return M;
}

SaddleSystem assemble(const GridHierarchy& grid, const PermeabilityField& kappa,
                      std::vector<CellIndex> cells) {
  if (cells.empty()) throw InvalidArgument("subdomain must contain at least one cell");
  if (!kappa.matches(grid)) throw InvalidArgument("permeability does not match the grid");
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  if (cells.front() < 0 || cells.back() >= grid.num_cells())
    throw InvalidArgument("subdomain cell index out of range");

  SaddleSystem sys;
  sys.cells = std::move(cells);
  const int dim = grid.dim();

  // Each face is touched once per adjacent subdomain cell.
  std::vector<FaceIndex> touched;
  touched.reserve(sys.cells.size() * 2 * static_cast<std::size_t>(dim));
  for (CellIndex c : sys.cells)
    for (int a = 0; a < dim; ++a) {
      const auto lr = grid.cell_faces(c, a);
      touched.push_back(lr[0]);
      touched.push_back(lr[1]);
    }
  std::sort(touched.begin(), touched.end());
  for (std::size_t i = 0; i < touched.size();) {
    std::size_t j = i;
    while (j < touched.size() && touched[j] == touched[i]) ++j;
    if (j - i == 2) {
      sys.active_faces.push_back(touched[i]);
    } else {
      const FaceIndex f = touched[i];
      sys.boundary_faces.push_back(f);
      const auto fc = grid.face_cells(f);
      // The subdomain cell sits on the minus side when its +axis normal points out.
      const bool minus_inside = fc[0] >= 0 && sys.cell_index(fc[0]) >= 0;
      sys.boundary_sign.push_back(minus_inside ? 1 : -1);
      sys.boundary_area.push_back(grid.face_area(grid.face_axis(f)));
    }
    i = j;
  }

  const int na = sys.num_active(), nb = sys.num_boundary(), nc = sys.num_cells();
  const double vol = grid.cell_volume();
  sys.cell_volume.assign(static_cast<std::size_t>(nc), vol);

  // Combined index: active faces first, boundary faces after.
  auto combined = [&](FaceIndex f) {
    const int ia = sys.active_index(f);
    return ia >= 0 ? ia : na + sys.boundary_index(f);
  };

  std::vector<Eigen::Triplet<double>> ta, tab, tbb, tb, tbnd;
  for (int ic = 0; ic < nc; ++ic) {
    const CellIndex c = sys.cells[static_cast<std::size_t>(ic)];
    const double w = vol / kappa[c];
    for (int a = 0; a < dim; ++a) {
      const auto lr = grid.cell_faces(c, a);
      const int l = combined(lr[0]);
      const int r = combined(lr[1]);
      const double area = grid.face_area(a);
      const int idx[2] = {l, r};
      for (int p = 0; p < 2; ++p)
        for (int q = 0; q < 2; ++q) {
          const double val = (p == q ? w / 3.0 : w / 6.0);
          const int i = idx[p], j = idx[q];
          if (i < na && j < na) {
            ta.emplace_back(i, j, val);
          } else if (i < na) {
            tab.emplace_back(i, j - na, val);
          } else if (j >= na) {
            tbb.emplace_back(i - na, j - na, val);
          }
        }
      for (int p = 0; p < 2; ++p) {
        const double val = p == 0 ? -area : area;
        if (idx[p] < na) {
          tb.emplace_back(ic, idx[p], val);
        } else {
          tbnd.emplace_back(ic, idx[p] - na, val);
        }
      }
    }
  }
  sys.A.resize(na, na);
  sys.A.setFromTriplets(ta.begin(), ta.end());
  sys.A_boundary.resize(na, nb);
  sys.A_boundary.setFromTriplets(tab.begin(), tab.end());
  sys.B.resize(nc, na);
  sys.B.setFromTriplets(tb.begin(), tb.end());
  sys.B_boundary.resize(nc, nb);
  sys.B_boundary.setFromTriplets(tbnd.begin(), tbnd.end());
  sys.A_bb.resize(nb, nb);
  sys.A_bb.setFromTriplets(tbb.begin(), tbb.end());
  sys.F = Eigen::VectorXd::Zero(nc);
  return sys;
}

SaddleSystem assemble_global(const GridHierarchy& grid, const PermeabilityField& kappa,
                             const Eigen::VectorXd& cell_sources) {
  if (cell_sources.size() != grid.num_cells())
    throw InvalidArgument("source vector must have one entry per fine cell");
  std::vector<CellIndex> all(static_cast<std::size_t>(grid.num_cells()));
  std::iota(all.begin(), all.end(), 0);
  SaddleSystem sys = assemble(grid, kappa, std::move(all));
  sys.F = cell_sources;
  return sys;
}

// ---------------------------------------------------------------------------

struct SaddleSolver::Factor {
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> simplicial;
#ifdef OMGMS_HAVE_CHOLMOD
  Eigen::CholmodSupernodalLLT<SparseMatrix> supernodal;
#endif
  bool use_supernodal = false;

  bool compute(const SparseMatrix& T) {
#ifdef OMGMS_HAVE_CHOLMOD
    if (T.rows() > 4000) {
      use_supernodal = true;
      supernodal.compute(T);
      return supernodal.info() == Eigen::Success;
    }
#endif
    simplicial.compute(T);
    return simplicial.info() == Eigen::Success;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& r) const {
#ifdef OMGMS_HAVE_CHOLMOD
    if (use_supernodal) return supernodal.solve(r);
#endif
    return simplicial.solve(r);
  }
};

SaddleSolver::SaddleSolver(SaddleSystem system, double tolerance)
    : sys_(std::move(system)), tol_(tolerance) {
  factor_chains();
  build_preconditioner();
}

void SaddleSolver::factor_chains() {
  const int na = sys_.num_active();
  std::vector<std::array<int, 2>> nbr(static_cast<std::size_t>(na), {-1, -1});
  for (int j = 0; j < na; ++j) {
    int deg = 0;
    for (SparseMatrix::InnerIterator it(sys_.A, j); it; ++it) {
      if (it.row() == j) continue;
      if (deg == 2) throw Error("velocity mass matrix is not line structured");
      nbr[static_cast<std::size_t>(j)][static_cast<std::size_t>(deg++)] = static_cast<int>(it.row());
    }
  }
  std::vector<char> seen(static_cast<std::size_t>(na), 0);
  order_.clear();
  chain_start_.clear();
  auto walk = [&](int start) {
    chain_start_.push_back(static_cast<int>(order_.size()));
    int prev = -1, cur = start;
    while (cur >= 0 && !seen[static_cast<std::size_t>(cur)]) {
      seen[static_cast<std::size_t>(cur)] = 1;
      order_.push_back(cur);
      const auto& nb = nbr[static_cast<std::size_t>(cur)];
      const int next = nb[0] != prev ? nb[0] : nb[1];
      prev = cur;
      cur = next;
    }
  };
  for (int j = 0; j < na; ++j) {
    const auto& nb = nbr[static_cast<std::size_t>(j)];
    if (!seen[static_cast<std::size_t>(j)] && (nb[0] < 0 || nb[1] < 0)) walk(j);
  }
  if (static_cast<int>(order_.size()) != na) throw Error("velocity mass matrix has cyclic lines");
  chain_start_.push_back(na);

  pivot_.assign(static_cast<std::size_t>(na), 0.0);
  lower_.assign(static_cast<std::size_t>(na), 0.0);
  for (std::size_t c = 0; c + 1 < chain_start_.size(); ++c) {
    for (int k = chain_start_[c]; k < chain_start_[c + 1]; ++k) {
      const int i = order_[static_cast<std::size_t>(k)];
      const double d = sys_.A.coeff(i, i);
      if (k == chain_start_[c]) {
        pivot_[static_cast<std::size_t>(k)] = d;
      } else {
        const int ip = order_[static_cast<std::size_t>(k - 1)];
        const double e = sys_.A.coeff(i, ip);
        const double l = e / pivot_[static_cast<std::size_t>(k - 1)];
        lower_[static_cast<std::size_t>(k)] = l;
        pivot_[static_cast<std::size_t>(k)] = d - l * e;
      }
      if (!(pivot_[static_cast<std::size_t>(k)] > 0.0))
        throw ConditioningError("velocity mass matrix is not positive definite");
    }
  }
}

void SaddleSolver::build_preconditioner() {
  const int na = sys_.num_active(), nc = sys_.num_cells();
  // Row-lumped mass: sum of |entries| over the full row, boundary columns included.
  Eigen::VectorXd lumped = Eigen::VectorXd::Zero(na);
  for (int j = 0; j < na; ++j)
    for (SparseMatrix::InnerIterator it(sys_.A, j); it; ++it) lumped[it.row()] += std::abs(it.value());
  for (int j = 0; j < sys_.A_boundary.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(sys_.A_boundary, j); it; ++it)
      lumped[it.row()] += std::abs(it.value());

  // Connectivity through active faces.
  std::vector<int> comp(static_cast<std::size_t>(nc), -1);
  {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(nc));
    for (int f = 0; f < na; ++f) {
      int cs[2] = {-1, -1}, k = 0;
      for (SparseMatrix::InnerIterator it(sys_.B, f); it; ++it)
        if (k < 2) cs[k++] = static_cast<int>(it.row());
      if (k == 2) {
        adj[static_cast<std::size_t>(cs[0])].push_back(cs[1]);
        adj[static_cast<std::size_t>(cs[1])].push_back(cs[0]);
      }
    }
    int ncomp = 0;
    std::vector<int> stack;
    for (int s = 0; s < nc; ++s) {
      if (comp[static_cast<std::size_t>(s)] >= 0) continue;
      comp[static_cast<std::size_t>(s)] = ncomp;
      stack.push_back(s);
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (int v : adj[static_cast<std::size_t>(u)])
          if (comp[static_cast<std::size_t>(v)] < 0) {
            comp[static_cast<std::size_t>(v)] = ncomp;
            stack.push_back(v);
          }
      }
      ++ncomp;
    }
    if (ncomp > 1)
      throw SingularityError("subdomain has " + std::to_string(ncomp) +
                             " disconnected components");
  }

  SparseMatrix T = sys_.B * lumped.cwiseInverse().asDiagonal() * sys_.B.transpose();
  // Pin one cell; the projected preconditioner then equals the pseudo-inverse of T.
  const double t00 = T.coeff(0, 0);
  T.coeffRef(0, 0) += t00 > 0.0 ? t00 : 1.0;
  auto factor = std::make_shared<Factor>();
  const bool ok = factor->compute(T);
  precond_ = factor;
  if (!ok)
    throw ConditioningError("two-point preconditioner factorization failed");
}

Eigen::VectorXd SaddleSolver::apply_mass_inverse(const Eigen::VectorXd& rhs) const {
  Eigen::VectorXd x(rhs.size());
  std::vector<double> y;
  for (std::size_t c = 0; c + 1 < chain_start_.size(); ++c) {
    const int b = chain_start_[c], e = chain_start_[c + 1];
    y.resize(static_cast<std::size_t>(e - b));
    for (int k = b; k < e; ++k) {
      const double prev = k > b ? y[static_cast<std::size_t>(k - b - 1)] : 0.0;
      y[static_cast<std::size_t>(k - b)] =
          rhs[order_[static_cast<std::size_t>(k)]] - lower_[static_cast<std::size_t>(k)] * prev;
    }
    double next = 0.0;
    for (int k = e - 1; k >= b; --k) {
      const double l_next = k + 1 < e ? lower_[static_cast<std::size_t>(k + 1)] : 0.0;
      next = y[static_cast<std::size_t>(k - b)] / pivot_[static_cast<std::size_t>(k)] - l_next * next;
      x[order_[static_cast<std::size_t>(k)]] = next;
    }
  }
  return x;
}

Eigen::VectorXd SaddleSolver::apply_schur(const Eigen::VectorXd& p) const {
  return sys_.B * apply_mass_inverse(sys_.B.transpose() * p);
}

Eigen::VectorXd SaddleSolver::precondition(const Eigen::VectorXd& r) const {
  Eigen::VectorXd z = precond_->solve((r.array() - mean(r)).matrix());
  z.array() -= mean(z);
  return z;
}

Eigen::VectorXd SaddleSolver::schur_solve(const Eigen::VectorXd& rhs, int* iterations) const {
  const int nc = sys_.num_cells();
  Eigen::VectorXd b = rhs;
  b.array() -= mean(b);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(nc);
  const double bnorm = b.norm();
  int iters = 0;
  if (bnorm == 0.0 || sys_.num_active() == 0) {
    if (iterations) *iterations = 0;
    return x;
  }
  // Restarted PCG; every restart recomputes the true residual. A cycle ends at
  // the target or when the recursive residual stops improving (roundoff floor).
  constexpr int kMaxIter = 5000;
  constexpr int kStall = 40;
  for (int restart = 0; restart < 4 && iters < kMaxIter; ++restart) {
    Eigen::VectorXd r = b - apply_schur(x);
    r.array() -= mean(r);
    double best = r.norm();
    if (best <= tol_ * bnorm) break;
    const double start = best;
    int since_best = 0;
    Eigen::VectorXd z = precondition(r);
    Eigen::VectorXd d = z;
    double rz = r.dot(z);
    for (; iters < kMaxIter; ++iters) {
      const Eigen::VectorXd q = apply_schur(d);
      const double dq = d.dot(q);
      if (!(dq > 0.0)) break;
      const double alpha = rz / dq;
      x += alpha * d;
      r -= alpha * q;
      const double rn = r.norm();
      if (rn <= 0.1 * tol_ * bnorm) {
        ++iters;
        break;
      }
      if (rn < 0.5 * best) {
        best = rn;
        since_best = 0;
      } else if (++since_best > kStall) {
        break;
      }
      z = precondition(r);
      const double rz_new = r.dot(z);
      d = z + (rz_new / rz) * d;
      rz = rz_new;
    }
    const Eigen::VectorXd rt = b - apply_schur(x);
    if (rt.norm() > 0.5 * start) break;
  }
  x.array() -= mean(x);
  if (!schur_accepts(b, x, sys_.B.cwiseAbs())) {
    const double res = (b - apply_schur(x)).norm();
    throw ConditioningError("pressure Schur complement iteration did not converge (relative residual " +
                            sci(res / bnorm) + ")");
  }
  if (iterations) *iterations = iters;
  return x;
}

bool SaddleSolver::schur_accepts(const Eigen::VectorXd& b, const Eigen::VectorXd& x,
                                 const SparseMatrix& absB) const {
  // Accept when the residual is small against the data or against the face
  // fluxes it is computed from; the latter bounds the attainable accuracy.
  const Eigen::VectorXd v = apply_mass_inverse(sys_.B.transpose() * x);
  const double flux_scale = (absB * v.cwiseAbs()).norm();
  const double final_res = (b - sys_.B * v).norm();
  return final_res <= 1e-9 * std::max(b.norm(), flux_scale);
}

Eigen::MatrixXd SaddleSolver::schur_solve_block(const Eigen::MatrixXd& rhs) const {
  constexpr int kDenseCells = 1500;
  constexpr int kDenseColumns = 8;
  const int nc = sys_.num_cells();
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(nc, rhs.cols());
  if (nc > kDenseCells || rhs.cols() < kDenseColumns || sys_.num_active() == 0) {
    for (Eigen::Index j = 0; j < rhs.cols(); ++j) X.col(j) = schur_solve(rhs.col(j));
    return X;
  }
  // S has the constants as its null space; the rank-one term makes it definite
  // without changing the solution for zero-mean data.
  Eigen::MatrixXd S(nc, nc);
  for (int c = 0; c < nc; ++c) S.col(c) = apply_schur(Eigen::VectorXd::Unit(nc, c));
  S = 0.5 * (S + S.transpose()).eval();
  const double sigma = S.diagonal().mean() / nc;
  Eigen::MatrixXd Sg = S;
  Sg.array() += sigma;
  const Eigen::LLT<Eigen::MatrixXd> llt(Sg);
  Eigen::MatrixXd B = rhs;
  B.rowwise() -= B.colwise().mean();
  if (llt.info() == Eigen::Success) {
    X = llt.solve(B);
    // Refine against the sparse operator; the dense S carries absolute
    // roundoff that swamps its small entries at high contrast.
    Eigen::MatrixXd R(nc, X.cols());
    double last = B.norm();
    for (int pass = 0; pass < 8; ++pass) {
      for (Eigen::Index j = 0; j < X.cols(); ++j) R.col(j) = B.col(j) - apply_schur(X.col(j));
      R.rowwise() -= R.colwise().mean();
      const double rn = R.norm();
      if (!(rn < 0.5 * last)) break;
      last = rn;
      X += llt.solve(R);
    }
    X.rowwise() -= X.colwise().mean();
  }
  const SparseMatrix absB = sys_.B.cwiseAbs();
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const Eigen::VectorXd b = B.col(j);
    if (llt.info() != Eigen::Success || !schur_accepts(b, X.col(j), absB)) X.col(j) = schur_solve(b);
  }
  return X;
}

MixedSolution SaddleSolver::solve(const Eigen::VectorXd& F, const Eigen::VectorXd& g) const {
  if (F.size() != sys_.num_cells() || g.size() != sys_.num_boundary())
    throw InvalidArgument("saddle solve: data size mismatch");
  const Eigen::VectorXd bflux = sys_.B_boundary * g;
  const double defect = F.sum() - bflux.sum();
  const double scale = F.lpNorm<1>() + bflux.lpNorm<1>();
  if (std::abs(defect) > 1e-10 * scale)
    throw CompatibilityError("incompatible Neumann data: source minus outward flux = " +
                                 std::to_string(defect),
                             defect);

  MixedSolution sol;
  sol.boundary_flux = g;
  if (scale == 0.0) {
    sol.velocity = Eigen::VectorXd::Zero(sys_.num_active());
    sol.pressure = Eigen::VectorXd::Zero(sys_.num_cells());
    return sol;
  }
  const Eigen::VectorXd lift = sys_.A_boundary * g;
  const Eigen::VectorXd rhs = F - bflux + sys_.B * apply_mass_inverse(lift);
  sol.pressure = schur_solve(rhs, &sol.iterations);
  sol.velocity = apply_mass_inverse(sys_.B.transpose() * sol.pressure - lift);
  return sol;
}

MixedSolution SaddleSolver::solve() const {
  return solve(sys_.F, Eigen::VectorXd::Zero(sys_.num_boundary()));
}

MixedSolution solve_global(const SaddleSystem& sys, const Eigen::VectorXd& boundary_flux) {
  SaddleSolver solver(sys);
  return solver.solve(sys.F, boundary_flux);
}

// ---------------------------------------------------------------------------

int LocalField::row_of(FaceIndex f) const { return find_sorted(faces, f); }

LocalNeumannOperator::LocalNeumannOperator(const GridHierarchy& grid,
                                           const PermeabilityField& kappa,
                                           std::vector<std::vector<CellIndex>> parts,
                                           std::vector<FaceIndex> interface, Compatibility mode)
    : interface_(std::move(interface)), mode_(mode) {
  if (parts.empty()) throw InvalidArgument("local Neumann problem needs at least one part");
  std::vector<FaceIndex> sorted_iface = interface_;
  std::sort(sorted_iface.begin(), sorted_iface.end());
  if (std::adjacent_find(sorted_iface.begin(), sorted_iface.end()) != sorted_iface.end())
    throw InvalidArgument("interface faces must be distinct");
  std::vector<int> iface_pos(interface_.size());
  {
    std::vector<int> perm(interface_.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::sort(perm.begin(), perm.end(), [&](int a, int b) {
      return interface_[static_cast<std::size_t>(a)] < interface_[static_cast<std::size_t>(b)];
    });
    iface_pos = perm;  // iface_pos[k] = original position of sorted_iface[k]
  }

  std::vector<char> iface_used(interface_.size(), 0);
  solvers_.reserve(parts.size());
  for (auto& part : parts) {
    solvers_.emplace_back(assemble(grid, kappa, std::move(part)));
    const SaddleSystem& sys = solvers_.back().system();
    std::vector<int> b2i(static_cast<std::size_t>(sys.num_boundary()), -1);
    for (int b = 0; b < sys.num_boundary(); ++b) {
      const int k = find_sorted(sorted_iface, sys.boundary_faces[static_cast<std::size_t>(b)]);
      if (k >= 0) {
        b2i[static_cast<std::size_t>(b)] = iface_pos[static_cast<std::size_t>(k)];
        iface_used[static_cast<std::size_t>(iface_pos[static_cast<std::size_t>(k)])] = 1;
      }
    }
    // An interface face strictly inside a part is not a Neumann face.
    for (FaceIndex f : sys.active_faces)
      if (find_sorted(sorted_iface, f) >= 0)
        throw InvalidArgument("interface face lies inside a part");
    boundary_to_interface_.push_back(std::move(b2i));
  }
  for (std::size_t k = 0; k < iface_used.size(); ++k)
    if (!iface_used[k]) throw InvalidArgument("interface face does not touch any part");

  faces_ = sorted_iface;
  for (const auto& s : solvers_)
    faces_.insert(faces_.end(), s.system().active_faces.begin(), s.system().active_faces.end());
  std::sort(faces_.begin(), faces_.end());
  if (std::adjacent_find(faces_.begin(), faces_.end()) != faces_.end())
    throw InvalidArgument("local Neumann parts overlap");

  for (const auto& s : solvers_) {
    std::vector<int> rows;
    rows.reserve(s.system().active_faces.size());
    for (FaceIndex f : s.system().active_faces) rows.push_back(find_sorted(faces_, f));
    active_rows_.push_back(std::move(rows));
  }
  for (FaceIndex f : interface_) interface_rows_.push_back(find_sorted(faces_, f));
}

LocalField LocalNeumannOperator::apply(const Eigen::MatrixXd& g) const {
  if (g.rows() != static_cast<Eigen::Index>(interface_.size()))
    throw InvalidArgument("interface data has wrong number of rows");
  const Eigen::Index ncols = g.cols();
  LocalField out;
  out.faces = faces_;
  out.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(faces_.size()), ncols);
  out.compat = Eigen::MatrixXd::Zero(num_parts(), ncols);
  for (std::size_t k = 0; k < interface_rows_.size(); ++k)
    out.values.row(interface_rows_[k]) = g.row(static_cast<Eigen::Index>(k));

  for (int p = 0; p < num_parts(); ++p) {
    const SaddleSolver& solver = solvers_[static_cast<std::size_t>(p)];
    const SaddleSystem& sys = solver.system();
    const auto& b2i = boundary_to_interface_[static_cast<std::size_t>(p)];
    const auto& rows = active_rows_[static_cast<std::size_t>(p)];
    const double volume = std::accumulate(sys.cell_volume.begin(), sys.cell_volume.end(), 0.0);
    out.part_cells.push_back(sys.cells);
    out.pressure.emplace_back(sys.num_cells(), ncols);
    // Boundary data and sources per column, then one block pressure solve.
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(sys.num_boundary(), ncols);
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(sys.num_cells(), ncols);
    for (Eigen::Index col = 0; col < ncols; ++col) {
      Eigen::VectorXd gb = Eigen::VectorXd::Zero(sys.num_boundary());
      double net = 0.0, scale = 0.0;
      for (int b = 0; b < sys.num_boundary(); ++b) {
        const int k = b2i[static_cast<std::size_t>(b)];
        if (k < 0) continue;
        gb[b] = g(k, col);
        const double flux = sys.boundary_sign[static_cast<std::size_t>(b)] *
                            sys.boundary_area[static_cast<std::size_t>(b)] * gb[b];
        net += flux;
        scale += std::abs(flux);
      }
      if (mode_ == Compatibility::PerPartConstant) {
        const double alpha = net / volume;
        out.compat(p, col) = alpha;
        for (int c = 0; c < sys.num_cells(); ++c) F(c, col) = alpha * sys.cell_volume[static_cast<std::size_t>(c)];
      } else if (std::abs(net) > 1e-10 * scale) {
        throw CompatibilityError("zero-source local problem has net boundary flux", net);
      }
      G.col(col) = gb;
    }
    const Eigen::MatrixXd lift = sys.A_boundary * G;
    Eigen::MatrixXd rhs = F - sys.B_boundary * G;
    for (Eigen::Index col = 0; col < ncols; ++col) rhs.col(col) += sys.B * solver.apply_mass_inverse(lift.col(col));
    const Eigen::MatrixXd P = solver.schur_solve_block(rhs);
    for (Eigen::Index col = 0; col < ncols; ++col) {
      const Eigen::VectorXd v = solver.apply_mass_inverse(sys.B.transpose() * P.col(col) - lift.col(col));
      for (int i = 0; i < sys.num_active(); ++i) out.values(rows[static_cast<std::size_t>(i)], col) = v[i];
    }
    out.pressure.back() = P;
  }
  return out;
}

Eigen::VectorXd LocalNeumannOperator::adjoint(const Eigen::VectorXd& r) const {
  if (r.size() != static_cast<Eigen::Index>(faces_.size()))
    throw InvalidArgument("adjoint weights must live on the operator faces");
  Eigen::VectorXd t = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(interface_.size()));
  for (std::size_t k = 0; k < interface_rows_.size(); ++k) t[static_cast<Eigen::Index>(k)] += r[interface_rows_[k]];

  for (int p = 0; p < num_parts(); ++p) {
    const SaddleSolver& solver = solvers_[static_cast<std::size_t>(p)];
    const SaddleSystem& sys = solver.system();
    const auto& rows = active_rows_[static_cast<std::size_t>(p)];
    Eigen::VectorXd ra(sys.num_active());
    for (int i = 0; i < sys.num_active(); ++i) ra[i] = r[rows[static_cast<std::size_t>(i)]];
    // With y = A^{-1} r_a and z = S^+ B y, the velocity functional r_a . v(g_b) is
    //   z . (F(g_b) - B_b g_b + B A^{-1} A_b g_b) - y . A_b g_b.
    const Eigen::VectorXd y = solver.apply_mass_inverse(ra);
    const Eigen::VectorXd z = solver.schur_solve(sys.B * y);
    Eigen::VectorXd grad = -(sys.B_boundary.transpose() * z) +
                           sys.A_boundary.transpose() * (solver.apply_mass_inverse(sys.B.transpose() * z) - y);
    if (mode_ == Compatibility::PerPartConstant) {
      double zv = 0.0, volume = 0.0;
      for (int c = 0; c < sys.num_cells(); ++c) {
        zv += z[c] * sys.cell_volume[static_cast<std::size_t>(c)];
        volume += sys.cell_volume[static_cast<std::size_t>(c)];
      }
      for (int b = 0; b < sys.num_boundary(); ++b)
        grad[b] += zv / volume * sys.boundary_sign[static_cast<std::size_t>(b)] *
                   sys.boundary_area[static_cast<std::size_t>(b)];
    }
    const auto& b2i = boundary_to_interface_[static_cast<std::size_t>(p)];
    for (int b = 0; b < sys.num_boundary(); ++b) {
      const int k = b2i[static_cast<std::size_t>(b)];
      if (k >= 0) t[k] += grad[b];
    }
  }
  return t;
}

LocalField solve_local_neumann(const GridHierarchy& grid, const PermeabilityField& kappa,
                               const std::vector<std::vector<CellIndex>>& parts,
                               std::span<const FaceIndex> interface,
                               const Eigen::MatrixXd& interface_flux, Compatibility mode) {
  LocalNeumannOperator op(grid, kappa, parts,
                          std::vector<FaceIndex>(interface.begin(), interface.end()), mode);
  return op.apply(interface_flux);
}

// ---------------------------------------------------------------------------

Eigen::VectorXd cell_divergence(const GridHierarchy& grid, std::span<const CellIndex> cells,
                                std::span<const FaceIndex> faces, const Eigen::VectorXd& values) {
  Eigen::VectorXd div = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    double d = 0.0;
    for (int a = 0; a < grid.dim(); ++a) {
      const auto lr = grid.cell_faces(cells[i], a);
      const int l = find_sorted(faces, lr[0]);
      const int r = find_sorted(faces, lr[1]);
      const double vl = l >= 0 ? values[l] : 0.0;
      const double vr = r >= 0 ? values[r] : 0.0;
      d += (vr - vl) / grid.h()[static_cast<std::size_t>(a)];
    }
    div[static_cast<Eigen::Index>(i)] = d;
  }
  return div;
}

SparseMatrix local_mass_matrix(const GridHierarchy& grid, const PermeabilityField& kappa,
                               std::span<const CellIndex> cells, std::span<const FaceIndex> faces) {
  const double vol = grid.cell_volume();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(cells.size() * static_cast<std::size_t>(4 * grid.dim()));
  for (CellIndex c : cells) {
    const double w = vol / kappa[c];
    for (int a = 0; a < grid.dim(); ++a) {
      const auto lr = grid.cell_faces(c, a);
      const int idx[2] = {find_sorted(faces, lr[0]), find_sorted(faces, lr[1])};
      for (int p = 0; p < 2; ++p)
        for (int q = 0; q < 2; ++q)
          if (idx[p] >= 0 && idx[q] >= 0) t.emplace_back(idx[p], idx[q], p == q ? w / 3.0 : w / 6.0);
    }
  }
  const auto n = static_cast<Eigen::Index>(faces.size());
  SparseMatrix M(n, n);
  M.setFromTriplets(t.begin(), t.end());
  return M;
}

Eigen::MatrixXd local_mass_gram(const GridHierarchy& grid, const PermeabilityField& kappa,
                                std::span<const CellIndex> cells,
                                std::span<const FaceIndex> faces, const Eigen::MatrixXd& u,
                                const Eigen::MatrixXd& w) {
  const SparseMatrix M = local_mass_matrix(grid, kappa, cells, faces);
  return u.transpose() * (M * w);
}

}  // namespace omgms
