#include "omgms/online.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <cstdio>
#include <map>

#include "omgms/errors.hpp"
#include "omgms/metrics.hpp"
#include "omgms/offline.hpp"
#include "parallel.hpp"

namespace omgms {

namespace {

std::array<std::vector<CellIndex>, 2> block_parts(const GridHierarchy& grid, int face_id) {
  const Neighborhood nb = grid.neighborhood(face_id);
  return {grid.cells_in(nb.blocks[0]), grid.cells_in(nb.blocks[1])};
}

Eigen::LLT<Eigen::MatrixXd> factor_reduced(const Eigen::MatrixXd& PtGP) {
  Eigen::LLT<Eigen::MatrixXd> llt(PtGP);
  if (llt.info() != Eigen::Success)
    throw ConditioningError("reduced oversampled Gram matrix is not positive definite");
  const Eigen::VectorXd d = llt.matrixLLT().diagonal();
  const double ratio = d.minCoeff() / d.maxCoeff();
  if (!(ratio * ratio > 1e-14))
    throw ConditioningError("reduced oversampled Gram matrix is numerically singular", ratio * ratio);
  return llt;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

namespace {

Eigen::VectorXd gather(const SaddleSystem& fine, const Eigen::VectorXd& v, std::span<const FaceIndex> faces) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(faces.size()));
  for (std::size_t i = 0; i < faces.size(); ++i) {
    const int k = fine.active_index(faces[i]);
    out[static_cast<Eigen::Index>(i)] = k >= 0 ? v[k] : 0.0;
  }
  return out;
}

}  // namespace

Eigen::VectorXd ResidualFunctional::restrict_to(std::span<const FaceIndex> faces) const {
  return gather(*fine, values, faces);
}

Eigen::VectorXd ResidualFunctional::restrict_flux_to(std::span<const FaceIndex> faces) const {
  return gather(*fine, flux_part.size() ? flux_part : values, faces);
}

ResidualFunctional compute_residual(const SaddleSystem& fine, const CoarseSolution& solution) {
  if (solution.velocity.size() != fine.num_active() || solution.pressure.size() != fine.num_cells())
    throw InvalidArgument("coarse solution does not live on the fine system");
  ResidualFunctional r;
  r.fine = &fine;
  r.flux_part = -(fine.A * solution.velocity);
  r.values = fine.B.transpose() * solution.pressure + r.flux_part;
  return r;
}

// ---------------------------------------------------------------------------

OversampledProblem::OversampledProblem(const GridHierarchy& grid, const PermeabilityField& kappa,
                                       int face_id, const OversamplingOffsets& offsets)
    : face_id_(face_id),
      op_([&] {
        const OversampledNeighborhood on = grid.oversampled_neighborhood(face_id, offsets);
        return LocalNeumannOperator(grid, kappa,
                                    {grid.cells_in(on.half_domains[0]), grid.cells_in(on.half_domains[1])},
                                    on.extended_interface);
      }()) {
  positions_ = grid.oversampled_neighborhood(face_id, offsets).coarse_face_positions;
  const auto J = static_cast<Eigen::Index>(op_.interface().size());
  const Eigen::MatrixXd columns = op_.apply(Eigen::MatrixXd::Identity(J, J)).values;
  std::vector<CellIndex> cells;
  for (int p = 0; p < op_.num_parts(); ++p) {
    const auto& c = op_.part_solver(p).system().cells;
    cells.insert(cells.end(), c.begin(), c.end());
  }
  std::sort(cells.begin(), cells.end());
  const SparseMatrix M = local_mass_matrix(grid, kappa, cells, op_.faces());
  gram_ = columns.transpose() * (M * columns);
  gram_ = 0.5 * (gram_ + gram_.transpose()).eval();
  P_ = divergence_free_reduction(static_cast<int>(J));
  reduced_ = factor_reduced(P_.transpose() * gram_ * P_);
  // Up to 2 MB per face; the adjoint route agrees only to solver accuracy,
  // which the reduced solve amplifies by the contrast.
  constexpr Eigen::Index kColumnBudget = Eigen::Index{1} << 18;
  if (columns.size() <= kColumnBudget) columns_ = columns;
}

Eigen::VectorXd OversampledProblem::rhs(const ResidualFunctional& r) const {
  const Eigen::VectorXd rf = r.restrict_flux_to(op_.faces());
  if (stores_columns()) return P_.transpose() * (columns_.transpose() * rf);
  return P_.transpose() * op_.adjoint(rf);
}

Eigen::VectorXd OversampledProblem::solve(const ResidualFunctional& r) const { return reduced_.solve(rhs(r)); }

Eigen::VectorXd OversampledProblem::solve_reduced(const Eigen::VectorXd& rhs) const { return reduced_.solve(rhs); }

Eigen::VectorXd solve_oversampled_residual(const SnapshotSpace& space, const Eigen::MatrixXd& P,
                                           const Eigen::MatrixXd& gram, const Eigen::VectorXd& r) {
  if (r.size() != static_cast<Eigen::Index>(space.faces.size()))
    throw InvalidArgument("residual must be given on the snapshot faces");
  const Eigen::LLT<Eigen::MatrixXd> llt = factor_reduced(P.transpose() * gram * P);
  return llt.solve(P.transpose() * (space.columns.transpose() * r));
}

std::optional<Eigen::VectorXd> restrict_and_normalize(const Eigen::VectorXd& trace,
                                                      std::span<const int> coarse_positions,
                                                      double tolerance) {
  Eigen::VectorXd lambda(static_cast<Eigen::Index>(coarse_positions.size()));
  for (std::size_t k = 0; k < coarse_positions.size(); ++k) {
    const int pos = coarse_positions[k];
    if (pos < 0 || pos >= trace.size()) throw InvalidArgument("coarse face position outside the trace");
    lambda[static_cast<Eigen::Index>(k)] = trace[pos];
  }
  const double norm = lambda.norm();
  if (!(norm >= tolerance)) return std::nullopt;
  lambda /= norm;
  const double big = lambda.cwiseAbs().maxCoeff();
  for (Eigen::Index k = 0; k < lambda.size(); ++k) {
    if (std::abs(lambda[k]) > 1e-12 * big) {
      if (lambda[k] < 0.0) lambda = -lambda;
      break;
    }
  }
  return lambda;
}

FaceLifter::FaceLifter(const GridHierarchy& grid, const PermeabilityField& kappa, int face_id)
    : op_([&] {
        auto parts = block_parts(grid, face_id);
        return LocalNeumannOperator(grid, kappa, {std::move(parts[0]), std::move(parts[1])},
                                    grid.coarse_face(face_id).fine_faces);
      }()) {
  std::vector<CellIndex> cells;
  for (int p = 0; p < op_.num_parts(); ++p) {
    const auto& c = op_.part_solver(p).system().cells;
    cells.insert(cells.end(), c.begin(), c.end());
  }
  std::sort(cells.begin(), cells.end());
  mass_ = local_mass_matrix(grid, kappa, cells, op_.faces());
}

OnlineBasis build_online_basis(const GridHierarchy& grid, const PermeabilityField& kappa, int face_id,
                               const Eigen::VectorXd& trace, int level) {
  const FaceLifter lifter(grid, kappa, face_id);
  if (trace.size() != static_cast<Eigen::Index>(lifter.interface().size()))
    throw InvalidArgument("trace length must equal the number of fine faces on the coarse face");
  OnlineBasis b;
  b.face_id = face_id;
  b.level = level;
  b.trace = trace;
  b.faces = lifter.faces();
  b.column = lifter.lift(trace).col(0);
  return b;
}

std::optional<Eigen::VectorXd> reference_online_trace(const GridHierarchy& grid,
                                                      const PermeabilityField& kappa, int face_id,
                                                      const ResidualFunctional& r) {
  const SnapshotSpace snap = build_snapshots(grid, kappa, face_id);
  const Eigen::MatrixXd G = snapshot_gram(grid, kappa, snap);
  const Eigen::MatrixXd P = divergence_free_reduction(snap.size());
  const Eigen::VectorXd y = solve_oversampled_residual(snap, P, G, r.restrict_flux_to(snap.faces));
  std::vector<int> identity(static_cast<std::size_t>(snap.size()));
  for (std::size_t k = 0; k < identity.size(); ++k) identity[k] = static_cast<int>(k);
  return restrict_and_normalize(P * y, identity);
}

// ---------------------------------------------------------------------------

std::vector<std::vector<int>> color_faces(const GridHierarchy& grid) {
  std::vector<std::vector<int>> batches;
  std::vector<std::vector<char>> used;  // per batch: blocks already covered
  for (int id : grid.interior_faces()) {
    const auto& blocks = grid.coarse_face(id).adjacent_blocks;
    std::size_t b = 0;
    for (; b < batches.size(); ++b) {
      if (!used[b][static_cast<std::size_t>(blocks[0])] && !used[b][static_cast<std::size_t>(blocks[1])]) break;
    }
    if (b == batches.size()) {
      batches.emplace_back();
      used.emplace_back(static_cast<std::size_t>(grid.num_blocks()), 0);
    }
    batches[b].push_back(id);
    used[b][static_cast<std::size_t>(blocks[0])] = 1;
    used[b][static_cast<std::size_t>(blocks[1])] = 1;
  }
  return batches;
}

OnlineEnricher::OnlineEnricher(const CoarseProblem& problem, const PermeabilityField& kappa,
                               EnrichmentOptions options)
    : problem_(&problem), kappa_(&kappa), options_(options) {
  const GridHierarchy& grid = problem.grid();
  const OversamplingOffsets& o = options_.offsets;
  if (o.d11 == 0 && o.d12 == 0 && o.d21 == 0 && o.d22 == 0)
    options_.offsets = OversamplingOffsets::no_oversampling(grid.fine_per_coarse());
  const auto& interior = grid.interior_faces();
  const long n = static_cast<long>(interior.size());
  std::vector<std::optional<OversampledProblem>> over(interior.size());
  std::vector<std::optional<FaceLifter>> lift(interior.size());
  detail::parallel_for(n, [&](long k) {
    const int id = interior[static_cast<std::size_t>(k)];
    over[static_cast<std::size_t>(k)].emplace(grid, kappa, id, options_.offsets);
    lift[static_cast<std::size_t>(k)].emplace(grid, kappa, id);
  });
  oversampled_.reserve(interior.size());
  lifters_.reserve(interior.size());
  for (std::size_t k = 0; k < interior.size(); ++k) {
    oversampled_.push_back(std::move(*over[k]));
    lifters_.push_back(std::move(*lift[k]));
  }
}

const OversampledProblem& OnlineEnricher::problem_for(int face_id) const {
  const auto& interior = problem_->grid().interior_faces();
  const auto it = std::lower_bound(interior.begin(), interior.end(), face_id);
  if (it == interior.end() || *it != face_id) throw InvalidArgument("not an interior coarse face");
  return oversampled_[static_cast<std::size_t>(it - interior.begin())];
}

OnlineEnricher::Candidate OnlineEnricher::propose(int slot, int iteration, const ResidualFunctional& r) const {
  const OversampledProblem& op = oversampled_[static_cast<std::size_t>(slot)];
  Candidate c;
  c.slot = slot;
  c.record.iteration = iteration;
  c.record.face_id = op.face_id();
  const Eigen::VectorXd rhs = op.rhs(r);
  const Eigen::VectorXd y = op.solve_reduced(rhs);
  c.record.riesz_norm = std::sqrt(std::max(rhs.dot(y), 0.0));
  const Eigen::VectorXd full = op.trace(y);
  Eigen::VectorXd restricted(static_cast<Eigen::Index>(op.coarse_positions().size()));
  for (std::size_t k = 0; k < op.coarse_positions().size(); ++k)
    restricted[static_cast<Eigen::Index>(k)] = full[op.coarse_positions()[k]];
  c.record.trace_norm = restricted.norm();
  const auto lambda = restrict_and_normalize(full, op.coarse_positions(), options_.trace_tolerance);
  if (!lambda) {
    c.record.status = "negligible-trace";
    return c;
  }
  c.trace = *lambda;
  c.column = lifters_[static_cast<std::size_t>(slot)].lift(c.trace).col(0);
  c.record.accepted = true;
  c.record.status = "accepted";
  return c;
}

void OnlineEnricher::screen(std::vector<Candidate>& candidates, const CoarseSolver& solver) const {
  const SaddleSystem& fine = problem_->fine();
  const SparseMatrix& R = solver.system().R;
  std::vector<Candidate*> pending;
  for (Candidate& c : candidates)
    if (c.record.accepted) pending.push_back(&c);
  const auto k = static_cast<Eigen::Index>(pending.size());
  if (k == 0) return;

  // Candidate columns as global fine vectors.
  std::vector<Eigen::Triplet<double>> t;
  for (Eigen::Index j = 0; j < k; ++j) {
    const Candidate& c = *pending[static_cast<std::size_t>(j)];
    const auto& faces = lifters_[static_cast<std::size_t>(c.slot)].faces();
    for (std::size_t i = 0; i < faces.size(); ++i) {
      const double x = c.column[static_cast<Eigen::Index>(i)];
      if (x != 0.0) t.emplace_back(fine.active_index(faces[i]), j, x);
    }
  }
  SparseMatrix X(fine.num_active(), k);
  X.setFromTriplets(t.begin(), t.end());
  const SparseMatrix AX = fine.A * X;
  Eigen::MatrixXd energy = Eigen::MatrixXd(SparseMatrix(X.transpose() * AX));
  // Schur complement of the current space: the A-inner products of the
  // candidates' components orthogonal to span(R).
  Eigen::MatrixXd K = energy;
  if (R.cols() > 0) {
    const Eigen::MatrixXd B = Eigen::MatrixXd(SparseMatrix(R.transpose() * AX));
    K -= B.transpose() * solver.mass_solve(B);
  }
  K = 0.5 * (K + K.transpose()).eval();

  // Ordered Cholesky with rejection: each candidate is tested against the
  // space plus the candidates accepted before it in this round.
  const double tol = options_.independence_tolerance;
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(k, k);
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < k; ++i) {
    for (std::size_t a = 0; a < kept.size(); ++a) {
      const Eigen::Index j = kept[a];
      double v = K(i, j);
      for (std::size_t m = 0; m < a; ++m) v -= L(i, kept[m]) * L(j, kept[m]);
      L(i, j) = v / L(j, j);
    }
    double d = K(i, i);
    for (Eigen::Index j : kept) d -= L(i, j) * L(i, j);
    Candidate& c = *pending[static_cast<std::size_t>(i)];
    c.record.orthogonal_fraction = energy(i, i) > 0.0 ? std::max(d, 0.0) / energy(i, i) : 0.0;
    if (!(energy(i, i) > 0.0) || d < tol * energy(i, i)) {
      c.record.accepted = false;
      c.record.status = "dependent";
      continue;
    }
    L(i, i) = std::sqrt(d);
    kept.push_back(i);
  }
}

void OnlineEnricher::commit(MultiscaleSpace& space, std::vector<Candidate>& candidates, int iteration,
                            std::vector<EnrichmentRecord>& log) const {
  if (options_.orthogonalize) {
    // Same span, better conditioned coarse matrix: A-orthogonalize the trace
    // against the face's existing columns, then lift it afresh so the column
    // stays an exact Neumann lift. At most one candidate per face.
    detail::parallel_for(static_cast<long>(candidates.size()), [&](long k) {
      Candidate& c = candidates[static_cast<std::size_t>(k)];
      const FaceBasis& b = space.bases()[static_cast<std::size_t>(c.slot)];
      if (!c.record.accepted || b.size() == 0) return;
      const FaceLifter& lifter = lifters_[static_cast<std::size_t>(c.slot)];
      const Eigen::MatrixXd MC = lifter.mass() * b.columns;
      const Eigen::LDLT<Eigen::MatrixXd> g(b.columns.transpose() * MC);
      for (int pass = 0; pass < 2; ++pass) {
        const Eigen::VectorXd coef = g.solve(MC.transpose() * c.column);
        c.column -= b.columns * coef;
        c.trace -= b.traces * coef;
      }
      c.trace /= c.trace.norm();
      c.column = lifter.lift(c.trace).col(0);
    });
  }
  for (Candidate& c : candidates) {
    log.push_back(c.record);
    if (!c.record.accepted) continue;
    FaceBasis& b = space.bases()[static_cast<std::size_t>(c.slot)];
    if (b.faces != lifters_[static_cast<std::size_t>(c.slot)].faces())
      throw StateError("face basis support differs from its lifting problem");
    const Eigen::Index m = b.columns.cols();
    b.columns.conservativeResize(b.columns.rows(), m + 1);
    b.columns.col(m) = c.column;
    b.traces.conservativeResize(b.traces.rows(), m + 1);
    b.traces.col(m) = c.trace;
    b.levels.push_back(iteration);
  }
}

std::vector<EnrichmentRecord> OnlineEnricher::enrich(MultiscaleSpace& space, const CoarseSolver& solver,
                                                     const CoarseSolution& solution) const {
  const int iteration = space.level() + 1;
  std::vector<EnrichmentRecord> log;
  const auto& interior = problem_->grid().interior_faces();

  auto run_batch = [&](const std::vector<int>& slots, const CoarseSolver& cs, const CoarseSolution& sol) {
    const ResidualFunctional r = compute_residual(problem_->fine(), sol);
    std::vector<Candidate> candidates(slots.size());
    detail::parallel_for(static_cast<long>(slots.size()), [&](long k) {
      candidates[static_cast<std::size_t>(k)] = propose(slots[static_cast<std::size_t>(k)], iteration, r);
    });
    screen(candidates, cs);
    commit(space, candidates, iteration, log);
  };

  if (options_.schedule == Schedule::Jacobi) {
    std::vector<int> slots(interior.size());
    for (std::size_t k = 0; k < slots.size(); ++k) slots[k] = static_cast<int>(k);
    run_batch(slots, solver, solution);
  } else {
    std::map<int, int> slot_of;
    for (std::size_t k = 0; k < interior.size(); ++k) slot_of[interior[k]] = static_cast<int>(k);
    const auto batches = color_faces(problem_->grid());
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<int> slots;
      for (int id : batches[b]) slots.push_back(slot_of.at(id));
      if (b == 0) {
        run_batch(slots, solver, solution);
      } else {
        const CoarseSolver cs = problem_->factor(space);
        run_batch(slots, cs, cs.solve());
      }
    }
  }
  space.set_level(iteration);
  return log;
}

double OnlineEnricher::indicator(const CoarseSolution& solution) const {
  const ResidualFunctional r = compute_residual(problem_->fine(), solution);
  std::vector<double> sq(oversampled_.size());
  detail::parallel_for(static_cast<long>(oversampled_.size()), [&](long k) {
    const OversampledProblem& op = oversampled_[static_cast<std::size_t>(k)];
    const Eigen::VectorXd rhs = op.rhs(r);
    sq[static_cast<std::size_t>(k)] = std::max(rhs.dot(op.solve_reduced(rhs)), 0.0);
  });
  double total = 0.0;
  for (double v : sq) total += v;
  const double energy = solution.velocity.dot(problem_->fine().A * solution.velocity);
  return energy > 0.0 ? std::sqrt(total / energy) : std::sqrt(total);
}

void relift(MultiscaleSpace& space, const PermeabilityField& kappa) {
  auto& bases = space.bases();
  detail::parallel_for(static_cast<long>(bases.size()), [&](long k) {
    FaceBasis& b = bases[static_cast<std::size_t>(k)];
    const FaceLifter lifter(space.grid(), kappa, b.face_id);
    b.columns = lifter.lift(b.traces);
  });
}

// ---------------------------------------------------------------------------

Eigen::VectorXd five_spot_sources(const GridHierarchy& grid, double rate) {
  Eigen::VectorXd F = Eigen::VectorXd::Zero(grid.num_cells());
  const auto& n = grid.fine_counts();
  const int nz = n[2];
  const std::array<std::array<int, 2>, 4> corners{{{0, 0}, {n[0] - 1, 0}, {0, n[1] - 1}, {n[0] - 1, n[1] - 1}}};
  for (int k = 0; k < nz; ++k) {
    for (const auto& c : corners) F[grid.cell({c[0], c[1], k})] += 0.25 * rate / nz;
    F[grid.cell({n[0] / 2, n[1] / 2, k})] -= rate / nz;
  }
  return F;
}

OnlineRun run_online(const GridHierarchy& grid, const PermeabilityField& kappa,
                     const Eigen::VectorXd& cell_sources, const OnlineRunOptions& options) {
  if (options.iterations < 0) throw InvalidArgument("iteration count must be non-negative");
  const auto t0 = std::chrono::steady_clock::now();
  OnlineRun run;
  OfflineSpace off = build_offline(grid, kappa, options.offline_count);
  run.space = std::move(off.space);
  const CoarseProblem problem(grid, kappa, cell_sources, options.source_correction);
  run.reference_velocity = solve_global(problem.fine(), Eigen::VectorXd::Zero(problem.fine().num_boundary())).velocity;
  std::optional<OnlineEnricher> enricher;
  if (options.iterations > 0) enricher.emplace(problem, kappa, options.enrichment);
  run.offline_seconds = seconds_since(t0);

  const auto t1 = std::chrono::steady_clock::now();
  const double fnorm = std::max(problem.fine().F.norm(), 1e-300);
  CoarseSolver solver = problem.factor(run.space);
  run.solution = solver.solve();
  auto report = [&](int iteration, int accepted, int skipped) {
    LevelReport lr;
    lr.iteration = iteration;
    lr.num_basis = options.offline_count + iteration;
    lr.dimension = run.space.dimension();
    lr.e_v = velocity_error(run.solution.velocity, run.reference_velocity, problem.fine().A);
    lr.residual_norm = compute_residual(problem.fine(), run.solution).norm() / fnorm;
    lr.indicator = enricher ? enricher->indicator(run.solution) : 0.0;
    lr.accepted = accepted;
    lr.skipped = skipped;
    run.levels.push_back(lr);
  };
  report(0, 0, 0);
  for (int it = 1; it <= options.iterations; ++it) {
    if (options.tolerance > 0.0 && run.levels.back().indicator < options.tolerance) break;
    const auto records = enricher->enrich(run.space, solver, run.solution);
    int accepted = 0;
    for (const auto& r : records) accepted += r.accepted ? 1 : 0;
    run.trace.insert(run.trace.end(), records.begin(), records.end());
    solver = problem.factor(run.space);
    run.solution = solver.solve();
    report(it, accepted, static_cast<int>(records.size()) - accepted);
    if (accepted == 0) break;
  }
  run.online_seconds = seconds_since(t1);
  return run;
}

void write_enrichment_trace(const std::string& path, const std::vector<EnrichmentRecord>& records,
                            const std::vector<LevelReport>& levels) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write enrichment trace: " + path);
  out << "iteration,face_id,trace_norm,riesz_norm,orthogonal_fraction,status,e_v\n";
  char buf[96];
  for (const auto& r : records) {
    double ev = -1.0;
    for (const auto& l : levels)
      if (l.iteration == r.iteration) ev = l.e_v;
    std::snprintf(buf, sizeof buf, "%.6e,%.6e,%.6e", r.trace_norm, r.riesz_norm, r.orthogonal_fraction);
    out << r.iteration << ',' << r.face_id << ',' << buf << ',' << r.status << ',' << format_error(ev) << '\n';
  }
  if (!out) throw IoError("failed writing enrichment trace: " + path);
}

}  // namespace omgms
