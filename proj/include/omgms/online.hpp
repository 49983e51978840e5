#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "omgms/coarse.hpp"
#include "omgms/fields.hpp"
#include "omgms/grid.hpp"
#include "omgms/mixed_problem.hpp"
#include "omgms/snapshot.hpp"
#include "omgms/space.hpp"

namespace omgms {

/// Velocity residual of a prolonged coarse solution in the fine equations,
/// r = B^T p - A v on the active fine faces.
struct ResidualFunctional {
  const SaddleSystem* fine = nullptr;
  Eigen::VectorXd values;
  /// The -A v part alone. On fields that are divergence-free in every cell they
  /// touch, B^T p pairs to zero, so this part gives the same functional
  /// without the large cancelling gradient term.
  Eigen::VectorXd flux_part;

  /// Values on the given global faces; faces that are not active read as zero.
  Eigen::VectorXd restrict_to(std::span<const FaceIndex> faces) const;
  /// flux_part on the given global faces, for pairing with divergence-free local fields.
  Eigen::VectorXd restrict_flux_to(std::span<const FaceIndex> faces) const;
  double norm() const { return values.norm(); }
};

ResidualFunctional compute_residual(const SaddleSystem& fine, const CoarseSolution& solution);

/// Riesz representative of the residual in the divergence-free oversampled
/// snapshot space of one coarse face. The snapshot columns are used once to
/// form the Gram matrix and then dropped; right-hand sides are evaluated with
/// the adjoint of the local Neumann map.
class OversampledProblem {
 public:
  OversampledProblem(const GridHierarchy& grid, const PermeabilityField& kappa, int face_id,
                     const OversamplingOffsets& offsets);

  int face_id() const { return face_id_; }
  int j_plus() const { return static_cast<int>(op_.interface().size()); }
  /// Fine faces of the extended interface, in snapshot column order.
  const std::vector<FaceIndex>& interface() const { return op_.interface(); }
  const std::vector<int>& coarse_positions() const { return positions_; }
  const std::vector<FaceIndex>& faces() const { return op_.faces(); }
  const Eigen::MatrixXd& gram() const { return gram_; }
  const Eigen::MatrixXd& reduction() const { return P_; }
  const LocalNeumannOperator& op() const { return op_; }

  /// P^T R_snap^T r, from stored snapshot columns when they fit the memory
  /// budget and through the adjoint local solve otherwise.
  Eigen::VectorXd rhs(const ResidualFunctional& r) const;
  bool stores_columns() const { return columns_.size() > 0; }
  /// Reduced coefficients y of phi = R_snap P y.
  Eigen::VectorXd solve(const ResidualFunctional& r) const;
  Eigen::VectorXd solve_reduced(const Eigen::VectorXd& rhs) const;
  /// Normal flux of phi on the extended interface, P y.
  Eigen::VectorXd trace(const Eigen::VectorXd& y) const { return P_ * y; }

 private:
  int face_id_;
  LocalNeumannOperator op_;
  std::vector<int> positions_;
  Eigen::MatrixXd columns_;
  Eigen::MatrixXd gram_;
  Eigen::MatrixXd P_;
  Eigen::LLT<Eigen::MatrixXd> reduced_;
};

/// Reduced coefficients from explicit snapshot columns: solves
/// (P^T G P) y = P^T C^T r with C = space.columns and r given on space.faces.
/// Throws ConditioningError when P^T G P is singular.
Eigen::VectorXd solve_oversampled_residual(const SnapshotSpace& space, const Eigen::MatrixXd& P,
                                           const Eigen::MatrixXd& gram, const Eigen::VectorXd& r);

/// Entries of the extended-interface trace at the coarse face positions,
/// scaled to unit 2-norm with the first entry above 1e-12 of the largest made
/// positive. Returns nothing when the restricted trace norm is below `tolerance`.
std::optional<Eigen::VectorXd> restrict_and_normalize(const Eigen::VectorXd& trace,
                                                      std::span<const int> coarse_positions,
                                                      double tolerance = 1e-13);

struct OnlineBasis {
  int face_id = -1;
  int level = 0;
  Eigen::VectorXd trace;         ///< lambda on the coarse face fine faces
  std::vector<FaceIndex> faces;  ///< sorted support faces
  Eigen::VectorXd column;        ///< chi on `faces`
};

/// Lifts coarse-face traces to velocity columns on the face neighborhood with
/// one Neumann solve per adjacent block.
class FaceLifter {
 public:
  FaceLifter(const GridHierarchy& grid, const PermeabilityField& kappa, int face_id);
  const std::vector<FaceIndex>& faces() const { return op_.faces(); }
  const std::vector<FaceIndex>& interface() const { return op_.interface(); }
  Eigen::MatrixXd lift(const Eigen::MatrixXd& traces) const { return op_.apply(traces).values; }
  /// Velocity mass matrix over the neighborhood, on faces().
  const SparseMatrix& mass() const { return mass_; }

 private:
  LocalNeumannOperator op_;
  SparseMatrix mass_;
};

OnlineBasis build_online_basis(const GridHierarchy& grid, const PermeabilityField& kappa, int face_id,
                               const Eigen::VectorXd& trace, int level = 0);

/// Lambda for one face computed without any extended-interface bookkeeping:
/// plain-neighborhood snapshots with explicit columns.
std::optional<Eigen::VectorXd> reference_online_trace(const GridHierarchy& grid,
                                                      const PermeabilityField& kappa, int face_id,
                                                      const ResidualFunctional& r);

enum class Schedule {
  /// Every interior face is enriched from the same residual.
  Jacobi,
  /// Faces are grouped into batches whose neighborhoods share no block; the
  /// coarse solve and residual are refreshed before each batch.
  Coloring,
};

struct EnrichmentOptions {
  /// All zero selects the plain neighborhood (no oversampling).
  OversamplingOffsets offsets;
  Schedule schedule = Schedule::Jacobi;
  double trace_tolerance = 1e-13;
  /// A candidate is rejected when the A-energy of its component orthogonal to
  /// the space (and to candidates accepted before it in the same round) is
  /// below this fraction of its own energy.
  double independence_tolerance = 1e-10;
  /// Replace each accepted trace by its unit-norm part A-orthogonal to the
  /// face's existing columns before lifting. The enriched span is unchanged.
  bool orthogonalize = true;
};

struct EnrichmentRecord {
  int iteration = 0;
  int face_id = -1;
  double trace_norm = 0.0;       ///< restricted trace norm before normalization
  double riesz_norm = 0.0;       ///< energy norm of the residual representative
  double orthogonal_fraction = 0.0;
  bool accepted = false;
  std::string status;  ///< "accepted", "negligible-trace" or "dependent"
};

/// Batches of interior faces whose neighborhoods are pairwise block-disjoint.
std::vector<std::vector<int>> color_faces(const GridHierarchy& grid);

class OnlineEnricher {
 public:
  OnlineEnricher(const CoarseProblem& problem, const PermeabilityField& kappa, EnrichmentOptions options);

  const EnrichmentOptions& options() const { return options_; }
  const OversampledProblem& problem_for(int face_id) const;

  /// One enrichment round: appends at most one column per interior face and
  /// increments the space level. `solver` and `solution` belong to the current
  /// space; they are used as is by the Jacobi schedule and refreshed per batch
  /// by the coloring schedule.
  std::vector<EnrichmentRecord> enrich(MultiscaleSpace& space, const CoarseSolver& solver,
                                       const CoarseSolution& solution) const;

  /// Error indicator: root sum of squared Riesz norms of the residual over all
  /// oversampled neighborhoods, relative to the energy norm of the velocity.
  double indicator(const CoarseSolution& solution) const;

 private:
  const CoarseProblem* problem_;
  const PermeabilityField* kappa_;
  EnrichmentOptions options_;
  std::vector<OversampledProblem> oversampled_;  // interior_faces() order
  std::vector<FaceLifter> lifters_;

  struct Candidate {
    int slot = -1;
    EnrichmentRecord record;
    Eigen::VectorXd trace;
    Eigen::VectorXd column;
  };
  Candidate propose(int slot, int iteration, const ResidualFunctional& r) const;
  void screen(std::vector<Candidate>& candidates, const CoarseSolver& solver) const;
  void commit(MultiscaleSpace& space, std::vector<Candidate>& candidates, int iteration,
              std::vector<EnrichmentRecord>& log) const;
};

/// Re-lifts every stored trace with a new coefficient field (e.g. mobility-scaled kappa).
void relift(MultiscaleSpace& space, const PermeabilityField& kappa);

struct LevelReport {
  int iteration = 0;  ///< online rounds completed
  int num_basis = 0;  ///< offline count + iteration
  long dimension = 0;
  double e_v = 0.0;
  double residual_norm = 0.0;  ///< ||r|| / ||F||
  double indicator = 0.0;      ///< see OnlineEnricher::indicator; 0 without enrichment
  int accepted = 0;
  int skipped = 0;
};

struct OnlineRunOptions {
  int offline_count = 1;
  int iterations = 7;
  /// Stop early once the indicator falls below this value (0 disables).
  double tolerance = 0.0;
  EnrichmentOptions enrichment;
  bool source_correction = true;
};

struct OnlineRun {
  std::vector<LevelReport> levels;  ///< level 0 is the offline space
  std::vector<EnrichmentRecord> trace;
  MultiscaleSpace space;
  CoarseSolution solution;
  Eigen::VectorXd reference_velocity;
  double offline_seconds = 0.0;
  double online_seconds = 0.0;
};

/// Offline construction followed by online enrichment, with e_v measured
/// against the fine solution after every round.
OnlineRun run_online(const GridHierarchy& grid, const PermeabilityField& kappa,
                     const Eigen::VectorXd& cell_sources, const OnlineRunOptions& options);

/// Cell sources of the five-spot pattern: rate/4 in each corner cell column and
/// -rate in the central column.
Eigen::VectorXd five_spot_sources(const GridHierarchy& grid, double rate = 1.0);

void write_enrichment_trace(const std::string& path, const std::vector<EnrichmentRecord>& records,
                            const std::vector<LevelReport>& levels);

}  // namespace omgms
