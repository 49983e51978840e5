#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "omgms/coarse.hpp"
#include "omgms/fields.hpp"
#include "omgms/grid.hpp"
#include "omgms/mixed_problem.hpp"
#include "omgms/online.hpp"

namespace omgms {

/// Incompressible water/oil pair with Corey relative permeabilities
/// k_rw = s^n_w and k_ro = (1 - s)^n_o.
struct FluidModel {
  double mu_w = 0.1;
  double mu_o = 1.0;
  double porosity = 0.2;
  double rho_w = 1.0;
  double n_w = 2.0;
  double n_o = 2.0;

  /// Throws InvalidArgument for non-positive viscosities, density or exponents,
  /// or porosity outside (0, 1].
  void validate() const;

  double krw(double s) const;
  double kro(double s) const;
  double water_mobility(double s) const { return krw(s) / mu_w; }
  double oil_mobility(double s) const { return kro(s) / mu_o; }
  double total_mobility(double s) const { return water_mobility(s) + oil_mobility(s); }
  double fractional_flow(double s) const { return water_mobility(s) / total_mobility(s); }
  /// Upper bound of |f_w'(s)| on [0, 1], used for the CFL limit.
  double max_flow_derivative() const;
};

/// Cell-centred well; rate > 0 injects water, rate < 0 produces the mixture.
struct Well {
  CellIndex cell = 0;
  double rate = 0.0;
};

/// Four corner injectors sharing `total_rate` and one central producer. In 3D
/// every well is a vertical column of cells.
std::vector<Well> five_spot_wells(const GridHierarchy& grid, double total_rate);
/// Cell-integrated sources; throws InvalidArgument if the rates do not balance.
Eigen::VectorXd well_sources(const GridHierarchy& grid, const std::vector<Well>& wells);

struct TwoPhaseState {
  Eigen::VectorXd saturation;  ///< per fine cell
  double time = 0.0;
  int step = 0;
  std::vector<Well> wells;
  Eigen::VectorXd velocity;  ///< total flux on the active fine faces
};

/// lambda(s) kappa per cell. Throws StateError when a saturation leaves [0, 1].
PermeabilityField total_mobility_field(const Eigen::VectorXd& saturation, const FluidModel& fluid,
                                       const PermeabilityField& kappa);

/// Source of fine velocities for a given effective permeability.
class VelocitySolver {
 public:
  virtual ~VelocitySolver() = default;
  virtual Eigen::VectorXd solve(const PermeabilityField& effective) = 0;
  /// Called every few steps when basis updating is enabled.
  virtual void update_basis(const PermeabilityField& /*effective*/) {}
};

/// Direct fine-grid mixed solve.
class FineVelocitySolver final : public VelocitySolver {
 public:
  FineVelocitySolver(const GridHierarchy& grid, Eigen::VectorXd sources);
  Eigen::VectorXd solve(const PermeabilityField& effective) override;

 private:
  const GridHierarchy* grid_;
  Eigen::VectorXd sources_;
};

struct MultiscaleVelocityOptions {
  int offline_count = 1;
  int online_iterations = 0;
  EnrichmentOptions enrichment;
};

/// Multiscale solve in a space built once from the initial effective field:
/// offline bases plus `online_iterations` rounds of residual enrichment.
class MultiscaleVelocitySolver final : public VelocitySolver {
 public:
  MultiscaleVelocitySolver(const GridHierarchy& grid, const PermeabilityField& initial,
                           Eigen::VectorXd sources, const MultiscaleVelocityOptions& options);
  Eigen::VectorXd solve(const PermeabilityField& effective) override;
  /// Re-lifts every basis from its stored trace with the current field.
  void update_basis(const PermeabilityField& effective) override;

  const MultiscaleSpace& space() const { return space_; }
  double build_seconds() const { return build_seconds_; }

 private:
  const GridHierarchy* grid_;
  Eigen::VectorXd sources_;
  MultiscaleSpace space_;
  double build_seconds_ = 0.0;
};

/// Interior fine faces with their two cells and area, in the active-face order
/// of the global saddle system.
class FluxLayout {
 public:
  explicit FluxLayout(const GridHierarchy& grid);

  const GridHierarchy& grid() const { return *grid_; }
  int num_faces() const { return static_cast<int>(left_.size()); }
  CellIndex left(int i) const { return left_[static_cast<std::size_t>(i)]; }
  CellIndex right(int i) const { return right_[static_cast<std::size_t>(i)]; }
  double area(int i) const { return area_[static_cast<std::size_t>(i)]; }

  /// Largest admissible explicit step for the given velocity.
  double cfl_limit(const Eigen::VectorXd& velocity, const std::vector<Well>& wells, const FluidModel& fluid) const;

 private:
  const GridHierarchy* grid_;
  std::vector<CellIndex> left_, right_;
  std::vector<double> area_;
};

struct SaturationStepStats {
  int clamped = 0;          ///< cells pushed back into [0, 1]
  double max_clamp = 0.0;   ///< largest such correction
  double mass_defect = 0.0; ///< |stored - injected + produced| / (dt * sum |q|), before clamping
};

/// One explicit upwind update over dt. Throws TimeStepError when dt exceeds
/// the CFL limit; the message carries the admissible step.
SaturationStepStats saturation_step(TwoPhaseState& state, const FluxLayout& layout, const FluidModel& fluid, double dt);

/// Recomputes state.velocity for the current saturation.
void pressure_step(TwoPhaseState& state, const FluidModel& fluid, const PermeabilityField& kappa,
                   VelocitySolver& solver);

/// Water fraction of the produced stream.
double water_cut(const TwoPhaseState& state, const FluidModel& fluid);

struct TwoPhaseOptions {
  FluidModel fluid;
  double dt = 50.0;
  double end_time = 5000.0;
  /// Total injection rate as pore volumes injected by end_time.
  double pore_volumes = 1.0;
  double cfl = 0.9;
  double initial_saturation = 0.0;
  /// Multiscale velocity when set, fine velocity otherwise.
  std::optional<MultiscaleVelocityOptions> multiscale;
  /// Re-lift bases every this many steps; 0 disables.
  int update_every = 0;
  /// Co-run a fine-velocity simulation and report e_s against it.
  bool reference = false;
  std::vector<double> snapshot_times;
  std::string output_dir;  ///< VTK snapshots are written here when non-empty
};

struct StepRecord {
  int step = 0;
  double time = 0.0;
  double water_cut = 0.0;
  double e_s = 0.0;  ///< NaN without a reference
  int substeps = 0;
  int clamped = 0;
  double max_clamp = 0.0;
  double mass_defect = 0.0;
  double min_saturation = 0.0;
  double max_saturation = 0.0;
};

struct TwoPhaseRun {
  std::vector<StepRecord> steps;
  TwoPhaseState final_state;
  Eigen::VectorXd reference_saturation;  ///< empty without a reference
  double mean_e_s = 0.0;                 ///< arithmetic mean over steps; NaN without a reference
  double setup_seconds = 0.0;
  double run_seconds = 0.0;
};

TwoPhaseRun run_two_phase(const GridHierarchy& grid, const PermeabilityField& kappa, const TwoPhaseOptions& options);

/// CSV with header step,t,water_cut,e_s.
void write_time_series(const std::string& path, const std::vector<StepRecord>& steps);

}  // namespace omgms
