#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "omgms/grid.hpp"
#include "omgms/mixed_problem.hpp"

namespace omgms {

/// Multiscale velocity basis attached to one interior coarse face. Columns are
/// supported on the face neighborhood and stored over `faces`; each column is
/// the local Neumann lift of its normal-flux trace on the coarse face.
struct FaceBasis {
  int face_id = -1;
  std::array<std::vector<CellIndex>, 2> parts;  ///< the two coarse blocks
  std::vector<FaceIndex> interface;             ///< fine faces of the coarse face
  std::vector<FaceIndex> faces;                 ///< sorted support faces
  Eigen::MatrixXd columns;                      ///< faces x m
  Eigen::MatrixXd traces;                       ///< interface x m
  std::vector<int> levels;                      ///< 0 for offline, k for online iteration k

  int size() const { return static_cast<int>(columns.cols()); }
  std::vector<CellIndex> cells() const;
};

/// Velocity space V_H spanned by all face bases, with piecewise-constant
/// pressures on coarse blocks.
class MultiscaleSpace {
 public:
  MultiscaleSpace() = default;
  explicit MultiscaleSpace(const GridHierarchy& grid);

  const GridHierarchy& grid() const { return *grid_; }
  /// One entry per interior coarse face, in interior_faces() order.
  const std::vector<FaceBasis>& bases() const { return bases_; }
  std::vector<FaceBasis>& bases() { return bases_; }
  FaceBasis& basis_for(int face_id);
  const FaceBasis& basis_for(int face_id) const;

  int level() const { return level_; }
  void set_level(int level) { level_ = level; }

  int num_columns() const;
  /// Velocity columns plus one pressure unknown per coarse block.
  int dimension() const { return num_columns() + grid_->num_blocks(); }

  /// Global column matrix over the active faces of `fine` (faces x columns),
  /// face by face in interior_faces() order.
  SparseMatrix prolongation(const SaddleSystem& fine) const;

 private:
  const GridHierarchy* grid_ = nullptr;
  std::vector<FaceBasis> bases_;
  std::vector<int> slot_;  // coarse face id -> index in bases_, -1 for boundary faces
  int level_ = 0;
};

/// Dimension of the coarse system with `per_face` offline columns on every
/// interior face after `iterations` rounds of one online column per face.
long expected_dimension(const GridHierarchy& grid, int per_face, int iterations);

}  // namespace omgms
