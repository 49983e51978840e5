#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "omgms/fields.hpp"
#include "omgms/grid.hpp"

namespace omgms {

/// Local Neumann solutions with one-hot normal flux on each fine face of a
/// (possibly extended) coarse-face interface.
struct SnapshotSpace {
  int face_id = -1;
  OversamplingOffsets offsets;
  /// The two sides of the interface, sorted cell lists.
  std::array<std::vector<CellIndex>, 2> parts;
  /// Interface fine faces in column order.
  std::vector<FaceIndex> interface;
  /// For each fine face of the coarse face, its position in `interface`.
  std::vector<int> coarse_positions;
  /// Sorted faces carrying the columns: active faces of both parts plus the
  /// interface. Outer boundary faces of the domain carry zero flux and are omitted.
  std::vector<FaceIndex> faces;
  Eigen::MatrixXd columns;  ///< faces x J
  Eigen::MatrixXd compat;   ///< 2 x J source constant per part

  int size() const { return static_cast<int>(columns.cols()); }
  std::vector<CellIndex> cells() const;
  int row_of(FaceIndex f) const;
};

SnapshotSpace build_snapshots(const GridHierarchy& grid, const PermeabilityField& kappa,
                              int face_id, const OversamplingOffsets& offsets);
/// Snapshots on the plain neighborhood (no oversampling).
SnapshotSpace build_snapshots(const GridHierarchy& grid, const PermeabilityField& kappa,
                              int face_id);

/// J x (J - 1) adjacent-difference map: column k is e_k - e_{k+1}.
Eigen::MatrixXd divergence_free_reduction(int J);

/// Dense Gram matrix of integral kappa^{-1} psi_a . psi_b over the snapshot domain.
Eigen::MatrixXd snapshot_gram(const GridHierarchy& grid, const PermeabilityField& kappa,
                              const SnapshotSpace& space);

/// 64-bit FNV-1a hash of the grid dimensions, permeability bytes and offsets.
std::uint64_t snapshot_key(const GridHierarchy& grid, const PermeabilityField& kappa,
                           const OversamplingOffsets& offsets);

/// Snapshot spaces keyed by face id, safe for concurrent insertion of distinct keys.
class SnapshotCache {
 public:
  SnapshotCache(const GridHierarchy& grid, const PermeabilityField& kappa,
                const OversamplingOffsets& offsets);

  const SnapshotSpace& get(int face_id);
  std::uint64_t key() const { return key_; }
  std::size_t size() const;

  /// Versioned binary container. load() returns false and leaves the cache
  /// untouched when the file is missing or was written for a different key.
  void save(const std::string& path) const;
  bool load(const std::string& path);

 private:
  const GridHierarchy* grid_;
  const PermeabilityField* kappa_;
  OversamplingOffsets offsets_;
  std::uint64_t key_;
  mutable std::mutex mutex_;
  std::map<int, SnapshotSpace> spaces_;
};

}  // namespace omgms
