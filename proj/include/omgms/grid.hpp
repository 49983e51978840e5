#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace omgms {

using CellIndex = int;
using FaceIndex = int;
using Index3 = std::array<int, 3>;

/// Half-open box of fine cells, [lo, hi) per axis. Unused axes in 2D span [0, 1).
struct CellBox {
  Index3 lo{0, 0, 0};
  Index3 hi{1, 1, 1};

  int count() const { return (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]); }
  bool empty() const { return hi[0] <= lo[0] || hi[1] <= lo[1] || hi[2] <= lo[2]; }
  bool contains(const Index3& c) const {
    return c[0] >= lo[0] && c[0] < hi[0] && c[1] >= lo[1] && c[1] < hi[1] && c[2] >= lo[2] &&
           c[2] < hi[2];
  }
  bool operator==(const CellBox&) const = default;
};

struct CoarseFace {
  int id = -1;
  int axis = 0;
  /// Coarse coordinates of the face: the coarse plane index along `axis`
  /// (0..N_axis) and the block coordinates along the tangential axes.
  Index3 coords{0, 0, 0};
  /// Fine faces composing the coarse face, tangential-row-major with the lower
  /// tangential axis varying fastest.
  std::vector<FaceIndex> fine_faces;
  /// One or two coarse blocks; for interior faces the block on the minus side
  /// of the normal comes first.
  std::vector<int> adjacent_blocks;
  /// Fixed unit normal, always the +axis direction.
  std::array<double, 3> normal{0.0, 0.0, 0.0};

  bool interior() const { return adjacent_blocks.size() == 2; }
};

struct Neighborhood {
  int face_id = -1;
  /// The two adjacent coarse blocks, minus side first.
  std::array<CellBox, 2> blocks;
  std::vector<CellIndex> fine_cells;
  /// Every fine face touching a cell of the neighborhood, sorted.
  std::vector<FaceIndex> fine_faces;
};

/// Oversampling geometry in fine-cell units. Row one applies to faces normal to
/// x (d11 = extent on each side along the normal, d12 = extension past the face
/// ends), row two to faces normal to y (d21 = extension past the face ends,
/// d22 = normal extent). Faces normal to z reuse row one.
struct OversamplingOffsets {
  int d11 = 0;
  int d12 = 0;
  int d21 = 0;
  int d22 = 0;

  static OversamplingOffsets no_oversampling(int n) { return {n, 0, 0, n}; }
  static OversamplingOffsets extended(int n) { return {n, 1, 1, n}; }
  static OversamplingOffsets narrowed(int n) {
    const int half = n / 2 > 0 ? n / 2 : 1;
    return {half, 1, 1, half};
  }
  /// Case 1, 2 or 3 of the experiment harness.
  static OversamplingOffsets for_case(int case_id, int n);

  int normal_extent(int axis) const { return axis == 1 ? d22 : d11; }
  int tangential_extent(int axis) const { return axis == 1 ? d21 : d12; }
  bool operator==(const OversamplingOffsets&) const = default;
};

struct OversampledNeighborhood {
  int face_id = -1;
  OversamplingOffsets offsets;
  /// Minus-side and plus-side halves; their shared boundary is the extended interface.
  std::array<CellBox, 2> half_domains;
  std::vector<CellIndex> fine_cells;
  std::vector<FaceIndex> fine_faces;
  /// Fine faces of the extended interface, tangential-row-major.
  std::vector<FaceIndex> extended_interface;
  /// For each fine face of the coarse face (in its own order), its position in
  /// `extended_interface`.
  std::vector<int> coarse_face_positions;

  int j_plus() const { return static_cast<int>(extended_interface.size()); }
};

/// Two-level tensor-product Cartesian partition of D = [0, L_x] x [0, L_y] (x [0, L_z]).
///
/// Fine cells are numbered x-fastest. Fine faces are grouped by normal axis;
/// within a group they are numbered x-fastest over their (cell-like) lattice, so
/// the face normal to axis a at lattice point (i, j, k) separates cells with
/// coordinate i-1 and i along a.
class GridHierarchy {
 public:
  static GridHierarchy build(int dim, const Index3& coarse_counts, int n,
                             const std::array<double, 3>& extent = {1.0, 1.0, 1.0});

  int dim() const { return dim_; }
  int fine_per_coarse() const { return n_; }
  const Index3& coarse_counts() const { return coarse_; }
  const Index3& fine_counts() const { return fine_; }
  const std::array<double, 3>& extent() const { return extent_; }
  const std::array<double, 3>& h() const { return h_; }
  const std::array<double, 3>& coarse_h() const { return H_; }

  int num_cells() const { return fine_[0] * fine_[1] * fine_[2]; }
  int num_faces() const { return face_offset_[3]; }
  int num_blocks() const { return coarse_[0] * coarse_[1] * coarse_[2]; }
  int num_coarse_faces() const { return static_cast<int>(coarse_faces_.size()); }

  CellIndex cell(const Index3& c) const { return c[0] + fine_[0] * (c[1] + fine_[1] * c[2]); }
  Index3 cell_coords(CellIndex c) const;
  bool valid_cell(const Index3& c) const;
  double cell_volume() const { return h_[0] * h_[1] * h_[2]; }
  std::array<double, 3> cell_center(CellIndex c) const;

  /// Face normal to `axis` at lattice point `c` (c[axis] in 0..fine[axis]).
  FaceIndex face(int axis, const Index3& c) const;
  int face_axis(FaceIndex f) const;
  Index3 face_coords(FaceIndex f) const;
  double face_area(int axis) const;
  /// Cells on the minus and plus side of the face; -1 where outside D.
  std::array<CellIndex, 2> face_cells(FaceIndex f) const;
  bool boundary_face(FaceIndex f) const;
  /// Left (minus) and right (plus) face of a cell along `axis`.
  std::array<FaceIndex, 2> cell_faces(CellIndex c, int axis) const;

  int block(const Index3& b) const { return b[0] + coarse_[0] * (b[1] + coarse_[1] * b[2]); }
  Index3 block_coords(int b) const;
  int block_of_cell(CellIndex c) const;
  CellBox block_box(int b) const;
  std::vector<CellIndex> cells_in(const CellBox& box) const;

  const std::vector<CoarseFace>& coarse_faces() const { return coarse_faces_; }
  const CoarseFace& coarse_face(int id) const;
  /// Ids of interior coarse faces, ascending.
  const std::vector<int>& interior_faces() const { return interior_faces_; }

  Neighborhood neighborhood(int face_id) const;
  OversampledNeighborhood oversampled_neighborhood(int face_id,
                                                   const OversamplingOffsets& offsets) const;

  /// Sorted fine faces touching at least one cell of the box.
  std::vector<FaceIndex> faces_touching(const CellBox& box) const;

 private:
  int dim_ = 2;
  int n_ = 1;
  Index3 coarse_{1, 1, 1};
  Index3 fine_{1, 1, 1};
  std::array<double, 3> extent_{1.0, 1.0, 1.0};
  std::array<double, 3> h_{1.0, 1.0, 1.0};
  std::array<double, 3> H_{1.0, 1.0, 1.0};
  std::array<Index3, 3> face_lattice_{};
  std::array<int, 4> face_offset_{0, 0, 0, 0};
  std::vector<CoarseFace> coarse_faces_;
  std::vector<int> interior_faces_;

  const CoarseFace& interior_face(int face_id) const;
};

}  // namespace omgms
