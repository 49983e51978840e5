#include "omgms/grid.hpp"

#include <algorithm>
#include <string>

#include "omgms/errors.hpp"

namespace omgms {

OversamplingOffsets OversamplingOffsets::for_case(int case_id, int n) {
  switch (case_id) {
    case 1:
      return no_oversampling(n);
    case 2:
      return extended(n);
    case 3:
      return narrowed(n);
    default:
      throw InvalidArgument("oversampling case must be 1, 2 or 3, got " + std::to_string(case_id));
  }
}

GridHierarchy GridHierarchy::build(int dim, const Index3& coarse_counts, int n,
                                   const std::array<double, 3>& extent) {
  if (dim != 2 && dim != 3) throw InvalidArgument("dim must be 2 or 3");
  if (n < 1) throw InvalidArgument("fine cells per coarse block must be >= 1");
  for (int a = 0; a < dim; ++a) {
    if (coarse_counts[a] < 1) throw InvalidArgument("coarse counts must be >= 1");
    if (!(extent[a] > 0.0)) throw InvalidArgument("extent must be positive");
  }

  GridHierarchy g;
  g.dim_ = dim;
  g.n_ = n;
  for (int a = 0; a < 3; ++a) {
    const bool used = a < dim;
    g.coarse_[a] = used ? coarse_counts[a] : 1;
    g.fine_[a] = used ? coarse_counts[a] * n : 1;
    g.extent_[a] = used ? extent[a] : 1.0;
    g.h_[a] = g.extent_[a] / g.fine_[a];
    g.H_[a] = g.extent_[a] / g.coarse_[a];
  }

  for (int a = 0; a < 3; ++a) {
    Index3 lat = g.fine_;
    if (a < dim) {
      lat[a] += 1;
    } else {
      lat = {0, 0, 0};
    }
    g.face_lattice_[a] = lat;
    g.face_offset_[a + 1] = g.face_offset_[a] + lat[0] * lat[1] * lat[2];
  }

  // Coarse faces, grouped by axis, numbered like fine faces on the coarse lattice.
  for (int a = 0; a < dim; ++a) {
    Index3 lat = g.coarse_;
    lat[a] += 1;
    for (int k = 0; k < lat[2]; ++k) {
      for (int j = 0; j < lat[1]; ++j) {
        for (int i = 0; i < lat[0]; ++i) {
          CoarseFace cf;
          cf.id = static_cast<int>(g.coarse_faces_.size());
          cf.axis = a;
          cf.coords = {i, j, k};
          cf.normal[a] = 1.0;
          const int plane = cf.coords[a];
          if (plane > 0) {
            Index3 b = cf.coords;
            b[a] -= 1;
            cf.adjacent_blocks.push_back(g.block(b));
          }
          if (plane < g.coarse_[a]) cf.adjacent_blocks.push_back(g.block(cf.coords));

          // Fine faces on the coarse face: tangential ranges of the block.
          Index3 lo{}, hi{};
          for (int t = 0; t < 3; ++t) {
            if (t == a) {
              lo[t] = plane * n;
              hi[t] = lo[t] + 1;
            } else if (t < dim) {
              lo[t] = cf.coords[t] * n;
              hi[t] = lo[t] + n;
            } else {
              lo[t] = 0;
              hi[t] = 1;
            }
          }
          for (int z = lo[2]; z < hi[2]; ++z)
            for (int y = lo[1]; y < hi[1]; ++y)
              for (int x = lo[0]; x < hi[0]; ++x) cf.fine_faces.push_back(g.face(a, {x, y, z}));

          if (cf.interior()) g.interior_faces_.push_back(cf.id);
          g.coarse_faces_.push_back(std::move(cf));
        }
      }
    }
  }
  return g;
}

Index3 GridHierarchy::cell_coords(CellIndex c) const {
  Index3 r;
  r[0] = c % fine_[0];
  c /= fine_[0];
  r[1] = c % fine_[1];
  r[2] = c / fine_[1];
  return r;
}

bool GridHierarchy::valid_cell(const Index3& c) const {
  return c[0] >= 0 && c[0] < fine_[0] && c[1] >= 0 && c[1] < fine_[1] && c[2] >= 0 &&
         c[2] < fine_[2];
}

std::array<double, 3> GridHierarchy::cell_center(CellIndex c) const {
  const Index3 ijk = cell_coords(c);
  return {(ijk[0] + 0.5) * h_[0], (ijk[1] + 0.5) * h_[1], (ijk[2] + 0.5) * h_[2]};
}

FaceIndex GridHierarchy::face(int axis, const Index3& c) const {
  const Index3& lat = face_lattice_[axis];
  return face_offset_[axis] + c[0] + lat[0] * (c[1] + lat[1] * c[2]);
}

int GridHierarchy::face_axis(FaceIndex f) const {
  if (f < face_offset_[1]) return 0;
  if (f < face_offset_[2]) return 1;
  return 2;
}

Index3 GridHierarchy::face_coords(FaceIndex f) const {
  const int a = face_axis(f);
  const Index3& lat = face_lattice_[a];
  int r = f - face_offset_[a];
  Index3 c;
  c[0] = r % lat[0];
  r /= lat[0];
  c[1] = r % lat[1];
  c[2] = r / lat[1];
  return c;
}

double GridHierarchy::face_area(int axis) const {
  double area = 1.0;
  for (int t = 0; t < dim_; ++t)
    if (t != axis) area *= h_[t];
  return area;
}

std::array<CellIndex, 2> GridHierarchy::face_cells(FaceIndex f) const {
  const int a = face_axis(f);
  Index3 c = face_coords(f);
  std::array<CellIndex, 2> r{-1, -1};
  if (c[a] < fine_[a]) r[1] = cell(c);
  if (c[a] > 0) {
    c[a] -= 1;
    r[0] = cell(c);
  }
  return r;
}

bool GridHierarchy::boundary_face(FaceIndex f) const {
  const auto cells = face_cells(f);
  return cells[0] < 0 || cells[1] < 0;
}

std::array<FaceIndex, 2> GridHierarchy::cell_faces(CellIndex c, int axis) const {
  Index3 ijk = cell_coords(c);
  const FaceIndex left = face(axis, ijk);
  ijk[axis] += 1;
  return {left, face(axis, ijk)};
}

Index3 GridHierarchy::block_coords(int b) const {
  Index3 r;
  r[0] = b % coarse_[0];
  b /= coarse_[0];
  r[1] = b % coarse_[1];
  r[2] = b / coarse_[1];
  return r;
}

int GridHierarchy::block_of_cell(CellIndex c) const {
  const Index3 ijk = cell_coords(c);
  return block({ijk[0] / n_, ijk[1] / n_, dim_ == 3 ? ijk[2] / n_ : 0});
}

CellBox GridHierarchy::block_box(int b) const {
  const Index3 bc = block_coords(b);
  CellBox box;
  for (int a = 0; a < 3; ++a) {
    if (a < dim_) {
      box.lo[a] = bc[a] * n_;
      box.hi[a] = box.lo[a] + n_;
    } else {
      box.lo[a] = 0;
      box.hi[a] = 1;
    }
  }
  return box;
}

std::vector<CellIndex> GridHierarchy::cells_in(const CellBox& box) const {
  std::vector<CellIndex> cells;
  if (box.empty()) return cells;
  cells.reserve(static_cast<std::size_t>(box.count()));
  for (int k = box.lo[2]; k < box.hi[2]; ++k)
    for (int j = box.lo[1]; j < box.hi[1]; ++j)
      for (int i = box.lo[0]; i < box.hi[0]; ++i) cells.push_back(cell({i, j, k}));
  return cells;
}

std::vector<FaceIndex> GridHierarchy::faces_touching(const CellBox& box) const {
  std::vector<FaceIndex> faces;
  if (box.empty()) return faces;
  for (int a = 0; a < dim_; ++a) {
    Index3 hi = box.hi;
    hi[a] += 1;
    for (int k = box.lo[2]; k < hi[2]; ++k)
      for (int j = box.lo[1]; j < hi[1]; ++j)
        for (int i = box.lo[0]; i < hi[0]; ++i) faces.push_back(face(a, {i, j, k}));
  }
  std::sort(faces.begin(), faces.end());
  return faces;
}

const CoarseFace& GridHierarchy::coarse_face(int id) const {
  if (id < 0 || id >= num_coarse_faces())
    throw InvalidArgument("coarse face id out of range: " + std::to_string(id));
  return coarse_faces_[static_cast<std::size_t>(id)];
}

const CoarseFace& GridHierarchy::interior_face(int face_id) const {
  const CoarseFace& cf = coarse_face(face_id);
  if (!cf.interior())
    throw InvalidArgument("coarse face " + std::to_string(face_id) + " lies on the boundary");
  return cf;
}

namespace {

std::vector<CellIndex> merged_cells(const GridHierarchy& g, const CellBox& a, const CellBox& b) {
  std::vector<CellIndex> cells = g.cells_in(a);
  const std::vector<CellIndex> other = g.cells_in(b);
  cells.insert(cells.end(), other.begin(), other.end());
  std::sort(cells.begin(), cells.end());
  return cells;
}

std::vector<FaceIndex> merged_faces(const GridHierarchy& g, const CellBox& a, const CellBox& b) {
  std::vector<FaceIndex> faces = g.faces_touching(a);
  const std::vector<FaceIndex> other = g.faces_touching(b);
  faces.insert(faces.end(), other.begin(), other.end());
  std::sort(faces.begin(), faces.end());
  faces.erase(std::unique(faces.begin(), faces.end()), faces.end());
  return faces;
}

}  // namespace

Neighborhood GridHierarchy::neighborhood(int face_id) const {
  const CoarseFace& cf = interior_face(face_id);
  Neighborhood nb;
  nb.face_id = face_id;
  nb.blocks = {block_box(cf.adjacent_blocks[0]), block_box(cf.adjacent_blocks[1])};
  nb.fine_cells = merged_cells(*this, nb.blocks[0], nb.blocks[1]);
  nb.fine_faces = merged_faces(*this, nb.blocks[0], nb.blocks[1]);
  return nb;
}

OversampledNeighborhood GridHierarchy::oversampled_neighborhood(
    int face_id, const OversamplingOffsets& offsets) const {
  const CoarseFace& cf = interior_face(face_id);
  if (offsets.d11 < 0 || offsets.d12 < 0 || offsets.d21 < 0 || offsets.d22 < 0)
    throw InvalidArgument("oversampling offsets must be non-negative");
  const int a = cf.axis;
  const int normal = offsets.normal_extent(a);
  const int tangential = offsets.tangential_extent(a);
  if (normal < 1) throw InvalidArgument("normal oversampling extent must be at least one cell");

  const int plane = cf.coords[a] * n_;
  CellBox lower, upper;
  for (int t = 0; t < 3; ++t) {
    if (t == a) {
      lower.lo[t] = std::max(0, plane - normal);
      lower.hi[t] = plane;
      upper.lo[t] = plane;
      upper.hi[t] = std::min(fine_[t], plane + normal);
    } else if (t < dim_) {
      const int lo = std::max(0, cf.coords[t] * n_ - tangential);
      const int hi = std::min(fine_[t], (cf.coords[t] + 1) * n_ + tangential);
      lower.lo[t] = upper.lo[t] = lo;
      lower.hi[t] = upper.hi[t] = hi;
    } else {
      lower.lo[t] = upper.lo[t] = 0;
      lower.hi[t] = upper.hi[t] = 1;
    }
  }

  OversampledNeighborhood on;
  on.face_id = face_id;
  on.offsets = offsets;
  on.half_domains = {lower, upper};
  on.fine_cells = merged_cells(*this, lower, upper);
  on.fine_faces = merged_faces(*this, lower, upper);

  Index3 lo = upper.lo, hi = upper.hi;
  hi[a] = lo[a] + 1;
  for (int z = lo[2]; z < hi[2]; ++z)
    for (int y = lo[1]; y < hi[1]; ++y)
      for (int x = lo[0]; x < hi[0]; ++x) on.extended_interface.push_back(face(a, {x, y, z}));

  // Both lists are tangential-row-major, so a forward scan finds positions.
  on.coarse_face_positions.reserve(cf.fine_faces.size());
  std::size_t pos = 0;
  for (FaceIndex f : cf.fine_faces) {
    while (pos < on.extended_interface.size() && on.extended_interface[pos] != f) ++pos;
    on.coarse_face_positions.push_back(static_cast<int>(pos));
  }
  return on;
}

}  // namespace omgms
