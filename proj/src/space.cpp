#include "omgms/space.hpp"

#include <algorithm>
#include <string>

#include "omgms/errors.hpp"

namespace omgms {

std::vector<CellIndex> FaceBasis::cells() const {
  std::vector<CellIndex> all(parts[0]);
  all.insert(all.end(), parts[1].begin(), parts[1].end());
  std::sort(all.begin(), all.end());
  return all;
}

MultiscaleSpace::MultiscaleSpace(const GridHierarchy& grid)
    : grid_(&grid), slot_(static_cast<std::size_t>(grid.num_coarse_faces()), -1) {
  const auto& interior = grid.interior_faces();
  bases_.resize(interior.size());
  for (std::size_t k = 0; k < interior.size(); ++k) {
    bases_[k].face_id = interior[k];
    slot_[static_cast<std::size_t>(interior[k])] = static_cast<int>(k);
  }
}

FaceBasis& MultiscaleSpace::basis_for(int face_id) {
  return const_cast<FaceBasis&>(std::as_const(*this).basis_for(face_id));
}

const FaceBasis& MultiscaleSpace::basis_for(int face_id) const {
  if (face_id < 0 || face_id >= static_cast<int>(slot_.size()) || slot_[static_cast<std::size_t>(face_id)] < 0)
    throw InvalidArgument("no basis for coarse face " + std::to_string(face_id));
  return bases_[static_cast<std::size_t>(slot_[static_cast<std::size_t>(face_id)])];
}

int MultiscaleSpace::num_columns() const {
  int n = 0;
  for (const FaceBasis& b : bases_) n += b.size();
  return n;
}

SparseMatrix MultiscaleSpace::prolongation(const SaddleSystem& fine) const {
  std::vector<Eigen::Triplet<double>> t;
  std::size_t nnz = 0;
  for (const FaceBasis& b : bases_) nnz += static_cast<std::size_t>(b.columns.size());
  t.reserve(nnz);
  int col = 0;
  for (const FaceBasis& b : bases_) {
    std::vector<int> rows(b.faces.size());
    for (std::size_t i = 0; i < b.faces.size(); ++i) {
      rows[i] = fine.active_index(b.faces[i]);
      if (rows[i] < 0) throw InvalidArgument("basis face is not an active fine face");
    }
    for (int j = 0; j < b.size(); ++j, ++col)
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double v = b.columns(static_cast<Eigen::Index>(i), j);
        if (v != 0.0) t.emplace_back(rows[i], col, v);
      }
  }
  SparseMatrix R(fine.num_active(), col);
  R.setFromTriplets(t.begin(), t.end());
  return R;
}

long expected_dimension(const GridHierarchy& grid, int per_face, int iterations) {
  const long faces = static_cast<long>(grid.interior_faces().size());
  return faces * (per_face + iterations) + grid.num_blocks();
}

}  // namespace omgms
