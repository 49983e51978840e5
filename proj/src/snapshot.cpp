#include "omgms/snapshot.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "omgms/errors.hpp"
#include "omgms/mixed_problem.hpp"

namespace omgms {

namespace {

constexpr char kMagic[8] = {'O', 'M', 'G', 'S', 'N', 'A', 'P', '\0'};
constexpr std::uint32_t kVersion = 1;

SnapshotSpace solve_snapshots(const GridHierarchy& grid, const PermeabilityField& kappa,
                              int face_id, const OversamplingOffsets& offsets,
                              std::array<std::vector<CellIndex>, 2> parts,
                              std::vector<FaceIndex> interface, std::vector<int> positions) {
  SnapshotSpace s;
  s.face_id = face_id;
  s.offsets = offsets;
  s.interface = std::move(interface);
  s.coarse_positions = std::move(positions);
  LocalNeumannOperator op(grid, kappa, {parts[0], parts[1]}, s.interface);
  const auto J = static_cast<Eigen::Index>(s.interface.size());
  LocalField lf = op.apply(Eigen::MatrixXd::Identity(J, J));
  s.parts = std::move(parts);
  s.faces = std::move(lf.faces);
  s.columns = std::move(lf.values);
  s.compat = std::move(lf.compat);
  return s;
}

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void put_vec(std::ostream& out, const std::vector<T>& v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}
void put_mat(std::ostream& out, const Eigen::MatrixXd& m) {
  put<std::int64_t>(out, m.rows());
  put<std::int64_t>(out, m.cols());
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}
template <class T>
T read_val(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated snapshot cache");
  return v;
}
template <class T>
std::vector<T> read_vec(std::istream& in) {
  const auto n = read_val<std::uint64_t>(in);
  if (n > (std::uint64_t{1} << 32)) throw IoError("corrupt snapshot cache");
  std::vector<T> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!in) throw IoError("truncated snapshot cache");
  return v;
}
Eigen::MatrixXd read_mat(std::istream& in) {
  const auto r = read_val<std::int64_t>(in), c = read_val<std::int64_t>(in);
  if (r < 0 || c < 0 || r * c > (std::int64_t{1} << 32)) throw IoError("corrupt snapshot cache");
  Eigen::MatrixXd m(r, c);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw IoError("truncated snapshot cache");
  return m;
}

}  // namespace

std::vector<CellIndex> SnapshotSpace::cells() const {
  std::vector<CellIndex> all(parts[0]);
  all.insert(all.end(), parts[1].begin(), parts[1].end());
  std::sort(all.begin(), all.end());
  return all;
}

int SnapshotSpace::row_of(FaceIndex f) const {
  const auto it = std::lower_bound(faces.begin(), faces.end(), f);
  return (it != faces.end() && *it == f) ? static_cast<int>(it - faces.begin()) : -1;
}

SnapshotSpace build_snapshots(const GridHierarchy& grid, const PermeabilityField& kappa,
                              int face_id, const OversamplingOffsets& offsets) {
  const OversampledNeighborhood on = grid.oversampled_neighborhood(face_id, offsets);
  return solve_snapshots(grid, kappa, face_id, offsets,
                         {grid.cells_in(on.half_domains[0]), grid.cells_in(on.half_domains[1])},
                         on.extended_interface, on.coarse_face_positions);
}

SnapshotSpace build_snapshots(const GridHierarchy& grid, const PermeabilityField& kappa,
                              int face_id) {
  const Neighborhood nb = grid.neighborhood(face_id);
  const CoarseFace& cf = grid.coarse_face(face_id);
  std::vector<int> positions(cf.fine_faces.size());
  for (std::size_t k = 0; k < positions.size(); ++k) positions[k] = static_cast<int>(k);
  return solve_snapshots(grid, kappa, face_id,
                         OversamplingOffsets::no_oversampling(grid.fine_per_coarse()),
                         {grid.cells_in(nb.blocks[0]), grid.cells_in(nb.blocks[1])}, cf.fine_faces,
                         std::move(positions));
}

Eigen::MatrixXd divergence_free_reduction(int J) {
  if (J < 2) throw InvalidArgument("divergence-free reduction needs at least two interface faces");
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(J, J - 1);
  for (int k = 0; k < J - 1; ++k) {
    P(k, k) = 1.0;
    P(k + 1, k) = -1.0;
  }
  return P;
}

Eigen::MatrixXd snapshot_gram(const GridHierarchy& grid, const PermeabilityField& kappa,
                              const SnapshotSpace& space) {
  const std::vector<CellIndex> cells = space.cells();
  const SparseMatrix M = local_mass_matrix(grid, kappa, cells, space.faces);
  Eigen::MatrixXd G = space.columns.transpose() * (M * space.columns);
  // Symmetrize exactly; the two triangles differ only by summation order.
  G = 0.5 * (G + G.transpose()).eval();
  return G;
}

std::uint64_t snapshot_key(const GridHierarchy& grid, const PermeabilityField& kappa,
                           const OversamplingOffsets& offsets) {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  const int header[6] = {grid.dim(), grid.fine_per_coarse(), grid.coarse_counts()[0],
                         grid.coarse_counts()[1], grid.coarse_counts()[2], static_cast<int>(kVersion)};
  mix(header, sizeof header);
  mix(grid.extent().data(), sizeof(double) * 3);
  const int off[4] = {offsets.d11, offsets.d12, offsets.d21, offsets.d22};
  mix(off, sizeof off);
  mix(kappa.values().data(), kappa.size() * sizeof(double));
  return h;
}

SnapshotCache::SnapshotCache(const GridHierarchy& grid, const PermeabilityField& kappa,
                             const OversamplingOffsets& offsets)
    : grid_(&grid), kappa_(&kappa), offsets_(offsets), key_(snapshot_key(grid, kappa, offsets)) {}

const SnapshotSpace& SnapshotCache::get(int face_id) {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = spaces_.find(face_id);
    if (it != spaces_.end()) return it->second;
  }
  SnapshotSpace s = build_snapshots(*grid_, *kappa_, face_id, offsets_);
  std::lock_guard<std::mutex> lock(mutex_);
  return spaces_.try_emplace(face_id, std::move(s)).first->second;
}

std::size_t SnapshotCache::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return spaces_.size();
}

void SnapshotCache::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write snapshot cache: " + path);
  std::lock_guard<std::mutex> lock(mutex_);
  out.write(kMagic, sizeof kMagic);
  put(out, kVersion);
  put(out, key_);
  put<std::uint64_t>(out, spaces_.size());
  for (const auto& [id, s] : spaces_) {
    put<std::int32_t>(out, id);
    put_vec(out, s.parts[0]);
    put_vec(out, s.parts[1]);
    put_vec(out, s.interface);
    put_vec(out, s.coarse_positions);
    put_vec(out, s.faces);
    put_mat(out, s.columns);
    put_mat(out, s.compat);
  }
  if (!out) throw IoError("failed writing snapshot cache: " + path);
}

bool SnapshotCache::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) return false;
  if (read_val<std::uint32_t>(in) != kVersion) return false;
  if (read_val<std::uint64_t>(in) != key_) return false;
  const auto count = read_val<std::uint64_t>(in);
  std::map<int, SnapshotSpace> loaded;
  for (std::uint64_t i = 0; i < count; ++i) {
    SnapshotSpace s;
    s.face_id = read_val<std::int32_t>(in);
    s.offsets = offsets_;
    s.parts[0] = read_vec<CellIndex>(in);
    s.parts[1] = read_vec<CellIndex>(in);
    s.interface = read_vec<FaceIndex>(in);
    s.coarse_positions = read_vec<int>(in);
    s.faces = read_vec<FaceIndex>(in);
    s.columns = read_mat(in);
    s.compat = read_mat(in);
    const int id = s.face_id;
    loaded.emplace(id, std::move(s));
  }
  std::lock_guard<std::mutex> lock(mutex_);
  for (auto& [id, s] : loaded) spaces_.insert_or_assign(id, std::move(s));
  return true;
}

}  // namespace omgms
