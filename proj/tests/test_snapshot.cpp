#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <thread>

#include <Eigen/Eigenvalues>

#include "omgms/errors.hpp"
#include "omgms/mixed_problem.hpp"
#include "omgms/snapshot.hpp"
#include "oracles.hpp"

using namespace omgms;

namespace {

int middle_face(const GridHierarchy& g, int axis) {
  for (int id : g.interior_faces()) {
    const CoarseFace& cf = g.coarse_face(id);
    bool inner = cf.axis == axis;
    for (int a = 0; a < g.dim(); ++a)
      if (a != axis) inner = inner && cf.coords[static_cast<std::size_t>(a)] == g.coarse_counts()[static_cast<std::size_t>(a)] / 2;
    if (inner && cf.coords[static_cast<std::size_t>(axis)] == g.coarse_counts()[static_cast<std::size_t>(axis)] / 2) return id;
  }
  return -1;
}

// Divergence of every column on the cells of each part.
std::array<Eigen::MatrixXd, 2> part_divergence(const GridHierarchy& g, const SnapshotSpace& s) {
  std::array<Eigen::MatrixXd, 2> out;
  for (int p = 0; p < 2; ++p) {
    out[p].resize(static_cast<Eigen::Index>(s.parts[p].size()), s.size());
    for (int j = 0; j < s.size(); ++j) out[p].col(j) = cell_divergence(g, s.parts[p], s.faces, s.columns.col(j));
  }
  return out;
}

}  // namespace

TEST_CASE("plain snapshots carry one-hot interface data") {
  const auto g = GridHierarchy::build(2, {3, 3, 1}, 4);
  const auto k = oracle::random_kappa(g, 1e-3, 1e3, 5);
  const int id = middle_face(g, 0);
  const SnapshotSpace s = build_snapshots(g, k, id);
  REQUIRE(s.size() == 4);
  CHECK(s.interface == g.coarse_face(id).fine_faces);
  for (std::size_t i = 0; i < s.interface.size(); ++i) {
    const int row = s.row_of(s.interface[i]);
    for (int j = 0; j < s.size(); ++j) CHECK(s.columns(row, j) == doctest::Approx(i == static_cast<std::size_t>(j) ? 1.0 : 0.0).epsilon(1e-12));
  }
}

TEST_CASE("case 2 snapshot count") {
  const auto g = GridHierarchy::build(2, {3, 3, 1}, 4);
  const auto k = PermeabilityField::uniform(g, 1.0);
  const int id = middle_face(g, 1);
  const SnapshotSpace s = build_snapshots(g, k, id, OversamplingOffsets::for_case(2, 4));
  CHECK(s.size() == 6);
  CHECK(s.coarse_positions.size() == 4);
  // Interface data reproduces the prescribed one-hot fluxes exactly for kappa = 1.
  for (int j = 0; j < s.size(); ++j) {
    Eigen::VectorXd trace(s.size());
    for (int i = 0; i < s.size(); ++i) trace[i] = s.columns(s.row_of(s.interface[static_cast<std::size_t>(i)]), j);
    CHECK(trace.sum() == doctest::Approx(1.0));
    CHECK(trace[j] == doctest::Approx(1.0));
  }
}

TEST_CASE("divergence is constant per part and equals the compatibility constant") {
  for (int dim : {2, 3}) {
    const auto g = GridHierarchy::build(dim, {3, 3, dim == 3 ? 3 : 1}, 3);
    const auto k = oracle::random_kappa(g, 1e-3, 1e3, 11);
    for (int c : {1, 2, 3}) {
      const SnapshotSpace s = build_snapshots(g, k, middle_face(g, 0), OversamplingOffsets::for_case(c, 3));
      const auto div = part_divergence(g, s);
      for (int p = 0; p < 2; ++p)
        for (int j = 0; j < s.size(); ++j)
          for (Eigen::Index i = 0; i < div[p].rows(); ++i)
            CHECK(std::abs(div[p](i, j) - s.compat(p, j)) <= 1e-10 * std::max(1.0, std::abs(s.compat(p, j))));
      // Total outflow of each half equals the interface flux it receives.
      const double area = g.h()[1] * (dim == 3 ? g.h()[2] : 1.0);
      for (int j = 0; j < s.size(); ++j) {
        const double vol = g.cell_volume();
        CHECK(s.compat(0, j) * vol * static_cast<double>(s.parts[0].size()) == doctest::Approx(area));
        CHECK(s.compat(1, j) * vol * static_cast<double>(s.parts[1].size()) == doctest::Approx(-area));
      }
    }
  }
}

TEST_CASE("outer boundary faces carry no flux") {
  const auto g = GridHierarchy::build(2, {3, 3, 1}, 3);
  const auto k = oracle::random_kappa(g, 1e-2, 1e2, 2);
  const SnapshotSpace s = build_snapshots(g, k, middle_face(g, 0), OversamplingOffsets::for_case(2, 3));
  // Faces of the domain cells that are absent from `faces` are exactly the outer boundary.
  for (const auto& part : s.parts)
    for (CellIndex c : part)
      for (int a = 0; a < 2; ++a)
        for (FaceIndex f : g.cell_faces(c, a)) {
          const auto cells = g.face_cells(f);
          const auto in_domain = [&](CellIndex x) {
            return x >= 0 && (std::binary_search(s.parts[0].begin(), s.parts[0].end(), x) ||
                              std::binary_search(s.parts[1].begin(), s.parts[1].end(), x));
          };
          const bool outer = !(in_domain(cells[0]) && in_domain(cells[1]));
          CHECK((s.row_of(f) < 0) == outer);
        }
}

TEST_CASE("divergence-free reduction") {
  CHECK_THROWS_AS(divergence_free_reduction(1), InvalidArgument);
  const Eigen::MatrixXd P2 = divergence_free_reduction(2);
  REQUIRE(P2.rows() == 2);
  REQUIRE(P2.cols() == 1);
  CHECK(P2(0, 0) == 1.0);
  CHECK(P2(1, 0) == -1.0);
  const Eigen::MatrixXd P4 = divergence_free_reduction(4);
  CHECK(P4.rows() == 4);
  CHECK(P4.cols() == 3);
  CHECK(Eigen::FullPivLU<Eigen::MatrixXd>(P4).rank() == 3);
  CHECK((Eigen::RowVectorXd::Ones(4) * P4).norm() == 0.0);
}

TEST_CASE("reduced snapshot combinations are divergence free") {
  const auto g = GridHierarchy::build(2, {3, 3, 1}, 5);
  const auto k = oracle::random_kappa(g, 1e-3, 1e3, 8);
  for (int c : {1, 2, 3}) {
    const SnapshotSpace s = build_snapshots(g, k, middle_face(g, 1), OversamplingOffsets::for_case(c, 5));
    const Eigen::MatrixXd combos = s.columns * divergence_free_reduction(s.size());
    for (Eigen::Index j = 0; j < combos.cols(); ++j) {
      const Eigen::VectorXd col = combos.col(j);
      for (const auto& part : s.parts) CHECK(cell_divergence(g, part, s.faces, col).cwiseAbs().maxCoeff() <= 1e-10);
    }
    // dim of the divergence-free span is J+ - 1.
    CHECK(Eigen::FullPivLU<Eigen::MatrixXd>(combos).rank() == s.size() - 1);
  }
}

TEST_CASE("snapshot Gram matrix") {
  const auto g = GridHierarchy::build(2, {3, 3, 1}, 4);
  const auto k = oracle::random_kappa(g, 1e-3, 1e3, 4);
  const SnapshotSpace s = build_snapshots(g, k, middle_face(g, 0), OversamplingOffsets::for_case(2, 4));
  const Eigen::MatrixXd G = snapshot_gram(g, k, s);
  CHECK((G - G.transpose()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
  // Orthonormalizing the columns in the Gram inner product gives the identity.
  const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(G).matrixL();
  const Eigen::MatrixXd Q = L.triangularView<Eigen::Lower>().solve(s.columns.transpose()).transpose();
  SnapshotSpace orth = s;
  orth.columns = Q;
  CHECK((snapshot_gram(g, k, orth) - Eigen::MatrixXd::Identity(s.size(), s.size())).norm() < 1e-10);
  // Single column.
  SnapshotSpace one = s;
  one.columns = s.columns.leftCols(1);
  const Eigen::MatrixXd G1 = snapshot_gram(g, k, one);
  CHECK(G1.rows() == 1);
  CHECK(G1(0, 0) == doctest::Approx(G(0, 0)));
}

TEST_CASE("snapshots commute with uniform kappa scaling") {
  const auto g = GridHierarchy::build(2, {3, 3, 1}, 4);
  const auto k = oracle::random_kappa(g, 1e-2, 1e2, 21);
  const int id = middle_face(g, 0);
  const SnapshotSpace a = build_snapshots(g, k, id, OversamplingOffsets::for_case(2, 4));
  const SnapshotSpace b = build_snapshots(g, k.scaled(37.0), id, OversamplingOffsets::for_case(2, 4));
  CHECK((a.columns - b.columns).norm() <= 1e-12 * a.columns.norm());
}

TEST_CASE("snapshot columns are linearly independent") {
  const auto g = GridHierarchy::build(3, {3, 3, 3}, 2);
  const auto k = oracle::random_kappa(g, 1e-3, 1e3, 9);
  const SnapshotSpace s = build_snapshots(g, k, middle_face(g, 2), OversamplingOffsets::for_case(2, 2));
  CHECK(s.size() == 16);
  CHECK(Eigen::FullPivLU<Eigen::MatrixXd>(s.columns).rank() == s.size());
}

TEST_CASE("cache: concurrent fills, keying and persistence") {
  const auto g = GridHierarchy::build(2, {3, 3, 1}, 3);
  const auto k = oracle::random_kappa(g, 1e-2, 1e2, 6);
  const auto offsets = OversamplingOffsets::for_case(2, 3);
  SnapshotCache cache(g, k, offsets);
  std::vector<std::thread> threads;
  for (int id : g.interior_faces()) threads.emplace_back([&cache, id] { cache.get(id); });
  for (auto& t : threads) t.join();
  CHECK(cache.size() == g.interior_faces().size());

  const std::string path = (std::filesystem::temp_directory_path() / "omgms_snapshot_cache.bin").string();
  cache.save(path);
  SnapshotCache loaded(g, k, offsets);
  REQUIRE(loaded.load(path));
  CHECK(loaded.size() == cache.size());
  for (int id : g.interior_faces()) CHECK(loaded.get(id).columns == cache.get(id).columns);

  // A different field or geometry changes the key and invalidates the file.
  SnapshotCache other(g, k.scaled(2.0), offsets);
  CHECK(other.key() != cache.key());
  CHECK_FALSE(other.load(path));
  SnapshotCache case1(g, k, OversamplingOffsets::for_case(1, 3));
  CHECK_FALSE(case1.load(path));
  CHECK_FALSE(loaded.load(path + ".missing"));
  std::filesystem::remove(path);
}
