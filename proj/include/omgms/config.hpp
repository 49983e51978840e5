#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omgms/fields.hpp"
#include "omgms/grid.hpp"
#include "omgms/online.hpp"
#include "omgms/transport.hpp"

namespace omgms {

struct GridSpec {
  int dim = 2;
  Index3 coarse{1, 1, 1};
  int n = 1;
  std::array<double, 3> extent{1.0, 1.0, 1.0};

  GridHierarchy build() const;
};

/// Field source. Kinds: uniform, model1, model3, channelized, boxes, raster.
struct FieldSpec {
  std::string kind = "uniform";
  double value = 1.0;       ///< uniform
  double k0 = 1e4;          ///< model3, channelized
  double background = 1.0;  ///< channelized, boxes
  double feature = 1e3;     ///< boxes
  std::vector<FeatureBox> boxes;
  std::string path;  ///< raster; a sidecar "<path>.json" descriptor is checked when present

  /// Recipe with the feature value replaced by `k0` when given.
  FieldRecipe recipe(const GridSpec& grid, std::optional<double> k0 = std::nullopt) const;
};

struct EllipticSpec {
  std::vector<int> cases{1, 2, 3};
  /// Explicit (d11, d12, d21, d22); overrides `cases` with a single "custom" run.
  std::optional<OversamplingOffsets> offsets;
  int offline = 1;
  int iterations = 7;
  double tolerance = 0.0;
  Schedule schedule = Schedule::Jacobi;
  bool source_correction = true;
};

struct ContrastSpec {
  std::vector<double> k0;
  int case_id = 2;
};

struct TwoPhaseRunSpec {
  bool fine = false;  ///< fine velocity instead of multiscale
  int offline = 1;
  int online = 0;
  int case_id = 1;
  int update_every = 0;

  /// "x + y" for x offline and y online bases, with " updating" when enabled; "fine" otherwise.
  std::string label() const;
};

struct TwoPhaseSpec {
  FluidModel fluid;
  double dt = 50.0;
  double end_time = 5000.0;
  double pore_volumes = 1.0;
  double cfl = 0.9;
  double initial_saturation = 0.0;
  bool reference = true;
  std::vector<double> snapshot_times;
  std::vector<TwoPhaseRunSpec> runs{TwoPhaseRunSpec{}};

  TwoPhaseOptions options(const TwoPhaseRunSpec& run, const GridSpec& grid) const;
};

struct RunConfig {
  GridSpec grid;
  FieldSpec field;
  EllipticSpec elliptic;
  ContrastSpec contrast;
  TwoPhaseSpec two_phase;
  std::string output_dir = "out";
  std::string canonical;  ///< normalized JSON text of the input
  std::uint64_t hash = 0; ///< FNV-1a of `canonical`
};

/// Parses and validates a JSON configuration. Unknown keys and bad values throw
/// ValidationError naming the field path (e.g. "grid.coarse[1]"); malformed
/// JSON throws ParseError.
RunConfig parse_config(const std::string& text);
/// Reads and parses a file; a missing file throws IoError.
RunConfig load_config(const std::string& path);

std::uint64_t fnv1a(const std::string& bytes);

}  // namespace omgms
