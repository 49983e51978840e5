#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omgms/grid.hpp"

namespace omgms {

/// Cell-wise isotropic permeability on a fine grid, x-fastest.
class PermeabilityField {
 public:
  PermeabilityField() = default;
  /// Throws InvalidArgument unless values.size() matches dims and every value
  /// is positive and finite.
  PermeabilityField(const Index3& dims, std::vector<double> values,
                    std::optional<double> contrast = std::nullopt);

  static PermeabilityField uniform(const GridHierarchy& grid, double value);

  const Index3& dims() const { return dims_; }
  std::span<const double> values() const { return values_; }
  double operator[](CellIndex c) const { return values_[static_cast<std::size_t>(c)]; }
  std::size_t size() const { return values_.size(); }
  /// Feature value k0 when the field was synthesized.
  std::optional<double> contrast() const { return contrast_; }

  bool matches(const GridHierarchy& grid) const { return dims_ == grid.fine_counts(); }
  /// Cell-wise product with a positive per-cell factor (e.g. total mobility).
  PermeabilityField scaled(std::span<const double> factor) const;
  PermeabilityField scaled(double factor) const;

 private:
  Index3 dims_{0, 0, 0};
  std::vector<double> values_;
  std::optional<double> contrast_;
};

/// Axis-aligned feature box in coordinates relative to D, i.e. in [0, 1]^3.
struct FeatureBox {
  std::array<double, 3> lo{0.0, 0.0, 0.0};
  std::array<double, 3> hi{1.0, 1.0, 1.0};
};

enum class RasterLayout { XFastest };

struct FieldRecipe {
  enum class Kind { Uniform, InclusionsAndChannels, Raster };

  Kind kind = Kind::Uniform;
  double background = 1.0;
  double feature = 1.0;
  std::vector<FeatureBox> boxes;
  std::string raster_path;
  Index3 raster_dims{0, 0, 0};
  RasterLayout layout = RasterLayout::XFastest;

  /// Throws InvalidArgument when values are non-positive or a box leaves [0,1]^3.
  void validate() const;
};

/// Stand-in for the two-dimensional fracture-like model: background 0.1 with a
/// seeded network of one-cell-wide 1e3 fractures, sized for a 200 x 200 grid.
FieldRecipe model1_standin();
/// Stand-in for the three-dimensional model with long channels along each axis
/// and isolated inclusions: background 1, features k0.
FieldRecipe model3_standin(double k0);
/// Two-dimensional channelized field used for the waterflood examples.
FieldRecipe channelized_standin(double k0 = 1e3, double background = 1.0);

PermeabilityField synthesize(const FieldRecipe& recipe, const GridHierarchy& grid);

/// Reads whitespace-separated decimal values, x-fastest then y then z.
PermeabilityField load_raster(const std::string& path, const Index3& dims,
                              RasterLayout layout = RasterLayout::XFastest);
/// Parses raster text held in memory; used by load_raster.
PermeabilityField parse_raster(const std::string& text, const Index3& dims);
void save_raster(const std::string& path, const PermeabilityField& field);

/// Sidecar JSON descriptor: {"dims": [nx, ny, nz], "layout": "x-fastest", "units": "..."}.
struct RasterDescriptor {
  Index3 dims{0, 0, 0};
  RasterLayout layout = RasterLayout::XFastest;
  std::string units = "dimensionless";
};
RasterDescriptor load_descriptor(const std::string& path);
void save_descriptor(const std::string& path, const RasterDescriptor& desc);

}  // namespace omgms
