#include "omgms/fields.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

#include "omgms/errors.hpp"

namespace omgms {

PermeabilityField::PermeabilityField(const Index3& dims, std::vector<double> values,
                                     std::optional<double> contrast)
    : dims_(dims), values_(std::move(values)), contrast_(contrast) {
  const long expected = static_cast<long>(dims[0]) * dims[1] * dims[2];
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
    throw InvalidArgument("permeability dims must be positive");
  if (static_cast<long>(values_.size()) != expected)
    throw InvalidArgument("permeability expects " + std::to_string(expected) + " values, got " +
                          std::to_string(values_.size()));
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!(values_[i] > 0.0) || !std::isfinite(values_[i]))
      throw InvalidArgument("permeability value at index " + std::to_string(i) +
                            " is not positive and finite");
  }
}

PermeabilityField PermeabilityField::uniform(const GridHierarchy& grid, double value) {
  return {grid.fine_counts(), std::vector<double>(static_cast<std::size_t>(grid.num_cells()), value)};
}

PermeabilityField PermeabilityField::scaled(std::span<const double> factor) const {
  if (factor.size() != values_.size()) throw InvalidArgument("scale factor size mismatch");
  std::vector<double> v(values_.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = values_[i] * factor[i];
  return {dims_, std::move(v), contrast_};
}

PermeabilityField PermeabilityField::scaled(double factor) const {
  std::vector<double> v(values_);
  for (double& x : v) x *= factor;
  return {dims_, std::move(v), contrast_};
}

void FieldRecipe::validate() const {
  if (!(background > 0.0) || !std::isfinite(background))
    throw InvalidArgument("background permeability must be positive");
  if (!(feature > 0.0) || !std::isfinite(feature))
    throw InvalidArgument("feature permeability must be positive");
  for (const FeatureBox& b : boxes) {
    for (int a = 0; a < 3; ++a) {
      if (b.lo[a] < 0.0 || b.hi[a] > 1.0 || b.lo[a] > b.hi[a])
        throw InvalidArgument("feature box must lie inside the unit domain");
    }
  }
  if (kind == Kind::Raster && raster_path.empty())
    throw InvalidArgument("raster recipe needs a path");
}

namespace {

// Uniform on [0, 1) from two 32-bit draws, identical on every standard library.
class Uniform {
 public:
  explicit Uniform(unsigned seed) : rng_(seed) {}
  double operator()() {
    const double lo = static_cast<double>(rng_());
    const double hi = static_cast<double>(rng_());
    const double u = (lo + hi * 4294967296.0) / 18446744073709551616.0;
    return u < 1.0 ? u : std::nextafter(1.0, 0.0);
  }

 private:
  std::mt19937 rng_;
};

// Seeded mixture of oblique staircase fractures, fractures straddling coarse lines
// (every tenth of the domain) and thin axis-aligned fractures. Feature sizes are
// tied to a 200-cell resolution per axis.
std::vector<FeatureBox> fracture_network(unsigned seed) {
  constexpr double res = 200.0;
  constexpr double w = 1.0 / res;
  Uniform u(seed);
  std::vector<FeatureBox> boxes;
  const int count = 10 + static_cast<int>(u() * 50);
  const double oblique = u();
  const double straddling = u() * (1.0 - oblique);
  for (int i = 0; i < count; ++i) {
    const double t = u();
    if (t < oblique) {
      const double x0 = u(), y0 = u(), angle = u() * 3.14159, len = 0.15 + 0.6 * u();
      const int steps = static_cast<int>(len * 300);
      for (int s = 0; s <= steps; ++s) {
        const double x = x0 + std::cos(angle) * len * s / steps;
        const double y = y0 + std::sin(angle) * len * s / steps;
        if (x < 0 || x >= 1 || y < 0 || y >= 1) continue;
        const int ci = static_cast<int>(x * res), cj = static_cast<int>(y * res);
        boxes.push_back({{(ci + 0.25) / res, (cj + 0.25) / res, 0.0}, {(ci + 0.75) / res, (cj + 0.75) / res, 1.0}});
      }
    } else if (t < oblique + straddling) {
      const int line = 1 + static_cast<int>(u() * 9);
      const double p = line * 0.1;
      const double len = 0.2 + 0.6 * u();
      const double c0 = u() * (1 - len);
      if (i % 2) boxes.push_back({{c0, p - w, 0.0}, {c0 + len, p + w, 1.0}});
      else boxes.push_back({{p - w, c0, 0.0}, {p + w, c0 + len, 1.0}});
    } else {
      const double a = u();
      const double len = 0.2 + 0.6 * u();
      const double c0 = u() * (1 - len);
      const double p = (static_cast<int>(a * res) + 0.5) / res;
      if (i % 2) boxes.push_back({{c0, p - w / 2, 0.0}, {c0 + len, p + w / 2, 1.0}});
      else boxes.push_back({{p - w / 2, c0, 0.0}, {p + w / 2, c0 + len, 1.0}});
    }
  }
  return boxes;
}

}  // namespace

FieldRecipe model1_standin() {
  FieldRecipe r;
  r.kind = FieldRecipe::Kind::InclusionsAndChannels;
  r.background = 0.1;
  r.feature = 1e3;
  r.boxes = fracture_network(3002);
  return r;
}

FieldRecipe model3_standin(double k0) {
  FieldRecipe r;
  r.kind = FieldRecipe::Kind::InclusionsAndChannels;
  r.background = 1.0;
  r.feature = k0;
  r.boxes = {
      // long channels
      {{0.00, 0.20, 0.30}, {1.00, 0.27, 0.37}},
      {{0.60, 0.04, 0.70}, {0.67, 0.96, 0.77}},
      {{0.30, 0.60, 0.00}, {0.37, 0.67, 1.00}},
      {{0.08, 0.76, 0.10}, {0.92, 0.83, 0.17}},
      // isolated inclusions
      {{0.12, 0.45, 0.60}, {0.19, 0.52, 0.67}},
      {{0.80, 0.30, 0.45}, {0.87, 0.37, 0.52}},
      {{0.46, 0.12, 0.84}, {0.53, 0.19, 0.91}},
      {{0.72, 0.82, 0.40}, {0.79, 0.89, 0.47}},
      {{0.42, 0.42, 0.46}, {0.49, 0.49, 0.53}},
  };
  return r;
}

FieldRecipe channelized_standin(double k0, double background) {
  FieldRecipe r;
  r.kind = FieldRecipe::Kind::InclusionsAndChannels;
  r.background = background;
  r.feature = k0;
  r.boxes = {
      {{0.00, 0.22, 0.0}, {0.78, 0.27, 1.0}},  //
      {{0.22, 0.56, 0.0}, {1.00, 0.61, 1.0}},  //
      {{0.63, 0.27, 0.0}, {0.68, 0.56, 1.0}},  //
      {{0.10, 0.78, 0.0}, {0.52, 0.83, 1.0}},  //
      {{0.40, 0.02, 0.0}, {0.45, 0.22, 1.0}},  //
      {{0.82, 0.70, 0.0}, {0.87, 0.98, 1.0}},
  };
  return r;
}

PermeabilityField synthesize(const FieldRecipe& recipe, const GridHierarchy& grid) {
  recipe.validate();
  if (recipe.kind == FieldRecipe::Kind::Raster) {
    PermeabilityField f = load_raster(recipe.raster_path, recipe.raster_dims, recipe.layout);
    if (!f.matches(grid)) throw InvalidArgument("raster dims do not match the fine grid");
    return f;
  }
  std::vector<double> values(static_cast<std::size_t>(grid.num_cells()), recipe.background);
  if (recipe.kind == FieldRecipe::Kind::InclusionsAndChannels) {
    const auto& L = grid.extent();
    for (CellIndex c = 0; c < grid.num_cells(); ++c) {
      const auto x = grid.cell_center(c);
      for (const FeatureBox& b : recipe.boxes) {
        bool inside = true;
        for (int a = 0; a < grid.dim(); ++a) {
          const double rel = x[a] / L[a];
          inside = inside && rel >= b.lo[a] && rel <= b.hi[a];
        }
        if (inside) {
          values[static_cast<std::size_t>(c)] = recipe.feature;
          break;
        }
      }
    }
    return {grid.fine_counts(), std::move(values), recipe.feature};
  }
  return {grid.fine_counts(), std::move(values)};
}

PermeabilityField parse_raster(const std::string& text, const Index3& dims) {
  const long expected = static_cast<long>(dims[0]) * dims[1] * dims[2];
  if (expected <= 0) throw InvalidArgument("raster dims must be positive");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(expected));
  std::istringstream in(text);
  std::string token;
  long index = 0;
  while (in >> token) {
    if (index < expected) {
      const char* begin = token.c_str();
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(begin, &end);
      if (end == begin || *end != '\0' || errno == ERANGE)
        throw ParseError("non-numeric token '" + token + "' at index " + std::to_string(index),
                         index);
      if (!(v > 0.0) || !std::isfinite(v))
        throw ParseError("non-positive value at index " + std::to_string(index), index);
      values.push_back(v);
    }
    ++index;
  }
  if (index != expected)
    throw ParseError("expected " + std::to_string(expected) + " values, found " +
                     std::to_string(index));
  return {dims, std::move(values)};
}

PermeabilityField load_raster(const std::string& path, const Index3& dims, RasterLayout) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open raster file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_raster(ss.str(), dims);
}

void save_raster(const std::string& path, const PermeabilityField& field) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write raster file: " + path);
  const auto values = field.values();
  const int nx = field.dims()[0];
  char buf[32];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", values[i]);
    out << buf << ((static_cast<int>(i % static_cast<std::size_t>(nx)) == nx - 1) ? '\n' : ' ');
  }
  if (!out) throw IoError("failed writing raster file: " + path);
}

RasterDescriptor load_descriptor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open raster descriptor: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("raster descriptor: ") + e.what());
  }
  RasterDescriptor d;
  try {
    const auto dims = j.at("dims").get<std::vector<int>>();
    if (dims.empty() || dims.size() > 3) throw ParseError("raster descriptor: dims needs 1-3 entries");
    for (std::size_t a = 0; a < dims.size(); ++a) d.dims[a] = dims[a];
    for (std::size_t a = dims.size(); a < 3; ++a) d.dims[a] = 1;
    if (j.contains("layout") && j.at("layout").get<std::string>() != "x-fastest")
      throw ParseError("raster descriptor: unsupported layout");
    if (j.contains("units")) d.units = j.at("units").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("raster descriptor: ") + e.what());
  }
  return d;
}

void save_descriptor(const std::string& path, const RasterDescriptor& desc) {
  nlohmann::json j;
  j["dims"] = {desc.dims[0], desc.dims[1], desc.dims[2]};
  j["layout"] = "x-fastest";
  j["units"] = desc.units;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write raster descriptor: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace omgms
