#ifndef DECOUPLE4D_DENSE_MAP_HPP
#define DECOUPLE4D_DENSE_MAP_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "decouple4d/error.hpp"

namespace decouple4d {

enum class MapRole { depth, confidence, saliency, mask, weight, precision };

/// Undefined pixels hold a role-specific sentinel: 0 for depth, -1 otherwise.
inline double sentinel_for(MapRole role) { return role == MapRole::depth ? 0.0 : -1.0; }

/// H x W scalar field, row-major.
struct DenseMap {
  int height = 0;
  int width = 0;
  MapRole role = MapRole::depth;
  std::vector<double> values;

  DenseMap() = default;
  DenseMap(int h, int w, MapRole r)
      : height(h), width(w), role(r), values(static_cast<std::size_t>(h) * w, sentinel_for(r)) {}
  DenseMap(int h, int w, MapRole r, double fill)
      : height(h), width(w), role(r), values(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return values.size(); }
  double sentinel() const { return sentinel_for(role); }

  double& operator()(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
  double operator()(int row, int col) const {
    return values[static_cast<std::size_t>(row) * width + col];
  }

  bool defined(std::size_t index) const {
    const double v = values[index];
    return role == MapRole::depth ? v > 0.0 : v >= 0.0;
  }
  bool defined(int row, int col) const { return defined(static_cast<std::size_t>(row) * width + col); }

  bool same_shape(const DenseMap& other) const {
    return height == other.height && width == other.width;
  }
};

inline void require_same_shape(const DenseMap& a, const DenseMap& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                    " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

/// Rounds every value to the nearest 32-bit float. Maps that cross a stage
/// boundary are kept float-representable so that file round trips are lossless.
inline void quantize_to_float(DenseMap& map) {
  for (double& v : map.values) v = static_cast<double>(static_cast<float>(v));
}

inline std::size_t count_defined(const DenseMap& map) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < map.size(); ++i) n += map.defined(i) ? 1 : 0;
  return n;
}

}  // namespace decouple4d

#endif  // DECOUPLE4D_DENSE_MAP_HPP
