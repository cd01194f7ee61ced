#ifndef DECOUPLE4D_FUSION_HPP
#define DECOUPLE4D_FUSION_HPP

#include <algorithm>
#include <cstdio>
#include <string>

#include "decouple4d/dense_map.hpp"
#include "decouple4d/error.hpp"

namespace decouple4d {

inline constexpr double kDefaultFusionEpsilon = 1e-6;

/// Static set S (mask < tau) and dynamic set (mask >= tau); pixels with an
/// undefined mask belong to neither and hold the sentinel in both maps.
struct RegionPartition {
  DenseMap static_mask;
  DenseMap dynamic_mask;
  double tau = 0.0;

  bool is_static(std::size_t i) const { return static_mask.values[i] == 1.0; }
  bool is_dynamic(std::size_t i) const { return dynamic_mask.values[i] == 1.0; }
  bool defined(std::size_t i) const { return static_mask.defined(i); }
};

enum class FusionMode { hard_replace, confidence_fused };

inline std::string to_string(FusionMode m) {
  return m == FusionMode::hard_replace ? "hard_replace" : "confidence_fused";
}

struct FusedDepth {
  DenseMap depth;
  /// Weight on the second pass; defined only on S.
  DenseMap weight;
  DenseMap precision;
  FusionMode mode = FusionMode::hard_replace;
};

inline RegionPartition partition_regions(const DenseMap& mask, double tau) {
  RegionPartition part;
  part.tau = tau;
  part.static_mask = DenseMap(mask.height, mask.width, MapRole::mask);
  part.dynamic_mask = DenseMap(mask.height, mask.width, MapRole::mask);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask.defined(i)) continue;
    const bool stat = mask.values[i] < tau;
    part.static_mask.values[i] = stat ? 1.0 : 0.0;
    part.dynamic_mask.values[i] = stat ? 0.0 : 1.0;
  }
  return part;
}

inline DenseMap fusion_weight(const DenseMap& c1, const DenseMap& c2, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::NonPositiveEpsilon, "epsilon must be positive, got " + std::to_string(eps));
  require_same_shape(c1, c2, "fusion_weight");
  DenseMap w(c1.height, c1.width, MapRole::weight);
  for (std::size_t i = 0; i < c1.size(); ++i) {
    if (!c1.defined(i) || !c2.defined(i)) continue;
    w.values[i] = c2.values[i] / (c1.values[i] + c2.values[i] + eps);
  }
  return w;
}

inline DenseMap fused_precision(const DenseMap& c1, const DenseMap& c2) {
  require_same_shape(c1, c2, "fused_precision");
  DenseMap p(c1.height, c1.width, MapRole::precision);
  for (std::size_t i = 0; i < c1.size(); ++i) {
    if (c1.defined(i) && c2.defined(i)) p.values[i] = c1.values[i] + c2.values[i];
  }
  return p;
}

namespace fusion_detail {

inline void check_inputs(const DenseMap& d1, const DenseMap& d2, const RegionPartition& part) {
  require_same_shape(d1, d2, "pass depths");
  require_same_shape(d1, part.static_mask, "depth vs partition");
}

/// Depth for a pixel where only one pass is defined, or the sentinel.
inline bool fallback(const DenseMap& d1, const DenseMap& d2, const RegionPartition& part, std::size_t i,
                     double& out) {
  const bool h1 = d1.defined(i);
  const bool h2 = d2.defined(i);
  if (h1 && h2) return false;
  if (h1) out = d1.values[i];
  else if (h2) out = d2.values[i];
  else if (part.defined(i)) {
    throw Error(ErrorCode::UndefinedDepthInRegion,
                "pixel " + std::to_string(i) + " is partitioned but neither pass defines its depth");
  }
  return true;
}

}  // namespace fusion_detail

/// First-pass depth on the dynamic set, second-pass depth on S.
inline FusedDepth hard_replace(const DenseMap& d1, const DenseMap& d2, const RegionPartition& part) {
  fusion_detail::check_inputs(d1, d2, part);
  FusedDepth out;
  out.mode = FusionMode::hard_replace;
  out.depth = DenseMap(d1.height, d1.width, MapRole::depth);
  out.weight = DenseMap(d1.height, d1.width, MapRole::weight);
  out.precision = DenseMap(d1.height, d1.width, MapRole::precision);
  for (std::size_t i = 0; i < d1.size(); ++i) {
    if (fusion_detail::fallback(d1, d2, part, i, out.depth.values[i])) continue;
    if (part.is_static(i)) {
      out.depth.values[i] = d2.values[i];
      out.weight.values[i] = 1.0;
    } else if (part.is_dynamic(i)) {
      out.depth.values[i] = d1.values[i];
    }
  }
  return out;
}

/// Inverse-variance fusion on S, first-pass depth on the dynamic set.
inline FusedDepth fuse_confidence(const DenseMap& d1, const DenseMap& d2, const DenseMap& c1, const DenseMap& c2,
                                  const RegionPartition& part, double eps) {
  fusion_detail::check_inputs(d1, d2, part);
  require_same_shape(d1, c1, "depth vs confidence");
  require_same_shape(d2, c2, "depth vs confidence");
  FusedDepth out;
  out.mode = FusionMode::confidence_fused;
  const DenseMap w = fusion_weight(c1, c2, eps);
  const DenseMap prec = fused_precision(c1, c2);
  out.depth = DenseMap(d1.height, d1.width, MapRole::depth);
  out.weight = DenseMap(d1.height, d1.width, MapRole::weight);
  out.precision = DenseMap(d1.height, d1.width, MapRole::precision);
  for (std::size_t i = 0; i < d1.size(); ++i) {
    if (fusion_detail::fallback(d1, d2, part, i, out.depth.values[i])) continue;
    if (part.is_static(i)) {
      if (!w.defined(i)) {
        // No usable confidence: keep the second pass as hard replacement does.
        out.depth.values[i] = d2.values[i];
        continue;
      }
      const double wi = w.values[i];
      const double a = d1.values[i];
      const double b = d2.values[i];
      // Interpolation form, clamped so rounding never leaves [min, max].
      out.depth.values[i] = std::clamp(a + wi * (b - a), std::min(a, b), std::max(a, b));
      out.weight.values[i] = wi;
      out.precision.values[i] = prec.values[i];
    } else if (part.is_dynamic(i)) {
      out.depth.values[i] = d1.values[i];
    }
  }
  return out;
}

/// Weighted squared error c1 (d - d1)^2 + c2 (d - d2)^2 at one pixel.
inline double fusion_objective(double d, double d1, double d2, double c1, double c2) {
  return c1 * (d - d1) * (d - d1) + c2 * (d - d2) * (d - d2);
}

struct FusionSummary {
  int frame_id = 0;
  FusionMode mode = FusionMode::hard_replace;
  std::size_t static_px = 0;
  std::size_t dynamic_px = 0;
  double mean_weight = 0.0;
};

inline FusionSummary summarize_fusion(int frame_id, const FusedDepth& fused, const RegionPartition& part) {
  FusionSummary s;
  s.frame_id = frame_id;
  s.mode = fused.mode;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < part.static_mask.size(); ++i) {
    if (part.is_static(i)) ++s.static_px;
    if (part.is_dynamic(i)) ++s.dynamic_px;
    if (part.is_static(i) && fused.weight.defined(i)) {
      sum += fused.weight.values[i];
      ++n;
    }
  }
  s.mean_weight = n > 0 ? sum / n : 0.0;
  return s;
}

/// `frame_id mode static_px dynamic_px mean_W`
inline std::string format_fusion_line(const FusionSummary& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d %s %zu %zu %.9f", s.frame_id, to_string(s.mode).c_str(), s.static_px,
                s.dynamic_px, s.mean_weight);
  return buf;
}

}  // namespace decouple4d

#endif  // DECOUPLE4D_FUSION_HPP
