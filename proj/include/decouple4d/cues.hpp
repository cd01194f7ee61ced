#ifndef DECOUPLE4D_CUES_HPP
#define DECOUPLE4D_CUES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "decouple4d/dense_map.hpp"
#include "decouple4d/error.hpp"
#include "decouple4d/geometry.hpp"
#include "decouple4d/random.hpp"

namespace decouple4d {

using MatrixXd = Eigen::MatrixXd;

struct CueConfig {
  int patch_size = 4;
  int num_layers = 6;
  int feature_width = 32;
  /// Layers used for saliency; empty selects all layers.
  std::vector<int> layers;
  int neighbor_radius = 2;
  int l_mask = 5;
  int bins = 256;
  std::uint64_t projection_seed = 20240601;
  bool use_query_similarity = false;
  int frequencies = 12;
  Vector3d length_scale = Vector3d(1.0, 1.0, 0.1);
  double gradient_weight = 0.0;
  double gradient_scale = 1.0;
  double residual_weight = 0.0;
  double residual_scale = 0.5;
  double temperature = 1.0;

  void validate() const {
    if (patch_size < 1) throw Error(ErrorCode::InvalidConfig, "cues.patch_size must be >= 1");
    if (num_layers < 1) throw Error(ErrorCode::InvalidConfig, "cues.num_layers must be >= 1");
    if (feature_width < 1) throw Error(ErrorCode::InvalidConfig, "cues.feature_width must be >= 1");
    if (l_mask < 0 || l_mask > num_layers) throw Error(ErrorCode::InvalidConfig, "cues.l_mask must lie in [0, num_layers]");
    if (bins < 2) throw Error(ErrorCode::InvalidConfig, "cues.bins must be >= 2");
    if (neighbor_radius < 0) throw Error(ErrorCode::InvalidConfig, "cues.neighbor_radius must be >= 0");
    if (frequencies < 0) throw Error(ErrorCode::InvalidConfig, "cues.frequencies must be >= 0");
    if (!(length_scale.minCoeff() > 0.0)) throw Error(ErrorCode::InvalidConfig, "cues.length_scale must be positive");
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidConfig, "cues.temperature must be positive");
    if (!(gradient_scale > 0.0) || !(residual_scale > 0.0)) {
      throw Error(ErrorCode::InvalidConfig, "cues feature scales must be positive");
    }
    for (int l : layers) {
      if (l < 0 || l >= num_layers) throw Error(ErrorCode::InvalidConfig, "cues.layers index out of range");
    }
  }

  std::vector<int> selected_layers() const {
    if (!layers.empty()) return layers;
    std::vector<int> all(num_layers);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }

  int descriptor_width() const { return 3 + 2 * frequencies; }
};

/// Per-patch geometric measurements of one frame.
struct PatchGeometry {
  bool valid = false;
  Vector3d centroid = Vector3d::Zero();
  double mean_depth = 0.0;
  double gradient = 0.0;
  double residual = 0.0;
};

/// Nonnegative per-token descriptors, one row per patch (row-major grid).
struct FrameFeatures {
  int frame_id = 0;
  int tokens_h = 0;
  int tokens_w = 0;
  MatrixXd values;
  std::vector<bool> valid;

  int num_tokens() const { return tokens_h * tokens_w; }
};

struct TokenGrid {
  int frame_id = 0;
  int tokens_h = 0;
  int tokens_w = 0;
  std::vector<MatrixXd> queries;
  std::vector<MatrixXd> keys;
  std::vector<bool> valid;

  int num_tokens() const { return tokens_h * tokens_w; }
  int num_layers() const { return static_cast<int>(keys.size()); }
  int width() const { return keys.empty() ? 0 : static_cast<int>(keys.front().cols()); }
};

struct SaliencyMap {
  DenseMap values;
  DenseMap upsampled;
};

namespace cue_detail {

using Wide = __int128;

/// a/b > c/d for a, c >= 0 and b, d > 0, by continued-fraction expansion so
/// that no cross product can overflow.
inline bool fraction_greater(Wide a, Wide b, Wide c, Wide d) {
  for (;;) {
    const Wide qa = a / b;
    const Wide qc = c / d;
    if (qa != qc) return qa > qc;
    const Wide ra = a % b;
    const Wide rc = c % d;
    if (rc == 0) return ra > 0;
    if (ra == 0) return false;
    // ra/b > rc/d  <=>  d/rc > b/ra
    a = d;
    c = b;
    b = rc;
    d = ra;
  }
}

inline int tokens_along(int pixels, int patch) { return std::max(1, pixels / patch); }

/// Token covering a pixel; trailing pixels that do not fill a patch join the last one.
inline int token_of(int pixel, int patch, int tokens) { return std::min(pixel / patch, tokens - 1); }

}  // namespace cue_detail

/// Mean world position, depth, depth-gradient magnitude and reprojection
/// residual of each patch. `other_depth`/`other_pose` is the frame against
/// which the residual is measured; pass an empty map to skip it.
inline std::vector<PatchGeometry> patch_geometry(const DenseMap& depth, const CameraPose& pose, const Intrinsics& k,
                                                 const DenseMap& other_depth, const CameraPose& other_pose,
                                                 int patch_size) {
  const int th = cue_detail::tokens_along(depth.height, patch_size);
  const int tw = cue_detail::tokens_along(depth.width, patch_size);
  std::vector<PatchGeometry> out(static_cast<std::size_t>(th) * tw);
  std::vector<int> count(out.size(), 0);
  std::vector<int> grad_count(out.size(), 0);
  std::vector<int> res_count(out.size(), 0);
  const bool has_other = other_depth.size() > 0;
  const CameraPose world_to_other = inverse(other_pose);
  for (int row = 0; row < depth.height; ++row) {
    for (int col = 0; col < depth.width; ++col) {
      if (!depth.defined(row, col)) continue;
      const std::size_t t = static_cast<std::size_t>(cue_detail::token_of(row, patch_size, th)) * tw +
                            cue_detail::token_of(col, patch_size, tw);
      PatchGeometry& g = out[t];
      const double d = depth(row, col);
      const Vector3d world = pose.apply(k.unproject(Vector2d(col, row), d));
      g.centroid += world;
      g.mean_depth += d;
      ++count[t];
      if (col + 1 < depth.width && depth.defined(row, col + 1)) {
        g.gradient += std::abs(depth(row, col + 1) - d);
        ++grad_count[t];
      }
      if (row + 1 < depth.height && depth.defined(row + 1, col)) {
        g.gradient += std::abs(depth(row + 1, col) - d);
        ++grad_count[t];
      }
      if (has_other) {
        const Vector3d po = world_to_other.apply(world);
        if (po.z() > kMinTargetDepth) {
          const Vector2d px = k.project(po);
          const long oc = std::lround(px.x());
          const long orow = std::lround(px.y());
          if (oc >= 0 && orow >= 0 && oc < other_depth.width && orow < other_depth.height &&
              other_depth.defined(static_cast<int>(orow), static_cast<int>(oc))) {
            g.residual += std::abs(po.z() - other_depth(static_cast<int>(orow), static_cast<int>(oc)));
            ++res_count[t];
          }
        }
      }
    }
  }
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (count[t] == 0) continue;
    PatchGeometry& g = out[t];
    g.valid = true;
    g.centroid /= count[t];
    g.mean_depth /= count[t];
    g.gradient = grad_count[t] > 0 ? g.gradient / grad_count[t] : 0.0;
    g.residual = res_count[t] > 0 ? g.residual / res_count[t] : 0.0;
  }
  return out;
}

/// Random Fourier frequencies and phases for the world-position encoding.
struct PositionEncoding {
  MatrixXd omega;
  Eigen::VectorXd phase;

  static PositionEncoding from_config(const CueConfig& cfg) {
    Rng rng = make_rng(cfg.projection_seed, Stream::projection, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    PositionEncoding enc;
    enc.omega.resize(cfg.frequencies, 3);
    enc.phase.resize(cfg.frequencies);
    for (int i = 0; i < cfg.frequencies; ++i) {
      for (int a = 0; a < 3; ++a) enc.omega(i, a) = normal(rng) / cfg.length_scale[a];
      enc.phase[i] = angle(rng);
    }
    return enc;
  }
};

/// Descriptor layout: [presence, gradient, residual, split-sign cosines].
/// Every entry is nonnegative.
inline FrameFeatures describe_patches(const std::vector<PatchGeometry>& patches, int tokens_h, int tokens_w,
                                      int frame_id, const CueConfig& cfg) {
  if (static_cast<int>(patches.size()) != tokens_h * tokens_w) {
    throw Error(ErrorCode::DimensionMismatch, "patch count does not match the token grid");
  }
  const PositionEncoding enc = PositionEncoding::from_config(cfg);
  FrameFeatures f;
  f.frame_id = frame_id;
  f.tokens_h = tokens_h;
  f.tokens_w = tokens_w;
  f.values = MatrixXd::Zero(tokens_h * tokens_w, cfg.descriptor_width());
  f.valid.assign(patches.size(), false);
  for (std::size_t t = 0; t < patches.size(); ++t) {
    const PatchGeometry& g = patches[t];
    if (!g.valid) continue;
    f.valid[t] = true;
    auto row = f.values.row(static_cast<Eigen::Index>(t));
    row(0) = 1.0;
    row(1) = cfg.gradient_weight * std::min(g.gradient / cfg.gradient_scale, 1.0);
    row(2) = cfg.residual_weight * std::min(g.residual / cfg.residual_scale, 1.0);
    for (int i = 0; i < cfg.frequencies; ++i) {
      const double c = std::cos(enc.omega.row(i).dot(g.centroid) + enc.phase[i]);
      row(3 + 2 * i) = std::max(c, 0.0);
      row(4 + 2 * i) = std::max(-c, 0.0);
    }
  }
  return f;
}

inline FrameFeatures frame_features(const DenseMap& depth, const CameraPose& pose, const Intrinsics& k,
                                    const DenseMap& other_depth, const CameraPose& other_pose, int frame_id,
                                    const CueConfig& cfg) {
  const int th = cue_detail::tokens_along(depth.height, cfg.patch_size);
  const int tw = cue_detail::tokens_along(depth.width, cfg.patch_size);
  return describe_patches(patch_geometry(depth, pose, k, other_depth, other_pose, cfg.patch_size), th, tw, frame_id,
                          cfg);
}

/// Fixed nonnegative D x d map for one layer. Each output channel reads a
/// single descriptor entry with a positive weight; every descriptor entry
/// feeds at least one output when d >= D.
inline MatrixXd layer_projection(const CueConfig& cfg, int in_width, int layer, bool key) {
  Rng rng = make_rng(cfg.projection_seed, Stream::projection, 1 + 2 * static_cast<std::uint64_t>(layer) + (key ? 1 : 0));
  std::uniform_real_distribution<double> weight(0.5, 1.5);
  std::vector<int> outputs(cfg.feature_width);
  std::iota(outputs.begin(), outputs.end(), 0);
  std::shuffle(outputs.begin(), outputs.end(), rng);
  std::uniform_int_distribution<int> pick(0, std::max(0, in_width - 1));
  MatrixXd a = MatrixXd::Zero(in_width, cfg.feature_width);
  for (int j = 0; j < cfg.feature_width; ++j) {
    const int src = j < in_width ? j : pick(rng);
    a(src, outputs[j]) = weight(rng);
  }
  return a;
}

/// Projects descriptors into per-layer queries and keys.
inline TokenGrid encode_tokens(const FrameFeatures& features, const CueConfig& cfg) {
  cfg.validate();
  if (std::none_of(features.valid.begin(), features.valid.end(), [](bool v) { return v; })) {
    throw Error(ErrorCode::EmptyFrame, "frame " + std::to_string(features.frame_id) + " has no patch with depth");
  }
  TokenGrid g;
  g.frame_id = features.frame_id;
  g.tokens_h = features.tokens_h;
  g.tokens_w = features.tokens_w;
  g.valid = features.valid;
  const int in_width = static_cast<int>(features.values.cols());
  for (int l = 0; l < cfg.num_layers; ++l) {
    g.queries.push_back(features.values * layer_projection(cfg, in_width, l, false));
    g.keys.push_back(features.values * layer_projection(cfg, in_width, l, true));
  }
  return g;
}

/// Row-wise cosine similarity; rows with zero norm give zero similarity.
inline MatrixXd gram_similarity(const MatrixXd& a_r, const MatrixXd& a_s) {
  if (a_r.cols() != a_s.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "feature widths " + std::to_string(a_r.cols()) + " and " + std::to_string(a_s.cols()));
  }
  auto normalized = [](const MatrixXd& a) {
    MatrixXd out = a;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double n = a.row(i).norm();
      if (n > 0.0) out.row(i) /= n;
      else out.row(i).setZero();
    }
    return out;
  };
  MatrixXd g = normalized(a_r) * normalized(a_s).transpose();
  return g.cwiseMax(-1.0).cwiseMin(1.0);
}

inline std::vector<int> temporal_neighbors(int r, int num_frames, int radius) {
  std::vector<int> out;
  for (int s = std::max(0, r - radius); s <= std::min(num_frames - 1, r + radius); ++s) {
    if (s != r) out.push_back(s);
  }
  return out;
}

namespace cue_detail {

/// 1 - best match over valid tokens of the other frame, per token.
inline Eigen::VectorXd mismatch(const MatrixXd& a_r, const MatrixXd& a_s, const std::vector<bool>& valid_s) {
  const MatrixXd g = gram_similarity(a_r, a_s);
  Eigen::VectorXd out(g.rows());
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    double best = 0.0;
    bool any = false;
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      if (!valid_s[j]) continue;
      best = any ? std::max(best, g(i, j)) : g(i, j);
      any = true;
    }
    out[i] = 1.0 - (any ? best : 0.0);
  }
  return out;
}

}  // namespace cue_detail

/// Upsamples token values to pixels by nearest neighbour; tokens marked
/// invalid stay undefined.
inline DenseMap upsample_tokens(const DenseMap& tokens, int patch_size, int height, int width) {
  DenseMap out(height, width, tokens.role);
  for (int row = 0; row < height; ++row) {
    const int tr = cue_detail::token_of(row, patch_size, tokens.height);
    for (int col = 0; col < width; ++col) {
      out(row, col) = tokens(tr, cue_detail::token_of(col, patch_size, tokens.width));
    }
  }
  return out;
}

/// Motion saliency of frame r: mean over selected layers and temporal
/// neighbours of (1 - best key-key cosine match), clamped to [0, 1].
inline SaliencyMap aggregate_saliency(const std::vector<TokenGrid>& grids, int r, const CueConfig& cfg, int height,
                                      int width) {
  const std::vector<int> neighbors = temporal_neighbors(r, static_cast<int>(grids.size()), cfg.neighbor_radius);
  if (neighbors.empty()) {
    throw Error(ErrorCode::NoNeighbors, "frame " + std::to_string(r) + " has no temporal neighbour within radius " +
                                            std::to_string(cfg.neighbor_radius));
  }
  const TokenGrid& gr = grids[r];
  const std::vector<int> layers = cfg.selected_layers();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(gr.num_tokens());
  int terms = 0;
  for (int l : layers) {
    for (int s : neighbors) {
      const TokenGrid& gs = grids[s];
      if (gs.num_tokens() != gr.num_tokens()) {
        throw Error(ErrorCode::DimensionMismatch, "token grids of frames differ in size");
      }
      Eigen::VectorXd m = cue_detail::mismatch(gr.keys[l], gs.keys[l], gs.valid);
      if (cfg.use_query_similarity) {
        m = 0.5 * (m + cue_detail::mismatch(gr.queries[l], gs.queries[l], gs.valid));
      }
      acc += m;
      ++terms;
    }
  }
  SaliencyMap out;
  out.values = DenseMap(gr.tokens_h, gr.tokens_w, MapRole::saliency);
  for (int i = 0; i < gr.num_tokens(); ++i) {
    if (gr.valid[i]) out.values.values[i] = std::clamp(acc[i] / terms, 0.0, 1.0);
  }
  out.upsampled = upsample_tokens(out.values, cfg.patch_size, height, width);
  return out;
}

/// Otsu threshold over the defined values. The range [min, max] is split into
/// `bins` equal bins; candidates are the interior bin edges and the first
/// edge with the largest between-class variance wins. Variances are compared
/// exactly in integer arithmetic on bin indices.
inline double otsu_threshold(const std::vector<double>& values, int bins) {
  if (bins < 2) throw Error(ErrorCode::InvalidConfig, "Otsu needs at least 2 bins");
  constexpr double kAboveMax = 0x1p-20;
  if (values.empty()) return kAboveMax;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) return hi + kAboveMax;
  const double w = (hi - lo) / bins;
  std::vector<std::int64_t> count(bins, 0);
  for (double v : values) ++count[std::min(bins - 1, static_cast<int>(std::floor((v - lo) / w)))];
  std::int64_t total_n = 0;
  std::int64_t total_s = 0;
  for (int b = 0; b < bins; ++b) {
    total_n += count[b];
    total_s += count[b] * b;
  }
  // sigma_k = n0 n1 (m0 - m1)^2 = (n1 s0 - n0 s1)^2 / (n0 n1), kept as num/den.
  using cue_detail::Wide;
  std::int64_t n0 = 0;
  std::int64_t s0 = 0;
  Wide best_num = -1;
  Wide best_den = 1;
  int best_k = 1;
  for (int k = 1; k < bins; ++k) {
    n0 += count[k - 1];
    s0 += count[k - 1] * (k - 1);
    const std::int64_t n1 = total_n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const Wide d = static_cast<Wide>(n1) * s0 - static_cast<Wide>(n0) * (total_s - s0);
    const Wide num = d * d;
    const Wide den = static_cast<Wide>(n0) * n1;
    if (best_num < 0 || cue_detail::fraction_greater(num, den, best_num, best_den)) {
      best_num = num;
      best_den = den;
      best_k = k;
    }
  }
  return lo + best_k * w;
}

inline std::vector<double> defined_values(const DenseMap& map) {
  std::vector<double> out;
  out.reserve(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map.defined(i)) out.push_back(map.values[i]);
  }
  return out;
}

inline double otsu_threshold(const SaliencyMap& saliency, int bins) {
  return otsu_threshold(defined_values(saliency.upsampled), bins);
}

/// Dynamic (1) iff value >= tau; undefined pixels stay undefined.
inline DenseMap binarize(const DenseMap& saliency, double tau) {
  DenseMap out(saliency.height, saliency.width, MapRole::mask);
  for (std::size_t i = 0; i < saliency.size(); ++i) {
    if (saliency.defined(i)) out.values[i] = saliency.values[i] >= tau ? 1.0 : 0.0;
  }
  return out;
}

/// Zeroes the keys of tokens with saliency >= tau in the first l_mask layers.
inline TokenGrid suppress_keys(const TokenGrid& grid, const DenseMap& token_saliency, double tau, int l_mask) {
  if (token_saliency.height != grid.tokens_h || token_saliency.width != grid.tokens_w) {
    throw Error(ErrorCode::ResolutionMismatch,
                "mask " + std::to_string(token_saliency.height) + "x" + std::to_string(token_saliency.width) +
                    " vs token grid " + std::to_string(grid.tokens_h) + "x" + std::to_string(grid.tokens_w));
  }
  TokenGrid out = grid;
  const int layers = std::min(l_mask, grid.num_layers());
  for (int i = 0; i < grid.num_tokens(); ++i) {
    if (!token_saliency.defined(static_cast<std::size_t>(i)) || token_saliency.values[i] < tau) continue;
    for (int l = 0; l < layers; ++l) out.keys[l].row(i).setZero();
  }
  return out;
}

struct PairMass {
  int query_frame = 0;
  int key_frame = 0;
  double dynamic_mass = 0.0;
};

struct AttentionResult {
  /// Context of each frame's tokens after the last layer, averaged over
  /// source frames.
  std::vector<MatrixXd> context;
  std::vector<PairMass> pairs;
  double mean_dynamic_mass = 0.0;
};

/// Cross-frame softmax attention for every ordered frame pair and layer.
/// Values are the unsuppressed keys of `value_grids`. The diagnostic is the
/// attention mass landing on tokens flagged in `dynamic_tokens`, averaged over
/// layers and valid queries.
inline AttentionResult attention_forward(const std::vector<TokenGrid>& grids, const std::vector<TokenGrid>& value_grids,
                                         const std::vector<std::vector<bool>>& dynamic_tokens, double temperature) {
  const int n = static_cast<int>(grids.size());
  if (n < 2) throw Error(ErrorCode::InvalidConfig, "attention needs at least two frames");
  if (static_cast<int>(value_grids.size()) != n || static_cast<int>(dynamic_tokens.size()) != n) {
    throw Error(ErrorCode::DimensionMismatch, "attention inputs differ in frame count");
  }
  AttentionResult res;
  res.context.resize(n);
  double mass_sum = 0.0;
  for (int r = 0; r < n; ++r) {
    const TokenGrid& gr = grids[r];
    const int layers = gr.num_layers();
    res.context[r] = MatrixXd::Zero(gr.num_tokens(), gr.width());
    for (int s = 0; s < n; ++s) {
      if (s == r) continue;
      const TokenGrid& gs = grids[s];
      const double scale = 1.0 / (std::sqrt(static_cast<double>(gr.width())) * temperature);
      double pair_mass = 0.0;
      int pair_terms = 0;
      for (int l = 0; l < layers; ++l) {
        const MatrixXd logits = gr.queries[l] * gs.keys[l].transpose() * scale;
        for (int i = 0; i < gr.num_tokens(); ++i) {
          if (!gr.valid[i]) continue;
          double mx = -std::numeric_limits<double>::infinity();
          for (int j = 0; j < gs.num_tokens(); ++j) {
            if (gs.valid[j]) mx = std::max(mx, logits(i, j));
          }
          if (!std::isfinite(mx)) continue;
          double z = 0.0;
          double dyn = 0.0;
          Eigen::RowVectorXd ctx = Eigen::RowVectorXd::Zero(gr.width());
          for (int j = 0; j < gs.num_tokens(); ++j) {
            if (!gs.valid[j]) continue;
            const double e = std::exp(logits(i, j) - mx);
            z += e;
            if (dynamic_tokens[s][j]) dyn += e;
            if (l + 1 == layers) ctx += e * value_grids[s].keys[l].row(j);
          }
          pair_mass += dyn / z;
          ++pair_terms;
          if (l + 1 == layers) res.context[r].row(i) += ctx / (z * (n - 1));
        }
      }
      const double mass = pair_terms > 0 ? pair_mass / pair_terms : 0.0;
      res.pairs.push_back({r, s, mass});
      mass_sum += mass;
    }
  }
  res.mean_dynamic_mass = res.pairs.empty() ? 0.0 : mass_sum / res.pairs.size();
  return res;
}

/// Dynamic flags at token resolution: saliency >= tau on valid tokens.
inline std::vector<bool> flagged_tokens(const DenseMap& token_saliency, double tau) {
  std::vector<bool> out(token_saliency.size(), false);
  for (std::size_t i = 0; i < token_saliency.size(); ++i) {
    out[i] = token_saliency.defined(i) && token_saliency.values[i] >= tau;
  }
  return out;
}

/// ROC AUC with tied scores sharing their average rank. Returns 0.5 when one
/// class is empty.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank = 0.0;
  double npos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t m = i; m <= j; ++m) {
      if (labels[order[m]] != 0) {
        pos_rank += rank;
        npos += 1.0;
      }
    }
    i = j + 1;
  }
  const double nneg = static_cast<double>(scores.size()) - npos;
  if (npos == 0.0 || nneg == 0.0) return 0.5;
  return (pos_rank - npos * (npos + 1.0) / 2.0) / (npos * nneg);
}

}  // namespace decouple4d

#endif  // DECOUPLE4D_CUES_HPP
