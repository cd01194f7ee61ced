#ifndef DECOUPLE4D_PIPELINE_HPP
#define DECOUPLE4D_PIPELINE_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "decouple4d/config.hpp"
#include "decouple4d/cues.hpp"
#include "decouple4d/dense_map.hpp"
#include "decouple4d/error.hpp"
#include "decouple4d/fusion.hpp"
#include "decouple4d/geometry.hpp"
#include "decouple4d/io.hpp"
#include "decouple4d/metrics.hpp"
#include "decouple4d/pose.hpp"
#include "decouple4d/synthscene.hpp"

namespace decouple4d {

inline constexpr const char* kVersion = "decouple4d 0.1.0";

enum class FusionVariant { pass1_only, pass2_only, hard_replace, confidence_fused };
enum class PoseMode { masked, unmasked };
enum class TauMode { otsu, fixed };

inline std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::pass1_only: return "pass1_only";
    case FusionVariant::pass2_only: return "pass2_only";
    case FusionVariant::hard_replace: return "hard_replace";
    case FusionVariant::confidence_fused: return "confidence_fused";
  }
  return "pass1_only";
}

inline std::string to_string(PoseMode m) { return m == PoseMode::masked ? "masked" : "unmasked"; }

struct Variant {
  std::string name;
  FusionVariant fusion = FusionVariant::pass1_only;
  PoseMode pose = PoseMode::unmasked;
  /// Row label in ablation tables.
  std::string label;
};

/// The four ablation rows, each adding one component to the previous one.
inline std::vector<Variant> default_variants() {
  return {{"baseline", FusionVariant::pass1_only, PoseMode::unmasked, "Baseline"},
          {"pose_decoupling", FusionVariant::pass2_only, PoseMode::masked, "+Pose Decoupling"},
          {"hard_replace", FusionVariant::hard_replace, PoseMode::masked, "+Hard Replacement"},
          {"conf_fusion", FusionVariant::confidence_fused, PoseMode::masked, "+Conf. Fusion"}};
}

/// Accepts a default variant name or `<fusion>/<pose>`, e.g. `pass2_only/unmasked`.
inline Variant variant_from_name(const std::string& name) {
  for (const Variant& v : default_variants()) {
    if (v.name == name) return v;
  }
  const auto slash = name.find('/');
  if (slash != std::string::npos) {
    const std::string f = name.substr(0, slash);
    const std::string p = name.substr(slash + 1);
    Variant v;
    v.name = f + "-" + p;
    v.label = name;
    bool ok = false;
    for (FusionVariant fv : {FusionVariant::pass1_only, FusionVariant::pass2_only, FusionVariant::hard_replace,
                             FusionVariant::confidence_fused}) {
      if (to_string(fv) == f) {
        v.fusion = fv;
        ok = true;
      }
    }
    if (ok && (p == "masked" || p == "unmasked")) {
      v.pose = p == "masked" ? PoseMode::masked : PoseMode::unmasked;
      return v;
    }
  }
  throw Error(ErrorCode::InvalidConfig, "unknown variant '" + name + "'");
}

struct PipelineConfig {
  SceneConfig scene;
  NoiseProfile pass1 = default_noise_profile(PassId::first);
  NoiseProfile pass2 = default_noise_profile(PassId::mask_aware);
  CueConfig cues;
  TauMode tau_mode = TauMode::otsu;
  double fixed_tau = 0.5;
  double epsilon = kDefaultFusionEpsilon;
  std::vector<Variant> variants = default_variants();
  /// Use the ground-truth mask for pose weights and the fusion partition.
  bool use_gt_mask = false;
  int stride = 1;
  int rpe_delta = 1;
  std::size_t brute_force_below = 1000;
  int ablation_seeds = 20;
  std::uint64_t seed = 0;

  void validate() const {
    scene.validate();
    pass1.validate();
    pass2.validate();
    cues.validate();
    if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidConfig, "pipeline.epsilon must be positive");
    if (variants.empty()) throw Error(ErrorCode::InvalidConfig, "pipeline.variants must not be empty");
    if (stride < 1) throw Error(ErrorCode::InvalidConfig, "pipeline.stride must be >= 1");
    if (rpe_delta < 1 || rpe_delta >= scene.num_frames) {
      throw Error(ErrorCode::InvalidConfig, "pipeline.rpe_delta must lie in [1, num_frames)");
    }
    if (ablation_seeds < 1) throw Error(ErrorCode::InvalidConfig, "pipeline.ablation_seeds must be >= 1");
  }
};

namespace pipeline_detail {

inline std::string vec3_text(const Vector3d& v) {
  return format_double(v.x()) + "," + format_double(v.y()) + "," + format_double(v.z());
}

inline Vector3d parse_vec3(const std::string& key, const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw Error(ErrorCode::InvalidConfig, key + ": expected x,y,z");
  return {parse_double(key, parts[0]), parse_double(key, parts[1]), parse_double(key, parts[2])};
}

inline void noise_to_map(ConfigMap& m, const std::string& p, const NoiseProfile& n) {
  m[p + ".sigma_static"] = format_double(n.sigma_static);
  m[p + ".sigma_dynamic"] = format_double(n.sigma_dynamic);
  m[p + ".calibration_gain"] = format_double(n.calibration_gain);
  m[p + ".sigma_floor"] = format_double(n.sigma_floor);
  m[p + ".miscalibration_multiplier"] = format_double(n.miscalibration_multiplier);
  m[p + ".miscalibration_fraction"] = format_double(n.miscalibration_fraction);
}

inline bool noise_from_entry(NoiseProfile& n, const std::string& field, const std::string& key,
                             const std::string& v) {
  if (field == "sigma_static") n.sigma_static = parse_double(key, v);
  else if (field == "sigma_dynamic") n.sigma_dynamic = parse_double(key, v);
  else if (field == "calibration_gain") n.calibration_gain = parse_double(key, v);
  else if (field == "sigma_floor") n.sigma_floor = parse_double(key, v);
  else if (field == "miscalibration_multiplier") n.miscalibration_multiplier = parse_double(key, v);
  else if (field == "miscalibration_fraction") n.miscalibration_fraction = parse_double(key, v);
  else return false;
  return true;
}

}  // namespace pipeline_detail

/// Full configuration as dotted key=value pairs (no paths).
inline ConfigMap config_to_map(const PipelineConfig& c) {
  using namespace pipeline_detail;
  ConfigMap m;
  const SceneConfig& s = c.scene;
  m["scene.num_frames"] = std::to_string(s.num_frames);
  m["scene.num_static_points"] = std::to_string(s.num_static_points);
  m["scene.num_dynamic_points"] = std::to_string(s.num_dynamic_points);
  m["scene.width"] = std::to_string(s.intrinsics.width);
  m["scene.height"] = std::to_string(s.intrinsics.height);
  m["scene.fx"] = format_double(s.intrinsics.fx);
  m["scene.fy"] = format_double(s.intrinsics.fy);
  m["scene.cx"] = format_double(s.intrinsics.cx);
  m["scene.cy"] = format_double(s.intrinsics.cy);
  m["scene.camera_path"] = to_string(s.camera_path);
  m["scene.path_amplitude"] = format_double(s.path_amplitude);
  std::string vel;
  for (std::size_t i = 0; i < s.dynamic_velocities.size(); ++i) {
    vel += (i ? ";" : "") + vec3_text(s.dynamic_velocities[i]);
  }
  m["scene.velocities"] = vel;
  m["scene.pixel_noise_sigma"] = format_double(s.pixel_noise_sigma);
  noise_to_map(m, "noise.pass1", c.pass1);
  noise_to_map(m, "noise.pass2", c.pass2);
  const CueConfig& q = c.cues;
  m["cues.patch_size"] = std::to_string(q.patch_size);
  m["cues.num_layers"] = std::to_string(q.num_layers);
  m["cues.feature_width"] = std::to_string(q.feature_width);
  std::string layers;
  for (std::size_t i = 0; i < q.layers.size(); ++i) layers += (i ? "," : "") + std::to_string(q.layers[i]);
  m["cues.layers"] = layers.empty() ? "all" : layers;
  m["cues.neighbor_radius"] = std::to_string(q.neighbor_radius);
  m["cues.l_mask"] = std::to_string(q.l_mask);
  m["cues.bins"] = std::to_string(q.bins);
  m["cues.projection_seed"] = std::to_string(q.projection_seed);
  m["cues.use_query_similarity"] = q.use_query_similarity ? "true" : "false";
  m["cues.frequencies"] = std::to_string(q.frequencies);
  m["cues.length_scale"] = vec3_text(q.length_scale);
  m["cues.gradient_weight"] = format_double(q.gradient_weight);
  m["cues.gradient_scale"] = format_double(q.gradient_scale);
  m["cues.residual_weight"] = format_double(q.residual_weight);
  m["cues.residual_scale"] = format_double(q.residual_scale);
  m["cues.temperature"] = format_double(q.temperature);
  m["pipeline.seed"] = std::to_string(c.seed);
  m["pipeline.tau_mode"] = c.tau_mode == TauMode::otsu ? "otsu" : "fixed";
  m["pipeline.tau"] = format_double(c.fixed_tau);
  m["pipeline.epsilon"] = format_double(c.epsilon);
  std::string names;
  for (std::size_t i = 0; i < c.variants.size(); ++i) {
    const Variant& v = c.variants[i];
    const bool named = v.label.find('/') == std::string::npos;
    names += (i ? "," : "") + (named ? v.name : v.label);
  }
  m["pipeline.variants"] = names;
  m["pipeline.gt_mask"] = c.use_gt_mask ? "true" : "false";
  m["pipeline.stride"] = std::to_string(c.stride);
  m["pipeline.rpe_delta"] = std::to_string(c.rpe_delta);
  m["pipeline.brute_force_below"] = std::to_string(c.brute_force_below);
  m["pipeline.ablation_seeds"] = std::to_string(c.ablation_seeds);
  return m;
}

/// Applies dotted keys on top of `c`; unknown keys are configuration errors.
inline void apply_config(PipelineConfig& c, const ConfigMap& m) {
  using namespace pipeline_detail;
  for (const auto& [key, v] : m) {
    SceneConfig& s = c.scene;
    CueConfig& q = c.cues;
    if (key == "scene.num_frames") s.num_frames = static_cast<int>(parse_int(key, v));
    else if (key == "scene.num_static_points") s.num_static_points = static_cast<int>(parse_int(key, v));
    else if (key == "scene.num_dynamic_points") s.num_dynamic_points = static_cast<int>(parse_int(key, v));
    else if (key == "scene.width") s.intrinsics.width = static_cast<int>(parse_int(key, v));
    else if (key == "scene.height") s.intrinsics.height = static_cast<int>(parse_int(key, v));
    else if (key == "scene.fx") s.intrinsics.fx = parse_double(key, v);
    else if (key == "scene.fy") s.intrinsics.fy = parse_double(key, v);
    else if (key == "scene.cx") s.intrinsics.cx = parse_double(key, v);
    else if (key == "scene.cy") s.intrinsics.cy = parse_double(key, v);
    else if (key == "scene.camera_path") s.camera_path = camera_path_from_string(v);
    else if (key == "scene.path_amplitude") s.path_amplitude = parse_double(key, v);
    else if (key == "scene.velocities") {
      s.dynamic_velocities.clear();
      for (const std::string& part : split(v, ';')) s.dynamic_velocities.push_back(parse_vec3(key, part));
    } else if (key == "scene.pixel_noise_sigma") s.pixel_noise_sigma = parse_double(key, v);
    else if (key.rfind("noise.pass1.", 0) == 0) {
      if (!noise_from_entry(c.pass1, key.substr(12), key, v)) throw Error(ErrorCode::InvalidConfig, "unknown key " + key);
    } else if (key.rfind("noise.pass2.", 0) == 0) {
      if (!noise_from_entry(c.pass2, key.substr(12), key, v)) throw Error(ErrorCode::InvalidConfig, "unknown key " + key);
    } else if (key == "cues.patch_size") q.patch_size = static_cast<int>(parse_int(key, v));
    else if (key == "cues.num_layers") q.num_layers = static_cast<int>(parse_int(key, v));
    else if (key == "cues.feature_width") q.feature_width = static_cast<int>(parse_int(key, v));
    else if (key == "cues.layers") {
      q.layers.clear();
      if (v != "all") {
        for (const std::string& part : split(v, ',')) q.layers.push_back(static_cast<int>(parse_int(key, part)));
      }
    } else if (key == "cues.neighbor_radius") q.neighbor_radius = static_cast<int>(parse_int(key, v));
    else if (key == "cues.l_mask") q.l_mask = static_cast<int>(parse_int(key, v));
    else if (key == "cues.bins") q.bins = static_cast<int>(parse_int(key, v));
    else if (key == "cues.projection_seed") q.projection_seed = parse_u64(key, v);
    else if (key == "cues.use_query_similarity") q.use_query_similarity = parse_bool(key, v);
    else if (key == "cues.frequencies") q.frequencies = static_cast<int>(parse_int(key, v));
    else if (key == "cues.length_scale") q.length_scale = parse_vec3(key, v);
    else if (key == "cues.gradient_weight") q.gradient_weight = parse_double(key, v);
    else if (key == "cues.gradient_scale") q.gradient_scale = parse_double(key, v);
    else if (key == "cues.residual_weight") q.residual_weight = parse_double(key, v);
    else if (key == "cues.residual_scale") q.residual_scale = parse_double(key, v);
    else if (key == "cues.temperature") q.temperature = parse_double(key, v);
    else if (key == "pipeline.seed") c.seed = parse_u64(key, v);
    else if (key == "pipeline.tau_mode") {
      if (v == "otsu") c.tau_mode = TauMode::otsu;
      else if (v == "fixed") c.tau_mode = TauMode::fixed;
      else throw Error(ErrorCode::InvalidConfig, key + ": expected otsu or fixed");
    } else if (key == "pipeline.tau") c.fixed_tau = parse_double(key, v);
    else if (key == "pipeline.epsilon") c.epsilon = parse_double(key, v);
    else if (key == "pipeline.variants") {
      c.variants.clear();
      for (const std::string& part : split(v, ',')) c.variants.push_back(variant_from_name(part));
    } else if (key == "pipeline.gt_mask") c.use_gt_mask = parse_bool(key, v);
    else if (key == "pipeline.stride") c.stride = static_cast<int>(parse_int(key, v));
    else if (key == "pipeline.rpe_delta") c.rpe_delta = static_cast<int>(parse_int(key, v));
    else if (key == "pipeline.brute_force_below") c.brute_force_below = static_cast<std::size_t>(parse_u64(key, v));
    else if (key == "pipeline.ablation_seeds") c.ablation_seeds = static_cast<int>(parse_int(key, v));
    else throw Error(ErrorCode::InvalidConfig, "unknown key " + key);
  }
  c.scene.seed = c.seed;
}

inline PipelineConfig config_from_map(const ConfigMap& m) {
  PipelineConfig c;
  apply_config(c, m);
  return c;
}

struct MiningDiagnostics {
  /// Negative when no ground-truth mask is available.
  double saliency_auc = -1.0;
  double mass_unsuppressed = 0.0;
  double mass_suppressed = 0.0;
  int pairs = 0;
  /// Pairs whose key frame has at least one suppressed token.
  int pairs_with_dynamic = 0;
  int pairs_reduced = 0;
  bool computed = false;
};

struct VariantResult {
  Variant variant;
  std::vector<FusedDepth> fused;
  std::vector<FusionSummary> summaries;
  std::optional<MetricReport> metrics;
};

struct StageTiming {
  std::string stage;
  double milliseconds = 0.0;
};

/// Everything the stages exchange. Maps and trajectories are kept exactly as
/// their on-disk forms read back, so file-based and in-memory runs agree.
struct PipelineState {
  PipelineConfig config;
  Trajectory traj_gt;
  std::vector<DenseMap> gt_depth;
  std::vector<DenseMap> gt_mask;
  std::vector<PassPrediction> pass1;
  std::vector<PassPrediction> pass2;
  Trajectory traj_pass1;
  Trajectory traj_pass2;
  std::vector<DenseMap> token_saliency;
  std::vector<DenseMap> saliency;
  std::vector<DenseMap> mined_mask;
  double tau = 0.0;
  bool has_mining = false;
  MiningDiagnostics diagnostics;
  std::vector<VariantResult> results;
  std::vector<StageTiming> timings;

  int num_frames() const { return static_cast<int>(pass1.size()); }
  const Intrinsics& intrinsics() const { return config.scene.intrinsics; }
};

namespace pipeline_detail {

template <typename F>
auto tagged(const std::string& stage, int frame, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, frame, e.code(), e.what());
  }
}

inline std::vector<DenseMap> depths_of(const std::vector<PassPrediction>& preds) {
  std::vector<DenseMap> out;
  for (const PassPrediction& p : preds) out.push_back(p.depth);
  return out;
}

}  // namespace pipeline_detail

/// Stage 1: ground truth, first-pass predictions and the first-pass
/// (unmasked) trajectory.
inline void stage_simulate(PipelineState& st, const SceneTruth& truth) {
  const PipelineConfig& cfg = st.config;
  st.traj_gt = roundtrip_trajectory(truth.trajectory);
  st.gt_depth.clear();
  st.gt_mask.clear();
  for (const FrameTruth& f : truth.frames) {
    st.gt_depth.push_back(f.depth);
    st.gt_mask.push_back(f.mask);
  }
  st.pass1 = pipeline_detail::tagged("simulate", -1,
                                     [&] { return corrupt_pass(truth, PassId::first, cfg.pass1, cfg.seed); });
  st.traj_pass1 = roundtrip_trajectory(
      estimate_trajectory(truth, nullptr, false, cfg.scene.pixel_noise_sigma, cfg.seed));
}

struct CueMining {
  std::vector<TokenGrid> grids;
  std::vector<SaliencyMap> saliency;
};

/// Token grids and saliency of every frame from first-pass depth and poses.
inline CueMining mine_motion_cues(const std::vector<DenseMap>& depths, const Trajectory& traj, const Intrinsics& k,
                                  const CueConfig& cfg) {
  const int n = static_cast<int>(depths.size());
  CueMining out;
  for (int r = 0; r < n; ++r) {
    const int other = r > 0 ? r - 1 : std::min(1, n - 1);
    const FrameFeatures f = pipeline_detail::tagged("mine", r, [&] {
      return frame_features(depths[r], traj[r], k, other != r ? depths[other] : DenseMap(), traj[other], r, cfg);
    });
    out.grids.push_back(pipeline_detail::tagged("mine", r, [&] { return encode_tokens(f, cfg); }));
  }
  for (int r = 0; r < n; ++r) {
    SaliencyMap s = pipeline_detail::tagged(
        "mine", r, [&] { return aggregate_saliency(out.grids, r, cfg, depths[r].height, depths[r].width); });
    quantize_to_float(s.values);
    // Saliency is reported only where the first pass has depth.
    for (std::size_t i = 0; i < s.upsampled.size(); ++i) {
      s.upsampled.values[i] = depths[r].defined(i) ? static_cast<double>(static_cast<float>(s.upsampled.values[i]))
                                                   : sentinel_for(MapRole::saliency);
    }
    out.saliency.push_back(std::move(s));
  }
  return out;
}

inline double pooled_threshold(const std::vector<DenseMap>& saliency, const PipelineConfig& cfg) {
  if (cfg.tau_mode == TauMode::fixed) return cfg.fixed_tau;
  std::vector<double> pooled;
  for (const DenseMap& s : saliency) {
    const auto v = defined_values(s);
    pooled.insert(pooled.end(), v.begin(), v.end());
  }
  return otsu_threshold(pooled, cfg.cues.bins);
}

inline double saliency_auc(const std::vector<DenseMap>& saliency, const std::vector<DenseMap>& gt_mask) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t f = 0; f < saliency.size() && f < gt_mask.size(); ++f) {
    for (std::size_t i = 0; i < saliency[f].size(); ++i) {
      if (!saliency[f].defined(i) || !gt_mask[f].defined(i)) continue;
      scores.push_back(saliency[f].values[i]);
      labels.push_back(gt_mask[f].values[i] > 0.5 ? 1 : 0);
    }
  }
  return roc_auc(scores, labels);
}

/// Dynamic attention mass with and without key suppression.
inline MiningDiagnostics attention_diagnostics(const std::vector<TokenGrid>& grids,
                                               const std::vector<DenseMap>& token_saliency, double tau,
                                               const CueConfig& cfg) {
  MiningDiagnostics d;
  std::vector<TokenGrid> suppressed;
  std::vector<std::vector<bool>> flags;
  for (std::size_t f = 0; f < grids.size(); ++f) {
    suppressed.push_back(suppress_keys(grids[f], token_saliency[f], tau, cfg.l_mask));
    flags.push_back(flagged_tokens(token_saliency[f], tau));
    for (std::size_t i = 0; i < flags.back().size(); ++i) {
      flags.back()[i] = flags.back()[i] && grids[f].valid[i];
    }
  }
  const AttentionResult before = attention_forward(grids, grids, flags, cfg.temperature);
  const AttentionResult after = attention_forward(suppressed, grids, flags, cfg.temperature);
  d.mass_unsuppressed = before.mean_dynamic_mass;
  d.mass_suppressed = after.mean_dynamic_mass;
  d.pairs = static_cast<int>(before.pairs.size());
  for (std::size_t p = 0; p < before.pairs.size(); ++p) {
    const auto& key_flags = flags[before.pairs[p].key_frame];
    const bool any = std::any_of(key_flags.begin(), key_flags.end(), [](bool b) { return b; });
    if (!any || cfg.l_mask == 0) continue;
    ++d.pairs_with_dynamic;
    if (after.pairs[p].dynamic_mass < before.pairs[p].dynamic_mass) ++d.pairs_reduced;
  }
  d.computed = true;
  return d;
}

/// Stage 2: saliency, threshold, binary masks and diagnostics.
inline void stage_mine(PipelineState& st) {
  const PipelineConfig& cfg = st.config;
  const CueMining m = mine_motion_cues(pipeline_detail::depths_of(st.pass1), st.traj_pass1, st.intrinsics(), cfg.cues);
  st.token_saliency.clear();
  st.saliency.clear();
  for (const SaliencyMap& s : m.saliency) {
    st.token_saliency.push_back(s.values);
    st.saliency.push_back(s.upsampled);
  }
  st.tau = pooled_threshold(st.saliency, cfg);
  st.mined_mask.clear();
  for (const DenseMap& s : st.saliency) st.mined_mask.push_back(binarize(s, st.tau));
  st.diagnostics = attention_diagnostics(m.grids, st.token_saliency, st.tau, cfg.cues);
  if (!st.gt_mask.empty()) st.diagnostics.saliency_auc = saliency_auc(st.saliency, st.gt_mask);
  st.has_mining = true;
}

/// Mask used for pose weights: ground truth when requested, else the mined
/// binary mask.
inline const std::vector<DenseMap>& pose_masks(const PipelineState& st) {
  return st.config.use_gt_mask ? st.gt_mask : st.mined_mask;
}

/// Stage 3: mask-weighted trajectory and second-pass predictions.
inline void stage_pose(PipelineState& st, const SceneTruth& truth) {
  const PipelineConfig& cfg = st.config;
  const std::vector<DenseMap>& masks = pose_masks(st);
  if (static_cast<int>(masks.size()) != truth.num_frames()) {
    throw StageError("pose", -1, ErrorCode::LengthMismatch, "no mask available for pose weighting");
  }
  st.traj_pass2 = roundtrip_trajectory(
      estimate_trajectory(truth, &masks, true, cfg.scene.pixel_noise_sigma, cfg.seed));
  st.pass2 = pipeline_detail::tagged("pose", -1,
                                     [&] { return corrupt_pass(truth, PassId::mask_aware, cfg.pass2, cfg.seed); });
}

inline RegionPartition frame_partition(const PipelineState& st, int t) {
  if (st.config.use_gt_mask) {
    // Like mined saliency, the mask only counts where the first pass has depth.
    DenseMap mask = st.gt_mask[t];
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!st.pass1[t].depth.defined(i)) mask.values[i] = sentinel_for(MapRole::mask);
    }
    return partition_regions(mask, 0.5);
  }
  return partition_regions(st.saliency[t], st.tau);
}

inline FusedDepth fuse_frame(const PipelineState& st, const Variant& v, int t) {
  const PassPrediction& p1 = st.pass1[t];
  const PassPrediction& p2 = st.pass2[t];
  const RegionPartition part = frame_partition(st, t);
  FusedDepth out;
  switch (v.fusion) {
    case FusionVariant::pass1_only:
    case FusionVariant::pass2_only: {
      const bool first = v.fusion == FusionVariant::pass1_only;
      out.mode = FusionMode::hard_replace;
      out.depth = first ? p1.depth : p2.depth;
      out.weight = DenseMap(p1.depth.height, p1.depth.width, MapRole::weight);
      out.precision = DenseMap(p1.depth.height, p1.depth.width, MapRole::precision);
      for (std::size_t i = 0; i < out.depth.size(); ++i) {
        if (!out.depth.defined(i)) out.depth.values[i] = first ? p2.depth.values[i] : p1.depth.values[i];
        if (part.is_static(i)) out.weight.values[i] = first ? 0.0 : 1.0;
      }
      break;
    }
    case FusionVariant::hard_replace:
      out = hard_replace(p1.depth, p2.depth, part);
      break;
    case FusionVariant::confidence_fused:
      out = fuse_confidence(p1.depth, p2.depth, p1.confidence, p2.confidence, part, st.config.epsilon);
      break;
  }
  quantize_to_float(out.depth);
  quantize_to_float(out.weight);
  quantize_to_float(out.precision);
  return out;
}

/// Stage 4: per-variant fused depth.
inline void stage_fuse(PipelineState& st) {
  if (st.pass2.size() != st.pass1.size()) {
    throw StageError("fuse", -1, ErrorCode::LengthMismatch, "pass-2 predictions are missing");
  }
  if (!st.config.use_gt_mask && st.saliency.size() != st.pass1.size()) {
    throw StageError("fuse", -1, ErrorCode::LengthMismatch, "saliency maps are missing");
  }
  st.results.clear();
  for (const Variant& v : st.config.variants) {
    VariantResult r;
    r.variant = v;
    for (int t = 0; t < st.num_frames(); ++t) {
      r.fused.push_back(pipeline_detail::tagged("fuse", t, [&] { return fuse_frame(st, v, t); }));
      FusionSummary s = summarize_fusion(t, r.fused.back(), frame_partition(st, t));
      r.summaries.push_back(s);
    }
    st.results.push_back(std::move(r));
  }
}

inline const Trajectory& variant_trajectory(const PipelineState& st, const Variant& v) {
  return v.pose == PoseMode::masked ? st.traj_pass2 : st.traj_pass1;
}

/// Stage 5: unprojection with each variant's trajectory and metrics against
/// the ground truth.
inline void stage_eval(PipelineState& st) {
  const PipelineConfig& cfg = st.config;
  const PointCloud gt = pipeline_detail::tagged("eval", -1, [&] {
    return unproject_cloud(st.gt_depth, st.traj_gt, st.intrinsics(), cfg.stride);
  });
  ChamferOptions opts;
  opts.brute_force_below = cfg.brute_force_below;
  for (VariantResult& r : st.results) {
    const Trajectory& traj = variant_trajectory(st, r.variant);
    if (traj.size() != st.traj_gt.size()) {
      throw StageError("eval", -1, ErrorCode::LengthMismatch, "trajectory for variant " + r.variant.name + " missing");
    }
    std::vector<DenseMap> depths;
    for (const FusedDepth& f : r.fused) depths.push_back(f.depth);
    r.metrics = pipeline_detail::tagged("eval", -1, [&] {
      const PointCloud pred = unproject_cloud(depths, traj, st.intrinsics(), cfg.stride);
      return evaluate(pred, gt, traj, st.traj_gt, opts, cfg.rpe_delta);
    });
  }
}

// ---------------------------------------------------------------------------
// Persistence

namespace pipeline_detail {

inline fs::path frame_file(const fs::path& dir, const std::string& stem, int t) { return dir / frame_name(stem, t); }

inline std::string diagnostics_text(const PipelineState& st) {
  std::string s;
  s += "tau=" + format_double(st.tau) + "\n";
  const MiningDiagnostics& d = st.diagnostics;
  if (d.saliency_auc >= 0.0) s += "saliency_auc=" + format_double(d.saliency_auc) + "\n";
  if (d.computed) {
    s += "attention_mass_unsuppressed=" + format_double(d.mass_unsuppressed) + "\n";
    s += "attention_mass_suppressed=" + format_double(d.mass_suppressed) + "\n";
    s += "attention_pairs=" + std::to_string(d.pairs) + "\n";
    s += "attention_pairs_with_dynamic=" + std::to_string(d.pairs_with_dynamic) + "\n";
    s += "attention_pairs_reduced=" + std::to_string(d.pairs_reduced) + "\n";
  }
  return s;
}

}  // namespace pipeline_detail

inline void save_config(const fs::path& dir, const PipelineConfig& cfg) {
  write_text(dir / "scene.cfg", std::string("# ") + kVersion + "\n" + format_config(config_to_map(cfg)));
}

inline PipelineConfig load_config(const fs::path& dir) {
  return config_from_map(parse_config(read_text(dir / "scene.cfg"), (dir / "scene.cfg").string()));
}

inline void save_simulation(const fs::path& dir, const PipelineState& st) {
  using pipeline_detail::frame_file;
  save_config(dir, st.config);
  write_trajectory(dir / "traj_gt.txt", st.traj_gt, "ground-truth camera-to-world poses");
  for (int t = 0; t < static_cast<int>(st.gt_depth.size()); ++t) {
    write_dtm(frame_file(dir / "gt", "depth", t), st.gt_depth[t]);
    write_dtm(frame_file(dir / "gt", "mask", t), st.gt_mask[t]);
  }
  for (const PassPrediction& p : st.pass1) {
    write_dtm(frame_file(dir / "pass1", "depth", p.frame_id), {&p.depth, &p.confidence});
  }
  write_trajectory(dir / "traj_pass1.txt", st.traj_pass1, "first-pass (unmasked) poses");
}

inline void save_mining(const fs::path& dir, const PipelineState& st) {
  using pipeline_detail::frame_file;
  for (int t = 0; t < static_cast<int>(st.saliency.size()); ++t) {
    write_dtm(frame_file(dir / "mask", "saliency", t), st.saliency[t]);
    write_dtm(frame_file(dir / "mask", "mask", t), st.mined_mask[t]);
    if (t < static_cast<int>(st.token_saliency.size())) {
      write_dtm(frame_file(dir / "mask", "tokens", t), st.token_saliency[t]);
    }
  }
  write_text(dir / "mask" / "threshold.txt", format_double(st.tau) + "\n");
  write_text(dir / "diagnostics.txt", pipeline_detail::diagnostics_text(st));
}

inline void save_pose(const fs::path& dir, const PipelineState& st) {
  for (const PassPrediction& p : st.pass2) {
    write_dtm(pipeline_detail::frame_file(dir / "pass2", "depth", p.frame_id), {&p.depth, &p.confidence});
  }
  write_trajectory(dir / "traj_pass2.txt", st.traj_pass2, "mask-weighted poses");
}

inline std::string fusion_report_text(const PipelineState& st) {
  std::string s = "# variant frame_id mode static_px dynamic_px mean_W\n";
  for (const VariantResult& r : st.results) {
    for (const FusionSummary& f : r.summaries) s += r.variant.name + " " + format_fusion_line(f) + "\n";
  }
  return s;
}

inline void save_fusion(const fs::path& dir, const PipelineState& st) {
  for (const VariantResult& r : st.results) {
    for (std::size_t t = 0; t < r.fused.size(); ++t) {
      const FusedDepth& f = r.fused[t];
      write_dtm(pipeline_detail::frame_file(dir / "fused" / r.variant.name, "depth", static_cast<int>(t)),
                {&f.depth, &f.weight, &f.precision});
    }
  }
  write_text(dir / "fusion_report.txt", fusion_report_text(st));
}

inline std::string report_text(const PipelineState& st) {
  std::string s = std::string("# ") + kVersion + "\n";
  s += "# pass-2 depth is drawn from the declared pass-2 noise model; key suppression shapes only the cue "
       "diagnostics\n";
  s += "[config]\n" + format_config(config_to_map(st.config));
  s += "[diagnostics]\n" + pipeline_detail::diagnostics_text(st);
  s += "[metrics]\nvariant\t" + MetricReport::tsv_header() + "\n";
  for (const VariantResult& r : st.results) {
    if (r.metrics) s += r.variant.name + "\t" + r.metrics->to_tsv() + "\n";
  }
  for (const VariantResult& r : st.results) {
    if (r.metrics) s += r.metrics->to_key_values(r.variant.name + ".");
  }
  return s;
}

inline void save_report(const fs::path& dir, const PipelineState& st) { write_text(dir / "report.txt", report_text(st)); }

/// Loads whichever stage outputs exist under `dir`. Missing optional parts
/// are left empty for later stages to report.
inline PipelineState load_state(const fs::path& dir, const PipelineConfig& cfg) {
  using pipeline_detail::frame_file;
  PipelineState st;
  st.config = cfg;
  const int n = cfg.scene.num_frames;
  auto all_exist = [&](const fs::path& sub, const std::string& stem) {
    for (int t = 0; t < n; ++t) {
      if (!fs::exists(frame_file(sub, stem, t))) return false;
    }
    return true;
  };
  if (!all_exist(dir / "pass1", "depth")) {
    throw StageError("load", -1, ErrorCode::Io, "missing pass1/ depth files under " + dir.string());
  }
  for (int t = 0; t < n; ++t) {
    auto maps = read_dtm(frame_file(dir / "pass1", "depth", t), {MapRole::depth, MapRole::confidence});
    st.pass1.push_back({t, PassId::first, std::move(maps[0]), std::move(maps[1])});
  }
  if (all_exist(dir / "pass2", "depth")) {
    for (int t = 0; t < n; ++t) {
      auto maps = read_dtm(frame_file(dir / "pass2", "depth", t), {MapRole::depth, MapRole::confidence});
      st.pass2.push_back({t, PassId::mask_aware, std::move(maps[0]), std::move(maps[1])});
    }
  }
  if (all_exist(dir / "gt", "depth") && all_exist(dir / "gt", "mask")) {
    for (int t = 0; t < n; ++t) {
      st.gt_depth.push_back(read_dtm(frame_file(dir / "gt", "depth", t), MapRole::depth));
      st.gt_mask.push_back(read_dtm(frame_file(dir / "gt", "mask", t), MapRole::mask));
    }
  }
  if (fs::exists(dir / "traj_gt.txt")) st.traj_gt = read_trajectory(dir / "traj_gt.txt");
  if (fs::exists(dir / "traj_pass1.txt")) st.traj_pass1 = read_trajectory(dir / "traj_pass1.txt");
  if (fs::exists(dir / "traj_pass2.txt")) st.traj_pass2 = read_trajectory(dir / "traj_pass2.txt");
  if (all_exist(dir / "mask", "saliency")) {
    for (int t = 0; t < n; ++t) st.saliency.push_back(read_dtm(frame_file(dir / "mask", "saliency", t), MapRole::saliency));
    if (all_exist(dir / "mask", "tokens")) {
      for (int t = 0; t < n; ++t) {
        st.token_saliency.push_back(read_dtm(frame_file(dir / "mask", "tokens", t), MapRole::saliency));
      }
    }
    if (fs::exists(dir / "mask" / "threshold.txt")) {
      st.tau = parse_double("mask/threshold.txt", config_detail::trim(read_text(dir / "mask" / "threshold.txt")));
    } else {
      st.tau = pooled_threshold(st.saliency, cfg);
    }
    for (const DenseMap& s : st.saliency) st.mined_mask.push_back(binarize(s, st.tau));
    if (!st.gt_mask.empty()) st.diagnostics.saliency_auc = saliency_auc(st.saliency, st.gt_mask);
    // Attention diagnostics need the token grids, so reuse what mining wrote.
    if (fs::exists(dir / "diagnostics.txt")) {
      const ConfigMap d = parse_config(read_text(dir / "diagnostics.txt"), (dir / "diagnostics.txt").string());
      MiningDiagnostics& m = st.diagnostics;
      if (d.count("saliency_auc")) m.saliency_auc = parse_double("saliency_auc", d.at("saliency_auc"));
      if (d.count("attention_pairs")) {
        m.mass_unsuppressed = parse_double("attention_mass_unsuppressed", d.at("attention_mass_unsuppressed"));
        m.mass_suppressed = parse_double("attention_mass_suppressed", d.at("attention_mass_suppressed"));
        m.pairs = static_cast<int>(parse_int("attention_pairs", d.at("attention_pairs")));
        m.pairs_with_dynamic =
            static_cast<int>(parse_int("attention_pairs_with_dynamic", d.at("attention_pairs_with_dynamic")));
        m.pairs_reduced = static_cast<int>(parse_int("attention_pairs_reduced", d.at("attention_pairs_reduced")));
        m.computed = true;
      }
    }
    st.has_mining = true;
  }
  return st;
}

/// Reads fused/<variant>/ maps written by save_fusion for every configured
/// variant.
inline void load_fusion(const fs::path& dir, PipelineState& st) {
  st.results.clear();
  for (const Variant& v : st.config.variants) {
    VariantResult r;
    r.variant = v;
    for (int t = 0; t < st.config.scene.num_frames; ++t) {
      const fs::path p = pipeline_detail::frame_file(dir / "fused" / v.name, "depth", t);
      if (!fs::exists(p)) throw StageError("eval", t, ErrorCode::Io, "missing " + p.string());
      auto maps = read_dtm(p, {MapRole::depth, MapRole::weight, MapRole::precision});
      FusedDepth f;
      f.mode = v.fusion == FusionVariant::confidence_fused ? FusionMode::confidence_fused : FusionMode::hard_replace;
      f.depth = std::move(maps[0]);
      f.weight = std::move(maps[1]);
      f.precision = std::move(maps[2]);
      r.fused.push_back(std::move(f));
    }
    st.results.push_back(std::move(r));
  }
}

// ---------------------------------------------------------------------------
// Orchestration

struct RunReport {
  std::string version = kVersion;
  ConfigMap config;
  MiningDiagnostics diagnostics;
  double tau = 0.0;
  std::vector<std::pair<std::string, MetricReport>> metrics;
  std::vector<StageTiming> timings;

  const MetricReport* find(const std::string& variant) const {
    for (const auto& [name, m] : metrics) {
      if (name == variant) return &m;
    }
    return nullptr;
  }
};

namespace pipeline_detail {

template <typename F>
void timed(PipelineState& st, const std::string& stage, F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  const auto stop = std::chrono::steady_clock::now();
  st.timings.push_back({stage, std::chrono::duration<double, std::milli>(stop - start).count()});
}

}  // namespace pipeline_detail

inline RunReport make_report(const PipelineState& st) {
  RunReport r;
  r.config = config_to_map(st.config);
  r.diagnostics = st.diagnostics;
  r.tau = st.tau;
  for (const VariantResult& v : st.results) {
    if (v.metrics) r.metrics.emplace_back(v.variant.name, *v.metrics);
  }
  r.timings = st.timings;
  return r;
}

/// Runs every stage on the simulator. When `out` is nonempty, each stage's
/// outputs are written as soon as the stage finishes.
inline PipelineState run_simulated(const PipelineConfig& config, const fs::path& out = {}) {
  PipelineConfig cfg = config;
  cfg.scene.seed = cfg.seed;
  cfg.validate();
  PipelineState st;
  st.config = cfg;
  const bool write = !out.empty();
  SceneTruth truth;
  pipeline_detail::timed(st, "simulate", [&] {
    truth = pipeline_detail::tagged("simulate", -1, [&] { return generate_scene(cfg.scene); });
    stage_simulate(st, truth);
    if (write) save_simulation(out, st);
  });
  pipeline_detail::timed(st, "mine", [&] {
    stage_mine(st);
    if (write) save_mining(out, st);
  });
  pipeline_detail::timed(st, "pose", [&] {
    stage_pose(st, truth);
    if (write) save_pose(out, st);
  });
  pipeline_detail::timed(st, "fuse", [&] {
    stage_fuse(st);
    if (write) save_fusion(out, st);
  });
  pipeline_detail::timed(st, "eval", [&] {
    stage_eval(st);
    if (write) save_report(out, st);
  });
  return st;
}

/// Fusion and evaluation on externally supplied stage outputs.
inline PipelineState run_external(const fs::path& input, const PipelineConfig& cfg, const fs::path& out = {}) {
  const auto start = std::chrono::steady_clock::now();
  PipelineState st = load_state(input, cfg);
  st.timings.push_back(
      {"load", std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()});
  if (!st.has_mining && !cfg.use_gt_mask) {
    if (st.traj_pass1.size() != st.pass1.size()) {
      throw StageError("mine", -1, ErrorCode::Io, "mask/ saliency maps or traj_pass1.txt are required");
    }
    pipeline_detail::timed(st, "mine", [&] { stage_mine(st); });
  }
  const bool write = !out.empty();
  pipeline_detail::timed(st, "fuse", [&] {
    stage_fuse(st);
    if (write) save_fusion(out, st);
  });
  if (!st.gt_depth.empty() && !st.traj_gt.empty()) {
    pipeline_detail::timed(st, "eval", [&] {
      stage_eval(st);
      if (write) save_report(out, st);
    });
  }
  return st;
}

// ---------------------------------------------------------------------------
// Ablation

struct Spread {
  double median = std::numeric_limits<double>::quiet_NaN();
  double q1 = std::numeric_limits<double>::quiet_NaN();
  double q3 = std::numeric_limits<double>::quiet_NaN();
  int count = 0;

  double iqr() const { return q3 - q1; }
};

/// Quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

inline Spread spread_of(const std::vector<double>& values) {
  std::vector<double> ok;
  for (double v : values) {
    if (!std::isnan(v)) ok.push_back(v);
  }
  Spread s;
  s.count = static_cast<int>(ok.size());
  if (ok.empty()) return s;
  s.median = quantile(ok, 0.5);
  s.q1 = quantile(ok, 0.25);
  s.q3 = quantile(ok, 0.75);
  return s;
}

struct AblationResult {
  std::vector<std::uint64_t> seeds;
  std::vector<Variant> variants;
  /// values[variant][metric][seed]; NaN marks a failed run.
  std::vector<std::vector<std::vector<double>>> values;
  std::vector<std::string> failures;

  Spread spread(std::size_t variant, std::size_t metric) const { return spread_of(values[variant][metric]); }

  int metric_index(const std::string& key) const {
    for (int i = 0; i < 9; ++i) {
      if (key == MetricReport::kKeys[i]) return i;
    }
    throw Error(ErrorCode::InvalidConfig, "unknown metric " + key);
  }

  std::size_t variant_index(const std::string& name) const {
    for (std::size_t i = 0; i < variants.size(); ++i) {
      if (variants[i].name == name) return i;
    }
    throw Error(ErrorCode::InvalidConfig, "unknown variant " + name);
  }
};

/// Runs the pipeline for every seed. A failing seed is recorded and its
/// cells stay NaN; the remaining seeds still run.
inline AblationResult ablation_sweep(const PipelineConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                     const std::function<void(std::uint64_t, const PipelineState*)>& progress = {}) {
  if (seeds.empty()) throw Error(ErrorCode::InvalidConfig, "ablation needs at least one seed");
  AblationResult res;
  res.seeds = seeds;
  res.variants = cfg.variants;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  res.values.assign(cfg.variants.size(), std::vector<std::vector<double>>(9, std::vector<double>(seeds.size(), nan)));
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    PipelineConfig c = cfg;
    c.seed = seeds[k];
    try {
      const PipelineState st = run_simulated(c);
      for (std::size_t v = 0; v < st.results.size(); ++v) {
        if (!st.results[v].metrics) continue;
        const auto vals = st.results[v].metrics->values();
        for (int m = 0; m < 9; ++m) res.values[v][m][k] = vals[m];
      }
      if (progress) progress(seeds[k], &st);
    } catch (const Error& e) {
      res.failures.push_back("seed " + std::to_string(seeds[k]) + ": " + e.what());
      if (progress) progress(seeds[k], nullptr);
    }
  }
  return res;
}

inline std::string format_ablation(const AblationResult& res, bool csv) {
  const char sep = csv ? ',' : '\t';
  std::string s;
  if (!csv) {
    s += std::string("# ") + kVersion + " ablation over " + std::to_string(res.seeds.size()) +
         " seeds; cells are median [IQR]\n";
  }
  s += "row";
  s += sep;
  s += "variant";
  for (int m = 0; m < 9; ++m) {
    s += sep;
    s += MetricReport::kKeys[m];
    if (csv) {
      s += ",";
      s += std::string(MetricReport::kKeys[m]) + "_iqr";
    }
  }
  s += "\n";
  char buf[96];
  for (std::size_t v = 0; v < res.variants.size(); ++v) {
    const Variant& var = res.variants[v];
    s += (var.label.empty() ? var.name : var.label) + sep + var.name;
    for (int m = 0; m < 9; ++m) {
      const Spread sp = res.spread(v, static_cast<std::size_t>(m));
      s += sep;
      if (sp.count == 0) {
        s += csv ? "FAILED,FAILED" : "FAILED";
        continue;
      }
      if (csv) std::snprintf(buf, sizeof buf, "%.6g,%.6g", sp.median, sp.iqr());
      else std::snprintf(buf, sizeof buf, "%.6g [%.3g]", sp.median, sp.iqr());
      s += buf;
      if (sp.count < static_cast<int>(res.seeds.size()) && !csv) s += "*";
    }
    s += "\n";
  }
  for (const std::string& f : res.failures) s += "# failed: " + f + "\n";
  return s;
}

}  // namespace decouple4d

#endif  // DECOUPLE4D_PIPELINE_HPP
