// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "decouple4d/pipeline.hpp"
#include "test_support.hpp"

using namespace decouple4d;
using testing_support::fresh_dir;
using testing_support::tree_contents;

namespace {

using Wide = __int128;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

int run_command(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// --- 1: chamfer grid vs exhaustive scan -------------------------------------

std::vector<double> scan_distances(const PointCloud& q, const PointCloud& t) {
  std::vector<double> out;
  for (const Vector3d& a : q.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vector3d& b : t.points) {
      const Vector3d d = a - b;
      best = std::min(best, d.x() * d.x() + d.y() * d.y() + d.z() * d.z());
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

std::vector<double> scan_stats(std::vector<double> acc, std::vector<double> comp) {
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto med = [](const std::vector<double>& v) { return v[(v.size() - 1) / 2]; };
  std::sort(acc.begin(), acc.end());
  std::sort(comp.begin(), comp.end());
  std::vector<double> all = acc;
  all.insert(all.end(), comp.begin(), comp.end());
  std::sort(all.begin(), all.end());
  return {mean(acc), med(acc), mean(comp), med(comp), mean(all), med(all)};
}

PointCloud random_cloud(std::mt19937_64& rng, int n, int kind) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud c;
  for (int i = 0; i < n; ++i) {
    Vector3d p(u(rng), u(rng), u(rng));
    if (kind == 1) p.z() = 0.0;                                   // planar
    if (kind == 2) p = Vector3d(std::round(p.x() * 4) / 4, std::round(p.y() * 4) / 4, std::round(p.z() * 4) / 4);
    if (kind == 3) p *= 0.01;                                     // tight cluster
    c.points.push_back(p);
  }
  return c;
}

Outcome criterion_chamfer() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> size(1, 200);
  ChamferOptions grid_opts;
  grid_opts.brute_force_below = 0;
  int mismatches = 0;
  for (int pair = 0; pair < 50; ++pair) {
    const PointCloud a = random_cloud(rng, size(rng), pair % 4);
    PointCloud b = random_cloud(rng, size(rng), (pair / 4) % 4);
    for (Vector3d& p : b.points) p += Vector3d(0.05, -0.02, 0.1);
    const auto acc = directed_distances(a, b, grid_opts);
    const auto comp = directed_distances(b, a, grid_opts);
    if (acc != scan_distances(a, b) || comp != scan_distances(b, a)) ++mismatches;
    const ChamferResult r = chamfer(a, b, grid_opts);
    const std::vector<double> got{r.acc_mean, r.acc_median, r.comp_mean, r.comp_median, r.dist_mean, r.dist_median};
    if (got != scan_stats(scan_distances(a, b), scan_distances(b, a))) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 5.0, fmt("50 pairs, %.0f mismatches, %.3f s (limit 5 s)", mismatches, secs)};
}

// --- 2: Otsu vs exhaustive edge scan ----------------------------------------

double otsu_scan(const std::vector<double>& v, int bins) {
  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = *std::max_element(v.begin(), v.end());
  if (!(hi > lo)) return hi + 0x1p-20;
  const double w = (hi - lo) / bins;
  std::vector<int> bin(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) bin[i] = std::min(bins - 1, static_cast<int>(std::floor((v[i] - lo) / w)));
  Wide best_num = -1, best_den = 1;
  int best = 1;
  for (int k = 1; k < bins; ++k) {
    Wide n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int b : bin) {
      if (b < k) {
        ++n0;
        s0 += b;
      } else {
        ++n1;
        s1 += b;
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const Wide d = n1 * s0 - n0 * s1;
    if (best_num < 0 || d * d * best_den > best_num * (n0 * n1)) {
      best_num = d * d;
      best_den = n0 * n1;
      best = k;
    }
  }
  return lo + best * w;
}

Outcome criterion_otsu() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Intrinsics k;
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    SaliencyMap s;
    s.values = DenseMap(k.height / 4, k.width / 4, MapRole::saliency);
    s.upsampled = DenseMap(k.height, k.width, MapRole::saliency);
    for (double& x : s.upsampled.values) {
      const double r = u(rng);
      if (r < 0.1) continue;  // undefined pixel
      x = trial % 2 == 0 ? r * r : (u(rng) < 0.8 ? 0.1 * r : 0.6 + 0.4 * r);
    }
    if (otsu_threshold(s, 256) != otsu_scan(defined_values(s.upsampled), 256)) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 2.0, fmt("100 maps, %.0f mismatches, %.3f s (limit 2 s)", mismatches, secs)};
}

// --- 3: first-order epipolar residual ---------------------------------------

Outcome criterion_epipolar() {
  const SceneTruth truth = generate_scene(SceneConfig{});
  const Intrinsics& k = truth.config.intrinsics;
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> frame(0, truth.num_frames() - 2);
  std::uniform_int_distribution<int> row(0, k.height - 1), col(0, k.width - 1);
  std::uniform_real_distribution<double> mag(0.0, 0.01);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> rel;
  while (rel.size() < 1000) {
    const int r = frame(rng);
    const int px = row(rng), py = col(rng);
    const double z = truth.frames[r].depth(px, py);
    if (!truth.frames[r].depth.defined(px, py)) continue;
    const CameraPose relp = relative_pose(truth.trajectory[r], truth.trajectory[r + 1]);
    const Matrix3d e = essential_matrix(relp).matrix;
    PixelCorrespondence c;
    c.x_r = Vector2d(py, px);
    c.depth_r = z;
    c.displacement = mag(rng) * z * Vector3d(n01(rng), n01(rng), n01(rng)).normalized();
    const WarpResult w = warp(c, relp, k);
    c.x_t = w.pixel;
    const double approx = epipolar_residual_first_order(c, e, k);
    if (std::abs(approx) < 1e-12) continue;
    rel.push_back(std::abs(normalized_epipolar_residual(c.x_r, c.x_t, e, k) - approx) / std::abs(approx));
  }
  const double p95 = quantile(rel, 0.95);
  return {p95 <= 0.05, fmt("p95 relative error %.4f over 1000 correspondences (limit 0.05)", p95)};
}

// --- 4: fusion optimality and precision -------------------------------------

Outcome criterion_fusion_mle() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> depth(0.5, 10.0), conf(1e-2, 1e4);
  const int n = 1000;
  DenseMap d1(1, n, MapRole::depth), d2(1, n, MapRole::depth);
  DenseMap c1(1, n, MapRole::confidence), c2(1, n, MapRole::confidence);
  for (int i = 0; i < n; ++i) {
    d1.values[i] = depth(rng);
    d2.values[i] = depth(rng);
    c1.values[i] = conf(rng);
    c2.values[i] = conf(rng);
  }
  const FusedDepth f =
      fuse_confidence(d1, d2, c1, c2, partition_regions(DenseMap(1, n, MapRole::mask, 0.0), 0.5), kDefaultFusionEpsilon);
  int worse = 0;
  double worst_precision = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = f.depth.values[i];
    const double at = fusion_objective(d, d1.values[i], d2.values[i], c1.values[i], c2.values[i]);
    for (double step : {1e-3, -1e-3}) {
      if (at > fusion_objective(d + step, d1.values[i], d2.values[i], c1.values[i], c2.values[i])) ++worse;
    }
    const double sum = c1.values[i] + c2.values[i];
    worst_precision = std::max(worst_precision, std::abs(f.precision.values[i] - sum) / sum);
  }
  return {worse == 0 && worst_precision <= 1e-12,
          fmt("%.0f perturbations beat the fused depth; max relative precision error %.2e (limit 1e-12)", worse,
              worst_precision)};
}

// --- 5: fusion dominance ----------------------------------------------------

double static_rmse(const DenseMap& d, const FrameTruth& f) {
  double s = 0.0, n = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!f.depth.defined(i) || f.mask.values[i] > 0.5) continue;
    const double e = d.values[i] - f.depth.values[i];
    s += e * e;
    n += 1.0;
  }
  return std::sqrt(s / n);
}

Outcome criterion_dominance() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> ratios;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SceneConfig sc;
    sc.seed = seed;
    const SceneTruth truth = generate_scene(sc);
    const auto p1 = corrupt_pass(truth, PassId::first, default_noise_profile(PassId::first), seed);
    const auto p2 = corrupt_pass(truth, PassId::mask_aware, default_noise_profile(PassId::mask_aware), seed);
    double fused = 0.0, r1 = 0.0, r2 = 0.0;
    for (int t = 0; t < truth.num_frames(); ++t) {
      const FrameTruth& f = truth.frames[t];
      DenseMap mask = f.mask;
      for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!f.depth.defined(i)) mask.values[i] = sentinel_for(MapRole::mask);
      }
      const RegionPartition part = partition_regions(mask, 0.5);
      const FusedDepth fd =
          fuse_confidence(p1[t].depth, p2[t].depth, p1[t].confidence, p2[t].confidence, part, kDefaultFusionEpsilon);
      fused += static_rmse(fd.depth, f);
      r1 += static_rmse(p1[t].depth, f);
      r2 += static_rmse(p2[t].depth, f);
    }
    ratios.push_back(fused / std::min(r1, r2));
  }
  const double m = median(ratios);
  const double secs = seconds_since(t0);
  return {m <= 1.05 && secs < 60.0,
          fmt("median fused/best-pass static RMSE %.4f over 20 seeds (limit 1.05), %.1f s", m, secs)};
}

// --- 6: pose decoupling -----------------------------------------------------

Outcome criterion_pose() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> ratios;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SceneConfig sc;
    sc.seed = seed;
    const SceneTruth truth = generate_scene(sc);
    std::vector<DenseMap> masks;
    for (const FrameTruth& f : truth.frames) masks.push_back(f.mask);
    const double plain = ate(estimate_trajectory(truth, nullptr, false, sc.pixel_noise_sigma, seed), truth.trajectory);
    const double masked = ate(estimate_trajectory(truth, &masks, true, sc.pixel_noise_sigma, seed), truth.trajectory);
    ratios.push_back(masked / plain);
  }
  const double m = median(ratios);
  const double secs = seconds_since(t0);
  return {m <= 0.5 && secs < 120.0,
          fmt("median masked/unmasked ATE %.4f over 20 seeds (limit 0.5), %.1f s", m, secs)};
}

// --- 7: ablation ordering ---------------------------------------------------

Outcome criterion_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 20; ++s) seeds.push_back(s);
  const AblationResult res = ablation_sweep(PipelineConfig{}, seeds);
  const int dm = res.metric_index("dist_mean");
  const Spread fused = res.spread(res.variant_index("conf_fusion"), dm);
  const Spread hard = res.spread(res.variant_index("hard_replace"), dm);
  const Spread pass2 = res.spread(res.variant_index("pose_decoupling"), dm);
  const double margin = pass2.median - hard.median;
  const double iqr = std::max(pass2.iqr(), hard.iqr());
  const double secs = seconds_since(t0);
  const bool ok = res.failures.empty() && fused.median <= hard.median && hard.median <= pass2.median &&
                  margin > iqr && secs < 600.0;
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "dist_mean medians conf %.6f <= hard %.6f <= pass2 %.6f; margin %.6f vs IQR %.6f; %zu failed seeds; "
                "%.1f s",
                fused.median, hard.median, pass2.median, margin, iqr, res.failures.size(), secs);
  return {ok, buf};
}

// --- 8: saliency quality ----------------------------------------------------

Outcome criterion_saliency() {
  PipelineState st;
  st.config = PipelineConfig{};
  const SceneTruth truth = generate_scene(st.config.scene);
  stage_simulate(st, truth);
  stage_mine(st);
  const MiningDiagnostics& d = st.diagnostics;
  const bool ok = d.saliency_auc >= 0.90 && d.computed && d.pairs > 0 && d.pairs_reduced == d.pairs;
  char buf[256];
  std::snprintf(buf, sizeof buf, "AUC %.4f (limit 0.90); mass %.4f -> %.4f, reduced on %d of %d frame pairs",
                d.saliency_auc, d.mass_unsuppressed, d.mass_suppressed, d.pairs_reduced, d.pairs);
  return {ok, buf};
}

// --- 9: determinism ---------------------------------------------------------

Outcome criterion_determinism() {
  const fs::path root = fresh_dir("acceptance_det");
  const std::string cli = DECOUPLE4D_CLI;
  int rc = 0;
  for (const char* sub : {"a", "b"}) {
    rc |= run_command(cli + " run --seed 17 --out \"" + (root / sub).string() + "\" > /dev/null 2>&1");
  }
  const auto a = tree_contents(root / "a");
  const auto b = tree_contents(root / "b");
  return {rc == 0 && !a.empty() && a == b,
          fmt("exit %.0f; %.0f files compared, trees ", rc, static_cast<double>(a.size())) +
              (a == b ? "identical" : "differ")};
}

// --- 10: invariant suite ----------------------------------------------------

Outcome criterion_invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  std::string failed;
  int suites = 0;
  for (const std::string& exe : split(DECOUPLE4D_UNIT_TESTS, ',')) {
    ++suites;
    if (run_command("\"" + exe + "\" > /dev/null 2>&1") != 0) failed += " " + fs::path(exe).filename().string();
  }
  const double secs = seconds_since(t0);
  return {failed.empty() && secs < 300.0,
          fmt("%.0f unit suites, %.1f s (limit 300 s)", suites, secs) + (failed.empty() ? "" : "; failed:" + failed)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"chamfer grid equals exhaustive scan", criterion_chamfer},
      {"otsu equals exhaustive edge scan", criterion_otsu},
      {"first-order epipolar residual", criterion_epipolar},
      {"fusion optimality and precision", criterion_fusion_mle},
      {"fusion dominance over both passes", criterion_dominance},
      {"masked pose halves ATE", criterion_pose},
      {"ablation ordering", criterion_ablation},
      {"saliency AUC and key suppression", criterion_saliency},
      {"byte-identical reruns", criterion_determinism},
      {"invariant suite", criterion_invariants},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s C%zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
