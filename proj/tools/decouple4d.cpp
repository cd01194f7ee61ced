// Command-line driver for the two-pass decoupling pipeline.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "decouple4d/pipeline.hpp"

namespace fs = std::filesystem;
using namespace decouple4d;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string input;
  std::vector<std::string> variants;
  bool gt_mask = false;
  std::string format = "text";
};

void add_common(CLI::App* sub, Options& o, bool needs_input) {
  sub->add_option("--config", o.config, "key=value config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "scene and noise seed");
  sub->add_option("--out", o.out, "output directory");
  auto* in = sub->add_option("--input", o.input, "directory holding earlier stage outputs");
  if (needs_input) in->required();
  sub->add_option("--variant", o.variants, "variant name, repeatable (e.g. conf_fusion or pass2_only/masked)");
  sub->add_flag("--gt-mask", o.gt_mask, "use the ground-truth mask for pose weights and fusion");
  sub->add_option("--format", o.format, "console output format")->check(CLI::IsMember({"text", "csv"}));
}

/// Layers defaults, a base map (e.g. a stored scene.cfg), the --config file
/// and command-line flags, in that order.
PipelineConfig build_config(const Options& o, const ConfigMap* base = nullptr) {
  PipelineConfig cfg;
  if (base) apply_config(cfg, *base);
  if (!o.config.empty()) apply_config(cfg, parse_config(read_text(o.config), o.config));
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.scene.seed = *o.seed;
  }
  if (!o.variants.empty()) {
    cfg.variants.clear();
    for (const std::string& v : o.variants) cfg.variants.push_back(variant_from_name(v));
  }
  if (o.gt_mask) cfg.use_gt_mask = true;
  cfg.validate();
  return cfg;
}

PipelineConfig stage_config(const Options& o) {
  const fs::path cfg_file = fs::path(o.input) / "scene.cfg";
  if (!fs::exists(cfg_file)) throw Error(ErrorCode::Io, "missing " + cfg_file.string());
  const ConfigMap stored = parse_config(read_text(cfg_file), cfg_file.string());
  return build_config(o, &stored);
}

fs::path output_dir(const Options& o) { return o.out.empty() ? fs::path(o.input) : fs::path(o.out); }

void print_timings(const std::vector<StageTiming>& timings) {
  for (const StageTiming& t : timings) std::fprintf(stderr, "time %-8s %10.1f ms\n", t.stage.c_str(), t.milliseconds);
}

void print_metrics(const PipelineState& st, const std::string& format) {
  const bool csv = format == "csv";
  std::string header = "variant\t" + MetricReport::tsv_header();
  if (csv) std::replace(header.begin(), header.end(), '\t', ',');
  std::printf("%s\n", header.c_str());
  for (const VariantResult& r : st.results) {
    if (!r.metrics) continue;
    std::string row = r.variant.name + "\t" + r.metrics->to_tsv();
    if (csv) std::replace(row.begin(), row.end(), '\t', ',');
    std::printf("%s\n", row.c_str());
  }
}

void print_diagnostics(const PipelineState& st) {
  if (!st.has_mining) return;
  std::printf("tau %.6g\n", st.tau);
  const MiningDiagnostics& d = st.diagnostics;
  if (d.saliency_auc >= 0.0) std::printf("saliency_auc %.6f\n", d.saliency_auc);
  if (d.computed) {
    std::printf("attention_mass %.6g -> %.6g (reduced on %d of %d pairs with dynamic keys)\n", d.mass_unsuppressed,
                d.mass_suppressed, d.pairs_reduced, d.pairs_with_dynamic);
  }
}

int cmd_simulate(const Options& o) {
  if (o.out.empty()) throw Error(ErrorCode::InvalidConfig, "simulate needs --out");
  const PipelineConfig cfg = build_config(o);
  PipelineState st;
  st.config = cfg;
  const SceneTruth truth = generate_scene(cfg.scene);
  stage_simulate(st, truth);
  save_simulation(o.out, st);
  std::printf("simulated %d frames into %s\n", st.num_frames(), o.out.c_str());
  return 0;
}

int cmd_mine(const Options& o) {
  const PipelineConfig cfg = stage_config(o);
  PipelineState st = load_state(o.input, cfg);
  if (st.traj_pass1.size() != st.pass1.size()) {
    throw StageError("mine", -1, ErrorCode::Io, "traj_pass1.txt is required");
  }
  stage_mine(st);
  save_mining(output_dir(o), st);
  print_diagnostics(st);
  return 0;
}

int cmd_pose(const Options& o) {
  const PipelineConfig cfg = stage_config(o);
  PipelineState st = load_state(o.input, cfg);
  if (!cfg.use_gt_mask && !st.has_mining) throw StageError("pose", -1, ErrorCode::Io, "run mine first");
  const SceneTruth truth = generate_scene(cfg.scene);
  stage_pose(st, truth);
  save_pose(output_dir(o), st);
  if (!st.traj_gt.empty()) {
    std::printf("ate masked %.6g unmasked %.6g\n", ate(st.traj_pass2, st.traj_gt),
                st.traj_pass1.empty() ? 0.0 : ate(st.traj_pass1, st.traj_gt));
  }
  return 0;
}

int cmd_fuse(const Options& o) {
  const PipelineConfig cfg = stage_config(o);
  PipelineState st = load_state(o.input, cfg);
  stage_fuse(st);
  save_fusion(output_dir(o), st);
  std::printf("%s", fusion_report_text(st).c_str());
  return 0;
}

int cmd_eval(const Options& o) {
  const PipelineConfig cfg = stage_config(o);
  PipelineState st = load_state(o.input, cfg);
  load_fusion(o.input, st);
  stage_eval(st);
  save_report(output_dir(o), st);
  print_metrics(st, o.format);
  return 0;
}

int cmd_run(const Options& o) {
  PipelineState st;
  if (!o.input.empty()) {
    const PipelineConfig cfg = stage_config(o);
    st = run_external(o.input, cfg, o.out);
  } else {
    st = run_simulated(build_config(o), o.out);
  }
  print_diagnostics(st);
  print_metrics(st, o.format);
  print_timings(st.timings);
  return 0;
}

int cmd_ablate(const Options& o) {
  const PipelineConfig cfg = build_config(o);
  const std::uint64_t first = o.seed.value_or(0);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < cfg.ablation_seeds; ++i) seeds.push_back(first + static_cast<std::uint64_t>(i));
  const AblationResult res = ablation_sweep(cfg, seeds, [](std::uint64_t seed, const PipelineState* st) {
    std::fprintf(stderr, "seed %llu %s\n", static_cast<unsigned long long>(seed), st ? "ok" : "FAILED");
  });
  const bool csv = o.format == "csv";
  const std::string table = format_ablation(res, csv);
  std::printf("%s", table.c_str());
  if (!o.out.empty()) write_text(fs::path(o.out) / (csv ? "ablation.csv" : "ablation.tsv"), table);
  return res.failures.empty() ? 0 : kExitStage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-pass pose/geometry decoupling on synthetic or exported dynamic scenes"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Options o;
  struct Sub {
    const char* name;
    const char* help;
    bool needs_input;
    int (*run)(const Options&);
  };
  const Sub subs[] = {
      {"simulate", "generate ground truth and first-pass predictions", false, cmd_simulate},
      {"mine", "mine motion cues and the dynamic mask", true, cmd_mine},
      {"pose", "estimate mask-weighted poses and second-pass predictions", true, cmd_pose},
      {"fuse", "compose depth for every variant", true, cmd_fuse},
      {"eval", "evaluate fused depth and trajectories", true, cmd_eval},
      {"run", "run every stage (simulated, or fusion onward with --input)", false, cmd_run},
      {"ablate", "run the ablation over consecutive seeds", false, cmd_ablate},
  };
  std::vector<std::pair<CLI::App*, const Sub*>> registered;
  for (const Sub& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, o, s.needs_input);
    registered.emplace_back(sub, &s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  for (const auto& [sub, s] : registered) {
    if (!sub->parsed()) continue;
    try {
      return s->run(o);
    } catch (const StageError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitStage;
    } catch (const Error& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      const bool config = e.code() == ErrorCode::InvalidConfig || e.code() == ErrorCode::InvalidNoiseProfile;
      return config ? kExitConfig : kExitStage;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitStage;
    }
  }
  return kExitConfig;
}
