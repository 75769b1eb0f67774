// Command line front end. Talks to the library exclusively through the C API;
// every subcommand builds a JSON config (file first, flags override) and hands
// it to the matching df_run_* entry point.

#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "defocus/defocus.h"

namespace {

using nlohmann::json;

using RunFn = df_status (*)(const char*, char**);

int dispatch(RunFn fn, const json& config) {
  char* summary = nullptr;
  const df_status status = fn(config.dump().c_str(), &summary);
  if (status == DF_OK) {
    if (summary) std::printf("%s\n", summary);
    df_string_free(summary);
    return 0;
  }
  std::fprintf(stderr, "error: %s\n", df_last_error());
  df_string_free(summary);
  switch (status) {
    case DF_ERR_NUMERIC:
      return 3;
    case DF_ERR_PROTOCOL:
      return 4;
    default:
      return 2;
  }
}

// Per-subcommand state: an optional base config file plus flag overrides.
// Flag values are copied into `overrides` after parsing (finalizers fire only
// for options the user actually passed), so flags win over file keys.
struct ConfigBuilder {
  std::string config_path;
  json overrides = json::object();
  std::vector<std::function<void()>> finalizers;

  void add_config_flag(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; flags override its keys");
  }

  json merged() {
    for (const auto& f : finalizers) f();
    json out = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw CLI::ValidationError("--config", "cannot open " + config_path);
      try {
        in >> out;
      } catch (const json::exception& e) {
        throw CLI::ValidationError("--config", std::string("invalid JSON: ") + e.what());
      }
      if (!out.is_object()) throw CLI::ValidationError("--config", "file must hold a JSON object");
    }
    for (const auto& [key, value] : overrides.items()) out[key] = value;
    return out;
  }
};

// `group` nests the key one level down ("scene", "holdout"); empty = top level.
template <typename T>
void opt_as(CLI::App* cmd, ConfigBuilder& cfg, const char* flag, const char* group,
            const char* key, const char* help) {
  auto value = std::make_shared<T>();
  CLI::Option* opt = cmd->add_option(flag, *value, help);
  cfg.finalizers.push_back([opt, value, group = std::string(group), key = std::string(key),
                            &cfg]() {
    if (opt->count() == 0) return;
    if (group.empty()) {
      cfg.overrides[key] = *value;
    } else {
      cfg.overrides[group][key] = *value;
    }
  });
}

void opt_str(CLI::App* c, ConfigBuilder& b, const char* f, const char* k, const char* h) {
  opt_as<std::string>(c, b, f, "", k, h);
}
void opt_num(CLI::App* c, ConfigBuilder& b, const char* f, const char* k, const char* h) {
  opt_as<double>(c, b, f, "", k, h);
}
void opt_int(CLI::App* c, ConfigBuilder& b, const char* f, const char* k, const char* h) {
  opt_as<long long>(c, b, f, "", k, h);
}
void opt_num_list(CLI::App* c, ConfigBuilder& b, const char* f, const char* k, const char* h) {
  opt_as<std::vector<double>>(c, b, f, "", k, h);
}
void opt_str_list(CLI::App* c, ConfigBuilder& b, const char* f, const char* k, const char* h) {
  opt_as<std::vector<std::string>>(c, b, f, "", k, h);
}

void add_fit_options(CLI::App* cmd, ConfigBuilder& b) {
  opt_str(cmd, b, "--mode", "mode", "estimator variant: ih-polar | invariant");
  opt_int(cmd, b, "--patch-size", "patch_size", "training patch side in pixels");
  opt_int(cmd, b, "--batch", "batch", "patches per optimization step");
  opt_int(cmd, b, "--steps", "steps", "optimization steps");
  opt_num(cmd, b, "--lr", "lr", "initial learning rate (cosine decay)");
  opt_int(cmd, b, "--seed", "seed", "RNG seed");
  opt_num(cmd, b, "--alpha", "alpha", "smoothness weight");
  opt_num(cmd, b, "--beta", "beta", "radial monotonicity weight");
  opt_num(cmd, b, "--charbonnier-eps", "charbonnier_eps", "Charbonnier epsilon");
  opt_int(cmd, b, "--radius", "radius", "kernel radius in pixels");
  opt_int(cmd, b, "--ih-bins", "ih_bins", "image-height bins");
  opt_num(cmd, b, "--ih-min", "ih_min", "first image-height bin center");
  opt_num(cmd, b, "--ih-max", "ih_max", "last image-height bin center");
  opt_int(cmd, b, "--depth-bins", "depth_bins", "depth bins");
  opt_num(cmd, b, "--depth-min", "depth_min", "first depth bin center (m); 0 = from data");
  opt_num(cmd, b, "--depth-max", "depth_max", "last depth bin center (m); 0 = from data");
  opt_int(cmd, b, "--xy-bins", "xy_bins", "per-axis bins for the xy ablation variant");
  opt_int(cmd, b, "--log-every", "log_every", "log cadence in steps");
}

void add_holdout_options(CLI::App* cmd, ConfigBuilder& b) {
  opt_as<std::vector<double>>(cmd, b, "--holdout-ih", "holdout", "ih", "holdout image heights");
  opt_as<long long>(cmd, b, "--holdout-ih-count", "holdout", "ih_count",
                    "number of evenly spaced holdout image heights");
  opt_as<std::vector<double>>(cmd, b, "--holdout-theta", "holdout", "theta",
                              "holdout angles (radians)");
  opt_as<long long>(cmd, b, "--holdout-theta-count", "holdout", "theta_count",
                    "number of evenly spaced holdout angles");
  opt_as<std::vector<double>>(cmd, b, "--holdout-depths", "holdout", "depths_m",
                              "holdout depths (m), disjoint from training depths");
  opt_as<long long>(cmd, b, "--holdout-depth-count", "holdout", "depth_count",
                    "number of derived holdout depths");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatially varying defocus PSF estimation from focal pairs"};
  app.require_subcommand(1);

  RunFn selected = nullptr;
  ConfigBuilder* selected_cfg = nullptr;
  std::vector<std::unique_ptr<ConfigBuilder>> builders;

  auto make_cmd = [&](CLI::App* parent, const char* name, const char* help, RunFn fn) {
    CLI::App* cmd = parent->add_subcommand(name, help);
    builders.push_back(std::make_unique<ConfigBuilder>());
    ConfigBuilder* cfg = builders.back().get();
    cfg->add_config_flag(cmd);
    cmd->callback([&selected, &selected_cfg, fn, cfg]() {
      selected = fn;
      selected_cfg = cfg;
    });
    return std::pair<CLI::App*, ConfigBuilder*>(cmd, cfg);
  };

  {
    auto [cmd, cfg] = make_cmd(&app, "gen", "Render a sharp/blurred pair dataset", df_run_gen);
    ConfigBuilder& b = *cfg;
    opt_str(cmd, b, "--out-dir", "out_dir", "output directory");
    opt_int(cmd, b, "--seed", "seed", "RNG seed");
    opt_str_list(cmd, b, "--textures", "textures", "texture kinds (noise|checker)");
    opt_num_list(cmd, b, "--depths", "depths_m", "plane depths in meters");
    opt_num(cmd, b, "--depth-min", "depth_min", "first plane depth (m)");
    opt_num(cmd, b, "--depth-max", "depth_max", "last plane depth (m)");
    opt_int(cmd, b, "--depth-count", "depth_count", "number of plane depths");
    opt_int(cmd, b, "--radius", "radius", "oracle kernel radius");
    opt_int(cmd, b, "--threads", "threads", "worker threads (0 = hardware)");
  }
  {
    auto [cmd, cfg] = make_cmd(&app, "fit", "Fit a PSF grid to a pair dataset", df_run_fit);
    ConfigBuilder& b = *cfg;
    opt_str(cmd, b, "--manifest", "manifest", "pair dataset manifest");
    opt_str(cmd, b, "--out", "out", "output grid file");
    opt_str(cmd, b, "--log", "log", "optional CSV training log");
    opt_int(cmd, b, "--focus-index", "focus_index", "focus setting to fit");
    opt_int(cmd, b, "--threads", "threads", "worker threads (0 = hardware)");
    add_fit_options(cmd, b);
  }
  {
    auto [cmd, cfg] = make_cmd(&app, "render", "Render a focal stack scene", df_run_render);
    ConfigBuilder& b = *cfg;
    opt_str(cmd, b, "--out-dir", "out_dir", "output directory");
    opt_int(cmd, b, "--seed", "seed", "RNG seed");
    opt_int(cmd, b, "--radius", "radius", "oracle kernel radius");
    opt_int(cmd, b, "--threads", "threads", "worker threads (0 = hardware)");
    opt_as<std::string>(cmd, b, "--scene-type", "scene", "type", "one-plane | two-plane");
    opt_as<std::string>(cmd, b, "--texture", "scene", "texture", "one-plane texture kind");
    opt_as<double>(cmd, b, "--depth", "scene", "depth_m", "one-plane depth (m)");
    opt_as<std::string>(cmd, b, "--texture-fg", "scene", "texture_fg", "foreground texture");
    opt_as<std::string>(cmd, b, "--texture-bg", "scene", "texture_bg", "background texture");
    opt_as<double>(cmd, b, "--d-fg", "scene", "d_fg", "foreground depth (m)");
    opt_as<double>(cmd, b, "--d-bg", "scene", "d_bg", "background depth (m)");
    opt_as<std::string>(cmd, b, "--mask", "scene", "mask", "foreground mask kind");
    opt_as<double>(cmd, b, "--mask-param", "scene", "mask_param", "mask size parameter");
  }
  {
    auto [cmd, cfg] = make_cmd(&app, "depth", "Estimate depth from a focal stack", df_run_depth);
    ConfigBuilder& b = *cfg;
    opt_str(cmd, b, "--stack-manifest", "stack_manifest", "focal stack manifest");
    opt_str_list(cmd, b, "--grids", "grids", "PSF grid files, one per focus setting");
    opt_str(cmd, b, "--out-dir", "out_dir", "output directory");
    opt_num_list(cmd, b, "--candidates", "candidates_m", "depth hypotheses (m)");
    opt_num(cmd, b, "--candidate-min", "candidate_min", "first depth hypothesis (m)");
    opt_num(cmd, b, "--candidate-max", "candidate_max", "last depth hypothesis (m)");
    opt_int(cmd, b, "--candidate-count", "candidate_count", "number of depth hypotheses");
    opt_int(cmd, b, "--patch", "patch", "matching patch side");
    opt_int(cmd, b, "--stride", "stride", "patch stride");
    opt_str(cmd, b, "--mode", "mode", "ih-variant | invariant");
    opt_num(cmd, b, "--margin-tau", "margin_tau", "flat-cost rejection threshold");
    opt_num(cmd, b, "--charbonnier-eps", "charbonnier_eps", "matching cost epsilon");
    opt_int(cmd, b, "--threads", "threads", "worker threads (0 = hardware)");
  }
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a fitted model");
  eval->require_subcommand(1);
  {
    auto [cmd, cfg] = make_cmd(eval, "psf", "Compare a PSF model against the optical model",
                               df_run_eval_psf);
    ConfigBuilder& b = *cfg;
    opt_str(cmd, b, "--grid", "grid", "fitted grid file");
    opt_str(cmd, b, "--baseline", "baseline", "Gaussian baseline file");
    opt_str(cmd, b, "--train-manifest", "train_manifest", "training dataset manifest");
    opt_str(cmd, b, "--out", "out", "report JSON path");
    add_holdout_options(cmd, b);
  }
  {
    auto [cmd, cfg] = make_cmd(eval, "depth", "Score a depth map against ground truth",
                               df_run_eval_depth);
    ConfigBuilder& b = *cfg;
    opt_str(cmd, b, "--est", "est", "estimated depth PFM");
    opt_str(cmd, b, "--est-mask", "est_mask", "estimated validity PGM");
    opt_str(cmd, b, "--gt", "gt", "ground truth depth PFM");
    opt_str(cmd, b, "--gt-mask", "gt_mask", "ground truth validity PGM");
    opt_str(cmd, b, "--out", "out", "report JSON path");
  }
  {
    auto [cmd, cfg] = make_cmd(&app, "ablate", "Fit and score all estimator variants",
                               df_run_ablate);
    ConfigBuilder& b = *cfg;
    opt_str(cmd, b, "--manifest", "manifest", "pair dataset manifest");
    opt_int(cmd, b, "--focus-index", "focus_index", "focus setting to fit");
    opt_str(cmd, b, "--out", "out", "report JSON path");
    opt_int(cmd, b, "--threads", "threads", "worker threads (0 = hardware)");
    add_fit_options(cmd, b);
    add_holdout_options(cmd, b);
    cmd->get_option("--mode")->group("");  // all three variants always run
  }
  {
    auto [cmd, cfg] = make_cmd(&app, "mosaic", "Render a grid's kernels as one image",
                               df_run_mosaic);
    ConfigBuilder& b = *cfg;
    opt_str(cmd, b, "--grid", "grid", "fitted grid file");
    opt_str(cmd, b, "--out", "out", "output PGM path");
    opt_num_list(cmd, b, "--ih", "ih", "image heights, one per column");
    opt_int(cmd, b, "--ih-count", "ih_count", "evenly spaced image heights");
    opt_num_list(cmd, b, "--depths", "depths_m", "depths (m), one per row");
    opt_int(cmd, b, "--depth-count", "depth_count", "evenly spaced depths");
    opt_num(cmd, b, "--theta", "theta", "orientation angle (radians)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage problems are input errors (exit 2); help/version exit clean.
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (!selected || !selected_cfg) {
    std::fprintf(stderr, "error: no command selected\n");
    return 2;
  }
  json config;
  try {
    config = selected_cfg->merged();
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return dispatch(selected, config);
}
