#include "defocus/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <set>
#include <string_view>
#include <vector>

#include "defocus/dfd.hpp"
#include "defocus/errors.hpp"
#include "defocus/estimator.hpp"
#include "defocus/evalkit.hpp"
#include "defocus/geometry.hpp"
#include "defocus/image.hpp"
#include "defocus/optics.hpp"
#include "defocus/psf_grid.hpp"
#include "defocus/rng.hpp"
#include "defocus/thread_pool.hpp"

namespace defocus {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const char* context,
                std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(context) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(std::string(context) + ": unknown key '" + key + "'");
    }
  }
}

std::string key_path(const char* context, const char* key) {
  return std::string(context) + ": '" + key + "'";
}

double get_num(const json& j, const char* key, double dflt, const char* context) {
  const auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_number()) throw ConfigError(key_path(context, key) + " must be a number");
  return it->get<double>();
}

int get_int(const json& j, const char* key, int dflt, const char* context) {
  const auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_number_integer()) throw ConfigError(key_path(context, key) + " must be an integer");
  return it->get<int>();
}

std::uint64_t get_seed(const json& j, const char* key, std::uint64_t dflt, const char* context) {
  const auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_number_integer() || (it->is_number_integer() && !it->is_number_unsigned() &&
                                   it->get<std::int64_t>() < 0)) {
    throw ConfigError(key_path(context, key) + " must be a nonnegative integer");
  }
  return it->get<std::uint64_t>();
}

bool get_bool(const json& j, const char* key, bool dflt, const char* context) {
  const auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_boolean()) throw ConfigError(key_path(context, key) + " must be a boolean");
  return it->get<bool>();
}

std::string get_str(const json& j, const char* key, const std::string& dflt,
                    const char* context) {
  const auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_string()) throw ConfigError(key_path(context, key) + " must be a string");
  return it->get<std::string>();
}

std::string require_str(const json& j, const char* key, const char* context) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string() || it->get<std::string>().empty()) {
    throw ConfigError(key_path(context, key) + " is required (a non-empty string)");
  }
  return it->get<std::string>();
}

std::vector<double> get_num_list(const json& j, const char* key, const char* context) {
  const auto it = j.find(key);
  if (it == j.end()) return {};
  if (!it->is_array() || it->empty()) {
    throw ConfigError(key_path(context, key) + " must be a non-empty array of numbers");
  }
  std::vector<double> out;
  for (const json& v : *it) {
    if (!v.is_number()) throw ConfigError(key_path(context, key) + " must contain only numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::vector<std::string> get_str_list(const json& j, const char* key, const char* context) {
  const auto it = j.find(key);
  if (it == j.end()) return {};
  if (!it->is_array() || it->empty()) {
    throw ConfigError(key_path(context, key) + " must be a non-empty array of strings");
  }
  std::vector<std::string> out;
  for (const json& v : *it) {
    if (!v.is_string()) throw ConfigError(key_path(context, key) + " must contain only strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

CameraConfig parse_camera(const json& parent, const char* context) {
  CameraConfig cfg;
  const auto it = parent.find("camera");
  if (it == parent.end()) {
    cfg.validate();
    return cfg;
  }
  const json& j = *it;
  const std::string ctx = std::string(context) + ".camera";
  check_keys(j, ctx.c_str(), {"focal_length_m", "f1", "f2", "focus_distances_m", "pixel_pitch_m",
                              "image_width", "image_height", "breathing_mags"});
  cfg.focal_length_m = get_num(j, "focal_length_m", cfg.focal_length_m, ctx.c_str());
  cfg.f1 = get_num(j, "f1", cfg.f1, ctx.c_str());
  cfg.f2 = get_num(j, "f2", cfg.f2, ctx.c_str());
  if (auto v = get_num_list(j, "focus_distances_m", ctx.c_str()); !v.empty()) {
    cfg.focus_distances_m = std::move(v);
    cfg.breathing_mags.assign(cfg.focus_distances_m.size(), 1.0);
  }
  cfg.pixel_pitch_m = get_num(j, "pixel_pitch_m", cfg.pixel_pitch_m, ctx.c_str());
  cfg.image_width = get_int(j, "image_width", cfg.image_width, ctx.c_str());
  cfg.image_height = get_int(j, "image_height", cfg.image_height, ctx.c_str());
  if (auto v = get_num_list(j, "breathing_mags", ctx.c_str()); !v.empty()) {
    cfg.breathing_mags = std::move(v);
  }
  cfg.validate();
  return cfg;
}

AberrationModel parse_aberration(const json& parent, const char* context) {
  AberrationModel ab;
  const auto it = parent.find("aberration");
  if (it == parent.end()) {
    ab.validate();
    return ab;
  }
  const json& j = *it;
  const std::string ctx = std::string(context) + ".aberration";
  check_keys(j, ctx.c_str(), {"ideal", "coma_strength", "field_curvature_m", "astig_ratio"});
  if (get_bool(j, "ideal", false, ctx.c_str())) {
    ab.coma_strength = 0.0;
    ab.field_curvature_m = 0.0;
    ab.astig_ratio = 1.0;
  }
  ab.coma_strength = get_num(j, "coma_strength", ab.coma_strength, ctx.c_str());
  ab.field_curvature_m = get_num(j, "field_curvature_m", ab.field_curvature_m, ctx.c_str());
  ab.astig_ratio = get_num(j, "astig_ratio", ab.astig_ratio, ctx.c_str());
  ab.validate();
  return ab;
}

json camera_summary(const CameraConfig& c) {
  return json{{"focal_length_m", c.focal_length_m},
              {"f1", c.f1},
              {"f2", c.f2},
              {"focus_distances_m", c.focus_distances_m},
              {"pixel_pitch_m", c.pixel_pitch_m},
              {"image_width", c.image_width},
              {"image_height", c.image_height},
              {"breathing_mags", c.breathing_mags}};
}

json load_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw IoError(std::string("cannot open ") + what + ": " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + " is not valid JSON (" + path.string() + "): " + e.what());
  }
  return j;
}

void write_json_file(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

FitConfig parse_fit_config(const json& j, const char* context) {
  FitConfig cfg;
  cfg.mode = get_str(j, "mode", cfg.mode, context);
  cfg.patch_size = get_int(j, "patch_size", cfg.patch_size, context);
  cfg.batch = get_int(j, "batch", cfg.batch, context);
  cfg.steps = get_int(j, "steps", cfg.steps, context);
  cfg.lr = get_num(j, "lr", cfg.lr, context);
  cfg.seed = get_seed(j, "seed", cfg.seed, context);
  cfg.weights.alpha = get_num(j, "alpha", cfg.weights.alpha, context);
  cfg.weights.beta = get_num(j, "beta", cfg.weights.beta, context);
  cfg.weights.charbonnier_eps = get_num(j, "charbonnier_eps", cfg.weights.charbonnier_eps, context);
  cfg.radius = get_int(j, "radius", cfg.radius, context);
  cfg.ih_bins = get_int(j, "ih_bins", cfg.ih_bins, context);
  cfg.ih_min = get_num(j, "ih_min", cfg.ih_min, context);
  cfg.ih_max = get_num(j, "ih_max", cfg.ih_max, context);
  cfg.depth_bins = get_int(j, "depth_bins", cfg.depth_bins, context);
  cfg.depth_min = get_num(j, "depth_min", cfg.depth_min, context);
  cfg.depth_max = get_num(j, "depth_max", cfg.depth_max, context);
  cfg.xy_bins = get_int(j, "xy_bins", cfg.xy_bins, context);
  cfg.log_every = get_int(j, "log_every", cfg.log_every, context);
  return cfg;
}

constexpr std::string_view kFitKeys[] = {
    "mode",   "patch_size", "batch",   "steps",      "lr",        "seed",
    "alpha",  "beta",       "charbonnier_eps",       "radius",    "ih_bins",
    "ih_min", "ih_max",     "depth_bins", "depth_min", "depth_max", "xy_bins",
    "log_every"};

std::vector<double> sorted_unique_depths(const Manifest& m) {
  std::set<double> s;
  for (const auto& r : m.records) s.insert(r.depth_m);
  return {s.begin(), s.end()};
}

HoldoutSpec parse_holdout(const json& parent, const std::vector<double>& training_depths,
                          const char* context) {
  HoldoutSpec spec;
  json empty = json::object();
  const json& j = parent.contains("holdout") ? parent.at("holdout") : empty;
  const std::string ctx = std::string(context) + ".holdout";
  check_keys(j, ctx.c_str(), {"ih", "ih_count", "theta", "theta_count", "depths_m", "depth_count"});

  spec.ih_list = get_num_list(j, "ih", ctx.c_str());
  if (spec.ih_list.empty()) {
    spec.ih_list = linspace(0.1, 0.9, get_int(j, "ih_count", 8, ctx.c_str()));
  } else if (j.contains("ih_count")) {
    throw ConfigError(ctx + ": give either 'ih' or 'ih_count', not both");
  }

  spec.theta_list = get_num_list(j, "theta", ctx.c_str());
  if (spec.theta_list.empty()) {
    const int n = get_int(j, "theta_count", 8, ctx.c_str());
    if (n < 1) throw ConfigError(ctx + ": 'theta_count' must be positive");
    for (int k = 0; k < n; ++k) spec.theta_list.push_back(2.0 * std::numbers::pi * k / n);
  } else if (j.contains("theta_count")) {
    throw ConfigError(ctx + ": give either 'theta' or 'theta_count', not both");
  }

  spec.depth_list = get_num_list(j, "depths_m", ctx.c_str());
  if (spec.depth_list.empty()) {
    // Unseen depths by construction: midpoints of gaps between adjacent
    // training depths, spread evenly over the gaps.
    const int n = get_int(j, "depth_count", 4, ctx.c_str());
    if (n < 1) throw ConfigError(ctx + ": 'depth_count' must be positive");
    const auto gaps = static_cast<int>(training_depths.size()) - 1;
    if (gaps < n) {
      throw ConfigError(ctx + ": training data has only " + std::to_string(gaps) +
                        " depth gaps; cannot derive " + std::to_string(n) + " holdout depths");
    }
    for (int k = 0; k < n; ++k) {
      const int g = n == 1 ? gaps / 2
                           : static_cast<int>(std::lround(static_cast<double>(k) * (gaps - 1) /
                                                          (n - 1)));
      spec.depth_list.push_back(0.5 * (training_depths[static_cast<std::size_t>(g)] +
                                       training_depths[static_cast<std::size_t>(g) + 1]));
    }
  } else if (j.contains("depth_count")) {
    throw ConfigError(ctx + ": give either 'depths_m' or 'depth_count', not both");
  }
  spec.validate();
  return spec;
}

json holdout_summary(const HoldoutSpec& spec) {
  return json{{"ih", spec.ih_list}, {"theta", spec.theta_list}, {"depths_m", spec.depth_list}};
}

json report_records(const EvalReport& report) {
  json records = json::array();
  for (const auto& r : report.records) {
    records.push_back(
        json{{"ih", r.ih}, {"theta", r.theta}, {"depth_m", r.depth_m}, {"mae", r.mae}});
  }
  return records;
}

FocalStack load_stack(const Manifest& m, const fs::path& dir) {
  if (m.kind != "focal_stack") {
    throw DataError("manifest kind '" + m.kind + "' is not a focal stack");
  }
  const int n = m.camera.n_focus();
  std::vector<std::string> paths(static_cast<std::size_t>(n));
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (const auto& r : m.records) {
    if (r.role != "blurred") continue;
    if (r.focus_index < 0 || r.focus_index >= n) {
      throw DataError("stack record focus index " + std::to_string(r.focus_index) +
                      " outside camera focus list");
    }
    const auto i = static_cast<std::size_t>(r.focus_index);
    if (seen[i]) throw DataError("stack manifest lists focus index " + std::to_string(r.focus_index) + " twice");
    seen[i] = true;
    paths[i] = r.path;
  }
  FocalStack stack;
  stack.camera = m.camera;
  for (int i = 0; i < n; ++i) {
    if (!seen[static_cast<std::size_t>(i)]) {
      throw DataError("stack manifest is missing an image for focus index " + std::to_string(i));
    }
    stack.images.push_back(read_image(dir / paths[static_cast<std::size_t>(i)]));
  }
  stack.validate();
  return stack;
}

}  // namespace

std::string file_hash_hex(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for hashing: " + path.string());
  std::uint64_t h = 14695981039346656037ULL;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!in) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

json run_gen(const json& config) {
  static const char* ctx = "gen";
  check_keys(config, ctx,
             {"out_dir", "seed", "camera", "aberration", "textures", "depths_m", "depth_min",
              "depth_max", "depth_count", "radius", "threads"});
  const fs::path out_dir = require_str(config, "out_dir", ctx);
  const std::uint64_t seed = get_seed(config, "seed", 1, ctx);
  const CameraConfig camera = parse_camera(config, ctx);
  const AberrationModel ab = parse_aberration(config, ctx);
  const int radius = get_int(config, "radius", 12, ctx);

  std::vector<double> depths = get_num_list(config, "depths_m", ctx);
  if (depths.empty()) {
    if (!config.contains("depth_min") || !config.contains("depth_max") ||
        !config.contains("depth_count")) {
      throw ConfigError("gen: give 'depths_m' or all of 'depth_min'/'depth_max'/'depth_count'");
    }
    const double lo = get_num(config, "depth_min", 0, ctx);
    const double hi = get_num(config, "depth_max", 0, ctx);
    const int n = get_int(config, "depth_count", 0, ctx);
    if (!(lo > 0) || !(hi > lo) || n < 1) {
      throw ConfigError("gen: need 0 < depth_min < depth_max and depth_count >= 1");
    }
    depths = linspace(lo, hi, n);
  } else if (config.contains("depth_min") || config.contains("depth_max") ||
             config.contains("depth_count")) {
    throw ConfigError("gen: give either 'depths_m' or a depth range, not both");
  }

  std::vector<std::string> kinds = get_str_list(config, "textures", ctx);
  if (kinds.empty()) kinds = {"noise", "noise", "checker"};

  const Rng root(seed);
  std::vector<ImageF> textures;
  textures.reserve(kinds.size());
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    textures.push_back(make_texture(kinds[i], camera.image_width, camera.image_height,
                                    root.child(i)));
  }
  ThreadPool pool(resolve_threads(get_int(config, "threads", 0, ctx)));
  const GenResult result = gen_pair_dataset(camera, ab, textures, depths, seed, out_dir, &pool,
                                            radius);
  return json{{"command", "gen"},
              {"out_dir", out_dir.string()},
              {"manifest", (out_dir / "manifest.json").string()},
              {"seed", seed},
              {"n_textures", kinds.size()},
              {"n_depths", depths.size()},
              {"n_records", result.manifest.records.size()},
              {"pairs_per_focus", result.pairs_per_focus},
              {"camera", camera_summary(camera)}};
}

json run_fit(const json& config) {
  static const char* ctx = "fit";
  std::vector<std::string_view> keys = {"manifest", "out", "log", "focus_index", "threads"};
  keys.insert(keys.end(), std::begin(kFitKeys), std::end(kFitKeys));
  if (!config.is_object()) throw ConfigError("fit: expected a JSON object");
  for (const auto& [key, value] : config.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("fit: unknown key '" + key + "'");
    }
  }
  const fs::path manifest_path = require_str(config, "manifest", ctx);
  const fs::path out_path = require_str(config, "out", ctx);
  const std::string log_path = get_str(config, "log", "", ctx);
  const int focus_index = get_int(config, "focus_index", 0, ctx);
  const FitConfig fit_cfg = parse_fit_config(config, ctx);
  fit_cfg.validate();
  if (fit_cfg.mode == "xy-cartesian") {
    throw ConfigError("fit: the xy-cartesian variant has no persisted format; use the ablate "
                      "command to compare modes");
  }

  const Manifest manifest = load_manifest(manifest_path);
  if (manifest.kind != "pair_dataset") {
    throw DataError("fit expects a pair dataset manifest, got kind '" + manifest.kind + "'");
  }
  const std::vector<PairImages> pairs =
      load_pairs(manifest, manifest_path.parent_path(), focus_index);
  ThreadPool pool(resolve_threads(get_int(config, "threads", 0, ctx)));
  FitStats stats;
  const PsfGrid grid = fit_psf_grid(pairs, focus_index, manifest.camera.n_focus(), fit_cfg, &pool,
                                    &stats);
  save_psf_grid(grid, out_path);
  if (!log_path.empty()) save_fit_log(stats, fit_cfg, log_path);
  return json{{"command", "fit"},
              {"grid", out_path.string()},
              {"focus_index", focus_index},
              {"mode", fit_cfg.mode},
              {"steps", fit_cfg.steps},
              {"seed", fit_cfg.seed},
              {"n_pairs", pairs.size()},
              {"final_loss", stats.final_loss},
              {"ema_at_500", stats.ema_at_500},
              {"ema_final", stats.ema_final},
              {"grid_hash", file_hash_hex(out_path)}};
}

json run_render(const json& config) {
  static const char* ctx = "render";
  check_keys(config, ctx, {"out_dir", "seed", "camera", "aberration", "radius", "threads", "scene"});
  const fs::path out_dir = require_str(config, "out_dir", ctx);
  const std::uint64_t seed = get_seed(config, "seed", 1, ctx);
  const CameraConfig camera = parse_camera(config, ctx);
  const AberrationModel ab = parse_aberration(config, ctx);
  const int radius = get_int(config, "radius", 12, ctx);
  if (!config.contains("scene")) throw ConfigError("render: 'scene' is required");
  const json& scene = config.at("scene");
  check_keys(scene, "render.scene",
             {"type", "texture", "depth_m", "texture_fg", "texture_bg", "d_fg", "d_bg", "mask",
              "mask_param"});
  const std::string type = require_str(scene, "type", "render.scene");

  ThreadPool pool(resolve_threads(get_int(config, "threads", 0, ctx)));
  const Rng root(seed);
  fs::create_directories(out_dir);

  Manifest m;
  m.kind = "focal_stack";
  m.seed = seed;
  m.camera = camera;
  m.aberration = ab;
  m.depth_gt_path = "depth_gt.pfm";

  std::vector<ImageF> stack;
  DepthMap gt;
  double record_depth = 0;
  if (type == "one-plane") {
    const double d = get_num(scene, "depth_m", 0, "render.scene");
    if (!(d > 0)) throw ConfigError("render.scene: 'depth_m' must be positive");
    const std::string kind = get_str(scene, "texture", "noise", "render.scene");
    const ImageF tex = make_texture(kind, camera.image_width, camera.image_height, root.child(0));
    stack = render_one_plane_stack(camera, ab, tex, d, &pool, radius);
    gt.width = stack.front().width();
    gt.height = stack.front().height();
    gt.depths.assign(static_cast<std::size_t>(gt.width) * gt.height, d);
    gt.valid.assign(gt.depths.size(), 1);
    gt.d_min = gt.d_max = d;
    record_depth = d;
  } else if (type == "two-plane") {
    const double d_fg = get_num(scene, "d_fg", 0, "render.scene");
    const double d_bg = get_num(scene, "d_bg", 0, "render.scene");
    if (!(d_fg > 0) || !(d_bg > d_fg)) {
      throw ConfigError("render.scene: need 0 < d_fg < d_bg");
    }
    const ImageF fg = make_texture(get_str(scene, "texture_fg", "noise", "render.scene"),
                                   camera.image_width, camera.image_height, root.child(0));
    const ImageF bg = make_texture(get_str(scene, "texture_bg", "checker", "render.scene"),
                                   camera.image_width, camera.image_height, root.child(1));
    const ImageF mask = make_mask(get_str(scene, "mask", "disk", "render.scene"),
                                  camera.image_width, camera.image_height,
                                  get_num(scene, "mask_param", 0.55, "render.scene"));
    TwoPlaneScene two = gen_two_plane_scene(camera, ab, fg, bg, d_fg, d_bg, mask, &pool, radius);
    stack = std::move(two.stack);
    gt = std::move(two.depth);
    record_depth = d_fg;
  } else {
    throw ConfigError("render.scene: 'type' must be 'one-plane' or 'two-plane'");
  }

  char name[32];
  for (int n = 0; n < camera.n_focus(); ++n) {
    std::snprintf(name, sizeof(name), "stack_f%02d.pfm", n);
    write_image_pfm(stack[static_cast<std::size_t>(n)], out_dir / name);
    ManifestRecord rec;
    rec.path = name;
    rec.role = "blurred";
    rec.focus_index = n;
    rec.focus_distance_m = camera.focus_distances_m[static_cast<std::size_t>(n)];
    rec.f_number = camera.f2;
    rec.depth_m = record_depth;
    rec.texture_id = 0;
    m.records.push_back(rec);
  }
  write_depth_pfm(gt, out_dir / "depth_gt.pfm");
  save_manifest(m, out_dir / "manifest.json");
  return json{{"command", "render"},
              {"out_dir", out_dir.string()},
              {"manifest", (out_dir / "manifest.json").string()},
              {"scene_type", type},
              {"seed", seed},
              {"n_images", stack.size()},
              {"image_width", stack.front().width()},
              {"image_height", stack.front().height()}};
}

json run_depth(const json& config) {
  static const char* ctx = "depth";
  check_keys(config, ctx,
             {"stack_manifest", "grids", "out_dir", "candidates_m", "candidate_min",
              "candidate_max", "candidate_count", "patch", "stride", "mode", "margin_tau",
              "charbonnier_eps", "threads"});
  const fs::path manifest_path = require_str(config, "stack_manifest", ctx);
  const fs::path out_dir = require_str(config, "out_dir", ctx);

  DfdConfig dfd;
  dfd.candidates_m = get_num_list(config, "candidates_m", ctx);
  if (dfd.candidates_m.empty()) {
    const double lo = get_num(config, "candidate_min", 0.5, ctx);
    const double hi = get_num(config, "candidate_max", 1.415, ctx);
    const int n = get_int(config, "candidate_count", 33, ctx);
    if (!(lo > 0) || !(hi > lo) || n < 2) {
      throw ConfigError("depth: need 0 < candidate_min < candidate_max and candidate_count >= 2");
    }
    dfd.candidates_m = linspace(lo, hi, n);
  } else if (config.contains("candidate_min") || config.contains("candidate_max") ||
             config.contains("candidate_count")) {
    throw ConfigError("depth: give either 'candidates_m' or a candidate range, not both");
  }
  dfd.patch = get_int(config, "patch", dfd.patch, ctx);
  dfd.stride = get_int(config, "stride", dfd.stride, ctx);
  dfd.mode = get_str(config, "mode", dfd.mode, ctx);
  dfd.margin_tau = get_num(config, "margin_tau", dfd.margin_tau, ctx);
  dfd.charbonnier_eps = get_num(config, "charbonnier_eps", dfd.charbonnier_eps, ctx);
  dfd.validate();

  const Manifest manifest = load_manifest(manifest_path);
  const FocalStack stack = load_stack(manifest, manifest_path.parent_path());
  const std::vector<std::string> grid_paths = get_str_list(config, "grids", ctx);
  const int n = stack.camera.n_focus();
  if (grid_paths.size() != static_cast<std::size_t>(n)) {
    throw ConfigError("depth: 'grids' must list one grid per focus setting (" + std::to_string(n) +
                      " expected, " + std::to_string(grid_paths.size()) + " given)");
  }
  std::vector<PsfGrid> grids;
  grids.reserve(grid_paths.size());
  for (int i = 0; i < n; ++i) {
    PsfGrid g = load_psf_grid(grid_paths[static_cast<std::size_t>(i)]);
    if (g.focus_index != i) {
      throw DataError("grid file '" + grid_paths[static_cast<std::size_t>(i)] +
                      "' carries focus index " + std::to_string(g.focus_index) + ", expected " +
                      std::to_string(i));
    }
    grids.push_back(std::move(g));
  }

  ThreadPool pool(resolve_threads(get_int(config, "threads", 0, ctx)));
  const DepthMap map = estimate_depth(stack, grids, dfd, &pool);
  fs::create_directories(out_dir);
  write_depth_pfm(map, out_dir / "depth.pfm");
  write_depth_mask_pgm(map, out_dir / "depth_mask.pgm");
  write_depth_vis_pgm8(map, out_dir / "depth_vis.pgm");

  std::size_t n_valid = 0;
  for (const auto v : map.valid) n_valid += v ? 1 : 0;
  json summary{{"command", "depth"},
               {"out_dir", out_dir.string()},
               {"depth", (out_dir / "depth.pfm").string()},
               {"mode", dfd.mode},
               {"n_candidates", dfd.candidates_m.size()},
               {"candidate_min", dfd.candidates_m.front()},
               {"candidate_max", dfd.candidates_m.back()},
               {"valid_fraction",
                static_cast<double>(n_valid) / static_cast<double>(map.valid.size())}};
  if (!manifest.depth_gt_path.empty()) {
    const DepthMap gt = read_depth_pfm(manifest_path.parent_path() / manifest.depth_gt_path, "",
                                       map.d_min, map.d_max);
    const DepthMaeResult r = depth_mae(map, gt);
    summary["mae_m"] = r.mae_m;
    summary["n_joint_valid"] = r.n_joint;
  }
  return summary;
}

namespace {

json eval_psf_report(const EvalReport& report, const HoldoutSpec& holdout,
                     const std::string& model_kind, const fs::path& model_path,
                     const fs::path& manifest_path) {
  return json{{"format", "defocus-eval-psf-v1"},
              {"focus_index", report.focus_index},
              {"model_kind", model_kind},
              {"aggregate_mae", report.aggregate_mae},
              {"n_records", report.records.size()},
              {"holdout", holdout_summary(holdout)},
              {"records", report_records(report)},
              {"provenance",
               json{{"model_file", model_path.string()},
                    {"model_hash", file_hash_hex(model_path)},
                    {"manifest_file", manifest_path.string()},
                    {"manifest_hash", file_hash_hex(manifest_path)}}}};
}

}  // namespace

json run_eval_psf(const json& config) {
  static const char* ctx = "eval-psf";
  check_keys(config, ctx, {"grid", "baseline", "train_manifest", "out", "holdout"});
  const std::string grid_path = get_str(config, "grid", "", ctx);
  const std::string baseline_path = get_str(config, "baseline", "", ctx);
  if (grid_path.empty() == baseline_path.empty()) {
    throw ConfigError("eval-psf: give exactly one of 'grid' or 'baseline'");
  }
  const fs::path manifest_path = require_str(config, "train_manifest", ctx);
  const fs::path out_path = require_str(config, "out", ctx);

  const Manifest manifest = load_manifest(manifest_path);
  if (manifest.kind != "pair_dataset") {
    throw DataError("eval-psf expects a pair dataset manifest, got kind '" + manifest.kind + "'");
  }
  const std::vector<double> training_depths = sorted_unique_depths(manifest);
  const HoldoutSpec holdout = parse_holdout(config, training_depths, ctx);
  check_holdout_disjoint(training_depths, holdout.depth_list);

  PsfGrid grid;
  GaussianBaseline baseline;
  KernelAt est;
  int focus_index = 0;
  int radius = 0;
  std::string model_kind;
  fs::path model_path;
  if (!grid_path.empty()) {
    grid = load_psf_grid(grid_path);
    if (grid.n_focus != manifest.camera.n_focus()) {
      throw DataError("grid was fitted for " + std::to_string(grid.n_focus) +
                      " focus settings, manifest has " +
                      std::to_string(manifest.camera.n_focus()));
    }
    focus_index = grid.focus_index;
    radius = grid.radius;
    est = kernel_at_from_grid(grid);
    model_kind = "grid";
    model_path = grid_path;
  } else {
    baseline = load_gaussian_baseline(baseline_path);
    focus_index = baseline.focus_index;
    radius = baseline.radius;
    if (focus_index < 0 || focus_index >= manifest.camera.n_focus()) {
      throw DataError("baseline focus index " + std::to_string(focus_index) +
                      " outside the manifest camera focus list");
    }
    est = kernel_at_from_baseline(baseline);
    model_kind = "gaussian";
    model_path = baseline_path;
  }

  const KernelAt oracle =
      kernel_at_from_oracle(manifest.camera, manifest.aberration, focus_index, radius);
  const EvalReport report = eval_psf_grid(est, oracle, holdout, focus_index);
  const json out = eval_psf_report(report, holdout, model_kind, model_path, manifest_path);
  write_json_file(out, out_path);
  return json{{"command", "eval-psf"},
              {"out", out_path.string()},
              {"model_kind", model_kind},
              {"focus_index", focus_index},
              {"aggregate_mae", report.aggregate_mae},
              {"n_records", report.records.size()}};
}

json run_eval_depth(const json& config) {
  static const char* ctx = "eval-depth";
  check_keys(config, ctx, {"est", "est_mask", "gt", "gt_mask", "out"});
  const fs::path est_path = require_str(config, "est", ctx);
  const fs::path gt_path = require_str(config, "gt", ctx);
  const fs::path out_path = require_str(config, "out", ctx);
  const std::string est_mask = get_str(config, "est_mask", "", ctx);
  const std::string gt_mask = get_str(config, "gt_mask", "", ctx);

  DepthMap est = read_depth_pfm(est_path, est_mask, 0, 0);
  DepthMap gt = read_depth_pfm(gt_path, gt_mask, 0, 0);
  const DepthMaeResult r = depth_mae(est, gt);
  const json report{{"format", "defocus-eval-depth-v1"},
                    {"mae_m", r.mae_m},
                    {"valid_fraction_est", r.valid_fraction_est},
                    {"n_joint_valid", r.n_joint},
                    {"provenance",
                     json{{"est_file", est_path.string()},
                          {"est_hash", file_hash_hex(est_path)},
                          {"gt_file", gt_path.string()},
                          {"gt_hash", file_hash_hex(gt_path)}}}};
  write_json_file(report, out_path);
  json summary = report;
  summary["command"] = "eval-depth";
  summary["out"] = out_path.string();
  return summary;
}

json run_ablate(const json& config) {
  static const char* ctx = "ablate";
  std::vector<std::string_view> keys = {"manifest", "focus_index", "out", "holdout", "threads"};
  keys.insert(keys.end(), std::begin(kFitKeys), std::end(kFitKeys));
  if (!config.is_object()) throw ConfigError("ablate: expected a JSON object");
  for (const auto& [key, value] : config.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("ablate: unknown key '" + key + "'");
    }
  }
  if (config.contains("mode")) {
    throw ConfigError("ablate: 'mode' is fixed (all three variants run); remove the key");
  }
  const fs::path manifest_path = require_str(config, "manifest", ctx);
  const fs::path out_path = require_str(config, "out", ctx);
  const int focus_index = get_int(config, "focus_index", 0, ctx);
  const FitConfig base_cfg = parse_fit_config(config, ctx);

  const Manifest manifest = load_manifest(manifest_path);
  if (manifest.kind != "pair_dataset") {
    throw DataError("ablate expects a pair dataset manifest, got kind '" + manifest.kind + "'");
  }
  const std::vector<double> training_depths = sorted_unique_depths(manifest);
  const HoldoutSpec holdout = parse_holdout(config, training_depths, ctx);
  check_holdout_disjoint(training_depths, holdout.depth_list);
  const std::vector<PairImages> pairs =
      load_pairs(manifest, manifest_path.parent_path(), focus_index);
  const KernelAt oracle = kernel_at_from_oracle(manifest.camera, manifest.aberration, focus_index,
                                                base_cfg.radius);
  ThreadPool pool(resolve_threads(get_int(config, "threads", 0, ctx)));

  json rows = json::array();
  double mae_polar = 0, mae_xy = 0, mae_invariant = 0;
  for (const std::string mode : {"ih-polar", "xy-cartesian", "invariant"}) {
    FitConfig cfg = base_cfg;
    cfg.mode = mode;
    FitStats stats;
    EvalReport report;
    if (mode == "xy-cartesian") {
      const XyPsfGrid grid = fit_xy_grid(pairs, focus_index, cfg, &pool, &stats);
      report = eval_psf_grid(
          kernel_at_from_xy_grid(grid, manifest.camera.image_width, manifest.camera.image_height),
          oracle, holdout, focus_index);
      mae_xy = report.aggregate_mae;
    } else {
      const PsfGrid grid =
          fit_psf_grid(pairs, focus_index, manifest.camera.n_focus(), cfg, &pool, &stats);
      report = eval_psf_grid(kernel_at_from_grid(grid), oracle, holdout, focus_index);
      (mode == "ih-polar" ? mae_polar : mae_invariant) = report.aggregate_mae;
    }
    rows.push_back(json{{"mode", mode},
                        {"aggregate_mae", report.aggregate_mae},
                        {"final_loss", stats.final_loss},
                        {"ema_final", stats.ema_final}});
  }

  const json out{{"format", "defocus-ablation-v1"},
                 {"focus_index", focus_index},
                 {"steps", base_cfg.steps},
                 {"seed", base_cfg.seed},
                 {"holdout", holdout_summary(holdout)},
                 {"rows", rows},
                 {"ratio_ih_polar_over_xy", mae_polar / mae_xy},
                 {"ratio_ih_polar_over_invariant", mae_polar / mae_invariant},
                 {"provenance",
                  json{{"manifest_file", manifest_path.string()},
                       {"manifest_hash", file_hash_hex(manifest_path)}}}};
  write_json_file(out, out_path);
  json summary = out;
  summary["command"] = "ablate";
  summary["out"] = out_path.string();
  return summary;
}

json run_mosaic(const json& config) {
  static const char* ctx = "mosaic";
  check_keys(config, ctx, {"grid", "out", "ih", "ih_count", "depths_m", "depth_count", "theta"});
  const fs::path grid_path = require_str(config, "grid", ctx);
  const fs::path out_path = require_str(config, "out", ctx);
  const PsfGrid grid = load_psf_grid(grid_path);

  std::vector<double> ih_list = get_num_list(config, "ih", ctx);
  if (ih_list.empty()) {
    if (config.contains("ih_count")) {
      ih_list = linspace(grid.ih_centers.front(), grid.ih_centers.back(),
                         get_int(config, "ih_count", 0, ctx));
    } else {
      ih_list = grid.ih_centers;
    }
  } else if (config.contains("ih_count")) {
    throw ConfigError("mosaic: give either 'ih' or 'ih_count', not both");
  }
  std::vector<double> depth_list = get_num_list(config, "depths_m", ctx);
  if (depth_list.empty()) {
    if (config.contains("depth_count")) {
      depth_list = linspace(grid.depth_centers.front(), grid.depth_centers.back(),
                            get_int(config, "depth_count", 0, ctx));
    } else {
      depth_list = grid.depth_centers;
    }
  } else if (config.contains("depth_count")) {
    throw ConfigError("mosaic: give either 'depths_m' or 'depth_count', not both");
  }
  const double theta = get_num(config, "theta", 0.0, ctx);

  const ImageF mosaic = render_psf_mosaic(grid, ih_list, depth_list, theta);
  write_image_pgm8(mosaic, out_path);
  return json{{"command", "mosaic"},
              {"out", out_path.string()},
              {"width", mosaic.width()},
              {"height", mosaic.height()},
              {"n_ih", ih_list.size()},
              {"n_depth", depth_list.size()},
              {"theta", theta}};
}

}  // namespace defocus
