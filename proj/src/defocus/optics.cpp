#include "defocus/optics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "defocus/errors.hpp"
#include "defocus/geometry.hpp"

namespace defocus {

using nlohmann::json;

void AberrationModel::validate() const {
  if (!std::isfinite(coma_strength) || coma_strength < 0) {
    throw ConfigError("aberration.coma_strength must be >= 0");
  }
  if (!std::isfinite(field_curvature_m) || field_curvature_m < 0) {
    throw ConfigError("aberration.field_curvature_m must be >= 0");
  }
  if (!std::isfinite(astig_ratio) || astig_ratio <= 0 || astig_ratio > 1.0) {
    throw ConfigError("aberration.astig_ratio must be in (0, 1]");
  }
}

double coc_diameter_px(const CameraConfig& cfg, double depth_m, double focus_m) {
  if (!(depth_m > 0) || !std::isfinite(depth_m)) {
    throw DomainError("coc_diameter_px: depth must be positive");
  }
  if (!(focus_m > cfg.focal_length_m)) {
    throw DomainError("coc_diameter_px: focus distance must exceed the focal length");
  }
  const double f = cfg.focal_length_m;
  const double coc_m =
      f * f * std::abs(depth_m - focus_m) / (cfg.f2 * depth_m * (focus_m - f));
  return coc_m / cfg.pixel_pitch_m;
}

namespace {

// 4x4 subpixel offsets relative to a cell center.
constexpr double kSub[4] = {-0.375, -0.125, 0.125, 0.375};

// Aberrated disk at the canonical orientation: semi-axes (a radial = x,
// b tangential = y), center shifted along +x by shift_px.
std::vector<double> rasterize_ellipse(int radius, double a, double b, double shift_px) {
  const int side = 2 * radius + 1;
  std::vector<double> v(static_cast<std::size_t>(side) * side, 0.0);
  double mass = 0;
  if (a > 0 && b > 0) {
    const double cx = radius + shift_px;
    const double cy = radius;
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - a - 1)));
    const int x_hi = std::min(side - 1, static_cast<int>(std::ceil(cx + a + 1)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - b - 1)));
    const int y_hi = std::min(side - 1, static_cast<int>(std::ceil(cy + b + 1)));
    const double inv_a2 = 1.0 / (a * a);
    const double inv_b2 = 1.0 / (b * b);
    for (int j = y_lo; j <= y_hi; ++j) {
      for (int i = x_lo; i <= x_hi; ++i) {
        int inside = 0;
        for (int sy = 0; sy < 4; ++sy) {
          const double dy = (j + kSub[sy]) - cy;
          const double ry = dy * dy * inv_b2;
          if (ry > 1.0) continue;
          for (int sx = 0; sx < 4; ++sx) {
            const double dx = (i + kSub[sx]) - cx;
            if (dx * dx * inv_a2 + ry <= 1.0) ++inside;
          }
        }
        if (inside > 0) {
          const double val = inside / 16.0;
          v[static_cast<std::size_t>(j) * side + i] = val;
          mass += val;
        }
      }
    }
  }
  if (mass <= 0) {
    // In-focus (or sub-sample-scale) blur: bilinear point splat of the
    // shifted center.
    const double cx = radius + shift_px;
    const int i0 = static_cast<int>(std::floor(cx));
    const double tx = cx - i0;
    if (i0 >= 0 && i0 < side) v[static_cast<std::size_t>(radius) * side + i0] += 1.0 - tx;
    if (i0 + 1 >= 0 && i0 + 1 < side) v[static_cast<std::size_t>(radius) * side + i0 + 1] += tx;
  }
  return v;
}

}  // namespace

PsfKernel oracle_psf(const CameraConfig& cfg, const AberrationModel& ab, double ih, double theta,
                     double depth_m, int focus_index, int radius) {
  if (focus_index < 0 || focus_index >= cfg.n_focus()) {
    throw DomainError("oracle_psf: focus_index out of range");
  }
  if (!std::isfinite(ih) || ih < 0 || ih > 1.0 + 1e-12) {
    throw DomainError("oracle_psf: ih must be in [0, 1]");
  }
  if (!std::isfinite(theta)) throw DomainError("oracle_psf: non-finite theta");
  const double fd = cfg.focus_distances_m[static_cast<std::size_t>(focus_index)];
  const double fd_eff = fd + ab.field_curvature_m * ih * ih;
  const double coc = coc_diameter_px(cfg, depth_m, fd_eff);
  const double r = coc / 2.0;
  const double a = r * (1.0 + ab.coma_strength * ih);
  const double b = r * (1.0 + (ab.astig_ratio - 1.0) * ih);
  const double shift =
      (cfg.breathing_mags[static_cast<std::size_t>(focus_index)] - 1.0) * ih *
      corner_radius(cfg.image_width, cfg.image_height);
  if (a + std::abs(shift) > radius - 0.5 || b > radius - 0.5) {
    char msg[160];
    std::snprintf(msg, sizeof(msg),
                  "blur does not fit kernel support (radius %d): semi-axes %.2f/%.2f px, "
                  "shift %.2f px at depth %.4f m, focus %d",
                  radius, a, b, shift, depth_m, focus_index);
    throw SupportOverflowError(msg);
  }
  PsfKernel canonical =
      PsfKernel::from_values_normalized(radius, rasterize_ellipse(radius, a, b, shift));
  if (theta == 0) return canonical;
  return rotate_kernel(canonical, theta);
}

PsfProvider oracle_provider(const CameraConfig& cfg, const AberrationModel& ab, double depth_m,
                            int focus_index, int radius) {
  const int w = cfg.image_width;
  const int h = cfg.image_height;
  return [=, &cfg, &ab](double x, double y) {
    const PolarPos p = to_polar(x, y, w, h);
    return oracle_psf(cfg, ab, p.ih, p.theta, depth_m, focus_index, radius);
  };
}

ImageF render_blur(const ImageF& sharp, const PsfProvider& provider, int radius,
                   ThreadPool* pool) {
  if (sharp.empty()) throw StateError("render_blur: empty image");
  if (!provider) throw StateError("render_blur: empty provider");
  const int ow = sharp.width() - 2 * radius;
  const int oh = sharp.height() - 2 * radius;
  if (ow <= 0 || oh <= 0) throw DimensionError("render_blur: image too small for kernel radius");
  const int side = 2 * radius + 1;
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  auto row_job = [&](std::int64_t y) {
    for (int x = 0; x < ow; ++x) {
      const PsfKernel k = provider(x + radius, static_cast<int>(y) + radius);
      if (k.radius() != radius) {
        throw DataError("render_blur: provider returned kernel of radius " +
                        std::to_string(k.radius()) + ", expected " + std::to_string(radius));
      }
      out[static_cast<std::size_t>(y) * ow + x] =
          convolve_at(sharp.data(), sharp.width(), k.values(), side, x, static_cast<int>(y));
    }
  };
  if (pool) {
    pool->parallel_for(oh, row_job);
  } else {
    for (int y = 0; y < oh; ++y) row_job(y);
  }
  return ImageF::from_data(ow, oh, std::move(out));
}

ImageF make_texture(const std::string& kind, int width, int height, Rng rng) {
  if (width <= 0 || height <= 0) throw DimensionError("make_texture: bad dimensions");
  std::vector<double> v(static_cast<std::size_t>(width) * height, 0.0);
  if (kind == "noise") {
    // Multi-octave value noise: bilinearly upsampled random lattices plus a
    // pinch of per-pixel grain, then a min-max normalize.
    const int cells[4] = {33, 17, 9, 5};
    const double weights[4] = {0.45, 0.25, 0.18, 0.12};
    for (int o = 0; o < 4; ++o) {
      const int cs = cells[o];
      const int gw = width / cs + 2;
      const int gh = height / cs + 2;
      std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
      for (double& l : lattice) l = rng.next_unit();
      for (int y = 0; y < height; ++y) {
        const double gy = static_cast<double>(y) / cs;
        const int j = static_cast<int>(gy);
        const double ty = gy - j;
        for (int x = 0; x < width; ++x) {
          const double gx = static_cast<double>(x) / cs;
          const int i = static_cast<int>(gx);
          const double tx = gx - i;
          const double v00 = lattice[static_cast<std::size_t>(j) * gw + i];
          const double v01 = lattice[static_cast<std::size_t>(j) * gw + i + 1];
          const double v10 = lattice[static_cast<std::size_t>(j + 1) * gw + i];
          const double v11 = lattice[static_cast<std::size_t>(j + 1) * gw + i + 1];
          const double val = (1 - ty) * ((1 - tx) * v00 + tx * v01) +
                             ty * ((1 - tx) * v10 + tx * v11);
          v[static_cast<std::size_t>(y) * width + x] += weights[o] * val;
        }
      }
    }
    for (double& p : v) p += 0.06 * rng.next_unit();
  } else if (kind == "checker") {
    const int cell = static_cast<int>(rng.next_range(8, 24));
    const int px = static_cast<int>(rng.next_below(cell));
    const int py = static_cast<int>(rng.next_below(cell));
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const bool on = (((x + px) / cell) + ((y + py) / cell)) % 2 == 0;
        v[static_cast<std::size_t>(y) * width + x] = (on ? 0.82 : 0.18) + 0.08 * rng.next_unit();
      }
    }
  } else {
    throw ConfigError("unknown texture kind '" + kind + "' (expected 'noise' or 'checker')");
  }
  double lo = v[0], hi = v[0];
  for (const double p : v) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  for (double& p : v) p = 0.03 + 0.94 * (p - lo) / span;
  return ImageF::from_data(width, height, std::move(v));
}

ImageF make_mask(const std::string& kind, int width, int height, double param) {
  if (width <= 0 || height <= 0) throw DimensionError("make_mask: bad dimensions");
  std::vector<double> v(static_cast<std::size_t>(width) * height, 0.0);
  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  if (kind == "disk") {
    if (!(param > 0) || param > 1.0) throw ConfigError("mask radius fraction must be in (0, 1]");
    const double rad = param * std::min(width, height) / 2.0;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double r = std::hypot(x - cx, y - cy);
        v[static_cast<std::size_t>(y) * width + x] = std::clamp(0.5 + (rad - r), 0.0, 1.0);
      }
    }
  } else if (kind == "halves") {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        v[static_cast<std::size_t>(y) * width + x] = std::clamp(0.5 + (cx - x), 0.0, 1.0);
      }
    }
  } else {
    throw ConfigError("unknown mask kind '" + kind + "' (expected 'disk' or 'halves')");
  }
  return ImageF::from_data(width, height, std::move(v));
}

namespace {

json camera_to_json(const CameraConfig& c) {
  return json{{"focal_length_m", c.focal_length_m},
              {"f1", c.f1},
              {"f2", c.f2},
              {"focus_distances_m", c.focus_distances_m},
              {"pixel_pitch_m", c.pixel_pitch_m},
              {"image_width", c.image_width},
              {"image_height", c.image_height},
              {"breathing_mags", c.breathing_mags}};
}

CameraConfig camera_from_manifest_json(const json& j) {
  CameraConfig c;
  c.focal_length_m = j.at("focal_length_m").get<double>();
  c.f1 = j.at("f1").get<double>();
  c.f2 = j.at("f2").get<double>();
  c.focus_distances_m = j.at("focus_distances_m").get<std::vector<double>>();
  c.pixel_pitch_m = j.at("pixel_pitch_m").get<double>();
  c.image_width = j.at("image_width").get<int>();
  c.image_height = j.at("image_height").get<int>();
  c.breathing_mags = j.at("breathing_mags").get<std::vector<double>>();
  return c;
}

}  // namespace

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  manifest.camera.validate();
  manifest.aberration.validate();
  json j;
  j["format"] = "defocus-dataset-v1";
  j["kind"] = manifest.kind;
  j["seed"] = manifest.seed;
  j["camera"] = camera_to_json(manifest.camera);
  j["aberration"] = json{{"coma_strength", manifest.aberration.coma_strength},
                         {"field_curvature_m", manifest.aberration.field_curvature_m},
                         {"astig_ratio", manifest.aberration.astig_ratio}};
  if (!manifest.depth_gt_path.empty()) j["depth_gt"] = manifest.depth_gt_path;
  json records = json::array();
  for (const auto& r : manifest.records) {
    records.push_back(json{{"path", r.path},
                           {"role", r.role},
                           {"focus_index", r.focus_index},
                           {"focus_distance_m", r.focus_distance_m},
                           {"f_number", r.f_number},
                           {"depth_m", r.depth_m},
                           {"texture_id", r.texture_id}});
  }
  j["records"] = std::move(records);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("manifest is not valid JSON (" + path.string() + "): " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "defocus-dataset-v1") {
      throw FormatError("unsupported manifest format in " + path.string());
    }
    Manifest m;
    m.kind = j.at("kind").get<std::string>();
    if (m.kind != "pair_dataset" && m.kind != "focal_stack") {
      throw FormatError("unknown manifest kind '" + m.kind + "'");
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.camera = camera_from_manifest_json(j.at("camera"));
    const json& ab = j.at("aberration");
    m.aberration.coma_strength = ab.at("coma_strength").get<double>();
    m.aberration.field_curvature_m = ab.at("field_curvature_m").get<double>();
    m.aberration.astig_ratio = ab.at("astig_ratio").get<double>();
    if (j.contains("depth_gt")) m.depth_gt_path = j.at("depth_gt").get<std::string>();
    for (const json& rj : j.at("records")) {
      ManifestRecord r;
      r.path = rj.at("path").get<std::string>();
      r.role = rj.at("role").get<std::string>();
      if (r.role != "sharp" && r.role != "blurred") {
        throw FormatError("manifest record role must be 'sharp' or 'blurred'");
      }
      r.focus_index = rj.at("focus_index").get<int>();
      r.focus_distance_m = rj.at("focus_distance_m").get<double>();
      r.f_number = rj.at("f_number").get<double>();
      r.depth_m = rj.at("depth_m").get<double>();
      r.texture_id = rj.at("texture_id").get<int>();
      m.records.push_back(std::move(r));
    }
    m.camera.validate();
    m.aberration.validate();
    return m;
  } catch (const json::exception& e) {
    throw FormatError("manifest missing or mistyped field (" + path.string() + "): " + e.what());
  }
}

GenResult gen_pair_dataset(const CameraConfig& cfg, const AberrationModel& ab,
                           const std::vector<ImageF>& textures, const std::vector<double>& depths,
                           std::uint64_t seed, const std::filesystem::path& out_dir,
                           ThreadPool* pool, int radius) {
  cfg.validate();
  ab.validate();
  if (textures.empty()) throw ConfigError("gen_pair_dataset: textures must be non-empty");
  if (depths.empty()) throw ConfigError("gen_pair_dataset: depths must be non-empty");
  for (const auto& t : textures) {
    if (t.width() != cfg.image_width || t.height() != cfg.image_height) {
      throw DimensionError("gen_pair_dataset: texture does not match camera image size");
    }
  }
  for (std::size_t i = 0; i < depths.size(); ++i) {
    if (!std::isfinite(depths[i]) || depths[i] <= 0) {
      throw ConfigError("depths[" + std::to_string(i) + "] must be positive");
    }
  }
  // Fail fast on support overflow with the offending depth, before writing
  // any file: probe the worst-case field positions.
  for (std::size_t i = 0; i < depths.size(); ++i) {
    for (int n = 0; n < cfg.n_focus(); ++n) {
      for (int s = 0; s <= 8; ++s) {
        oracle_psf(cfg, ab, s / 8.0, 0.0, depths[i], n, radius);
      }
    }
  }

  std::filesystem::create_directories(out_dir / "img");
  Manifest m;
  m.kind = "pair_dataset";
  m.seed = seed;
  m.camera = cfg;
  m.aberration = ab;
  GenResult result;
  result.pairs_per_focus.assign(static_cast<std::size_t>(cfg.n_focus()), 0);
  char name[64];
  for (std::size_t t = 0; t < textures.size(); ++t) {
    for (std::size_t di = 0; di < depths.size(); ++di) {
      std::snprintf(name, sizeof(name), "img/t%03zu_d%03zu_sharp.pfm", t, di);
      write_image_pfm(textures[t], out_dir / name);
      ManifestRecord sharp;
      sharp.path = name;
      sharp.role = "sharp";
      sharp.focus_index = 0;
      sharp.focus_distance_m = cfg.focus_distances_m[0];
      sharp.f_number = cfg.f1;
      sharp.depth_m = depths[di];
      sharp.texture_id = static_cast<int>(t);
      m.records.push_back(sharp);
      for (int n = 0; n < cfg.n_focus(); ++n) {
        const ImageF blurred =
            render_blur(textures[t], oracle_provider(cfg, ab, depths[di], n, radius), radius, pool);
        std::snprintf(name, sizeof(name), "img/t%03zu_d%03zu_f%02d.pfm", t, di, n);
        write_image_pfm(blurred, out_dir / name);
        ManifestRecord rec;
        rec.path = name;
        rec.role = "blurred";
        rec.focus_index = n;
        rec.focus_distance_m = cfg.focus_distances_m[static_cast<std::size_t>(n)];
        rec.f_number = cfg.f2;
        rec.depth_m = depths[di];
        rec.texture_id = static_cast<int>(t);
        m.records.push_back(rec);
        ++result.pairs_per_focus[static_cast<std::size_t>(n)];
      }
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  result.manifest = std::move(m);
  return result;
}

std::vector<ImageF> render_one_plane_stack(const CameraConfig& cfg, const AberrationModel& ab,
                                           const ImageF& texture, double depth_m, ThreadPool* pool,
                                           int radius) {
  cfg.validate();
  ab.validate();
  if (texture.width() != cfg.image_width || texture.height() != cfg.image_height) {
    throw DimensionError("render_one_plane_stack: texture does not match camera image size");
  }
  std::vector<ImageF> stack;
  stack.reserve(static_cast<std::size_t>(cfg.n_focus()));
  for (int n = 0; n < cfg.n_focus(); ++n) {
    stack.push_back(render_blur(texture, oracle_provider(cfg, ab, depth_m, n, radius), radius, pool));
  }
  return stack;
}

TwoPlaneScene gen_two_plane_scene(const CameraConfig& cfg, const AberrationModel& ab,
                                  const ImageF& tex_fg, const ImageF& tex_bg, double d_fg,
                                  double d_bg, const ImageF& mask, ThreadPool* pool, int radius) {
  cfg.validate();
  ab.validate();
  if (tex_fg.width() != cfg.image_width || tex_fg.height() != cfg.image_height ||
      tex_bg.width() != cfg.image_width || tex_bg.height() != cfg.image_height ||
      mask.width() != cfg.image_width || mask.height() != cfg.image_height) {
    throw DimensionError("gen_two_plane_scene: plane images must match camera image size");
  }
  if (!(d_fg > 0) || !(d_bg > 0)) throw DomainError("gen_two_plane_scene: depths must be positive");

  std::vector<double> premult(tex_fg.data().size());
  for (std::size_t i = 0; i < premult.size(); ++i) premult[i] = tex_fg.data()[i] * mask.data()[i];
  const ImageF fg_premult = ImageF::from_data(cfg.image_width, cfg.image_height, std::move(premult));

  TwoPlaneScene scene;
  for (int n = 0; n < cfg.n_focus(); ++n) {
    const ImageF bg_b = render_blur(tex_bg, oracle_provider(cfg, ab, d_bg, n, radius), radius, pool);
    const ImageF fg_b =
        render_blur(fg_premult, oracle_provider(cfg, ab, d_fg, n, radius), radius, pool);
    const ImageF mask_b = render_blur(mask, oracle_provider(cfg, ab, d_fg, n, radius), radius, pool);
    std::vector<double> out(bg_b.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = fg_b.data()[i] + (1.0 - mask_b.data()[i]) * bg_b.data()[i];
    }
    scene.stack.push_back(ImageF::from_data(bg_b.width(), bg_b.height(), std::move(out)));
  }

  DepthMap& dm = scene.depth;
  dm.width = cfg.image_width - 2 * radius;
  dm.height = cfg.image_height - 2 * radius;
  dm.d_min = std::min(d_fg, d_bg);
  dm.d_max = std::max(d_fg, d_bg);
  dm.depths.resize(static_cast<std::size_t>(dm.width) * dm.height);
  dm.valid.assign(dm.depths.size(), 1);
  for (int y = 0; y < dm.height; ++y) {
    for (int x = 0; x < dm.width; ++x) {
      const bool fg = mask.at(x + radius, y + radius) >= 0.5;
      dm.depths[static_cast<std::size_t>(y) * dm.width + x] = fg ? d_fg : d_bg;
    }
  }
  return scene;
}

PsfGrid grid_from_oracle(const CameraConfig& cfg, const AberrationModel& ab, int focus_index,
                         std::vector<double> ih_centers, std::vector<double> depth_centers,
                         int radius) {
  cfg.validate();
  ab.validate();
  PsfGrid g = make_uniform_grid(focus_index, cfg.n_focus(), radius, std::move(ih_centers),
                                std::move(depth_centers));
  for (int i = 0; i < g.n_ih(); ++i) {
    for (int j = 0; j < g.n_depth(); ++j) {
      const PsfKernel k = oracle_psf(cfg, ab, g.ih_centers[static_cast<std::size_t>(i)], 0.0,
                                     g.depth_centers[static_cast<std::size_t>(j)], focus_index,
                                     radius);
      auto params = g.bin_params_mut(i, j);
      for (int p = 0; p < g.kernel_len(); ++p) {
        params[p] = std::log(std::max(k.values()[static_cast<std::size_t>(p)], 1e-30));
      }
    }
  }
  return g;
}

}  // namespace defocus
