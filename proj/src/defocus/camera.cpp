#include "defocus/camera.hpp"

#include <cmath>
#include <string>

#include "defocus/errors.hpp"
#include "defocus/image.hpp"

namespace defocus {

void CameraConfig::validate() const {
  if (!(focal_length_m > 0)) throw ConfigError("camera.focal_length_m must be > 0");
  if (!(f2 > 0)) throw ConfigError("camera.f2 must be > 0");
  if (!(f1 > f2)) throw ConfigError("camera.f1 must exceed camera.f2");
  if (!(pixel_pitch_m > 0)) throw ConfigError("camera.pixel_pitch_m must be > 0");
  if (image_width <= 0 || image_height <= 0) {
    throw ConfigError("camera.image_width/image_height must be > 0");
  }
  if (focus_distances_m.empty()) throw ConfigError("camera.focus_distances_m must be non-empty");
  for (std::size_t i = 0; i < focus_distances_m.size(); ++i) {
    const double fd = focus_distances_m[i];
    if (!std::isfinite(fd) || fd <= focal_length_m) {
      throw ConfigError("camera.focus_distances_m[" + std::to_string(i) +
                        "] must exceed the focal length");
    }
    if (i > 0 && !(fd > focus_distances_m[i - 1])) {
      throw ConfigError("camera.focus_distances_m must be strictly increasing");
    }
  }
  if (breathing_mags.size() != focus_distances_m.size()) {
    throw ConfigError("camera.breathing_mags must have one entry per focus distance");
  }
  for (std::size_t i = 0; i < breathing_mags.size(); ++i) {
    if (!std::isfinite(breathing_mags[i]) || breathing_mags[i] <= 0) {
      throw ConfigError("camera.breathing_mags[" + std::to_string(i) + "] must be positive");
    }
  }
  if (std::abs(breathing_mags[0] - 1.0) > 1e-12) {
    throw ConfigError("camera.breathing_mags[0] must be 1 (first focus is the reference)");
  }
}

void DepthMap::validate() const {
  if (width <= 0 || height <= 0) throw DimensionError("depth map dimensions must be positive");
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (depths.size() != n || valid.size() != n) {
    throw DimensionError("depth map buffer sizes do not match dimensions");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (valid[i] && (!std::isfinite(depths[i]) || depths[i] <= 0)) {
      throw ParameterError("valid depth pixel must be finite and positive");
    }
  }
}

void write_depth_pfm(const DepthMap& map, const std::filesystem::path& path) {
  map.validate();
  RasterF r;
  r.width = map.width;
  r.height = map.height;
  r.data.resize(map.depths.size());
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    r.data[i] = map.valid[i] ? map.depths[i] : 0.0;
  }
  write_pfm(r, path);
}

void write_depth_mask_pgm(const DepthMap& map, const std::filesystem::path& path) {
  map.validate();
  RasterU16 r;
  r.width = map.width;
  r.height = map.height;
  r.maxval = 255;
  r.data.resize(map.valid.size());
  for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] = map.valid[i] ? 255 : 0;
  write_pgm(r, path);
}

void write_depth_vis_pgm8(const DepthMap& map, const std::filesystem::path& path) {
  map.validate();
  const double lo = map.d_min;
  const double span = map.d_max - map.d_min;
  RasterU16 r;
  r.width = map.width;
  r.height = map.height;
  r.maxval = 255;
  r.data.resize(map.depths.size());
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    if (!map.valid[i] || !(span > 0)) {
      r.data[i] = 0;
      continue;
    }
    const double t = std::clamp((map.depths[i] - lo) / span, 0.0, 1.0);
    r.data[i] = static_cast<std::uint16_t>(std::lround(t * 255.0));
  }
  write_pgm(r, path);
}

DepthMap read_depth_pfm(const std::filesystem::path& path, const std::filesystem::path& mask_path,
                        double d_min, double d_max) {
  RasterF r = read_pfm(path);
  DepthMap map;
  map.width = r.width;
  map.height = r.height;
  map.depths = std::move(r.data);
  map.d_min = d_min;
  map.d_max = d_max;
  map.valid.resize(map.depths.size());
  if (!mask_path.empty()) {
    const RasterU16 m = read_pgm(mask_path);
    if (m.width != map.width || m.height != map.height) {
      throw DimensionError("depth mask dimensions do not match depth map");
    }
    for (std::size_t i = 0; i < map.valid.size(); ++i) {
      map.valid[i] = (m.data[i] > 0 && map.depths[i] > 0) ? 1 : 0;
    }
  } else {
    for (std::size_t i = 0; i < map.valid.size(); ++i) {
      map.valid[i] = map.depths[i] > 0 ? 1 : 0;
    }
  }
  map.validate();
  return map;
}

}  // namespace defocus
