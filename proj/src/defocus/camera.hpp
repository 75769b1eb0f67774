#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace defocus {

// Capture geometry shared by the simulator, the estimator and the depth
// consumer. Focus distances are strictly increasing; breathing_mags give the
// magnification of each focus setting relative to the first (mags[0] == 1).
struct CameraConfig {
  double focal_length_m = 0.020;
  double f1 = 22.0;  // sharp-capture aperture (metadata only; sharp is ideal)
  double f2 = 6.0;   // blurred-capture aperture
  std::vector<double> focus_distances_m = {0.5, 0.8, 1.3};
  double pixel_pitch_m = 1.0e-5;
  int image_width = 501;
  int image_height = 501;
  std::vector<double> breathing_mags = {1.0, 1.0, 1.0};

  int n_focus() const { return static_cast<int>(focus_distances_m.size()); }
  double target_depth_min() const { return focus_distances_m.front(); }
  double target_depth_max() const { return focus_distances_m.back(); }
  void validate() const;  // throws ConfigError
};

// Per-pixel depth in meters with a validity mask. d_min/d_max record the
// candidate range the values were drawn from (used for visualization).
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depths;
  std::vector<std::uint8_t> valid;
  double d_min = 0.0;
  double d_max = 0.0;

  bool empty() const { return depths.empty(); }
  void validate() const;
};

// Invalid pixels are written as 0 (depths are strictly positive when valid).
void write_depth_pfm(const DepthMap& map, const std::filesystem::path& path);
// 255 = valid, 0 = invalid.
void write_depth_mask_pgm(const DepthMap& map, const std::filesystem::path& path);
// 8-bit visualization normalized to [d_min, d_max]; invalid pixels are 0.
void write_depth_vis_pgm8(const DepthMap& map, const std::filesystem::path& path);
// mask_path may be empty; then validity is inferred from depth > 0.
DepthMap read_depth_pfm(const std::filesystem::path& path, const std::filesystem::path& mask_path,
                        double d_min, double d_max);

}  // namespace defocus
