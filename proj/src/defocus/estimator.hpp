#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "defocus/geometry.hpp"
#include "defocus/image.hpp"
#include "defocus/losses.hpp"
#include "defocus/optics.hpp"
#include "defocus/psf_grid.hpp"
#include "defocus/rng.hpp"
#include "defocus/thread_pool.hpp"

namespace defocus {

// One supervision pair: the full sharp frame plus a blurred frame of the same
// scene. The blurred frame may be the sharp size minus an even margin on each
// axis (a valid-region render) or the full size (a real capture); blurred
// pixel (x, y) is co-sited with sharp pixel (x + m, y + m), m = (sharp width
// - blurred width) / 2.
struct PairImages {
  ImageF sharp;
  ImageF blurred;
  int focus_index = 0;
  double depth_m = 0.0;
  int texture_id = 0;
};

// Loads every (sharp, blurred) pair of one focus index from a dataset
// manifest. Sharp records are matched to blurred records by (texture, depth).
std::vector<PairImages> load_pairs(const Manifest& manifest, const std::filesystem::path& base_dir,
                                   int focus_index);

// A training sample: co-centered patches, sharp exceeding blurred by 2K per
// axis, plus the center's polar position in the sharp frame.
struct PatchSample {
  ImageF sharp;
  ImageF blurred;
  PolarPos pos;
  double depth_m = 0.0;
  int focus_index = 0;
  int cx = 0;
  int cy = 0;
};

// Uniform random patch center such that both patches fit; draws the x then
// the y coordinate from rng.
PatchSample sample_patch(const PairImages& pair, int patch_size, int radius, Rng& rng);

struct FitConfig {
  int patch_size = 64;
  int batch = 16;
  int steps = 20000;
  double lr = 0.05;  // peak rate; cosine-decayed to ~0 over the run
  std::uint64_t seed = 1;
  LossWeights weights;
  // "ih-polar": rotationally symmetric grid over (ih, depth) bins.
  // "invariant": single spatial bin over depth only, never rotated.
  // "xy-cartesian": per-(x, y) grid, no rotation (ablation only).
  std::string mode = "ih-polar";
  int radius = 12;
  int ih_bins = 9;
  double ih_min = 0.0;
  double ih_max = 1.0;
  int depth_bins = 12;
  // Depth-axis span of the grid; non-positive means span of the training
  // depths.
  double depth_min = 0.0;
  double depth_max = 0.0;
  int xy_bins = 5;
  int log_every = 50;

  void validate() const;
};

struct FitLogRow {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double recon = 0.0;
  double smooth = 0.0;
  double radial = 0.0;
  double ema = 0.0;
};

struct FitStats {
  std::vector<FitLogRow> rows;
  double ema_at_500 = 0.0;  // smoothed loss after step 500 (0 if fewer steps)
  double ema_final = 0.0;
  double final_loss = 0.0;
  int steps = 0;
};

// Self-supervised grid fit for one focus index: zero-logit init, per-step
// random patch batches, analytic gradients routed to the interpolation bins,
// moment-based adaptive updates with cosine decay. Deterministic for a given
// seed regardless of pool size. Parameters are rounded through float32 at the
// end so the returned grid matches its own saved file. Modes "ih-polar" and
// "invariant" only.
PsfGrid fit_psf_grid(const std::vector<PairImages>& pairs, int focus_index, int n_focus,
                     const FitConfig& cfg, ThreadPool* pool, FitStats* stats = nullptr);

// Ablation variant of the model: kernels binned over image position (x, y)
// and depth, trilinear interpolation, no rotation anywhere. In-memory only.
struct XyPsfGrid {
  int focus_index = 0;
  int radius = 12;
  std::vector<double> x_centers;
  std::vector<double> y_centers;
  std::vector<double> depth_centers;
  // Layout: [y][x][depth][(2K+1)^2].
  std::vector<double> params;

  int n_x() const { return static_cast<int>(x_centers.size()); }
  int n_y() const { return static_cast<int>(y_centers.size()); }
  int n_depth() const { return static_cast<int>(depth_centers.size()); }
  int kernel_len() const { return (2 * radius + 1) * (2 * radius + 1); }
  PsfKernel query(double x, double y, double depth_m) const;
};

XyPsfGrid fit_xy_grid(const std::vector<PairImages>& pairs, int focus_index, const FitConfig& cfg,
                      ThreadPool* pool, FitStats* stats = nullptr);

// Writes the training log as plain text, one row per logged step.
void save_fit_log(const FitStats& stats, const FitConfig& cfg, const std::filesystem::path& path);

// Discretized isotropic Gaussian, each cell the exact integral of the
// continuous Gaussian over the pixel (separable erf differences), normalized.
PsfKernel gaussian_kernel(int radius, double sigma);

// Spatially invariant baseline: one Gaussian width per training depth.
struct GaussianBaseline {
  int focus_index = 0;
  int radius = 12;
  std::vector<double> depth_centers;
  std::vector<double> sigmas;

  void validate() const;
  // Linear interpolation of sigma along the depth axis, clamped at the ends.
  double sigma_at(double depth_m) const;
  PsfKernel kernel_at(double depth_m) const;
};

struct GaussianFitConfig {
  int patch_size = 64;
  int probes_per_depth = 8;
  int radius = 12;
  std::uint64_t seed = 1;
  double sigma_min = 0.05;
  int coarse_points = 24;
  double charbonnier_eps = 1e-6;

  void validate() const;
};

// Per-depth 1-D width search minimizing the mean reconstruction loss over a
// fixed probe-patch set: coarse grid over [sigma_min, radius/2], then
// golden-section refinement around the best cell.
GaussianBaseline fit_gaussian_baseline(const std::vector<PairImages>& pairs, int focus_index,
                                       const GaussianFitConfig& cfg, ThreadPool* pool);

void save_gaussian_baseline(const GaussianBaseline& baseline, const std::filesystem::path& path);
GaussianBaseline load_gaussian_baseline(const std::filesystem::path& path);

}  // namespace defocus
