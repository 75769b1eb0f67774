#pragma once

#include <functional>
#include <vector>

#include "defocus/camera.hpp"
#include "defocus/estimator.hpp"
#include "defocus/kernel.hpp"
#include "defocus/optics.hpp"
#include "defocus/psf_grid.hpp"

namespace defocus {

// Mean absolute per-pixel difference after scaling both kernels to exactly
// unit mass.
double psf_mae(const PsfKernel& est, const PsfKernel& gt);

// A PSF model reduced to its evaluation surface: the kernel it assigns to a
// field position and depth, oriented to theta.
using KernelAt = std::function<PsfKernel(double ih, double theta, double depth_m)>;

// Polar grid: query then rotate to theta; a single-ih-bin grid is orientation
// free and never rotated.
KernelAt kernel_at_from_grid(const PsfGrid& grid);
// Cartesian ablation grid: (ih, theta) mapped to the sensor position in the
// given frame; kernels are already oriented, no rotation.
KernelAt kernel_at_from_xy_grid(const XyPsfGrid& grid, int image_width, int image_height);
KernelAt kernel_at_from_baseline(const GaussianBaseline& baseline);
KernelAt kernel_at_from_oracle(const CameraConfig& camera, const AberrationModel& aberration,
                               int focus_index, int radius);

// Holdout sample coordinates; every (depth, ih, theta) combination is one
// evaluation record, iterated depth-major.
struct HoldoutSpec {
  std::vector<double> ih_list;
  std::vector<double> theta_list;
  std::vector<double> depth_list;

  void validate() const;
};

struct EvalRecord {
  double ih = 0.0;
  double theta = 0.0;
  double depth_m = 0.0;
  double mae = 0.0;
};

struct EvalReport {
  int focus_index = 0;
  std::vector<EvalRecord> records;
  double aggregate_mae = 0.0;
};

EvalReport eval_psf_grid(const KernelAt& estimated, const KernelAt& oracle,
                         const HoldoutSpec& holdout, int focus_index);

// Refuses holdout depths that collide with any training depth (within 1e-9).
void check_holdout_disjoint(const std::vector<double>& training_depths,
                            const std::vector<double>& holdout_depths);

struct DepthMaeResult {
  double mae_m = 0.0;
  double valid_fraction_est = 0.0;  // valid share of the estimate
  std::size_t n_joint = 0;          // pixels valid in both maps
};

// Mean |est - gt| in meters over pixels valid in both maps.
DepthMaeResult depth_mae(const DepthMap& est, const DepthMap& gt);

struct CentroidDriftRow {
  int focus_index = 0;
  double ih = 0.0;
  double offset_px = 0.0;  // radial centroid component of the canonical kernel
};

std::vector<CentroidDriftRow> centroid_drift(const std::vector<PsfGrid>& grids,
                                             const std::vector<double>& ih_list, double depth_m);

// Kernel tiles on a black 1-px lattice: one column per ih, one row per depth,
// each tile scaled so its peak is 1.
ImageF render_psf_mosaic(const PsfGrid& grid, const std::vector<double>& ih_list,
                         const std::vector<double>& depth_list, double theta);

}  // namespace defocus
