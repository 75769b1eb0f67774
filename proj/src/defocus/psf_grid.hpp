#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "defocus/kernel.hpp"

namespace defocus {

// Softmax over a logit array; max-subtracted for overflow safety. Throws
// ParameterError on non-finite input.
std::vector<double> softmax(std::span<const double> logits);
// Pulls a gradient w.r.t. softmax outputs back to the logits.
std::vector<double> softmax_backprop(std::span<const double> probs, std::span<const double> grad);

// Kernel from unconstrained parameters: softmax over (2K+1)^2 logits.
// All-zero logits give the uniform kernel.
PsfKernel materialize_kernel(std::span<const double> logits, int radius);

// Counterclockwise rotation (y-up frame) of kernel values by theta via
// inverse-mapped bilinear resampling with zero fill. Raw variant returns the
// resampled mass without renormalization; rotate_kernel renormalizes.
std::vector<double> rotate_values_raw(std::span<const double> values, int radius, double theta);
PsfKernel rotate_kernel(const PsfKernel& kernel, double theta);

// Adjoint of the raw resampling map: <rotate_raw(p), g> == <p, backprop(g)>.
std::vector<double> rotation_backprop(std::span<const double> grad, int radius, double theta);

// Gradient of y = r / sum(r) pulled back to r, given y and sum(r).
std::vector<double> renorm_backprop(std::span<const double> normalized, double sum,
                                    std::span<const double> grad);

// Binned PSF table for one focus setting: softmax-parameterized kernels over
// (image-height bin) x (depth bin), bilinearly interpolated at query time.
// Queries outside either center range clamp to the edge bin. A grid with a
// single ih bin is the spatially invariant variant and is never rotated.
struct PsfGrid {
  int focus_index = 0;
  int n_focus = 1;
  int radius = 12;
  std::vector<double> ih_centers;
  std::vector<double> depth_centers;
  // Layout: [ih][depth][(2K+1)^2].
  std::vector<double> params;

  int n_ih() const { return static_cast<int>(ih_centers.size()); }
  int n_depth() const { return static_cast<int>(depth_centers.size()); }
  int kernel_len() const { return (2 * radius + 1) * (2 * radius + 1); }
  bool empty() const { return params.empty(); }
  bool spatially_invariant() const { return ih_centers.size() == 1; }
  void validate() const;

  std::span<const double> bin_params(int i_ih, int i_depth) const;
  std::span<double> bin_params_mut(int i_ih, int i_depth);
  PsfKernel materialize_bin(int i_ih, int i_depth) const;
  PsfKernel query(double ih, double depth_m) const;
};

// Position of q on an axis of bin centers with edge clamping: the pair of
// neighbor indices and the interpolation weight toward the upper one.
struct AxisLoc {
  int lo = 0;
  int hi = 0;
  double t = 0.0;
};
AxisLoc locate_on_axis(const std::vector<double>& centers, double q);

// A query together with the bins that produced it, for gradient routing. The
// kernel equals PsfGrid::query bit for bit; sum is the pre-normalization mass
// of the weighted mix, and parts hold each contributing bin's softmax output
// and interpolation weight in accumulation order.
struct GridBinMix {
  struct Part {
    int i_ih = 0;
    int i_depth = 0;
    double w = 0.0;
    std::vector<double> probs;
  };
  std::vector<Part> parts;
  double sum = 1.0;
  PsfKernel kernel;
};
GridBinMix query_mix(const PsfGrid& grid, double ih, double depth_m);

// Zero-parameter (uniform kernel) grid.
PsfGrid make_uniform_grid(int focus_index, int n_focus, int radius,
                          std::vector<double> ih_centers, std::vector<double> depth_centers);

// Rounds every parameter through float32; the on-disk format stores f32, so a
// quantized grid queries identically before and after a save/load cycle.
void quantize_params_f32(PsfGrid& grid);

// Binary grid file, magic "PSFG1", little-endian: u32 focus_index, u32
// n_focus, u32 radius, u32 n_ih, u32 n_depth, f64 ih centers, f64 depth
// centers, f32 params in (ih, depth, row, col) order.
void save_psf_grid(const PsfGrid& grid, const std::filesystem::path& path);
PsfGrid load_psf_grid(const std::filesystem::path& path);

}  // namespace defocus
