#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "defocus/camera.hpp"
#include "defocus/image.hpp"
#include "defocus/kernel.hpp"
#include "defocus/psf_grid.hpp"
#include "defocus/rng.hpp"
#include "defocus/thread_pool.hpp"

namespace defocus {

// Field-dependent lens imperfections applied to the thin-lens disk:
//  - coma_strength elongates the disk radially by (1 + coma_strength*ih);
//  - field_curvature_m shifts the effective focus distance by fc*ih^2;
//  - astig_ratio compresses the tangential axis linearly in ih, reaching
//    tangential/sagittal = astig_ratio at ih = 1.
struct AberrationModel {
  double coma_strength = 0.6;
  double field_curvature_m = 0.05;
  double astig_ratio = 0.8;

  bool is_ideal() const {
    return coma_strength == 0 && field_curvature_m == 0 && astig_ratio == 1.0;
  }
  void validate() const;
};

// Thin-lens circle of confusion in pixels for a scene point at depth_m when
// focused at focus_m, using the blurred-capture aperture f2.
double coc_diameter_px(const CameraConfig& cfg, double depth_m, double focus_m);

// Ground-truth PSF at normalized field position (ih, theta) for a point at
// depth_m under focus setting focus_index. Builds the aberrated disk at the
// canonical orientation (radial axis along +x), applies the breathing centroid
// shift (mag - 1) * ih * corner_radius pixels radially, anti-aliases by 4x4
// subpixel area sampling, then rotates to theta. Throws SupportOverflowError
// if the blur does not fit within the kernel radius.
PsfKernel oracle_psf(const CameraConfig& cfg, const AberrationModel& ab, double ih, double theta,
                     double depth_m, int focus_index, int radius = 12);

// Kernel for an output pixel, addressed by its (x, y) position in the sharp
// image frame.
using PsfProvider = std::function<PsfKernel(double x, double y)>;

// Spatially-variant gather render over the valid region: output is
// (w-2K) x (h-2K) and output pixel (x, y) sits over sharp pixel (x+K, y+K).
// With a constant provider this reduces bit-identically to convolve_valid.
ImageF render_blur(const ImageF& sharp, const PsfProvider& provider, int radius,
                   ThreadPool* pool = nullptr);

// Provider backed by oracle_psf for one (depth, focus) pair.
PsfProvider oracle_provider(const CameraConfig& cfg, const AberrationModel& ab, double depth_m,
                            int focus_index, int radius = 12);

// Deterministic procedural textures; kinds: "noise" (multi-octave value
// noise), "checker" (randomized checkerboard). Values kept inside (0, 1).
ImageF make_texture(const std::string& kind, int width, int height, Rng rng);

// Alpha masks for two-plane scenes; kinds: "disk" (centered, param = radius
// as a fraction of min dimension), "halves" (left half foreground).
ImageF make_mask(const std::string& kind, int width, int height, double param);

// Dataset manifest: the sole ingestion point for fitting and evaluation.
struct ManifestRecord {
  std::string path;  // relative to the manifest directory
  std::string role;  // "sharp" | "blurred"
  int focus_index = 0;
  double focus_distance_m = 0.0;
  double f_number = 0.0;
  double depth_m = 0.0;  // -1 for spatially varying scenes (see depth_gt)
  int texture_id = 0;
};

struct Manifest {
  std::string kind;  // "pair_dataset" | "focal_stack"
  std::uint64_t seed = 0;
  CameraConfig camera;
  AberrationModel aberration;
  std::vector<ManifestRecord> records;
  std::string depth_gt_path;  // focal stacks only; may be empty
};

void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

// Renders one sharp + N blurred captures per (texture, depth) and writes
// images plus manifest under out_dir. Depths must be positive and the blur at
// every sampled field position must fit the kernel support.
struct GenResult {
  Manifest manifest;
  std::vector<int> pairs_per_focus;
};
GenResult gen_pair_dataset(const CameraConfig& cfg, const AberrationModel& ab,
                           const std::vector<ImageF>& textures, const std::vector<double>& depths,
                           std::uint64_t seed, const std::filesystem::path& out_dir,
                           ThreadPool* pool = nullptr, int radius = 12);

// N-image focal stack of a front-parallel plane at depth_m.
std::vector<ImageF> render_one_plane_stack(const CameraConfig& cfg, const AberrationModel& ab,
                                           const ImageF& texture, double depth_m,
                                           ThreadPool* pool = nullptr, int radius = 12);

// Foreground plane over background plane, alpha-composited with the mask
// blurred at the foreground depth. Ground truth takes d_fg where the
// unblurred mask is >= 0.5.
struct TwoPlaneScene {
  std::vector<ImageF> stack;
  DepthMap depth;
};
TwoPlaneScene gen_two_plane_scene(const CameraConfig& cfg, const AberrationModel& ab,
                                  const ImageF& tex_fg, const ImageF& tex_bg, double d_fg,
                                  double d_bg, const ImageF& mask, ThreadPool* pool = nullptr,
                                  int radius = 12);

// Grid whose bins reproduce the oracle kernels exactly at bin centers
// (log-kernel logits; softmax inverts the log).
PsfGrid grid_from_oracle(const CameraConfig& cfg, const AberrationModel& ab, int focus_index,
                         std::vector<double> ih_centers, std::vector<double> depth_centers,
                         int radius = 12);

}  // namespace defocus
