#pragma once

#include <string>
#include <vector>

#include "defocus/camera.hpp"
#include "defocus/image.hpp"
#include "defocus/psf_grid.hpp"
#include "defocus/thread_pool.hpp"

namespace defocus {

// Focus-bracketed captures of one scene, ordered by focus index. The camera
// describes the sensor frame the stack was cut from; stack images may be the
// sensor frame minus an equal margin per side (a valid-region render), and
// polar coordinates are always taken in the sensor frame.
struct FocalStack {
  std::vector<ImageF> images;
  CameraConfig camera;

  void validate() const;
};

struct DfdConfig {
  std::vector<double> candidates_m;  // depth hypotheses, ascending, >= 2
  int patch = 32;
  int stride = 16;
  // "ih-variant" queries each patch's (ih, theta); "invariant" uses the
  // on-axis kernel everywhere.
  std::string mode = "ih-variant";
  double margin_tau = 0.98;  // best/second-best cost ratio above this = flat
  double charbonnier_eps = 1e-6;

  void validate() const;
};

// Relative-blur consistency cost for one patch and one depth hypothesis:
// blur image i's patch with focus-j's kernel at the hypothesis and vice
// versa, then take the mean Charbonnier-L1 difference over the common valid
// region. (cx, cy) is the patch center in stack-image coordinates; the patch
// spans [c - patch/2, c - patch/2 + patch).
double pair_cost(const FocalStack& stack, const std::vector<PsfGrid>& grids, int i, int j, int cx,
                 int cy, double d_hyp, const DfdConfig& cfg);

// Exhaustive per-patch hypothesis search over the candidate list, summing
// pair_cost over all focus pairs; ties break to the nearer depth. Patch
// depths are splatted to pixels by overlap-weighted averaging. Patches with a
// flat cost profile (best/second-best > margin_tau, or no finite cost) are
// invalid. Deterministic at any pool size.
DepthMap estimate_depth(const FocalStack& stack, const std::vector<PsfGrid>& grids,
                        const DfdConfig& cfg, ThreadPool* pool);

}  // namespace defocus
