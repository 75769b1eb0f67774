#include "defocus/dfd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "defocus/errors.hpp"
#include "defocus/geometry.hpp"

namespace defocus {

void FocalStack::validate() const {
  camera.validate();
  if (images.size() != static_cast<std::size_t>(camera.n_focus())) {
    throw DataError("focal stack has " + std::to_string(images.size()) + " images for " +
                    std::to_string(camera.n_focus()) + " focus settings");
  }
  const int w = images.front().width();
  const int h = images.front().height();
  for (const auto& img : images) {
    if (img.width() != w || img.height() != h) {
      throw DimensionError("focal stack images must share one size");
    }
  }
  const int mx = camera.image_width - w;
  const int my = camera.image_height - h;
  if (mx < 0 || my < 0 || mx % 2 != 0 || mx != my) {
    throw DataError("stack images must be the sensor frame minus an equal even margin per axis");
  }
}

void DfdConfig::validate() const {
  if (candidates_m.size() < 2) throw ConfigError("need at least 2 depth candidates");
  for (std::size_t i = 0; i < candidates_m.size(); ++i) {
    if (!std::isfinite(candidates_m[i]) || candidates_m[i] <= 0) {
      throw ConfigError("depth candidates must be positive");
    }
    if (i > 0 && candidates_m[i] <= candidates_m[i - 1]) {
      throw ConfigError("depth candidates must be strictly increasing");
    }
  }
  if (patch < 1) throw ConfigError("patch must be positive");
  if (stride < 1) throw ConfigError("stride must be positive");
  if (mode != "ih-variant" && mode != "invariant") {
    throw ConfigError("depth mode must be 'ih-variant' or 'invariant', got '" + mode + "'");
  }
  if (!(margin_tau > 0) || margin_tau > 1.0) throw ConfigError("margin_tau must be in (0, 1]");
  if (!(charbonnier_eps > 0)) throw ConfigError("charbonnier_eps must be positive");
}

namespace {

void check_grids(const FocalStack& stack, const std::vector<PsfGrid>& grids,
                 const DfdConfig& cfg) {
  const int n = stack.camera.n_focus();
  if (grids.size() != static_cast<std::size_t>(n)) {
    throw DataError("need one PSF grid per focus setting (" + std::to_string(n) + "), got " +
                    std::to_string(grids.size()));
  }
  const int radius = grids.front().radius;
  for (int i = 0; i < n; ++i) {
    const PsfGrid& g = grids[static_cast<std::size_t>(i)];
    g.validate();
    if (g.focus_index != i) {
      throw DataError("grid " + std::to_string(i) + " carries focus index " +
                      std::to_string(g.focus_index));
    }
    if (g.radius != radius) throw DataError("PSF grids must share one kernel radius");
    for (const double d : cfg.candidates_m) {
      if (d < g.depth_centers.front() - 1e-9 || d > g.depth_centers.back() + 1e-9) {
        throw ConfigError("depth candidate " + std::to_string(d) +
                          " m is outside the range of the grid for focus index " +
                          std::to_string(i));
      }
    }
  }
  if (cfg.patch < 2 * radius + 2) {
    throw ConfigError("patch must exceed the kernel support (need >= " +
                      std::to_string(2 * radius + 2) + ")");
  }
}

PolarPos patch_pos(const FocalStack& stack, const DfdConfig& cfg, int cx, int cy) {
  if (cfg.mode == "invariant") return {};
  const int off = (stack.camera.image_width - stack.images.front().width()) / 2;
  const int off_y = (stack.camera.image_height - stack.images.front().height()) / 2;
  return to_polar(cx + off, cy + off_y, stack.camera.image_width, stack.camera.image_height);
}

ImageF cut_patch(const ImageF& img, int x0, int y0, int p) {
  std::vector<double> v(static_cast<std::size_t>(p) * p);
  for (int y = 0; y < p; ++y) {
    const double* row = img.data().data() + static_cast<std::size_t>(y0 + y) * img.width() + x0;
    std::copy(row, row + p, v.begin() + static_cast<std::size_t>(y) * p);
  }
  return ImageF::from_data(p, p, std::move(v));
}

double charbonnier_diff_mean(const ImageF& a, const ImageF& b, double eps) {
  double sum = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double r = a.data()[i] - b.data()[i];
    sum += std::sqrt(r * r + eps * eps);
  }
  return sum / static_cast<double>(a.data().size());
}

// Per-focus bin kernels materialized once; queries then repeat query_mix's
// arithmetic on the cached values, so results match PsfGrid::query bit for
// bit without re-running softmax per lookup.
struct MaterializedGrid {
  const PsfGrid* grid = nullptr;
  std::vector<std::vector<double>> bins;  // [ih * n_depth + depth]

  explicit MaterializedGrid(const PsfGrid& g) : grid(&g) {
    bins.reserve(static_cast<std::size_t>(g.n_ih()) * g.n_depth());
    for (int i = 0; i < g.n_ih(); ++i) {
      for (int j = 0; j < g.n_depth(); ++j) {
        bins.push_back(softmax(g.bin_params(i, j)));
      }
    }
  }

  const std::vector<double>& bin(int i, int j) const {
    return bins[static_cast<std::size_t>(i) * grid->n_depth() + j];
  }

  PsfKernel query(double ih, double depth_m) const {
    const AxisLoc a = locate_on_axis(grid->ih_centers, ih);
    const AxisLoc b = locate_on_axis(grid->depth_centers, depth_m);
    if (a.lo == a.hi && b.lo == b.hi) {
      return PsfKernel::from_values_normalized(grid->radius, bin(a.lo, b.lo));
    }
    std::vector<double> mix(static_cast<std::size_t>(grid->kernel_len()), 0.0);
    const double wa[2] = {1.0 - a.t, a.t};
    const double wb[2] = {1.0 - b.t, b.t};
    const int ia[2] = {a.lo, a.hi};
    const int ib[2] = {b.lo, b.hi};
    for (int u = 0; u < 2; ++u) {
      for (int v = 0; v < 2; ++v) {
        const double w = wa[u] * wb[v];
        if (w == 0 || (u == 1 && ia[1] == ia[0]) || (v == 1 && ib[1] == ib[0])) continue;
        const std::vector<double>& k = bin(ia[u], ib[v]);
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += w * k[i];
      }
    }
    return PsfKernel::from_values_normalized(grid->radius, std::move(mix));
  }

  PsfKernel kernel_at(const PolarPos& pos, double depth_m) const {
    PsfKernel k = query(pos.ih, depth_m);
    if (!grid->spatially_invariant() && pos.theta != 0) k = rotate_kernel(k, pos.theta);
    return k;
  }
};

}  // namespace

double pair_cost(const FocalStack& stack, const std::vector<PsfGrid>& grids, int i, int j, int cx,
                 int cy, double d_hyp, const DfdConfig& cfg) {
  stack.validate();
  cfg.validate();
  check_grids(stack, grids, cfg);
  const int n = stack.camera.n_focus();
  if (i < 0 || i >= n || j < 0 || j >= n || i == j) {
    throw DomainError("pair_cost: need two distinct focus indices");
  }
  const int p = cfg.patch;
  const int x0 = cx - p / 2;
  const int y0 = cy - p / 2;
  const ImageF& img_i = stack.images[static_cast<std::size_t>(i)];
  if (x0 < 0 || y0 < 0 || x0 + p > img_i.width() || y0 + p > img_i.height()) {
    throw DimensionError("pair_cost: patch does not fit the stack images");
  }
  const PolarPos pos = patch_pos(stack, cfg, cx, cy);
  const MaterializedGrid mg_i(grids[static_cast<std::size_t>(i)]);
  const MaterializedGrid mg_j(grids[static_cast<std::size_t>(j)]);
  const ImageF patch_i = cut_patch(img_i, x0, y0, p);
  const ImageF patch_j = cut_patch(stack.images[static_cast<std::size_t>(j)], x0, y0, p);
  const ImageF cross_i = convolve_valid(patch_i, mg_j.kernel_at(pos, d_hyp));
  const ImageF cross_j = convolve_valid(patch_j, mg_i.kernel_at(pos, d_hyp));
  return charbonnier_diff_mean(cross_i, cross_j, cfg.charbonnier_eps);
}

DepthMap estimate_depth(const FocalStack& stack, const std::vector<PsfGrid>& grids,
                        const DfdConfig& cfg, ThreadPool* pool) {
  stack.validate();
  cfg.validate();
  check_grids(stack, grids, cfg);
  const int n = stack.camera.n_focus();
  const int w = stack.images.front().width();
  const int h = stack.images.front().height();
  const int p = cfg.patch;
  if (p > w || p > h) throw DimensionError("stack images smaller than the matching patch");
  const int px_count = (w - p) / cfg.stride + 1;
  const int py_count = (h - p) / cfg.stride + 1;
  const auto n_candidates = cfg.candidates_m.size();

  std::vector<MaterializedGrid> mats;
  mats.reserve(static_cast<std::size_t>(n));
  for (const PsfGrid& g : grids) mats.emplace_back(g);

  struct PatchResult {
    double depth = 0.0;
    bool valid = false;
  };
  std::vector<PatchResult> results(static_cast<std::size_t>(px_count) * py_count);

  auto patch_job = [&](std::int64_t idx) {
    const int px = static_cast<int>(idx % px_count);
    const int py = static_cast<int>(idx / px_count);
    const int x0 = px * cfg.stride;
    const int y0 = py * cfg.stride;
    const PolarPos pos = patch_pos(stack, cfg, x0 + p / 2, y0 + p / 2);
    std::vector<ImageF> patches;
    patches.reserve(static_cast<std::size_t>(n));
    for (int f = 0; f < n; ++f) {
      patches.push_back(cut_patch(stack.images[static_cast<std::size_t>(f)], x0, y0, p));
    }

    double best_cost = std::numeric_limits<double>::infinity();
    double second_cost = std::numeric_limits<double>::infinity();
    double best_depth = 0.0;
    bool any = false;
    std::vector<PsfKernel> kernels(static_cast<std::size_t>(n));
    for (std::size_t c = 0; c < n_candidates; ++c) {
      const double d = cfg.candidates_m[c];
      for (int f = 0; f < n; ++f) {
        kernels[static_cast<std::size_t>(f)] = mats[static_cast<std::size_t>(f)].kernel_at(pos, d);
      }
      double cost = 0;
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
          const ImageF cross_i =
              convolve_valid(patches[static_cast<std::size_t>(i)], kernels[static_cast<std::size_t>(j)]);
          const ImageF cross_j =
              convolve_valid(patches[static_cast<std::size_t>(j)], kernels[static_cast<std::size_t>(i)]);
          cost += charbonnier_diff_mean(cross_i, cross_j, cfg.charbonnier_eps);
        }
      }
      if (!std::isfinite(cost)) continue;
      any = true;
      // Ascending scan with strict improvement keeps the nearest depth on
      // ties.
      if (cost < best_cost) {
        second_cost = best_cost;
        best_cost = cost;
        best_depth = d;
      } else if (cost < second_cost) {
        second_cost = cost;
      }
    }
    PatchResult r;
    if (any && std::isfinite(second_cost) && second_cost > 0 &&
        best_cost / second_cost <= cfg.margin_tau) {
      r.depth = best_depth;
      r.valid = true;
    }
    results[static_cast<std::size_t>(idx)] = r;
  };
  const auto n_patches = static_cast<std::int64_t>(results.size());
  if (pool) {
    pool->parallel_for(n_patches, patch_job);
  } else {
    for (std::int64_t i = 0; i < n_patches; ++i) patch_job(i);
  }

  // Sequential splat in patch order keeps the reduction deterministic.
  std::vector<double> sum(static_cast<std::size_t>(w) * h, 0.0);
  std::vector<double> weight(sum.size(), 0.0);
  for (std::int64_t idx = 0; idx < n_patches; ++idx) {
    const PatchResult& r = results[static_cast<std::size_t>(idx)];
    if (!r.valid) continue;
    const int x0 = static_cast<int>(idx % px_count) * cfg.stride;
    const int y0 = static_cast<int>(idx / px_count) * cfg.stride;
    for (int y = y0; y < y0 + p; ++y) {
      for (int x = x0; x < x0 + p; ++x) {
        sum[static_cast<std::size_t>(y) * w + x] += r.depth;
        weight[static_cast<std::size_t>(y) * w + x] += 1.0;
      }
    }
  }

  DepthMap map;
  map.width = w;
  map.height = h;
  map.d_min = cfg.candidates_m.front();
  map.d_max = cfg.candidates_m.back();
  map.depths.assign(sum.size(), 0.0);
  map.valid.assign(sum.size(), 0);
  for (std::size_t i = 0; i < sum.size(); ++i) {
    if (weight[i] > 0) {
      map.depths[i] = sum[i] / weight[i];
      map.valid[i] = 1;
    }
  }
  return map;
}

}  // namespace defocus
