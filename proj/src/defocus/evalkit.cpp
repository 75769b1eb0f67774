#include "defocus/evalkit.hpp"

#include <cmath>
#include <numbers>

#include "defocus/errors.hpp"
#include "defocus/geometry.hpp"

namespace defocus {

double psf_mae(const PsfKernel& est, const PsfKernel& gt) {
  if (est.radius() != gt.radius()) throw DimensionError("psf_mae: kernel radii differ");
  double se = 0, sg = 0;
  for (const double v : est.values()) se += v;
  for (const double v : gt.values()) sg += v;
  double sum = 0;
  for (std::size_t i = 0; i < est.values().size(); ++i) {
    sum += std::abs(est.values()[i] / se - gt.values()[i] / sg);
  }
  return sum / static_cast<double>(est.values().size());
}

KernelAt kernel_at_from_grid(const PsfGrid& grid) {
  return [&grid](double ih, double theta, double depth_m) {
    PsfKernel k = grid.query(ih, depth_m);
    if (!grid.spatially_invariant() && theta != 0) k = rotate_kernel(k, theta);
    return k;
  };
}

KernelAt kernel_at_from_xy_grid(const XyPsfGrid& grid, int image_width, int image_height) {
  const double cx = (image_width - 1) / 2.0;
  const double cy = (image_height - 1) / 2.0;
  const double rc = corner_radius(image_width, image_height);
  return [&grid, cx, cy, rc](double ih, double theta, double depth_m) {
    const double x = cx + ih * rc * std::cos(theta);
    const double y = cy - ih * rc * std::sin(theta);
    return grid.query(x, y, depth_m);
  };
}

KernelAt kernel_at_from_baseline(const GaussianBaseline& baseline) {
  return [&baseline](double, double, double depth_m) { return baseline.kernel_at(depth_m); };
}

KernelAt kernel_at_from_oracle(const CameraConfig& camera, const AberrationModel& aberration,
                               int focus_index, int radius) {
  return [&camera, &aberration, focus_index, radius](double ih, double theta, double depth_m) {
    return oracle_psf(camera, aberration, ih, theta, depth_m, focus_index, radius);
  };
}

void HoldoutSpec::validate() const {
  if (ih_list.empty() || theta_list.empty() || depth_list.empty()) {
    throw ConfigError("holdout needs at least one ih, theta and depth sample");
  }
  for (const double v : ih_list) {
    if (!std::isfinite(v) || v < 0 || v > 1) throw ConfigError("holdout ih values must be in [0, 1]");
  }
  for (const double v : theta_list) {
    if (!std::isfinite(v)) throw ConfigError("holdout theta values must be finite");
  }
  for (const double v : depth_list) {
    if (!std::isfinite(v) || v <= 0) throw ConfigError("holdout depths must be positive");
  }
}

EvalReport eval_psf_grid(const KernelAt& estimated, const KernelAt& oracle,
                         const HoldoutSpec& holdout, int focus_index) {
  holdout.validate();
  if (!estimated || !oracle) throw StateError("eval_psf_grid: empty kernel provider");
  EvalReport report;
  report.focus_index = focus_index;
  double sum = 0;
  for (const double d : holdout.depth_list) {
    for (const double ih : holdout.ih_list) {
      for (const double theta : holdout.theta_list) {
        EvalRecord rec;
        rec.ih = ih;
        rec.theta = theta;
        rec.depth_m = d;
        rec.mae = psf_mae(estimated(ih, theta, d), oracle(ih, theta, d));
        sum += rec.mae;
        report.records.push_back(rec);
      }
    }
  }
  report.aggregate_mae = sum / static_cast<double>(report.records.size());
  return report;
}

void check_holdout_disjoint(const std::vector<double>& training_depths,
                            const std::vector<double>& holdout_depths) {
  for (const double h : holdout_depths) {
    for (const double t : training_depths) {
      if (std::abs(h - t) <= 1e-9) {
        throw ProtocolError("holdout depth " + std::to_string(h) +
                            " m appears in the training data; evaluation must use unseen depths");
      }
    }
  }
}

DepthMaeResult depth_mae(const DepthMap& est, const DepthMap& gt) {
  est.validate();
  gt.validate();
  if (est.width != gt.width || est.height != gt.height) {
    throw DimensionError("depth_mae: map sizes differ");
  }
  DepthMaeResult r;
  double sum = 0;
  std::size_t n_est = 0;
  for (std::size_t i = 0; i < est.depths.size(); ++i) {
    if (est.valid[i]) ++n_est;
    if (est.valid[i] && gt.valid[i]) {
      sum += std::abs(est.depths[i] - gt.depths[i]);
      ++r.n_joint;
    }
  }
  if (r.n_joint == 0) throw DataError("depth_mae: no pixel is valid in both maps");
  r.mae_m = sum / static_cast<double>(r.n_joint);
  r.valid_fraction_est = static_cast<double>(n_est) / static_cast<double>(est.depths.size());
  return r;
}

std::vector<CentroidDriftRow> centroid_drift(const std::vector<PsfGrid>& grids,
                                             const std::vector<double>& ih_list, double depth_m) {
  if (grids.empty() || ih_list.empty()) {
    throw ConfigError("centroid_drift needs at least one grid and one ih value");
  }
  std::vector<CentroidDriftRow> rows;
  for (const PsfGrid& g : grids) {
    for (const double ih : ih_list) {
      const PsfKernel k = g.query(ih, depth_m);
      rows.push_back({g.focus_index, ih, k.centroid()[0]});
    }
  }
  return rows;
}

ImageF render_psf_mosaic(const PsfGrid& grid, const std::vector<double>& ih_list,
                         const std::vector<double>& depth_list, double theta) {
  if (ih_list.empty() || depth_list.empty()) {
    throw ConfigError("mosaic needs at least one ih and one depth");
  }
  const int side = 2 * grid.radius + 1;
  const int tile = side + 1;
  const int w = static_cast<int>(ih_list.size()) * tile - 1;
  const int h = static_cast<int>(depth_list.size()) * tile - 1;
  std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
  for (std::size_t r = 0; r < depth_list.size(); ++r) {
    for (std::size_t c = 0; c < ih_list.size(); ++c) {
      PsfKernel k = grid.query(ih_list[c], depth_list[r]);
      if (!grid.spatially_invariant() && theta != 0) k = rotate_kernel(k, theta);
      double mx = 0;
      for (const double v : k.values()) mx = std::max(mx, v);
      const double scale = mx > 0 ? 1.0 / mx : 1.0;
      const int x0 = static_cast<int>(c) * tile;
      const int y0 = static_cast<int>(r) * tile;
      for (int j = 0; j < side; ++j) {
        for (int i = 0; i < side; ++i) {
          out[static_cast<std::size_t>(y0 + j) * w + (x0 + i)] =
              k.values()[static_cast<std::size_t>(j) * side + i] * scale;
        }
      }
    }
  }
  return ImageF::from_data(w, h, std::move(out));
}

}  // namespace defocus
