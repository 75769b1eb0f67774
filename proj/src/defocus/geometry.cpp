#include "defocus/geometry.hpp"

#include <cmath>
#include <numbers>

#include "defocus/errors.hpp"

namespace defocus {

double corner_radius(int width, int height) {
  if (width <= 0 || height <= 0) throw DimensionError("corner_radius: dimensions must be positive");
  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  return std::hypot(cx, cy);
}

std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 1) throw DomainError("linspace: need at least one point");
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
    throw DomainError("linspace: bad range");
  }
  if (n == 1) return {0.5 * (lo + hi)};
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    v[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  }
  return v;
}

PolarPos to_polar(double x, double y, int width, int height) {
  if (width <= 0 || height <= 0) throw DimensionError("to_polar: dimensions must be positive");
  if (!std::isfinite(x) || !std::isfinite(y)) throw DomainError("to_polar: non-finite position");
  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  const double dx = x - cx;
  const double dy_up = cy - y;  // flip to a y-up frame
  const double r = std::hypot(dx, dy_up);
  const double rc = corner_radius(width, height);
  PolarPos p;
  p.ih = rc > 0 ? r / rc : 0.0;
  if (r > 0) {
    double t = std::atan2(dy_up, dx);
    if (t < 0) t += 2.0 * std::numbers::pi;
    if (t >= 2.0 * std::numbers::pi) t = 0.0;
    p.theta = t;
  }
  return p;
}

}  // namespace defocus
