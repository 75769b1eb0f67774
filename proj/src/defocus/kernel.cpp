#include "defocus/kernel.hpp"

#include <cmath>
#include <string>

#include "defocus/errors.hpp"

namespace defocus {

namespace {

void check_radius(int radius) {
  if (radius < 1) throw DimensionError("kernel radius must be >= 1, got " + std::to_string(radius));
}

}  // namespace

PsfKernel PsfKernel::delta(int radius) {
  check_radius(radius);
  PsfKernel k;
  k.radius_ = radius;
  const int side = 2 * radius + 1;
  k.values_.assign(static_cast<std::size_t>(side) * side, 0.0);
  k.values_[static_cast<std::size_t>(radius) * side + radius] = 1.0;
  return k;
}

PsfKernel PsfKernel::uniform(int radius) {
  check_radius(radius);
  PsfKernel k;
  k.radius_ = radius;
  const int side = 2 * radius + 1;
  const std::size_t n = static_cast<std::size_t>(side) * side;
  k.values_.assign(n, 1.0 / static_cast<double>(n));
  return k;
}

PsfKernel PsfKernel::from_values(int radius, std::vector<double> values) {
  check_radius(radius);
  const int side = 2 * radius + 1;
  if (values.size() != static_cast<std::size_t>(side) * side) {
    throw DimensionError("kernel value count " + std::to_string(values.size()) +
                         " does not match side " + std::to_string(side));
  }
  double sum = 0;
  for (const double v : values) {
    if (!std::isfinite(v)) throw ParameterError("kernel contains a non-finite value");
    if (v < 0) throw ParameterError("kernel contains a negative value");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ParameterError("kernel mass " + std::to_string(sum) + " is not 1 within 1e-9");
  }
  PsfKernel k;
  k.radius_ = radius;
  k.values_ = std::move(values);
  return k;
}

PsfKernel PsfKernel::from_values_normalized(int radius, std::vector<double> values) {
  check_radius(radius);
  const int side = 2 * radius + 1;
  if (values.size() != static_cast<std::size_t>(side) * side) {
    throw DimensionError("kernel value count does not match side " + std::to_string(side));
  }
  double sum = 0;
  for (const double v : values) {
    if (!std::isfinite(v)) throw ParameterError("kernel contains a non-finite value");
    if (v < 0) throw ParameterError("kernel contains a negative value");
    sum += v;
  }
  if (!(sum > 0) || !std::isfinite(sum)) throw ParameterError("kernel mass must be positive");
  for (double& v : values) v /= sum;
  PsfKernel k;
  k.radius_ = radius;
  k.values_ = std::move(values);
  return k;
}

double PsfKernel::sum() const {
  double s = 0;
  for (const double v : values_) s += v;
  return s;
}

std::array<double, 2> PsfKernel::centroid() const {
  if (empty()) throw StateError("centroid of empty kernel");
  const int s = side();
  double m = 0, mx = 0, my_up = 0;
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < s; ++c) {
      const double v = values_[static_cast<std::size_t>(r) * s + c];
      m += v;
      mx += v * (c - radius_);
      my_up += v * (radius_ - r);
    }
  }
  if (!(m > 0)) throw ParameterError("centroid of massless kernel");
  return {mx / m, my_up / m};
}

double convolve_at(const std::vector<double>& image, int image_width,
                   const std::vector<double>& kernel, int side, int x0, int y0) {
  double acc = 0;
  for (int jj = 0; jj < side; ++jj) {
    const double* img_row = image.data() + static_cast<std::size_t>(y0 + jj) * image_width + x0;
    // True convolution: kernel indices run opposite to the image window.
    const double* ker_row = kernel.data() + static_cast<std::size_t>(side - 1 - jj) * side;
    for (int ii = 0; ii < side; ++ii) {
      acc += ker_row[side - 1 - ii] * img_row[ii];
    }
  }
  return acc;
}

ImageF convolve_valid(const ImageF& image, const PsfKernel& kernel) {
  if (image.empty()) throw StateError("convolve_valid: empty image");
  if (kernel.empty()) throw StateError("convolve_valid: empty kernel");
  const int k = kernel.radius();
  const int ow = image.width() - 2 * k;
  const int oh = image.height() - 2 * k;
  if (ow <= 0 || oh <= 0) {
    throw DimensionError("convolve_valid: image " + std::to_string(image.width()) + "x" +
                         std::to_string(image.height()) + " too small for kernel radius " +
                         std::to_string(k));
  }
  const int side = kernel.side();
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      out[static_cast<std::size_t>(y) * ow + x] =
          convolve_at(image.data(), image.width(), kernel.values(), side, x, y);
    }
  }
  return ImageF::from_data(ow, oh, std::move(out));
}

}  // namespace defocus
