#pragma once

#include <array>
#include <vector>

#include "defocus/image.hpp"

namespace defocus {

// Square PSF kernel of side 2*radius+1, row-major, nonnegative, unit mass.
// Stored at the canonical orientation (radial direction along +x) unless a
// rotation has been applied.
class PsfKernel {
 public:
  PsfKernel() = default;

  static PsfKernel delta(int radius);
  static PsfKernel uniform(int radius);
  // Validates: nonnegative, finite, |sum - 1| <= 1e-9.
  static PsfKernel from_values(int radius, std::vector<double> values);
  // Rescales to unit sum first; rejects nonpositive or non-finite mass.
  static PsfKernel from_values_normalized(int radius, std::vector<double> values);

  int radius() const { return radius_; }
  int side() const { return 2 * radius_ + 1; }
  bool empty() const { return values_.empty(); }
  double at(int row, int col) const {
    return values_[static_cast<std::size_t>(row) * side() + col];
  }
  const std::vector<double>& values() const { return values_; }
  double sum() const;

  // Mass centroid relative to the center, as (dx, dy_up) in pixels. The y
  // component is positive upward to match the polar frame.
  std::array<double, 2> centroid() const;

 private:
  int radius_ = 0;
  std::vector<double> values_;
};

// True convolution (kernel flipped), valid region only: output is
// (w - 2K) x (h - 2K). Output pixel (x, y) sits over input pixel (x+K, y+K).
ImageF convolve_valid(const ImageF& image, const PsfKernel& kernel);

// Single output sample of the valid convolution with the kernel's top-left
// placed at (x0, y0) in the input; shared by convolve_valid and the
// spatially-variant renderer so uniform-kernel renders are bit-identical.
double convolve_at(const std::vector<double>& image, int image_width,
                   const std::vector<double>& kernel, int side, int x0, int y0);

}  // namespace defocus
