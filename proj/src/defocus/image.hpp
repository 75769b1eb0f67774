#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace defocus {

// Grayscale image, row-major, values clamped to [0, 1] at construction and
// immutable afterwards. Double precision in memory; files store float32 (PFM)
// or integer samples (PGM).
class ImageF {
 public:
  ImageF() = default;
  ImageF(int width, int height, double fill = 0.0);
  // Takes ownership of data (size must be width*height); clamps to [0, 1].
  // Non-finite values are rejected.
  static ImageF from_data(int width, int height, std::vector<double> data);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const std::vector<double>& data() const { return data_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// Raw float raster with no range restriction (depth maps, intermediates).
struct RasterF {
  int width = 0;
  int height = 0;
  std::vector<double> data;
};

// 32-bit float PFM ("Pf"), little-endian payload declared by a negative scale,
// rows stored bottom-to-top per the usual PFM convention. Values pass through
// a float32 cast on write; reading back and rewriting is byte-identical.
RasterF read_pfm(const std::filesystem::path& path);
void write_pfm(const RasterF& raster, const std::filesystem::path& path);

// Binary PGM ("P5"), 8-bit for maxval <= 255 and big-endian 16-bit above.
struct RasterU16 {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<std::uint16_t> data;
};
RasterU16 read_pgm(const std::filesystem::path& path);
void write_pgm(const RasterU16& raster, const std::filesystem::path& path);

ImageF read_image_pfm(const std::filesystem::path& path);
void write_image_pfm(const ImageF& image, const std::filesystem::path& path);
ImageF read_image_pgm(const std::filesystem::path& path);
void write_image_pgm8(const ImageF& image, const std::filesystem::path& path);
void write_image_pgm16(const ImageF& image, const std::filesystem::path& path);

// Dispatch by extension: .pfm, .pgm (PGM writes 16-bit).
ImageF read_image(const std::filesystem::path& path);
void write_image(const ImageF& image, const std::filesystem::path& path);

}  // namespace defocus
