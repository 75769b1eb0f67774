#include "defocus/image.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "defocus/errors.hpp"

namespace defocus {

namespace {

void check_dims(int width, int height) {
  if (width <= 0 || height <= 0) {
    throw DimensionError("image dimensions must be positive, got " + std::to_string(width) +
                         "x" + std::to_string(height));
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return in;
}

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      break;
    }
  }
  while ((c = in.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
  return tok;
}

int parse_int(const std::string& tok, const char* what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("bad ") + what + " field: '" + tok + "'");
  }
}

float load_f32_le(const unsigned char* p) {
  std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                    (static_cast<std::uint32_t>(p[2]) << 16) |
                    (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(u);
}

void store_f32_le(float v, unsigned char* p) {
  const std::uint32_t u = std::bit_cast<std::uint32_t>(v);
  p[0] = static_cast<unsigned char>(u & 0xff);
  p[1] = static_cast<unsigned char>((u >> 8) & 0xff);
  p[2] = static_cast<unsigned char>((u >> 16) & 0xff);
  p[3] = static_cast<unsigned char>((u >> 24) & 0xff);
}

}  // namespace

ImageF::ImageF(int width, int height, double fill) {
  check_dims(width, height);
  if (!std::isfinite(fill)) throw ParameterError("image fill value is not finite");
  width_ = width;
  height_ = height;
  data_.assign(static_cast<std::size_t>(width) * height, std::clamp(fill, 0.0, 1.0));
}

ImageF ImageF::from_data(int width, int height, std::vector<double> data) {
  check_dims(width, height);
  if (data.size() != static_cast<std::size_t>(width) * height) {
    throw DimensionError("image data size " + std::to_string(data.size()) + " does not match " +
                         std::to_string(width) + "x" + std::to_string(height));
  }
  for (double& v : data) {
    if (!std::isfinite(v)) throw ParameterError("image contains a non-finite value");
    v = std::clamp(v, 0.0, 1.0);
  }
  ImageF img;
  img.width_ = width;
  img.height_ = height;
  img.data_ = std::move(data);
  return img;
}

RasterF read_pfm(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::string magic = next_token(in);
  if (magic != "Pf") throw FormatError("not a grayscale PFM (magic '" + magic + "'): " + path.string());
  const int w = parse_int(next_token(in), "width");
  const int h = parse_int(next_token(in), "height");
  check_dims(w, h);
  const std::string scale_tok = next_token(in);
  double scale = 0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw FormatError("bad PFM scale field: '" + scale_tok + "'");
  }
  if (scale == 0) throw FormatError("PFM scale must be nonzero");
  const bool little = scale < 0;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<unsigned char> buf(n * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    throw FormatError("truncated PFM payload: " + path.string());
  }
  RasterF r;
  r.width = w;
  r.height = h;
  r.data.resize(n);
  // Payload rows run bottom-to-top.
  for (int y = 0; y < h; ++y) {
    const unsigned char* row = buf.data() + static_cast<std::size_t>(h - 1 - y) * w * 4;
    for (int x = 0; x < w; ++x) {
      unsigned char b[4];
      std::memcpy(b, row + static_cast<std::size_t>(x) * 4, 4);
      if (!little) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
      r.data[static_cast<std::size_t>(y) * w + x] = load_f32_le(b);
    }
  }
  return r;
}

void write_pfm(const RasterF& raster, const std::filesystem::path& path) {
  check_dims(raster.width, raster.height);
  if (raster.data.size() != static_cast<std::size_t>(raster.width) * raster.height) {
    throw DimensionError("raster data size does not match dimensions");
  }
  auto out = open_out(path);
  out << "Pf\n" << raster.width << " " << raster.height << "\n-1\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(raster.width) * 4);
  for (int y = raster.height - 1; y >= 0; --y) {
    for (int x = 0; x < raster.width; ++x) {
      const float v = static_cast<float>(raster.data[static_cast<std::size_t>(y) * raster.width + x]);
      store_f32_le(v, row.data() + static_cast<std::size_t>(x) * 4);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

RasterU16 read_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::string magic = next_token(in);
  if (magic != "P5") throw FormatError("not a binary PGM (magic '" + magic + "'): " + path.string());
  const int w = parse_int(next_token(in), "width");
  const int h = parse_int(next_token(in), "height");
  check_dims(w, h);
  const int maxval = parse_int(next_token(in), "maxval");
  if (maxval <= 0 || maxval > 65535) throw FormatError("PGM maxval out of range");
  const std::size_t n = static_cast<std::size_t>(w) * h;
  const int bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> buf(n * bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    throw FormatError("truncated PGM payload: " + path.string());
  }
  RasterU16 r;
  r.width = w;
  r.height = h;
  r.maxval = maxval;
  r.data.resize(n);
  if (bytes == 1) {
    for (std::size_t i = 0; i < n; ++i) r.data[i] = buf[i];
  } else {
    // 16-bit samples are big-endian per netpbm.
    for (std::size_t i = 0; i < n; ++i) {
      r.data[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    }
  }
  return r;
}

void write_pgm(const RasterU16& raster, const std::filesystem::path& path) {
  check_dims(raster.width, raster.height);
  if (raster.data.size() != static_cast<std::size_t>(raster.width) * raster.height) {
    throw DimensionError("raster data size does not match dimensions");
  }
  if (raster.maxval <= 0 || raster.maxval > 65535) throw DomainError("PGM maxval out of range");
  for (const std::uint16_t v : raster.data) {
    if (v > raster.maxval) throw DomainError("PGM sample exceeds maxval");
  }
  auto out = open_out(path);
  out << "P5\n" << raster.width << " " << raster.height << "\n" << raster.maxval << "\n";
  const std::size_t n = raster.data.size();
  if (raster.maxval <= 255) {
    std::vector<unsigned char> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<unsigned char>(raster.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  } else {
    std::vector<unsigned char> buf(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
      buf[2 * i] = static_cast<unsigned char>(raster.data[i] >> 8);
      buf[2 * i + 1] = static_cast<unsigned char>(raster.data[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

ImageF read_image_pfm(const std::filesystem::path& path) {
  RasterF r = read_pfm(path);
  return ImageF::from_data(r.width, r.height, std::move(r.data));
}

void write_image_pfm(const ImageF& image, const std::filesystem::path& path) {
  if (image.empty()) throw StateError("cannot write empty image");
  write_pfm(RasterF{image.width(), image.height(), image.data()}, path);
}

ImageF read_image_pgm(const std::filesystem::path& path) {
  RasterU16 r = read_pgm(path);
  std::vector<double> data(r.data.size());
  const double inv = 1.0 / r.maxval;
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = r.data[i] * inv;
  return ImageF::from_data(r.width, r.height, std::move(data));
}

namespace {
void write_image_pgm_impl(const ImageF& image, const std::filesystem::path& path, int maxval) {
  if (image.empty()) throw StateError("cannot write empty image");
  RasterU16 r;
  r.width = image.width();
  r.height = image.height();
  r.maxval = maxval;
  r.data.resize(image.data().size());
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    r.data[i] = static_cast<std::uint16_t>(std::lround(image.data()[i] * maxval));
  }
  write_pgm(r, path);
}
}  // namespace

void write_image_pgm8(const ImageF& image, const std::filesystem::path& path) {
  write_image_pgm_impl(image, path, 255);
}

void write_image_pgm16(const ImageF& image, const std::filesystem::path& path) {
  write_image_pgm_impl(image, path, 65535);
}

ImageF read_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pfm") return read_image_pfm(path);
  if (ext == ".pgm") return read_image_pgm(path);
  throw FormatError("unsupported image extension '" + ext + "': " + path.string());
}

void write_image(const ImageF& image, const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pfm") return write_image_pfm(image, path);
  if (ext == ".pgm") return write_image_pgm16(image, path);
  throw FormatError("unsupported image extension '" + ext + "': " + path.string());
}

}  // namespace defocus
