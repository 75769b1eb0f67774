#include "defocus/psf_grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "defocus/errors.hpp"

namespace defocus {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax: empty input");
  double mx = logits[0];
  for (const double z : logits) {
    if (!std::isfinite(z)) throw ParameterError("softmax: non-finite logit");
    mx = std::max(mx, z);
  }
  std::vector<double> out(logits.size());
  double sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> softmax_backprop(std::span<const double> probs, std::span<const double> grad) {
  if (probs.size() != grad.size()) throw DimensionError("softmax_backprop: size mismatch");
  double dot = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad[i];
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (grad[i] - dot);
  return out;
}

PsfKernel materialize_kernel(std::span<const double> logits, int radius) {
  const int side = 2 * radius + 1;
  if (logits.size() != static_cast<std::size_t>(side) * side) {
    throw DimensionError("materialize_kernel: logit count does not match radius " +
                         std::to_string(radius));
  }
  return PsfKernel::from_values_normalized(radius, softmax(logits));
}

std::vector<double> rotate_values_raw(std::span<const double> values, int radius, double theta) {
  const int side = 2 * radius + 1;
  if (values.size() != static_cast<std::size_t>(side) * side) {
    throw DimensionError("rotate_values_raw: value count does not match radius");
  }
  if (!std::isfinite(theta)) throw DomainError("rotate_values_raw: non-finite angle");
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  std::vector<double> out(values.size(), 0.0);
  for (int j = 0; j < side; ++j) {
    const double yu = static_cast<double>(radius - j);  // y-up offset of this row
    for (int i = 0; i < side; ++i) {
      const double xr = static_cast<double>(i - radius);
      // Inverse map: rotate the output position by -theta to find the source.
      const double sx = xr * c + yu * s;
      const double syu = -xr * s + yu * c;
      const double si = sx + radius;
      const double sj = radius - syu;
      const double fi = std::floor(si);
      const double fj = std::floor(sj);
      const int i0 = static_cast<int>(fi);
      const int j0 = static_cast<int>(fj);
      const double tx = si - fi;
      const double ty = sj - fj;
      double acc = 0;
      for (int dj = 0; dj < 2; ++dj) {
        const int jj = j0 + dj;
        if (jj < 0 || jj >= side) continue;
        const double wy = dj ? ty : 1.0 - ty;
        for (int di = 0; di < 2; ++di) {
          const int ii = i0 + di;
          if (ii < 0 || ii >= side) continue;
          const double wx = di ? tx : 1.0 - tx;
          acc += wy * wx * values[static_cast<std::size_t>(jj) * side + ii];
        }
      }
      out[static_cast<std::size_t>(j) * side + i] = acc;
    }
  }
  return out;
}

PsfKernel rotate_kernel(const PsfKernel& kernel, double theta) {
  if (kernel.empty()) throw StateError("rotate_kernel: empty kernel");
  std::vector<double> raw = rotate_values_raw(kernel.values(), kernel.radius(), theta);
  return PsfKernel::from_values_normalized(kernel.radius(), std::move(raw));
}

std::vector<double> rotation_backprop(std::span<const double> grad, int radius, double theta) {
  const int side = 2 * radius + 1;
  if (grad.size() != static_cast<std::size_t>(side) * side) {
    throw DimensionError("rotation_backprop: gradient count does not match radius");
  }
  if (!std::isfinite(theta)) throw DomainError("rotation_backprop: non-finite angle");
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  std::vector<double> out(grad.size(), 0.0);
  // Same taps and weights as the forward resample, scattered instead of
  // gathered; that is exactly the transpose of the linear map.
  for (int j = 0; j < side; ++j) {
    const double yu = static_cast<double>(radius - j);
    for (int i = 0; i < side; ++i) {
      const double xr = static_cast<double>(i - radius);
      const double sx = xr * c + yu * s;
      const double syu = -xr * s + yu * c;
      const double si = sx + radius;
      const double sj = radius - syu;
      const double fi = std::floor(si);
      const double fj = std::floor(sj);
      const int i0 = static_cast<int>(fi);
      const int j0 = static_cast<int>(fj);
      const double tx = si - fi;
      const double ty = sj - fj;
      const double g = grad[static_cast<std::size_t>(j) * side + i];
      for (int dj = 0; dj < 2; ++dj) {
        const int jj = j0 + dj;
        if (jj < 0 || jj >= side) continue;
        const double wy = dj ? ty : 1.0 - ty;
        for (int di = 0; di < 2; ++di) {
          const int ii = i0 + di;
          if (ii < 0 || ii >= side) continue;
          const double wx = di ? tx : 1.0 - tx;
          out[static_cast<std::size_t>(jj) * side + ii] += wy * wx * g;
        }
      }
    }
  }
  return out;
}

std::vector<double> renorm_backprop(std::span<const double> normalized, double sum,
                                    std::span<const double> grad) {
  if (normalized.size() != grad.size()) throw DimensionError("renorm_backprop: size mismatch");
  if (!(sum > 0)) throw ParameterError("renorm_backprop: nonpositive mass");
  double dot = 0;
  for (std::size_t i = 0; i < normalized.size(); ++i) dot += normalized[i] * grad[i];
  std::vector<double> out(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) out[i] = (grad[i] - dot) / sum;
  return out;
}

void PsfGrid::validate() const {
  if (radius < 1 || radius > 64) throw ParameterError("grid radius out of range");
  if (n_focus < 1) throw ParameterError("grid n_focus must be >= 1");
  if (focus_index < 0 || focus_index >= n_focus) {
    throw ParameterError("grid focus_index out of range");
  }
  if (ih_centers.empty() || depth_centers.empty()) {
    throw ParameterError("grid must have at least one bin per axis");
  }
  auto check_axis = [](const std::vector<double>& c, const char* name) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (!std::isfinite(c[i])) throw ParameterError(std::string(name) + " center not finite");
      if (i > 0 && !(c[i] > c[i - 1])) {
        throw ParameterError(std::string(name) + " centers must be strictly increasing");
      }
    }
  };
  check_axis(ih_centers, "ih");
  check_axis(depth_centers, "depth");
  const std::size_t expect = static_cast<std::size_t>(n_ih()) * n_depth() * kernel_len();
  if (params.size() != expect) throw DimensionError("grid parameter count does not match bins");
  for (const double p : params) {
    if (!std::isfinite(p)) throw ParameterError("grid parameter not finite");
  }
}

std::span<const double> PsfGrid::bin_params(int i_ih, int i_depth) const {
  const std::size_t len = static_cast<std::size_t>(kernel_len());
  const std::size_t off = (static_cast<std::size_t>(i_ih) * n_depth() + i_depth) * len;
  return {params.data() + off, len};
}

std::span<double> PsfGrid::bin_params_mut(int i_ih, int i_depth) {
  const std::size_t len = static_cast<std::size_t>(kernel_len());
  const std::size_t off = (static_cast<std::size_t>(i_ih) * n_depth() + i_depth) * len;
  return {params.data() + off, len};
}

PsfKernel PsfGrid::materialize_bin(int i_ih, int i_depth) const {
  if (empty()) throw StateError("materialize_bin on empty grid");
  if (i_ih < 0 || i_ih >= n_ih() || i_depth < 0 || i_depth >= n_depth()) {
    throw DimensionError("grid bin index out of range");
  }
  return materialize_kernel(bin_params(i_ih, i_depth), radius);
}

AxisLoc locate_on_axis(const std::vector<double>& centers, double q) {
  if (centers.empty()) throw DimensionError("locate_on_axis: empty axis");
  if (!std::isfinite(q)) throw DomainError("locate_on_axis: non-finite query");
  AxisLoc loc;
  const int n = static_cast<int>(centers.size());
  if (q <= centers.front()) return loc;  // clamp low
  if (q >= centers.back()) {
    loc.lo = loc.hi = n - 1;
    return loc;
  }
  int i = static_cast<int>(std::upper_bound(centers.begin(), centers.end(), q) - centers.begin()) - 1;
  i = std::clamp(i, 0, n - 2);
  const double t = (q - centers[i]) / (centers[i + 1] - centers[i]);
  if (t <= 0) {
    loc.lo = loc.hi = i;
  } else if (t >= 1) {
    loc.lo = loc.hi = i + 1;
  } else {
    loc.lo = i;
    loc.hi = i + 1;
    loc.t = t;
  }
  return loc;
}

PsfKernel PsfGrid::query(double ih, double depth_m) const {
  return query_mix(*this, ih, depth_m).kernel;
}

GridBinMix query_mix(const PsfGrid& grid, double ih, double depth_m) {
  if (grid.empty()) throw StateError("query on empty grid");
  const AxisLoc a = locate_on_axis(grid.ih_centers, ih);
  const AxisLoc b = locate_on_axis(grid.depth_centers, depth_m);
  GridBinMix out;
  const int len = grid.kernel_len();
  // Exact bin hit: the materialized bin untouched, so bin-center queries are
  // bit-identical to materialize_bin.
  if (a.lo == a.hi && b.lo == b.hi) {
    GridBinMix::Part part;
    part.i_ih = a.lo;
    part.i_depth = b.lo;
    part.w = 1.0;
    part.probs = softmax(grid.bin_params(a.lo, b.lo));
    double s = 0;
    for (const double v : part.probs) s += v;
    out.sum = s;
    out.kernel = PsfKernel::from_values_normalized(grid.radius, part.probs);
    out.parts.push_back(std::move(part));
    return out;
  }
  std::vector<double> mix(static_cast<std::size_t>(len), 0.0);
  const double wa[2] = {1.0 - a.t, a.t};
  const double wb[2] = {1.0 - b.t, b.t};
  const int ia[2] = {a.lo, a.hi};
  const int ib[2] = {b.lo, b.hi};
  for (int u = 0; u < 2; ++u) {
    for (int v = 0; v < 2; ++v) {
      const double w = wa[u] * wb[v];
      if (w == 0 || (u == 1 && ia[1] == ia[0]) || (v == 1 && ib[1] == ib[0])) continue;
      GridBinMix::Part part;
      part.i_ih = ia[u];
      part.i_depth = ib[v];
      part.w = w;
      part.probs = softmax(grid.bin_params(ia[u], ib[v]));
      for (int i = 0; i < len; ++i) mix[static_cast<std::size_t>(i)] += w * part.probs[i];
      out.parts.push_back(std::move(part));
    }
  }
  double s = 0;
  for (const double v : mix) s += v;
  out.sum = s;
  out.kernel = PsfKernel::from_values_normalized(grid.radius, std::move(mix));
  return out;
}

PsfGrid make_uniform_grid(int focus_index, int n_focus, int radius,
                          std::vector<double> ih_centers, std::vector<double> depth_centers) {
  PsfGrid g;
  g.focus_index = focus_index;
  g.n_focus = n_focus;
  g.radius = radius;
  g.ih_centers = std::move(ih_centers);
  g.depth_centers = std::move(depth_centers);
  g.params.assign(static_cast<std::size_t>(g.n_ih()) * g.n_depth() * g.kernel_len(), 0.0);
  g.validate();
  return g;
}

void quantize_params_f32(PsfGrid& grid) {
  for (double& p : grid.params) p = static_cast<double>(static_cast<float>(p));
}

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
  const std::uint32_t u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const unsigned char* p, std::size_t n, std::string name)
      : p_(p), n_(n), name_(std::move(name)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  float f32() {
    std::uint32_t v = u32();
    return std::bit_cast<float>(v);
  }

  bool exhausted() const { return pos_ == n_; }

 private:
  void need(std::size_t k) const {
    if (pos_ + k > n_) throw FormatError("truncated grid file: " + name_);
  }
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string name_;
};

constexpr char kGridMagic[5] = {'P', 'S', 'F', 'G', '1'};

}  // namespace

void save_psf_grid(const PsfGrid& grid, const std::filesystem::path& path) {
  grid.validate();
  std::string buf;
  buf.append(kGridMagic, 5);
  put_u32(buf, static_cast<std::uint32_t>(grid.focus_index));
  put_u32(buf, static_cast<std::uint32_t>(grid.n_focus));
  put_u32(buf, static_cast<std::uint32_t>(grid.radius));
  put_u32(buf, static_cast<std::uint32_t>(grid.n_ih()));
  put_u32(buf, static_cast<std::uint32_t>(grid.n_depth()));
  for (const double c : grid.ih_centers) put_f64(buf, c);
  for (const double c : grid.depth_centers) put_f64(buf, c);
  for (const double p : grid.params) put_f32(buf, static_cast<float>(p));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

PsfGrid load_psf_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kGridMagic, 5) != 0) {
    throw FormatError("not a PSF grid file (bad magic): " + path.string());
  }
  Reader r(reinterpret_cast<const unsigned char*>(bytes.data()) + 5, bytes.size() - 5,
           path.string());
  PsfGrid g;
  g.focus_index = static_cast<int>(r.u32());
  g.n_focus = static_cast<int>(r.u32());
  g.radius = static_cast<int>(r.u32());
  const std::uint32_t n_ih = r.u32();
  const std::uint32_t n_depth = r.u32();
  if (g.radius < 1 || g.radius > 64 || n_ih == 0 || n_ih > 4096 || n_depth == 0 ||
      n_depth > 4096 || g.n_focus < 1 || g.focus_index < 0 || g.focus_index >= g.n_focus) {
    throw FormatError("grid header out of range: " + path.string());
  }
  g.ih_centers.resize(n_ih);
  for (auto& c : g.ih_centers) c = r.f64();
  g.depth_centers.resize(n_depth);
  for (auto& c : g.depth_centers) c = r.f64();
  const std::size_t n_params = static_cast<std::size_t>(n_ih) * n_depth * g.kernel_len();
  g.params.resize(n_params);
  for (auto& p : g.params) p = static_cast<double>(r.f32());
  if (!r.exhausted()) throw FormatError("trailing bytes in grid file: " + path.string());
  try {
    g.validate();
  } catch (const Error& e) {
    throw FormatError("invalid grid contents in " + path.string() + ": " + e.what());
  }
  return g;
}

}  // namespace defocus
