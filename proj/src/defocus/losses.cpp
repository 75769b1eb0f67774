#include "defocus/losses.hpp"

#include <cmath>
#include <string>

#include "defocus/errors.hpp"
#include "defocus/psf_grid.hpp"

namespace defocus {

namespace {

void check_pair_shape(const ImageF& blurred, const ImageF& sharp, int radius) {
  if (blurred.empty() || sharp.empty()) throw StateError("loss inputs must be non-empty");
  if (sharp.width() != blurred.width() + 2 * radius ||
      sharp.height() != blurred.height() + 2 * radius) {
    throw DimensionError("sharp patch must exceed blurred by exactly 2*radius; got sharp " +
                         std::to_string(sharp.width()) + "x" + std::to_string(sharp.height()) +
                         ", blurred " + std::to_string(blurred.width()) + "x" +
                         std::to_string(blurred.height()) + ", radius " + std::to_string(radius));
  }
}

}  // namespace

LossGrad recon_loss(const ImageF& blurred, const ImageF& sharp, const PsfKernel& psf, double theta,
                    double eps) {
  if (psf.empty()) throw StateError("recon_loss: empty kernel");
  if (!(eps > 0)) throw DomainError("recon_loss: eps must be positive");
  check_pair_shape(blurred, sharp, psf.radius());
  const int side = psf.side();
  const int bw = blurred.width();
  const int bh = blurred.height();
  const std::size_t m = static_cast<std::size_t>(bw) * bh;

  std::vector<double> raw = rotate_values_raw(psf.values(), psf.radius(), theta);
  double rot_sum = 0;
  for (const double v : raw) rot_sum += v;
  if (!(rot_sum > 0)) throw ParameterError("recon_loss: rotated kernel lost all mass");
  std::vector<double> k_rot(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) k_rot[i] = raw[i] / rot_sum;

  // Forward pass and the per-pixel derivative dL/d(conv output).
  double value = 0;
  std::vector<double> w(m);
  for (int y = 0; y < bh; ++y) {
    for (int x = 0; x < bw; ++x) {
      const double out = convolve_at(sharp.data(), sharp.width(), k_rot, side, x, y);
      const double r = blurred.at(x, y) - out;
      const double phi = std::sqrt(r * r + eps * eps);
      value += phi;
      w[static_cast<std::size_t>(y) * bw + x] = -(r / phi) / static_cast<double>(m);
    }
  }
  value /= static_cast<double>(m);

  // Gradient w.r.t. the rotated kernel is a cross-correlation of w with the
  // sharp patch; kernel index (a, b) maps to lag (side-1-a, side-1-b).
  std::vector<double> g_rot(k_rot.size());
  for (int p = 0; p < side; ++p) {
    for (int q = 0; q < side; ++q) {
      double acc = 0;
      for (int y = 0; y < bh; ++y) {
        const double* wrow = w.data() + static_cast<std::size_t>(y) * bw;
        const double* srow = sharp.data().data() + static_cast<std::size_t>(y + p) * sharp.width() + q;
        for (int x = 0; x < bw; ++x) acc += wrow[x] * srow[x];
      }
      g_rot[static_cast<std::size_t>(side - 1 - p) * side + (side - 1 - q)] = acc;
    }
  }

  LossGrad out;
  out.value = value;
  const std::vector<double> g_raw = renorm_backprop(k_rot, rot_sum, g_rot);
  out.grad = rotation_backprop(g_raw, psf.radius(), theta);
  return out;
}

LossGrad smooth_loss(const PsfKernel& psf, double eps) {
  if (psf.empty()) throw StateError("smooth_loss: empty kernel");
  if (!(eps > 0)) throw DomainError("smooth_loss: eps must be positive");
  const int side = psf.side();
  const auto& v = psf.values();
  const double n = static_cast<double>(v.size());
  LossGrad out;
  out.grad.assign(v.size(), 0.0);
  double value = 0;
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * side + c;
      if (c + 1 < side) {
        const double d = v[i + 1] - v[i];
        value += std::abs(d);
        const double dphi = d / std::sqrt(d * d + eps * eps);
        out.grad[i + 1] += dphi / n;
        out.grad[i] -= dphi / n;
      }
      if (r + 1 < side) {
        const double d = v[i + side] - v[i];
        value += std::abs(d);
        const double dphi = d / std::sqrt(d * d + eps * eps);
        out.grad[i + side] += dphi / n;
        out.grad[i] -= dphi / n;
      }
    }
  }
  out.value = value / n;
  return out;
}

LossGrad radial_loss(const PsfKernel& psf) {
  if (psf.empty()) throw StateError("radial_loss: empty kernel");
  const int k = psf.radius();
  const int side = psf.side();
  const auto& v = psf.values();

  // Cumulative sums over centered squares; m[j] is the mean of the
  // (2j+1)x(2j+1) patch.
  std::vector<double> mean(static_cast<std::size_t>(k) + 1);
  double sum = v[static_cast<std::size_t>(k) * side + k];
  mean[0] = sum;
  for (int j = 1; j <= k; ++j) {
    const int lo = k - j;
    const int hi = k + j;
    for (int c = lo; c <= hi; ++c) {
      sum += v[static_cast<std::size_t>(lo) * side + c];
      sum += v[static_cast<std::size_t>(hi) * side + c];
    }
    for (int r = lo + 1; r <= hi - 1; ++r) {
      sum += v[static_cast<std::size_t>(r) * side + lo];
      sum += v[static_cast<std::size_t>(r) * side + hi];
    }
    const double area = static_cast<double>(2 * j + 1) * (2 * j + 1);
    mean[static_cast<std::size_t>(j)] = sum / area;
  }

  LossGrad out;
  out.grad.assign(v.size(), 0.0);
  double value = 0;
  // Per-square coefficient applied uniformly to each pixel the square covers.
  std::vector<double> coef(static_cast<std::size_t>(k) + 1, 0.0);
  for (int j = 0; j < k; ++j) {
    const double lambda = mean[static_cast<std::size_t>(j) + 1] - mean[static_cast<std::size_t>(j)];
    if (lambda > 0) {
      value += lambda;
      const double area_hi = static_cast<double>(2 * (j + 1) + 1) * (2 * (j + 1) + 1);
      const double area_lo = static_cast<double>(2 * j + 1) * (2 * j + 1);
      coef[static_cast<std::size_t>(j) + 1] += 1.0 / (area_hi * k);
      coef[static_cast<std::size_t>(j)] -= 1.0 / (area_lo * k);
    }
  }
  out.value = value / k;
  for (int j = 0; j <= k; ++j) {
    const double c = coef[static_cast<std::size_t>(j)];
    if (c == 0) continue;
    for (int r = k - j; r <= k + j; ++r) {
      for (int col = k - j; col <= k + j; ++col) {
        out.grad[static_cast<std::size_t>(r) * side + col] += c;
      }
    }
  }
  return out;
}

TotalLoss total_loss(const ImageF& blurred, const ImageF& sharp, const PsfKernel& psf, double theta,
                     const LossWeights& weights) {
  if (!(weights.charbonnier_eps > 0)) throw DomainError("total_loss: eps must be positive");
  if (weights.alpha < 0 || weights.beta < 0) throw DomainError("total_loss: negative loss weight");
  const LossGrad r = recon_loss(blurred, sharp, psf, theta, weights.charbonnier_eps);
  const LossGrad s = smooth_loss(psf, weights.charbonnier_eps);
  const LossGrad rad = radial_loss(psf);
  TotalLoss out;
  out.recon = r.value;
  out.smooth = s.value;
  out.radial = rad.value;
  out.value = r.value + weights.alpha * s.value + weights.beta * rad.value;
  out.grad.resize(r.grad.size());
  for (std::size_t i = 0; i < out.grad.size(); ++i) {
    out.grad[i] = r.grad[i] + weights.alpha * s.grad[i] + weights.beta * rad.grad[i];
  }
  return out;
}

LogitsLoss total_loss_logits(const ImageF& blurred, const ImageF& sharp,
                             std::span<const double> logits, int radius, double theta,
                             const LossWeights& weights) {
  const PsfKernel k = materialize_kernel(logits, radius);
  const TotalLoss t = total_loss(blurred, sharp, k, theta, weights);
  LogitsLoss out;
  out.value = t.value;
  out.recon = t.recon;
  out.smooth = t.smooth;
  out.radial = t.radial;
  out.grad_logits = softmax_backprop(k.values(), t.grad);
  return out;
}

}  // namespace defocus
