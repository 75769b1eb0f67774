#pragma once

#include <span>
#include <vector>

#include "defocus/image.hpp"
#include "defocus/kernel.hpp"

namespace defocus {

// Weights of the total training objective
//   L = L_recon + alpha * L_smooth + beta * L_radial.
struct LossWeights {
  double alpha = 1.0;
  double beta = 10.0;
  double charbonnier_eps = 1e-6;
};

struct LossGrad {
  double value = 0.0;
  std::vector<double> grad;  // w.r.t. the kernel values handed in
};

// Mean Charbonnier-smoothed L1 of (blurred - sharp (x) rotate(psf, theta))
// over the co-aligned valid region. The sharp patch must exceed the blurred
// patch by exactly 2*radius on each axis. The gradient is taken w.r.t. the
// unrotated kernel values, transported through the rotation (renormalization
// included) by the resampling adjoint.
LossGrad recon_loss(const ImageF& blurred, const ImageF& sharp, const PsfKernel& psf, double theta,
                    double eps = 1e-6);

// Mean absolute forward difference, x and y, over all kernel pixels; the
// difference past the last column/row is zero. The value uses exact |.|; the
// gradient uses the Charbonnier-smoothed derivative.
LossGrad smooth_loss(const PsfKernel& psf, double eps = 1e-6);

// Penalizes outward-increasing radial profiles: mean over ring index j of
// max(m_{j+1} - m_j, 0) where m_j is the mean over the centered
// (2j+1)x(2j+1) patch (m_0 = center pixel). Subgradient 0 at ties.
LossGrad radial_loss(const PsfKernel& psf);

struct TotalLoss {
  double value = 0.0;
  double recon = 0.0;
  double smooth = 0.0;
  double radial = 0.0;
  std::vector<double> grad;  // w.r.t. the unrotated kernel values
};

// Combined objective; the regularizers act on the canonical (unrotated)
// kernel, reconstruction on the rotated one.
TotalLoss total_loss(const ImageF& blurred, const ImageF& sharp, const PsfKernel& psf, double theta,
                     const LossWeights& weights);

struct LogitsLoss {
  double value = 0.0;
  double recon = 0.0;
  double smooth = 0.0;
  double radial = 0.0;
  std::vector<double> grad_logits;
};

// Full chain from unconstrained parameters: softmax -> rotation -> valid
// convolution -> total loss, with the gradient on the logits.
LogitsLoss total_loss_logits(const ImageF& blurred, const ImageF& sharp,
                             std::span<const double> logits, int radius, double theta,
                             const LossWeights& weights);

}  // namespace defocus
