#include "instructtime/losses.hpp"

#include <cmath>

#include "instructtime/errors.hpp"

namespace instructtime::losses {

namespace {

void check_pairs(const Matrix& zx, const Matrix& zc) {
  if (zx.rows() != zc.rows() || zx.cols() != zc.cols() || zx.cols() == 0)
    throw InputError("contrastive loss needs matching non-empty batches, got " +
                     std::to_string(zx.rows()) + " x " + std::to_string(zx.cols()) + " and " +
                     std::to_string(zc.rows()) + " x " + std::to_string(zc.cols()));
}

// Row-wise log-softmax of a square matrix.
Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

}  // namespace

LossGrad contrastive_loss_grad(const Matrix& zx, const Matrix& zc, double temperature) {
  check_pairs(zx, zc);
  const Eigen::Index n = zx.cols();
  const Matrix logits = zx.transpose() * zc / temperature;
  const Matrix lr = log_softmax_rows(logits);
  const Matrix lc = log_softmax_rows(logits.transpose());
  LossGrad out;
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) s -= lr(i, i) + lc(i, i);
  out.value = s / (2.0 * static_cast<double>(n));

  const Matrix eye = Matrix::Identity(n, n);
  Matrix dlogits = (lr.array().exp().matrix() - eye) + (lc.array().exp().matrix() - eye).transpose();
  dlogits /= 2.0 * static_cast<double>(n);
  out.grad_a = zc * dlogits.transpose() / temperature;
  out.grad_b = zx * dlogits / temperature;
  return out;
}

double contrastive_loss(const Matrix& zx, const Matrix& zc, double temperature) {
  return contrastive_loss_grad(zx, zc, temperature).value;
}

LossGrad recon_loss_grad(const Matrix& x, const Matrix& xhat) {
  if (x.rows() != xhat.rows() || x.cols() != xhat.cols() || x.cols() == 0)
    throw InputError("reconstruction loss needs equal non-empty shapes, got " +
                     std::to_string(x.rows()) + " x " + std::to_string(x.cols()) + " and " +
                     std::to_string(xhat.rows()) + " x " + std::to_string(xhat.cols()));
  const double n = static_cast<double>(x.cols());
  LossGrad out;
  const Matrix diff = xhat - x;
  out.value = diff.squaredNorm() / n;
  out.grad_b = 2.0 * diff / n;
  return out;
}

double recon_loss(const Matrix& x, const Matrix& xhat) { return recon_loss_grad(x, xhat).value; }

double balancing_alpha(double contrast, double recon, double gamma, AlphaMode mode,
                       double fixed_alpha) {
  if (mode == AlphaMode::fixed) return fixed_alpha;
  if (!(recon > 0.0)) return 0.0;
  return std::pow(10.0, -gamma) * std::max(contrast, kAlphaFloor) / recon;
}

TotalLoss total_loss(double contrast, double recon, double gamma, AlphaMode mode,
                     double fixed_alpha) {
  TotalLoss t;
  t.contrast = contrast;
  t.recon = recon;
  t.alpha = balancing_alpha(contrast, recon, gamma, mode, fixed_alpha);
  t.total = contrast + t.alpha * recon;
  return t;
}

}  // namespace instructtime::losses
