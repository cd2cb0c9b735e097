#pragma once

// Training objectives. Embedding batches are D x N (one pair per column) and
// series batches are T x N, matching the model layout.

#include "instructtime/tensor.hpp"

namespace instructtime::losses {

using tensor::Matrix;

struct LossGrad {
  double value = 0.0;
  Matrix grad_a;
  Matrix grad_b;
};

// Symmetric InfoNCE over in-batch pairs (column i of zx pairs with column i of zc).
double contrastive_loss(const Matrix& zx, const Matrix& zc, double temperature = 1.0);
LossGrad contrastive_loss_grad(const Matrix& zx, const Matrix& zc, double temperature = 1.0);

// (1/N) sum_i ||x_i - xhat_i||^2. grad_b is d/d xhat; grad_a is left empty.
double recon_loss(const Matrix& x, const Matrix& xhat);
LossGrad recon_loss_grad(const Matrix& x, const Matrix& xhat);

enum class AlphaMode { ratio_tracking, fixed };

struct TotalLoss {
  double total = 0.0;
  double contrast = 0.0;
  double recon = 0.0;
  double alpha = 0.0;
};

inline constexpr double kAlphaFloor = 1e-8;

// alpha * L_recon = 10^-gamma * max(L_contrast, 1e-8) in ratio-tracking mode.
double balancing_alpha(double contrast, double recon, double gamma, AlphaMode mode,
                       double fixed_alpha = 0.1);

TotalLoss total_loss(double contrast, double recon, double gamma, AlphaMode mode,
                     double fixed_alpha = 0.1);

}  // namespace instructtime::losses
