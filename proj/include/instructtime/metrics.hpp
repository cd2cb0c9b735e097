#pragma once

#include <span>
#include <utility>
#include <vector>

#include "instructtime/tensor.hpp"

namespace instructtime::metrics {

using tensor::Matrix;

// Minimum over monotone warping paths of the summed squared pointwise cost.
double dtw(std::span<const double> x, std::span<const double> y);

struct DtwPath {
  double cost = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> path;  // 0-based, (0,0) .. (n-1,m-1)
};
DtwPath dtw_path(std::span<const double> x, std::span<const double> y);

double median(std::vector<double> values);

// median over targets t of [DTW(xhat, t) - DTW(x, t)]; negative = moved toward the targets.
double delta_dtw(std::span<const double> xhat, std::span<const double> x,
                 const std::vector<std::vector<double>>& targets);

inline constexpr double kProbClamp = 1e-7;

// log(p_edit / p_source) with both probabilities clamped to [1e-7, 1 - 1e-7].
double rats(double p_target_edit, double p_target_source);

struct PointError {
  double mse = 0.0;
  double mae = 0.0;
};

// Columns are samples: MSE = mean_n ||x_n - xhat_n||^2, MAE = mean_n ||x_n - xhat_n||.
PointError mse_mae(const Matrix& xhat, const Matrix& x_gt);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};
MeanSe mean_se(const std::vector<double>& values);

}  // namespace instructtime::metrics
