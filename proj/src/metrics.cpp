#include "instructtime/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "instructtime/errors.hpp"

namespace instructtime::metrics {

namespace {

void require_nonempty(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw InputError("DTW needs two non-empty series");
}

// Fills the (n+1) x (m+1) cumulative cost table, row-major.
std::vector<double> dtw_table(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  const std::size_t m = y.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d((n + 1) * (m + 1), inf);
  d[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const double diff = x[i - 1] - y[j - 1];
      const double best = std::min({d[(i - 1) * (m + 1) + j], d[i * (m + 1) + j - 1],
                                    d[(i - 1) * (m + 1) + j - 1]});
      d[i * (m + 1) + j] = diff * diff + best;
    }
  }
  return d;
}

}  // namespace

double dtw(std::span<const double> x, std::span<const double> y) {
  require_nonempty(x, y);
  const std::size_t m = y.size();
  // Two rolling rows keep memory linear.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double diff = x[i - 1] - y[j - 1];
      cur[j] = diff * diff + std::min({prev[j], cur[j - 1], prev[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

DtwPath dtw_path(std::span<const double> x, std::span<const double> y) {
  require_nonempty(x, y);
  const std::size_t n = x.size();
  const std::size_t m = y.size();
  const auto d = dtw_table(x, y);
  DtwPath out;
  out.cost = d[n * (m + 1) + m];
  std::size_t i = n;
  std::size_t j = m;
  while (true) {
    out.path.emplace_back(i - 1, j - 1);
    if (i == 1 && j == 1) break;
    const double diag = d[(i - 1) * (m + 1) + j - 1];
    const double up = d[(i - 1) * (m + 1) + j];
    const double left = d[i * (m + 1) + j - 1];
    if (diag <= up && diag <= left) {
      --i;
      --j;
    } else if (up <= left) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(out.path.begin(), out.path.end());
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InputError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double delta_dtw(std::span<const double> xhat, std::span<const double> x,
                 const std::vector<std::vector<double>>& targets) {
  if (targets.empty()) throw InputError("delta DTW needs at least one target series");
  std::vector<double> diffs;
  diffs.reserve(targets.size());
  for (const auto& t : targets) diffs.push_back(dtw(xhat, t) - dtw(x, t));
  return median(std::move(diffs));
}

double rats(double p_target_edit, double p_target_source) {
  const auto clamp = [](double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); };
  return std::log(clamp(p_target_edit)) - std::log(clamp(p_target_source));
}

PointError mse_mae(const Matrix& xhat, const Matrix& x_gt) {
  if (xhat.rows() != x_gt.rows() || xhat.cols() != x_gt.cols() || xhat.cols() == 0)
    throw InputError("MSE/MAE need equal non-empty shapes");
  PointError e;
  for (Eigen::Index n = 0; n < xhat.cols(); ++n) {
    const double sq = (xhat.col(n) - x_gt.col(n)).squaredNorm();
    e.mse += sq;
    e.mae += std::sqrt(sq);
  }
  e.mse /= static_cast<double>(xhat.cols());
  e.mae /= static_cast<double>(xhat.cols());
  return e;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw InputError("spearman needs two equal-length samples (n >= 2)");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

MeanSe mean_se(const std::vector<double>& values) {
  MeanSe out;
  out.n = values.size();
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.se = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

}  // namespace instructtime::metrics
