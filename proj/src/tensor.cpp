#include "instructtime/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "instructtime/errors.hpp"

namespace instructtime::tensor {

ParamTensor::ParamTensor(std::string n, Index rows, Index cols)
    : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::conv1d: return "conv1d";
    case BlockKind::dense: return "dense";
    case BlockKind::attention_block: return "attention-block";
    case BlockKind::layer_norm: return "layer-norm";
    case BlockKind::positional_encoding: return "positional-encoding";
    case BlockKind::linear_head: return "linear-head";
  }
  return "unknown";
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
  }
  return "unknown";
}

BlockSpec BlockSpec::conv1d(int in_channels, int out_channels, int kernel, int length,
                            Activation act) {
  BlockSpec s;
  s.kind = BlockKind::conv1d;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.length = length;
  s.activation = act;
  return s;
}

BlockSpec BlockSpec::dense(int in_features, int out_features, Activation act) {
  BlockSpec s;
  s.kind = BlockKind::dense;
  s.in_features = in_features;
  s.out_features = out_features;
  s.activation = act;
  return s;
}

BlockSpec BlockSpec::linear_head(int in_features, int out_features) {
  BlockSpec s = dense(in_features, out_features, Activation::none);
  s.kind = BlockKind::linear_head;
  return s;
}

BlockSpec BlockSpec::layer_norm(int width) {
  BlockSpec s;
  s.kind = BlockKind::layer_norm;
  s.width = width;
  return s;
}

BlockSpec BlockSpec::positional_encoding(int width, int seq_len) {
  BlockSpec s;
  s.kind = BlockKind::positional_encoding;
  s.width = width;
  s.seq_len = seq_len;
  return s;
}

BlockSpec BlockSpec::attention_block(int width, int heads, int ff_width, int seq_len) {
  BlockSpec s;
  s.kind = BlockKind::attention_block;
  s.width = width;
  s.heads = heads;
  s.ff_width = ff_width;
  s.seq_len = seq_len;
  return s;
}

void BlockSpec::validate() const {
  auto fail = [&](const std::string& msg) {
    throw ConfigError(std::string(to_string(kind)) + ": " + msg);
  };
  switch (kind) {
    case BlockKind::conv1d:
      if (in_channels < 1 || out_channels < 1) fail("channel counts must be positive");
      if (length < 1) fail("length must be positive");
      if (kernel < 1 || kernel > length)
        fail("kernel width " + std::to_string(kernel) + " outside [1, " + std::to_string(length) +
             "]");
      break;
    case BlockKind::dense:
    case BlockKind::linear_head:
      if (in_features < 1 || out_features < 1) fail("feature counts must be positive");
      break;
    case BlockKind::layer_norm:
      if (width < 1) fail("width must be positive");
      if (!(eps > 0.0)) fail("eps must be positive");
      break;
    case BlockKind::positional_encoding:
      if (width < 1 || seq_len < 1) fail("width and seq_len must be positive");
      break;
    case BlockKind::attention_block:
      if (width < 1 || seq_len < 1 || ff_width < 1) fail("sizes must be positive");
      if (heads < 1 || width % heads != 0)
        fail("head count " + std::to_string(heads) + " does not divide width " +
             std::to_string(width));
      break;
  }
}

// ---- Block -----------------------------------------------------------------

Block::Block(BlockSpec spec, std::string name) : spec_(spec), name_(std::move(name)) {
  spec_.validate();
}

std::vector<const ParamTensor*> Block::params() const {
  auto mut = const_cast<Block*>(this)->params();
  return {mut.begin(), mut.end()};
}

void Block::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

void Block::require_recorded(const Tape& tape) const {
  if (!tape.recorded)
    throw UsageError(name_ + " (" + std::string(to_string(spec_.kind)) +
                     "): backward called without a recorded forward pass");
}

void Block::shape_error(std::string_view what, Index exp_rows, Index exp_cols, Index rows,
                        Index cols) const {
  std::ostringstream os;
  os << name_ << " (" << to_string(spec_.kind) << "): " << what << " expected ";
  os << exp_rows << " x ";
  if (exp_cols < 0)
    os << "*";
  else
    os << exp_cols;
  os << ", got " << rows << " x " << cols;
  throw ShapeError(os.str());
}

namespace {

void init_uniform(Matrix& m, double bound, Rng& rng) {
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-bound, bound);
}

// He-style bound for rectifier-like activations, LeCun bound otherwise.
double init_bound(int fan_in, Activation act) {
  const double gain = act == Activation::none ? 3.0 : 6.0;
  return std::sqrt(gain / static_cast<double>(fan_in));
}

}  // namespace

// ---- Conv1d ----------------------------------------------------------------

Conv1d::Conv1d(const BlockSpec& spec, std::string name, Rng& rng)
    : Block(spec, std::move(name)),
      weight_(name_ + ".weight", spec.out_channels, static_cast<Index>(spec.in_channels) * spec.kernel),
      bias_(name_ + ".bias", spec.out_channels, 1) {
  if (spec.kind != BlockKind::conv1d) throw ConfigError("Conv1d built from non-conv spec");
  init_uniform(weight_.value, init_bound(spec.in_channels * spec.kernel, spec.activation), rng);
}

RowMatrix Conv1d::im2col(const Matrix& x, Index batch) const {
  const Index c_in = spec_.in_channels;
  const Index k = spec_.kernel;
  const Index len = spec_.length;
  const Index pad = (k - 1) / 2;
  const RowMatrix xr = x;
  RowMatrix col = RowMatrix::Zero(c_in * k, batch * len);
  for (Index c = 0; c < c_in; ++c) {
    for (Index tap = 0; tap < k; ++tap) {
      const Index offset = tap - pad;  // input index = t + offset
      const Index t0 = std::max<Index>(0, -offset);
      const Index t1 = std::min<Index>(len, len - offset);
      if (t1 <= t0) continue;
      for (Index n = 0; n < batch; ++n) {
        col.row(c * k + tap).segment(n * len + t0, t1 - t0) =
            xr.row(c).segment(n * len + t0 + offset, t1 - t0);
      }
    }
  }
  return col;
}

Matrix Conv1d::col2im(const RowMatrix& col, Index batch) const {
  const Index c_in = spec_.in_channels;
  const Index k = spec_.kernel;
  const Index len = spec_.length;
  const Index pad = (k - 1) / 2;
  RowMatrix dx = RowMatrix::Zero(c_in, batch * len);
  for (Index c = 0; c < c_in; ++c) {
    for (Index tap = 0; tap < k; ++tap) {
      const Index offset = tap - pad;
      const Index t0 = std::max<Index>(0, -offset);
      const Index t1 = std::min<Index>(len, len - offset);
      if (t1 <= t0) continue;
      for (Index n = 0; n < batch; ++n) {
        dx.row(c).segment(n * len + t0 + offset, t1 - t0) +=
            col.row(c * k + tap).segment(n * len + t0, t1 - t0);
      }
    }
  }
  return dx;
}

Matrix Conv1d::forward(const Matrix& x, Tape* tape) const {
  if (x.rows() != spec_.in_channels || x.cols() % spec_.length != 0 || x.cols() == 0)
    shape_error("input", spec_.in_channels, -1, x.rows(), x.cols());
  const Index batch = x.cols() / spec_.length;
  RowMatrix col = im2col(x, batch);
  Matrix pre = weight_.value * col;
  pre.colwise() += bias_.value.col(0);
  Matrix y = activate(pre, spec_.activation);
  if (tape) {
    tape->clear();
    tape->saved_rows.push_back(std::move(col));
    tape->saved.push_back(std::move(pre));
    tape->recorded = true;
  }
  return y;
}

Matrix Conv1d::backward(const Tape& tape, const Matrix& dy) {
  require_recorded(tape);
  const RowMatrix& col = tape.saved_rows.at(0);
  const Matrix& pre = tape.saved.at(0);
  if (dy.rows() != pre.rows() || dy.cols() != pre.cols())
    shape_error("upstream gradient", pre.rows(), pre.cols(), dy.rows(), dy.cols());
  const Matrix dpre = activate_backward(pre, dy, spec_.activation);
  weight_.grad.noalias() += dpre * col.transpose();
  bias_.grad += dpre.rowwise().sum();
  if (!input_grad_required_) return {};
  const RowMatrix dcol = weight_.value.transpose() * dpre;
  return col2im(dcol, pre.cols() / spec_.length);
}

// ---- Dense -----------------------------------------------------------------

Dense::Dense(const BlockSpec& spec, std::string name, Rng& rng)
    : Block(spec, std::move(name)),
      weight_(name_ + ".weight", spec.out_features, spec.in_features),
      bias_(name_ + ".bias", spec.out_features, 1) {
  if (spec.kind != BlockKind::dense && spec.kind != BlockKind::linear_head)
    throw ConfigError("Dense built from non-dense spec");
  init_uniform(weight_.value, init_bound(spec.in_features, spec.activation), rng);
}

Matrix Dense::forward(const Matrix& x, Tape* tape) const {
  if (x.rows() != spec_.in_features || x.cols() == 0)
    shape_error("input", spec_.in_features, -1, x.rows(), x.cols());
  Matrix pre = weight_.value * x;
  pre.colwise() += bias_.value.col(0);
  Matrix y = spec_.activation == Activation::none ? pre : activate(pre, spec_.activation);
  if (tape) {
    tape->clear();
    tape->saved.push_back(x);
    if (spec_.activation != Activation::none) tape->saved.push_back(std::move(pre));
    tape->recorded = true;
  }
  return y;
}

Matrix Dense::backward(const Tape& tape, const Matrix& dy) {
  require_recorded(tape);
  const Matrix& x = tape.saved.at(0);
  if (dy.rows() != spec_.out_features || dy.cols() != x.cols())
    shape_error("upstream gradient", spec_.out_features, x.cols(), dy.rows(), dy.cols());
  Matrix dpre_storage;
  const Matrix* dpre = &dy;
  if (spec_.activation != Activation::none) {
    dpre_storage = activate_backward(tape.saved.at(1), dy, spec_.activation);
    dpre = &dpre_storage;
  }
  weight_.grad.noalias() += (*dpre) * x.transpose();
  bias_.grad += dpre->rowwise().sum();
  if (!input_grad_required_) return {};
  return weight_.value.transpose() * (*dpre);
}

// ---- LayerNorm -------------------------------------------------------------

LayerNorm::LayerNorm(const BlockSpec& spec, std::string name)
    : Block(spec, std::move(name)),
      gain_(name_ + ".gain", spec.width, 1),
      shift_(name_ + ".shift", spec.width, 1) {
  if (spec.kind != BlockKind::layer_norm) throw ConfigError("LayerNorm built from wrong spec");
  gain_.value.setOnes();
}

Matrix LayerNorm::forward(const Matrix& x, Tape* tape) const {
  if (x.rows() != spec_.width || x.cols() == 0)
    shape_error("input", spec_.width, -1, x.rows(), x.cols());
  const double f = static_cast<double>(x.rows());
  Matrix xhat(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double var = (x.col(j).array() - mean).square().sum() / f;
    inv_std(j) = 1.0 / std::sqrt(var + spec_.eps);
    xhat.col(j) = (x.col(j).array() - mean) * inv_std(j);
  }
  Matrix y = (xhat.array().colwise() * gain_.value.col(0).array()).matrix();
  y.colwise() += shift_.value.col(0);
  if (tape) {
    tape->clear();
    tape->saved.push_back(std::move(xhat));
    tape->saved.push_back(inv_std);
    tape->recorded = true;
  }
  return y;
}

Matrix LayerNorm::backward(const Tape& tape, const Matrix& dy) {
  require_recorded(tape);
  const Matrix& xhat = tape.saved.at(0);
  const Matrix& inv_std = tape.saved.at(1);
  if (dy.rows() != xhat.rows() || dy.cols() != xhat.cols())
    shape_error("upstream gradient", xhat.rows(), xhat.cols(), dy.rows(), dy.cols());
  gain_.grad += (dy.array() * xhat.array()).rowwise().sum().matrix();
  shift_.grad += dy.rowwise().sum();
  if (!input_grad_required_) return {};
  const double f = static_cast<double>(dy.rows());
  const Matrix dxhat = (dy.array().colwise() * gain_.value.col(0).array()).matrix();
  Matrix dx(dy.rows(), dy.cols());
  for (Index j = 0; j < dy.cols(); ++j) {
    const double sum_d = dxhat.col(j).sum();
    const double sum_dx = dxhat.col(j).dot(xhat.col(j));
    dx.col(j) = (inv_std(j, 0) / f) *
                (f * dxhat.col(j).array() - sum_d - xhat.col(j).array() * sum_dx).matrix();
  }
  return dx;
}

// ---- PositionalEncoding ----------------------------------------------------

PositionalEncoding::PositionalEncoding(const BlockSpec& spec, std::string name)
    : Block(spec, std::move(name)), table_(spec.width, spec.seq_len) {
  if (spec.kind != BlockKind::positional_encoding) throw ConfigError("wrong spec kind");
  for (int pos = 0; pos < spec.seq_len; ++pos) {
    for (int i = 0; i < spec.width; ++i) {
      const int pair = i / 2;
      const double rate = std::pow(10000.0, -2.0 * pair / static_cast<double>(spec.width));
      table_(i, pos) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
}

Matrix PositionalEncoding::forward(const Matrix& x, Tape* tape) const {
  if (x.rows() != spec_.width || x.cols() % spec_.seq_len != 0 || x.cols() == 0)
    shape_error("input", spec_.width, -1, x.rows(), x.cols());
  Matrix y = x;
  for (Index j = 0; j < x.cols(); ++j) y.col(j) += table_.col(j % spec_.seq_len);
  if (tape) {
    tape->clear();
    tape->recorded = true;
  }
  return y;
}

Matrix PositionalEncoding::backward(const Tape& tape, const Matrix& dy) {
  require_recorded(tape);
  return dy;
}

// ---- factory ---------------------------------------------------------------

std::unique_ptr<Block> make_block(const BlockSpec& spec, const std::string& name, Rng& rng) {
  switch (spec.kind) {
    case BlockKind::conv1d: return std::make_unique<Conv1d>(spec, name, rng);
    case BlockKind::dense:
    case BlockKind::linear_head: return std::make_unique<Dense>(spec, name, rng);
    case BlockKind::layer_norm: return std::make_unique<LayerNorm>(spec, name);
    case BlockKind::positional_encoding: return std::make_unique<PositionalEncoding>(spec, name);
    case BlockKind::attention_block: return std::make_unique<AttentionBlock>(spec, name, rng);
  }
  throw ConfigError("unknown block kind");
}

// ---- parameter-free ops ----------------------------------------------------

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Matrix activate(const Matrix& pre, Activation act) {
  switch (act) {
    case Activation::none: return pre;
    case Activation::relu: return pre.cwiseMax(0.0);
    case Activation::gelu:
      return pre.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  }
  return pre;
}

Matrix activate_backward(const Matrix& pre, const Matrix& dy, Activation act) {
  switch (act) {
    case Activation::none: return dy;
    case Activation::relu:
      return (pre.array() > 0.0).select(dy, Matrix::Zero(dy.rows(), dy.cols()));
    case Activation::gelu: {
      const Matrix deriv = pre.unaryExpr([](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
      return dy.cwiseProduct(deriv);
    }
  }
  return dy;
}

namespace {

Index bin_start(Index b, Index bins, Index length) { return b * length / bins; }

}  // namespace

Matrix mean_pool_time(const Matrix& x, Index length, Index bins) {
  if (length <= 0 || x.cols() % length != 0)
    throw ShapeError("mean_pool_time: column count " + std::to_string(x.cols()) +
                     " is not a multiple of length " + std::to_string(length));
  if (bins < 1 || bins > length)
    throw ShapeError("mean_pool_time: " + std::to_string(bins) + " bins for length " + std::to_string(length));
  const Index batch = x.cols() / length;
  const Index c = x.rows();
  Matrix y(c * bins, batch);
  for (Index n = 0; n < batch; ++n)
    for (Index b = 0; b < bins; ++b) {
      const Index lo = bin_start(b, bins, length), hi = bin_start(b + 1, bins, length);
      y.col(n).segment(b * c, c) = x.middleCols(n * length + lo, hi - lo).rowwise().mean();
    }
  return y;
}

Matrix mean_pool_time_backward(const Matrix& dy, Index length, Index bins) {
  const Index c = dy.rows() / bins;
  Matrix dx(c, dy.cols() * length);
  for (Index n = 0; n < dy.cols(); ++n)
    for (Index b = 0; b < bins; ++b) {
      const Index lo = bin_start(b, bins, length), hi = bin_start(b + 1, bins, length);
      dx.middleCols(n * length + lo, hi - lo).colwise() =
          dy.col(n).segment(b * c, c) / static_cast<double>(hi - lo);
    }
  return dx;
}

Matrix l2_normalize_columns(const Matrix& x, Eigen::VectorXd* norms) {
  Matrix y(x.rows(), x.cols());
  Eigen::VectorXd nrm(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    nrm(j) = std::max(x.col(j).norm(), 1e-12);
    y.col(j) = x.col(j) / nrm(j);
  }
  if (norms) *norms = std::move(nrm);
  return y;
}

Matrix l2_normalize_columns_backward(const Matrix& y, const Eigen::VectorXd& norms,
                                     const Matrix& dy) {
  Matrix dx(y.rows(), y.cols());
  for (Index j = 0; j < y.cols(); ++j)
    dx.col(j) = (dy.col(j) - y.col(j) * y.col(j).dot(dy.col(j))) / norms(j);
  return dx;
}

}  // namespace instructtime::tensor
