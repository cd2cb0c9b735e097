#pragma once

// Minimal differentiable building blocks with hand-written backward passes.
//
// All activations are Eigen column-major matrices in 64-bit floating point.
// Layout conventions (N = batch size):
//   conv1d               channels x (N * length), columns sample-major
//   dense / linear-head  features x N
//   layer-norm           width x M, each column normalized independently
//   positional-encoding  width x (N * seq_len)
//   attention-block      width x (N * seq_len)

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "instructtime/rng.hpp"

namespace instructtime::tensor {

using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;

  ParamTensor() = default;
  ParamTensor(std::string name, Index rows, Index cols);

  std::vector<std::size_t> shape() const {
    return {static_cast<std::size_t>(value.rows()), static_cast<std::size_t>(value.cols())};
  }
  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  bool finite() const { return value.allFinite() && grad.allFinite(); }
};

enum class Activation { none, relu, gelu };

enum class BlockKind { conv1d, dense, attention_block, layer_norm, positional_encoding, linear_head };

std::string_view to_string(BlockKind kind);
std::string_view to_string(Activation act);

struct BlockSpec {
  BlockKind kind = BlockKind::dense;
  Activation activation = Activation::none;

  // conv1d
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 1;
  int length = 1;

  // dense, linear-head
  int in_features = 1;
  int out_features = 1;

  // layer-norm, positional-encoding, attention-block
  int width = 1;
  int heads = 1;
  int ff_width = 1;
  int seq_len = 1;
  double eps = 1e-5;

  static BlockSpec conv1d(int in_channels, int out_channels, int kernel, int length,
                          Activation act = Activation::relu);
  static BlockSpec dense(int in_features, int out_features, Activation act = Activation::none);
  static BlockSpec linear_head(int in_features, int out_features);
  static BlockSpec layer_norm(int width);
  static BlockSpec positional_encoding(int width, int seq_len);
  static BlockSpec attention_block(int width, int heads, int ff_width, int seq_len);

  // Throws ShapeError / ConfigError for impossible hyperparameters.
  void validate() const;
};

// Per-call cache of whatever a block needs for its backward pass.
struct Tape {
  std::vector<Matrix> saved;
  std::vector<RowMatrix> saved_rows;
  std::vector<Tape> children;
  bool recorded = false;

  void clear() {
    saved.clear();
    saved_rows.clear();
    children.clear();
    recorded = false;
  }
};

class Block {
public:
  Block(BlockSpec spec, std::string name);
  virtual ~Block() = default;

  Block(const Block&) = delete;
  Block& operator=(const Block&) = delete;

  const BlockSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }

  // Pure with respect to the block: the only mutable state written is *tape.
  virtual Matrix forward(const Matrix& x, Tape* tape = nullptr) const = 0;

  // Accumulates parameter gradients into ParamTensor::grad and returns the
  // gradient with respect to the forward input.
  virtual Matrix backward(const Tape& tape, const Matrix& dy) = 0;

  virtual std::vector<ParamTensor*> params() { return {}; }
  std::vector<const ParamTensor*> params() const;

  void zero_grad();

  // When false, backward() skips the input gradient and returns an empty
  // matrix (first layer of a network, whose input is data).
  void set_input_grad_required(bool required) { input_grad_required_ = required; }
  bool input_grad_required() const { return input_grad_required_; }

protected:
  void require_recorded(const Tape& tape) const;
  [[noreturn]] void shape_error(std::string_view what, Index exp_rows, Index exp_cols, Index rows,
                                Index cols) const;

  BlockSpec spec_;
  std::string name_;
  bool input_grad_required_ = true;
};

class Conv1d final : public Block {
public:
  Conv1d(const BlockSpec& spec, std::string name, Rng& rng);

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const override;
  Matrix backward(const Tape& tape, const Matrix& dy) override;
  std::vector<ParamTensor*> params() override { return {&weight_, &bias_}; }

  ParamTensor& weight() { return weight_; }
  ParamTensor& bias() { return bias_; }

private:
  RowMatrix im2col(const Matrix& x, Index batch) const;
  Matrix col2im(const RowMatrix& col, Index batch) const;

  ParamTensor weight_;  // out x (in * kernel), column index = channel * kernel + tap
  ParamTensor bias_;    // out x 1
};

class Dense final : public Block {
public:
  Dense(const BlockSpec& spec, std::string name, Rng& rng);

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const override;
  Matrix backward(const Tape& tape, const Matrix& dy) override;
  std::vector<ParamTensor*> params() override { return {&weight_, &bias_}; }

  ParamTensor& weight() { return weight_; }
  ParamTensor& bias() { return bias_; }

private:
  ParamTensor weight_;
  ParamTensor bias_;
};

class LayerNorm final : public Block {
public:
  LayerNorm(const BlockSpec& spec, std::string name);

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const override;
  Matrix backward(const Tape& tape, const Matrix& dy) override;
  std::vector<ParamTensor*> params() override { return {&gain_, &shift_}; }

  ParamTensor& gain() { return gain_; }
  ParamTensor& shift() { return shift_; }

private:
  ParamTensor gain_;
  ParamTensor shift_;
};

// Adds the standard sinusoidal table; no parameters.
class PositionalEncoding final : public Block {
public:
  PositionalEncoding(const BlockSpec& spec, std::string name);

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const override;
  Matrix backward(const Tape& tape, const Matrix& dy) override;

  const Matrix& table() const { return table_; }

private:
  Matrix table_;  // width x seq_len
};

// Pre-norm transformer block:
//   h = x + Wo * MHA(LN1(x));  y = h + W2 * gelu(W1 * LN2(h)).
class AttentionBlock final : public Block {
public:
  AttentionBlock(const BlockSpec& spec, std::string name, Rng& rng);

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const override;
  Matrix backward(const Tape& tape, const Matrix& dy) override;
  std::vector<ParamTensor*> params() override;

private:
  Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v, Matrix* probs) const;

  LayerNorm norm1_;
  Dense query_;
  Dense key_;
  Dense value_;
  Dense out_;
  LayerNorm norm2_;
  Dense ff1_;
  Dense ff2_;
};

std::unique_ptr<Block> make_block(const BlockSpec& spec, const std::string& name, Rng& rng);

// ---- Parameter-free ops used to glue blocks together ----------------------

Matrix activate(const Matrix& pre, Activation act);
// Gradient of the activation given the pre-activation and upstream gradient.
Matrix activate_backward(const Matrix& pre, const Matrix& dy, Activation act);

// channels x (N * length) -> (bins * channels) x N; each of `bins` equal
// segments of the time axis is averaged, rows ordered bin-major.
Matrix mean_pool_time(const Matrix& x, Index length, Index bins = 1);
Matrix mean_pool_time_backward(const Matrix& dy, Index length, Index bins = 1);

// Column-wise L2 normalization. `norms` receives the input column norms.
Matrix l2_normalize_columns(const Matrix& x, Eigen::VectorXd* norms = nullptr);
Matrix l2_normalize_columns_backward(const Matrix& y, const Eigen::VectorXd& norms,
                                     const Matrix& dy);

}  // namespace instructtime::tensor
