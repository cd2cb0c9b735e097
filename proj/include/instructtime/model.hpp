#pragma once

// The three networks:
//   SeriesEncoder       k parallel conv branches, kernel widths proportional to T
//   InstructionEncoder  frozen text vector -> k parallel MLPs
//   Decoder             [z_series, z_instruction] token pair -> attention blocks -> T values
// Branch j of the series encoder and chunk j of the instruction encoder occupy
// the same rows [j*d, (j+1)*d) of the D = k*d embedding.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "instructtime/tensor.hpp"
#include "instructtime/text_embed.hpp"

namespace instructtime::model {

using tensor::Matrix;
using tensor::ParamTensor;

struct ModelConfig {
  int length = 200;
  int branches = 8;
  int branch_width = 96;
  std::vector<double> kernel_fractions = {1.0, 2.0 / 3.0, 0.5, 1.0 / 3.0, 0.25, 1.0 / 6.0, 0.125, 0.1};
  int conv1_channels = 16;
  int conv2_channels = 32;
  int conv2_kernel = 3;
  int pool_bins = 8;  // time segments averaged separately before the projection
  int text_width = 768;
  int mlp_hidden = 512;
  int decoder_blocks = 8;
  int heads = 8;
  int ff_multiplier = 4;
  double gamma = 1.0;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  int embedding_dim() const { return branches * branch_width; }
  // max(1, round(fraction_j * T))
  int kernel_width(int branch) const;
  void validate() const;

  // Reduced model used for fast experiments: k=4, d=32, 4 blocks, 2 heads,
  // kernel fractions {1, 1/2, 1/4, 1/8}, temperature 0.1.
  static ModelConfig desk(int length = 200);
};

enum class Modality { series, instruction, interpolated };

struct Embedding {
  std::vector<double> values;
  Modality modality = Modality::series;

  double norm() const;
};

struct NormalizationStats {
  double mean = 0.0;
  double stddev = 1.0;
  std::string source_fingerprint;

  double standardize(double v) const { return (v - mean) / stddev; }
  double destandardize(double v) const { return v * stddev + mean; }
};

class SeriesEncoder {
public:
  struct Cache {
    std::vector<std::array<tensor::Tape, 3>> branch;  // conv1, conv2, proj
    Matrix output;
    Eigen::VectorXd norms;
    bool normalized = true;
  };

  SeriesEncoder(const ModelConfig& config, std::uint64_t seed, const std::string& prefix = "series");

  // x: T x N (one series per column) -> D x N.
  Matrix forward(const Matrix& x, Cache* cache = nullptr, bool normalize = true) const;
  void backward(const Cache& cache, const Matrix& dz);

  std::vector<ParamTensor*> params();
  int length() const { return length_; }
  int output_dim() const { return static_cast<int>(branches_.size()) * branch_width_; }
  const tensor::Conv1d& first_conv(int branch) const { return branches_.at(branch)->conv1; }

private:
  struct Branch {
    tensor::Conv1d conv1;
    tensor::Conv1d conv2;
    tensor::Dense proj;
  };
  int length_;
  int branch_width_;
  int pool_bins_;
  std::vector<std::unique_ptr<Branch>> branches_;
};

class InstructionEncoder {
public:
  struct Cache {
    std::vector<std::array<tensor::Tape, 3>> branch;
    Matrix output;
    Eigen::VectorXd norms;
  };

  InstructionEncoder(const ModelConfig& config, std::uint64_t seed);

  // v: E x N provider vectors -> D x N unit columns.
  Matrix forward(const Matrix& v, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const Matrix& dz);

  std::vector<ParamTensor*> params();

private:
  struct Mlp {
    tensor::Dense hidden1;
    tensor::Dense hidden2;
    tensor::Dense out;
  };
  std::vector<std::unique_ptr<Mlp>> mlps_;
};

class Decoder {
public:
  struct Cache {
    tensor::Tape pos;
    std::vector<tensor::Tape> blocks;
    tensor::Tape final_norm;
    tensor::Tape head;
    Eigen::Index batch = 0;
  };

  Decoder(const ModelConfig& config, std::uint64_t seed);

  // z_a, z_b: D x N -> T x N. z_a takes the series-token position and the
  // head reads that token's final hidden state.
  Matrix forward(const Matrix& z_a, const Matrix& z_b, Cache* cache = nullptr) const;
  std::pair<Matrix, Matrix> backward(const Cache& cache, const Matrix& dx);

  std::vector<ParamTensor*> params();

private:
  Decoder(const ModelConfig& config, Rng&& rng);

  int dim_;
  double token_scale_;
  tensor::PositionalEncoding pos_;
  std::vector<std::unique_ptr<tensor::AttentionBlock>> blocks_;
  tensor::LayerNorm final_norm_;
  tensor::Dense head_;
};

class InstructTimeModel {
public:
  InstructTimeModel(ModelConfig config, std::shared_ptr<const text::TextEmbedder> embedder);

  const ModelConfig& config() const { return config_; }
  const text::TextEmbedder& embedder() const { return *embedder_; }
  std::shared_ptr<const text::TextEmbedder> embedder_ptr() const { return embedder_; }

  const std::optional<NormalizationStats>& normalization() const { return normalization_; }
  void set_normalization(std::optional<NormalizationStats> stats) { normalization_ = std::move(stats); }

  SeriesEncoder& series_encoder() { return series_; }
  InstructionEncoder& instruction_encoder() { return instruction_; }
  Decoder& decoder() { return decoder_; }
  const SeriesEncoder& series_encoder() const { return series_; }
  const InstructionEncoder& instruction_encoder() const { return instruction_; }
  const Decoder& decoder() const { return decoder_; }

  // Model-space operations (no normalization applied).
  Embedding encode_series(std::span<const double> x) const;
  Embedding encode_instruction(std::string_view instruction) const;
  std::vector<double> decode(const Embedding& z_a, const Embedding& z_b) const;

  Matrix encode_series_batch(const Matrix& x) const { return series_.forward(x); }
  Matrix text_vectors(const std::vector<std::string>& instructions) const;
  Matrix encode_instruction_batch(const std::vector<std::string>& instructions) const;

  std::vector<ParamTensor*> series_params() { return series_.params(); }
  std::vector<ParamTensor*> instruction_params() { return instruction_.params(); }
  std::vector<ParamTensor*> decoder_params() { return decoder_.params(); }
  std::vector<ParamTensor*> all_params();
  std::vector<const ParamTensor*> all_params() const;
  std::size_t parameter_count() const;

  void zero_grad();
  // Deep copy of every parameter value, e.g. for best-epoch snapshots.
  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

private:
  ModelConfig config_;
  std::shared_ptr<const text::TextEmbedder> embedder_;
  std::optional<NormalizationStats> normalization_;
  SeriesEncoder series_;
  InstructionEncoder instruction_;
  Decoder decoder_;
};

}  // namespace instructtime::model
