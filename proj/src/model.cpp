#include "instructtime/model.hpp"

#include <cmath>

#include "instructtime/errors.hpp"

namespace instructtime::model {

using tensor::Activation;
using tensor::BlockSpec;
using tensor::Index;

int ModelConfig::kernel_width(int branch) const {
  const double f = kernel_fractions.at(static_cast<std::size_t>(branch));
  return std::max(1, static_cast<int>(std::lround(f * length)));
}

void ModelConfig::validate() const {
  if (length < 1) throw ConfigError("model length must be positive");
  if (branches < 1 || branch_width < 1) throw ConfigError("branch count and width must be positive");
  if (static_cast<int>(kernel_fractions.size()) != branches)
    throw ConfigError("expected " + std::to_string(branches) + " kernel fractions, got " +
                      std::to_string(kernel_fractions.size()));
  for (double f : kernel_fractions)
    if (!(f > 0.0 && f <= 1.0))
      throw ConfigError("kernel fraction " + std::to_string(f) + " outside (0, 1]");
  if (conv1_channels < 1 || conv2_channels < 1 || conv2_kernel < 1)
    throw ConfigError("conv channel counts and second kernel must be positive");
  if (pool_bins < 1 || pool_bins > length)
    throw ConfigError("pool bins must be in [1, length], got " + std::to_string(pool_bins));
  if (text_width < 1 || mlp_hidden < 1) throw ConfigError("text widths must be positive");
  if (decoder_blocks < 1) throw ConfigError("decoder needs at least one block");
  if (heads < 1 || embedding_dim() % heads != 0)
    throw ConfigError("attention heads (" + std::to_string(heads) +
                      ") must divide the embedding dimension (" + std::to_string(embedding_dim()) +
                      ")");
  if (ff_multiplier < 1) throw ConfigError("feedforward multiplier must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

ModelConfig ModelConfig::desk(int length) {
  ModelConfig c;
  c.length = length;
  c.branches = 4;
  c.branch_width = 32;
  c.kernel_fractions = {1.0, 0.5, 0.25, 0.125};
  c.decoder_blocks = 4;
  c.heads = 2;
  c.temperature = 0.1;
  return c;
}

double Embedding::norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

// ---- SeriesEncoder ---------------------------------------------------------

SeriesEncoder::SeriesEncoder(const ModelConfig& config, std::uint64_t seed,
                             const std::string& prefix)
    : length_(config.length), branch_width_(config.branch_width), pool_bins_(config.pool_bins) {
  config.validate();
  Rng rng(seed);
  for (int j = 0; j < config.branches; ++j) {
    const std::string name = prefix + ".branch" + std::to_string(j);
    const int k = std::min(config.kernel_width(j), config.length);
    const int k2 = std::min(config.conv2_kernel, config.length);
    branches_.push_back(std::unique_ptr<Branch>(new Branch{
        tensor::Conv1d(BlockSpec::conv1d(1, config.conv1_channels, k, config.length),
                       name + ".conv1", rng),
        tensor::Conv1d(BlockSpec::conv1d(config.conv1_channels, config.conv2_channels, k2,
                                         config.length),
                       name + ".conv2", rng),
        tensor::Dense(BlockSpec::dense(config.conv2_channels * config.pool_bins, config.branch_width), name + ".proj",
                      rng)}));
    branches_.back()->conv1.set_input_grad_required(false);
  }
}

Matrix SeriesEncoder::forward(const Matrix& x, Cache* cache, bool normalize) const {
  if (x.rows() != length_ || x.cols() == 0)
    throw InputError("series encoder expects length " + std::to_string(length_) + ", got " +
                     std::to_string(x.rows()));
  const Index batch = x.cols();
  // T x N column-major is already the sample-major 1 x (N*T) conv layout.
  const Matrix flat = Eigen::Map<const Matrix>(x.data(), 1, batch * length_);
  Matrix z(output_dim(), batch);
  if (cache) {
    cache->branch.assign(branches_.size(), {});
    cache->normalized = normalize;
  }
  for (std::size_t j = 0; j < branches_.size(); ++j) {
    const auto& b = *branches_[j];
    auto* tapes = cache ? &cache->branch[j] : nullptr;
    const Matrix h1 = b.conv1.forward(flat, tapes ? &(*tapes)[0] : nullptr);
    const Matrix h2 = b.conv2.forward(h1, tapes ? &(*tapes)[1] : nullptr);
    const Matrix pooled = tensor::mean_pool_time(h2, length_, pool_bins_);
    z.middleRows(static_cast<Index>(j) * branch_width_, branch_width_) =
        b.proj.forward(pooled, tapes ? &(*tapes)[2] : nullptr);
  }
  if (!normalize) {
    if (cache) cache->output = z;
    return z;
  }
  Eigen::VectorXd norms;
  Matrix out = tensor::l2_normalize_columns(z, &norms);
  if (cache) {
    cache->output = out;
    cache->norms = std::move(norms);
  }
  return out;
}

void SeriesEncoder::backward(const Cache& cache, const Matrix& dz) {
  if (cache.branch.size() != branches_.size())
    throw UsageError("series encoder backward without a recorded forward pass");
  const Matrix draw = cache.normalized
                          ? tensor::l2_normalize_columns_backward(cache.output, cache.norms, dz)
                          : dz;
  for (std::size_t j = 0; j < branches_.size(); ++j) {
    auto& b = *branches_[j];
    const auto& tapes = cache.branch[j];
    const Matrix dpooled =
        b.proj.backward(tapes[2], draw.middleRows(static_cast<Index>(j) * branch_width_, branch_width_));
    const Matrix dh2 = tensor::mean_pool_time_backward(dpooled, length_, pool_bins_);
    b.conv1.backward(tapes[0], b.conv2.backward(tapes[1], dh2));
  }
}

std::vector<ParamTensor*> SeriesEncoder::params() {
  std::vector<ParamTensor*> out;
  for (auto& b : branches_)
    for (tensor::Block* blk : std::initializer_list<tensor::Block*>{&b->conv1, &b->conv2, &b->proj})
      for (auto* p : blk->params()) out.push_back(p);
  return out;
}

// ---- InstructionEncoder ----------------------------------------------------

InstructionEncoder::InstructionEncoder(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  for (int j = 0; j < config.branches; ++j) {
    const std::string name = "instruction.mlp" + std::to_string(j);
    mlps_.push_back(std::unique_ptr<Mlp>(new Mlp{
        tensor::Dense(BlockSpec::dense(config.text_width, config.mlp_hidden, Activation::gelu),
                      name + ".hidden1", rng),
        tensor::Dense(BlockSpec::dense(config.mlp_hidden, config.mlp_hidden, Activation::gelu),
                      name + ".hidden2", rng),
        tensor::Dense(BlockSpec::dense(config.mlp_hidden, config.branch_width), name + ".out",
                      rng)}));
    mlps_.back()->hidden1.set_input_grad_required(false);
  }
}

Matrix InstructionEncoder::forward(const Matrix& v, Cache* cache) const {
  const Index d = mlps_.front()->out.spec().out_features;
  Matrix z(d * static_cast<Index>(mlps_.size()), v.cols());
  if (cache) cache->branch.assign(mlps_.size(), {});
  for (std::size_t j = 0; j < mlps_.size(); ++j) {
    const auto& m = *mlps_[j];
    auto* tapes = cache ? &cache->branch[j] : nullptr;
    const Matrix h1 = m.hidden1.forward(v, tapes ? &(*tapes)[0] : nullptr);
    const Matrix h2 = m.hidden2.forward(h1, tapes ? &(*tapes)[1] : nullptr);
    z.middleRows(static_cast<Index>(j) * d, d) = m.out.forward(h2, tapes ? &(*tapes)[2] : nullptr);
  }
  Eigen::VectorXd norms;
  Matrix out = tensor::l2_normalize_columns(z, &norms);
  if (cache) {
    cache->output = out;
    cache->norms = std::move(norms);
  }
  return out;
}

void InstructionEncoder::backward(const Cache& cache, const Matrix& dz) {
  if (cache.branch.size() != mlps_.size())
    throw UsageError("instruction encoder backward without a recorded forward pass");
  const Index d = mlps_.front()->out.spec().out_features;
  const Matrix draw = tensor::l2_normalize_columns_backward(cache.output, cache.norms, dz);
  for (std::size_t j = 0; j < mlps_.size(); ++j) {
    auto& m = *mlps_[j];
    const auto& tapes = cache.branch[j];
    const Matrix dh2 = m.out.backward(tapes[2], draw.middleRows(static_cast<Index>(j) * d, d));
    m.hidden1.backward(tapes[0], m.hidden2.backward(tapes[1], dh2));
  }
}

std::vector<ParamTensor*> InstructionEncoder::params() {
  std::vector<ParamTensor*> out;
  for (auto& m : mlps_)
    for (tensor::Block* blk : std::initializer_list<tensor::Block*>{&m->hidden1, &m->hidden2, &m->out})
      for (auto* p : blk->params()) out.push_back(p);
  return out;
}

// ---- Decoder ---------------------------------------------------------------

Decoder::Decoder(const ModelConfig& config, std::uint64_t seed) : Decoder(config, Rng(seed)) {}

Decoder::Decoder(const ModelConfig& config, Rng&& rng)
    : dim_(config.embedding_dim()),
      // Unit-norm embeddings have entries of order 1/sqrt(D); rescale them to
      // the magnitude of the sinusoidal table before adding it.
      token_scale_(std::sqrt(static_cast<double>(config.embedding_dim()))),
      pos_(BlockSpec::positional_encoding(config.embedding_dim(), 2), "decoder.pos"),
      final_norm_(BlockSpec::layer_norm(config.embedding_dim()), "decoder.final_norm"),
      head_(BlockSpec::linear_head(config.embedding_dim(), config.length), "decoder.head", rng) {
  config.validate();
  for (int b = 0; b < config.decoder_blocks; ++b)
    blocks_.push_back(std::make_unique<tensor::AttentionBlock>(
        BlockSpec::attention_block(dim_, config.heads, config.ff_multiplier * dim_, 2),
        "decoder.block" + std::to_string(b), rng));
}

Matrix Decoder::forward(const Matrix& z_a, const Matrix& z_b, Cache* cache) const {
  if (z_a.rows() != dim_ || z_b.rows() != dim_ || z_a.cols() != z_b.cols() || z_a.cols() == 0)
    throw InputError("decoder expects two " + std::to_string(dim_) + " x N embedding batches, got " +
                     std::to_string(z_a.rows()) + " x " + std::to_string(z_a.cols()) + " and " +
                     std::to_string(z_b.rows()) + " x " + std::to_string(z_b.cols()));
  const Index batch = z_a.cols();
  Matrix tokens(dim_, 2 * batch);
  for (Index n = 0; n < batch; ++n) {
    tokens.col(2 * n) = z_a.col(n) * token_scale_;
    tokens.col(2 * n + 1) = z_b.col(n) * token_scale_;
  }
  if (cache) {
    cache->blocks.assign(blocks_.size(), {});
    cache->batch = batch;
  }
  Matrix h = pos_.forward(tokens, cache ? &cache->pos : nullptr);
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    h = blocks_[b]->forward(h, cache ? &cache->blocks[b] : nullptr);
  Matrix first(dim_, batch);
  for (Index n = 0; n < batch; ++n) first.col(n) = h.col(2 * n);
  const Matrix normed = final_norm_.forward(first, cache ? &cache->final_norm : nullptr);
  return head_.forward(normed, cache ? &cache->head : nullptr);
}

std::pair<Matrix, Matrix> Decoder::backward(const Cache& cache, const Matrix& dx) {
  if (cache.blocks.size() != blocks_.size())
    throw UsageError("decoder backward without a recorded forward pass");
  const Index batch = cache.batch;
  const Matrix dfirst = final_norm_.backward(cache.final_norm, head_.backward(cache.head, dx));
  Matrix dh = Matrix::Zero(dim_, 2 * batch);
  for (Index n = 0; n < batch; ++n) dh.col(2 * n) = dfirst.col(n);
  for (std::size_t b = blocks_.size(); b-- > 0;) dh = blocks_[b]->backward(cache.blocks[b], dh);
  dh = pos_.backward(cache.pos, dh);
  Matrix dza(dim_, batch);
  Matrix dzb(dim_, batch);
  for (Index n = 0; n < batch; ++n) {
    dza.col(n) = dh.col(2 * n) * token_scale_;
    dzb.col(n) = dh.col(2 * n + 1) * token_scale_;
  }
  return {std::move(dza), std::move(dzb)};
}

std::vector<ParamTensor*> Decoder::params() {
  std::vector<ParamTensor*> out;
  for (auto& b : blocks_)
    for (auto* p : b->params()) out.push_back(p);
  for (auto* p : final_norm_.params()) out.push_back(p);
  for (auto* p : head_.params()) out.push_back(p);
  return out;
}

// ---- InstructTimeModel -----------------------------------------------------

InstructTimeModel::InstructTimeModel(ModelConfig config,
                                     std::shared_ptr<const text::TextEmbedder> embedder)
    : config_(std::move(config)),
      embedder_(std::move(embedder)),
      series_(config_, derive_seed(config_.seed, {1})),
      instruction_(config_, derive_seed(config_.seed, {2})),
      decoder_(config_, derive_seed(config_.seed, {3})) {
  if (!embedder_) throw ConfigError("model needs a text embedding provider");
  if (embedder_->width() != config_.text_width)
    throw ProviderError("provider width " + std::to_string(embedder_->width()) +
                        " does not match model text width " + std::to_string(config_.text_width));
}

Embedding InstructTimeModel::encode_series(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != config_.length)
    throw InputError("series length " + std::to_string(x.size()) + " does not match model length " +
                     std::to_string(config_.length));
  for (double v : x)
    if (!std::isfinite(v)) throw InputError("series contains non-finite values");
  const Matrix col = Eigen::Map<const Matrix>(x.data(), config_.length, 1);
  const Matrix z = series_.forward(col);
  return {std::vector<double>(z.data(), z.data() + z.size()), Modality::series};
}

Matrix InstructTimeModel::text_vectors(const std::vector<std::string>& instructions) const {
  const auto vecs = embedder_->embed_batch(instructions);
  Matrix v(config_.text_width, static_cast<Index>(vecs.size()));
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    if (static_cast<int>(vecs[i].values.size()) != config_.text_width)
      throw ProviderError("provider returned width " + std::to_string(vecs[i].values.size()));
    v.col(static_cast<Index>(i)) =
        Eigen::Map<const Eigen::VectorXd>(vecs[i].values.data(), config_.text_width);
  }
  return v;
}

Matrix InstructTimeModel::encode_instruction_batch(const std::vector<std::string>& instructions) const {
  return instruction_.forward(text_vectors(instructions));
}

Embedding InstructTimeModel::encode_instruction(std::string_view instruction) const {
  if (instruction.find_first_not_of(" \t\r\n") == std::string_view::npos)
    throw InputError("instruction is empty");
  const Matrix z = encode_instruction_batch({std::string(instruction)});
  return {std::vector<double>(z.data(), z.data() + z.size()), Modality::instruction};
}

std::vector<double> InstructTimeModel::decode(const Embedding& z_a, const Embedding& z_b) const {
  const auto dim = static_cast<std::size_t>(config_.embedding_dim());
  if (z_a.values.size() != dim || z_b.values.size() != dim)
    throw InputError("decode expects embeddings of length " + std::to_string(dim));
  const Matrix a = Eigen::Map<const Matrix>(z_a.values.data(), static_cast<Index>(dim), 1);
  const Matrix b = Eigen::Map<const Matrix>(z_b.values.data(), static_cast<Index>(dim), 1);
  const Matrix x = decoder_.forward(a, b);
  return {x.data(), x.data() + x.size()};
}

std::vector<ParamTensor*> InstructTimeModel::all_params() {
  auto out = series_.params();
  for (auto* p : instruction_.params()) out.push_back(p);
  for (auto* p : decoder_.params()) out.push_back(p);
  return out;
}

std::vector<const ParamTensor*> InstructTimeModel::all_params() const {
  auto mut = const_cast<InstructTimeModel*>(this)->all_params();
  return {mut.begin(), mut.end()};
}

std::size_t InstructTimeModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : all_params()) n += p->size();
  return n;
}

void InstructTimeModel::zero_grad() {
  for (auto* p : all_params()) p->zero_grad();
}

std::vector<Matrix> InstructTimeModel::snapshot() const {
  std::vector<Matrix> out;
  for (const auto* p : all_params()) out.push_back(p->value);
  return out;
}

void InstructTimeModel::restore(const std::vector<Matrix>& values) {
  auto params = all_params();
  if (values.size() != params.size()) throw ModelError("snapshot does not match model layout");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].rows() != params[i]->value.rows() || values[i].cols() != params[i]->value.cols())
      throw ModelError("snapshot shape mismatch for " + params[i]->name);
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace instructtime::model
