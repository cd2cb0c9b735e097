#pragma once

// Random small configurations for every block kind, shared by the unit tests
// and the acceptance run.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace gradcheck {

using instructtime::tensor::Activation;
using instructtime::tensor::BlockKind;
using instructtime::tensor::BlockSpec;

struct Case {
  BlockKind kind;
  std::string label;
  double max_rel_error = 0.0;
  std::string worst;
};

inline std::vector<Case> run_suite(BlockKind kind, int configs, std::uint64_t seed) {
  std::vector<Case> out;
  Rng rng(seed);
  for (int c = 0; c < configs; ++c) {
    BlockSpec spec;
    Index cols = 0;
    Index rows = 0;
    const auto batch = static_cast<Index>(rng.uniform_int(1, 3));
    switch (kind) {
      case BlockKind::conv1d: {
        const int len = static_cast<int>(rng.uniform_int(3, 9));
        const int k = static_cast<int>(rng.uniform_int(1, len));
        const Activation act = c % 2 ? Activation::relu : Activation::none;
        spec = BlockSpec::conv1d(static_cast<int>(rng.uniform_int(1, 3)),
                                 static_cast<int>(rng.uniform_int(1, 4)), k, len, act);
        rows = spec.in_channels;
        cols = batch * len;
        break;
      }
      case BlockKind::dense: {
        const Activation acts[] = {Activation::none, Activation::relu, Activation::gelu};
        spec = BlockSpec::dense(static_cast<int>(rng.uniform_int(1, 6)),
                                static_cast<int>(rng.uniform_int(1, 6)), acts[c % 3]);
        rows = spec.in_features;
        cols = batch;
        break;
      }
      case BlockKind::linear_head:
        spec = BlockSpec::linear_head(static_cast<int>(rng.uniform_int(1, 8)),
                                      static_cast<int>(rng.uniform_int(1, 8)));
        rows = spec.in_features;
        cols = batch;
        break;
      case BlockKind::layer_norm:
        spec = BlockSpec::layer_norm(static_cast<int>(rng.uniform_int(2, 8)));
        rows = spec.width;
        cols = batch * 2;
        break;
      case BlockKind::positional_encoding: {
        const int seq = static_cast<int>(rng.uniform_int(1, 4));
        spec = BlockSpec::positional_encoding(static_cast<int>(rng.uniform_int(1, 8)), seq);
        rows = spec.width;
        cols = batch * seq;
        break;
      }
      case BlockKind::attention_block: {
        const int heads = static_cast<int>(rng.uniform_int(1, 3));
        const int width = heads * static_cast<int>(rng.uniform_int(1, 3));
        const int seq = static_cast<int>(rng.uniform_int(1, 3));
        spec = BlockSpec::attention_block(width, heads, static_cast<int>(rng.uniform_int(2, 8)), seq);
        rows = width;
        cols = batch * seq;
        break;
      }
    }
    Rng init(instructtime::derive_seed(seed, {static_cast<std::uint64_t>(c), 1}));
    auto block = instructtime::tensor::make_block(spec, "case" + std::to_string(c), init);
    // Layer-norm parameters start at (1, 0); randomize so their gradients are exercised generally.
    for (auto* p : block->params())
      for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += init.normal(0.0, 0.3);
    const Matrix x = random_matrix(rows, cols, init);
    auto r = check_block(*block, x, instructtime::derive_seed(seed, {static_cast<std::uint64_t>(c), 2}));
    out.push_back({kind, std::string(instructtime::tensor::to_string(kind)) + "#" + std::to_string(c),
                   r.max_rel_error, r.worst});
  }
  return out;
}

inline const std::vector<BlockKind>& all_kinds() {
  static const std::vector<BlockKind> kinds = {BlockKind::conv1d,          BlockKind::dense,
                                               BlockKind::attention_block, BlockKind::layer_norm,
                                               BlockKind::positional_encoding, BlockKind::linear_head};
  return kinds;
}

}  // namespace gradcheck
