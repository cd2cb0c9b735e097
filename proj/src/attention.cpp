#include <cmath>

#include "instructtime/errors.hpp"
#include "instructtime/tensor.hpp"

namespace instructtime::tensor {

namespace {

enum Child { kNorm1, kQuery, kKey, kValue, kOut, kNorm2, kFf1, kFf2, kChildCount };
enum Saved { kQ, kK, kV, kProbs };

}  // namespace

AttentionBlock::AttentionBlock(const BlockSpec& spec, std::string name, Rng& rng)
    : Block(spec, std::move(name)),
      norm1_(BlockSpec::layer_norm(spec.width), name_ + ".norm1"),
      query_(BlockSpec::dense(spec.width, spec.width), name_ + ".query", rng),
      key_(BlockSpec::dense(spec.width, spec.width), name_ + ".key", rng),
      value_(BlockSpec::dense(spec.width, spec.width), name_ + ".value", rng),
      out_(BlockSpec::dense(spec.width, spec.width), name_ + ".out", rng),
      norm2_(BlockSpec::layer_norm(spec.width), name_ + ".norm2"),
      ff1_(BlockSpec::dense(spec.width, spec.ff_width, Activation::gelu), name_ + ".ff1", rng),
      ff2_(BlockSpec::dense(spec.ff_width, spec.width), name_ + ".ff2", rng) {
  if (spec.kind != BlockKind::attention_block) throw ConfigError("wrong spec kind");
}

std::vector<ParamTensor*> AttentionBlock::params() {
  std::vector<ParamTensor*> out;
  for (Block* b : std::initializer_list<Block*>{&norm1_, &query_, &key_, &value_, &out_, &norm2_,
                                                &ff1_, &ff2_})
    for (auto* p : b->params()) out.push_back(p);
  return out;
}

Matrix AttentionBlock::attend(const Matrix& q, const Matrix& k, const Matrix& v,
                              Matrix* probs) const {
  const Index len = spec_.seq_len;
  const Index heads = spec_.heads;
  const Index dh = spec_.width / heads;
  const Index batch = q.cols() / len;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix o(q.rows(), q.cols());
  if (probs) probs->resize(len, batch * heads * len);
  for (Index n = 0; n < batch; ++n) {
    for (Index h = 0; h < heads; ++h) {
      const auto qh = q.block(h * dh, n * len, dh, len);
      const auto kh = k.block(h * dh, n * len, dh, len);
      const auto vh = v.block(h * dh, n * len, dh, len);
      // scores(i, j): query token i against key token j
      Matrix a = (qh.transpose() * kh) * scale;
      for (Index i = 0; i < len; ++i) {
        const double m = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - m).exp();
        a.row(i) /= a.row(i).sum();
      }
      o.block(h * dh, n * len, dh, len).noalias() = vh * a.transpose();
      if (probs) probs->middleCols((n * heads + h) * len, len) = a;
    }
  }
  return o;
}

Matrix AttentionBlock::forward(const Matrix& x, Tape* tape) const {
  if (x.rows() != spec_.width || x.cols() % spec_.seq_len != 0 || x.cols() == 0)
    shape_error("input", spec_.width, -1, x.rows(), x.cols());

  if (!tape) {
    const Matrix u1 = norm1_.forward(x);
    const Matrix att = attend(query_.forward(u1), key_.forward(u1), value_.forward(u1), nullptr);
    const Matrix h = x + out_.forward(att);
    return h + ff2_.forward(ff1_.forward(norm2_.forward(h)));
  }

  tape->clear();
  tape->children.resize(kChildCount);
  auto& c = tape->children;
  const Matrix u1 = norm1_.forward(x, &c[kNorm1]);
  Matrix q = query_.forward(u1, &c[kQuery]);
  Matrix k = key_.forward(u1, &c[kKey]);
  Matrix v = value_.forward(u1, &c[kValue]);
  Matrix probs;
  const Matrix att = attend(q, k, v, &probs);
  const Matrix h = x + out_.forward(att, &c[kOut]);
  const Matrix u2 = norm2_.forward(h, &c[kNorm2]);
  const Matrix f1 = ff1_.forward(u2, &c[kFf1]);
  Matrix y = h + ff2_.forward(f1, &c[kFf2]);
  tape->saved = {std::move(q), std::move(k), std::move(v), std::move(probs)};
  tape->recorded = true;
  return y;
}

Matrix AttentionBlock::backward(const Tape& tape, const Matrix& dy) {
  require_recorded(tape);
  const auto& c = tape.children;
  const Matrix& q = tape.saved.at(kQ);
  const Matrix& k = tape.saved.at(kK);
  const Matrix& v = tape.saved.at(kV);
  const Matrix& probs = tape.saved.at(kProbs);
  if (dy.rows() != q.rows() || dy.cols() != q.cols())
    shape_error("upstream gradient", q.rows(), q.cols(), dy.rows(), dy.cols());

  Matrix dh = dy;
  dh += norm2_.backward(c[kNorm2], ff1_.backward(c[kFf1], ff2_.backward(c[kFf2], dy)));
  const Matrix datt = out_.backward(c[kOut], dh);

  const Index len = spec_.seq_len;
  const Index heads = spec_.heads;
  const Index dhead = spec_.width / heads;
  const Index batch = q.cols() / len;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dhead));
  Matrix dq(q.rows(), q.cols());
  Matrix dk(k.rows(), k.cols());
  Matrix dv(v.rows(), v.cols());
  for (Index n = 0; n < batch; ++n) {
    for (Index h = 0; h < heads; ++h) {
      const auto qh = q.block(h * dhead, n * len, dhead, len);
      const auto kh = k.block(h * dhead, n * len, dhead, len);
      const auto vh = v.block(h * dhead, n * len, dhead, len);
      const auto doh = datt.block(h * dhead, n * len, dhead, len);
      const auto a = probs.middleCols((n * heads + h) * len, len);
      // o = v a^T
      dv.block(h * dhead, n * len, dhead, len).noalias() = doh * a;
      const Matrix da = doh.transpose() * vh;
      Matrix ds(len, len);
      for (Index i = 0; i < len; ++i) {
        const double dot = da.row(i).dot(a.row(i));
        ds.row(i) = a.row(i).array() * (da.row(i).array() - dot);
      }
      ds *= scale;
      dq.block(h * dhead, n * len, dhead, len).noalias() = kh * ds.transpose();
      dk.block(h * dhead, n * len, dhead, len).noalias() = qh * ds;
    }
  }
  Matrix du1 = query_.backward(c[kQuery], dq);
  du1 += key_.backward(c[kKey], dk);
  du1 += value_.backward(c[kValue], dv);
  dh += norm1_.backward(c[kNorm1], du1);
  return dh;
}

}  // namespace instructtime::tensor
