#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "instructtime/errors.hpp"
#include "instructtime/model.hpp"

using namespace instructtime;
using namespace instructtime::model;
using tensor::Matrix;

namespace {

// Finite-difference check of every parameter reached by `loss` against the
// gradients already accumulated in `params`.
double param_rel_error(const std::vector<ParamTensor*>& params, const std::function<double()>& loss,
                       std::string* worst, double h = 1e-5) {
  std::vector<Matrix> nums;
  double largest = 0.0;
  for (auto* p : params) {
    Matrix num(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data()[i];
      p->value.data()[i] = orig + h;
      const double fp = loss();
      p->value.data()[i] = orig - h;
      const double fm = loss();
      p->value.data()[i] = orig;
      num.data()[i] = (fp - fm) / (2 * h);
    }
    largest = std::max(largest, num.cwiseAbs().maxCoeff());
    nums.push_back(std::move(num));
  }
  double max_err = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double e = gradcheck::rel_error(params[k]->grad, nums[k], gradcheck::kFloorFraction * largest);
    if (e > max_err) {
      max_err = e;
      *worst = params[k]->name;
    }
  }
  return max_err;
}

std::vector<double> ramp(int n, double slope) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) x[t] = slope * t + std::sin(0.3 * t);
  return x;
}

}  // namespace

TEST(ModelConfig, DefaultsAndKernelWidths) {
  ModelConfig c;
  EXPECT_EQ(c.embedding_dim(), 768);
  EXPECT_EQ(c.kernel_width(0), 200);
  EXPECT_EQ(c.kernel_width(7), 20);
  EXPECT_NO_THROW(c.validate());
  const auto d = ModelConfig::desk();
  EXPECT_EQ(d.branches, 4);
  EXPECT_EQ(d.branch_width, 32);
  EXPECT_EQ(d.decoder_blocks, 4);
  EXPECT_EQ(d.heads, 2);
  EXPECT_NO_THROW(d.validate());
}

TEST(ModelConfig, Invalid) {
  ModelConfig c;
  c.kernel_fractions.pop_back();
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig();
  c.kernel_fractions[0] = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig();
  c.heads = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig();
  c.pool_bins = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig();
  c.length = 5;
  c.kernel_fractions.assign(8, 0.01);
  EXPECT_EQ(c.kernel_width(0), 1);
}

TEST(SeriesEncoder, DefaultWidthIs768) {
  ModelConfig c;
  SeriesEncoder enc(c, 1);
  EXPECT_EQ(enc.output_dim(), 768);
  EXPECT_EQ(enc.first_conv(7).spec().kernel, 20);
  Matrix x = Matrix::Random(200, 1);
  const Matrix z = enc.forward(x);
  ASSERT_EQ(z.rows(), 768);
  EXPECT_NEAR(z.norm(), 1.0, 1e-6);
}

TEST(InstructionEncoder, DefaultWidthIs768) {
  ModelConfig c;
  InstructionEncoder enc(c, 2);
  text::HashEmbedder e;
  const auto v = e.embed_text("The time series shows upward linear trend.").values;
  const Matrix z = enc.forward(Eigen::Map<const Eigen::VectorXd>(v.data(), 768));
  ASSERT_EQ(z.rows(), 768);
  EXPECT_NEAR(z.norm(), 1.0, 1e-6);
}

TEST(Model, EmbeddingsAreUnitNormAndDeterministic) {
  auto m = fixtures::tiny_model();
  const auto x = ramp(24, 0.2);
  const auto zx = m->encode_series(x);
  EXPECT_EQ(zx.modality, Modality::series);
  EXPECT_EQ(static_cast<int>(zx.values.size()), m->config().embedding_dim());
  EXPECT_NEAR(zx.norm(), 1.0, 1e-6);
  const auto zc = m->encode_instruction("The time series shows upward linear trend.");
  EXPECT_EQ(zc.modality, Modality::instruction);
  EXPECT_NEAR(zc.norm(), 1.0, 1e-6);
  EXPECT_EQ(zc.values, m->encode_instruction("The time series shows upward linear trend.").values);
  EXPECT_EQ(zx.values, m->encode_series(x).values);
}

TEST(Model, InputValidation) {
  auto m = fixtures::tiny_model();
  EXPECT_THROW(m->encode_series(std::vector<double>(23, 0.0)), InputError);
  auto bad = ramp(24, 0.1);
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(m->encode_series(bad), InputError);
  EXPECT_THROW(m->encode_instruction(""), InputError);
  Embedding short_z{std::vector<double>(3, 0.0), Modality::series};
  EXPECT_THROW(m->decode(short_z, short_z), InputError);
}

TEST(Model, ProviderWidthMismatch) {
  auto c = fixtures::tiny_config();
  EXPECT_THROW(InstructTimeModel(c, std::make_shared<text::HashEmbedder>(16)), ProviderError);
}

TEST(Model, DecodeShapeAndDeterminism) {
  auto m = fixtures::tiny_model();
  const auto zc = m->encode_instruction("No trend.");
  const auto y = m->decode(zc, zc);
  ASSERT_EQ(y.size(), 24u);
  for (double v : y) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(y, m->decode(zc, zc));
  const auto zx = m->encode_series(ramp(24, -0.1));
  EXPECT_NE(m->decode(zx, zc), y);
}

TEST(Model, BatchMatchesSingle) {
  auto m = fixtures::tiny_model();
  const auto a = ramp(24, 0.3), b = ramp(24, -0.2);
  Matrix x(24, 2);
  x.col(0) = Eigen::Map<const Eigen::VectorXd>(a.data(), 24);
  x.col(1) = Eigen::Map<const Eigen::VectorXd>(b.data(), 24);
  const Matrix z = m->encode_series_batch(x);
  const auto za = m->encode_series(a).values;
  for (int i = 0; i < z.rows(); ++i) EXPECT_NEAR(z(i, 0), za[i], 1e-14);
  const Matrix zc = m->encode_instruction_batch({"No trend.", "No sharp shifts."});
  const auto z1 = m->encode_instruction("No sharp shifts.").values;
  for (int i = 0; i < zc.rows(); ++i) EXPECT_NEAR(zc(i, 1), z1[i], 1e-14);
}

TEST(Model, SnapshotRestore) {
  auto m = fixtures::tiny_model();
  const auto snap = m->snapshot();
  const auto zc = m->encode_instruction("No trend.");
  const auto before = m->decode(zc, zc);
  for (auto* p : m->all_params()) p->value.array() += 0.5;
  EXPECT_NE(m->decode(zc, zc), before);
  m->restore(snap);
  EXPECT_EQ(m->decode(zc, zc), before);
  auto wrong = snap;
  wrong.pop_back();
  EXPECT_THROW(m->restore(wrong), ModelError);
}

TEST(Model, SameSeedSameParameters) {
  auto a = fixtures::tiny_model(24, 3), b = fixtures::tiny_model(24, 3), c = fixtures::tiny_model(24, 4);
  const auto pa = a->all_params(), pb = b->all_params(), pc = c->all_params();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    differs |= pa[i]->value != pc[i]->value;
  }
  EXPECT_TRUE(differs);
}

TEST(ModelGradients, SeriesEncoder) {
  auto m = fixtures::tiny_model();
  fixtures::jitter(*m);
  auto& enc = m->series_encoder();
  Rng rng(21);
  const Matrix x = gradcheck::random_matrix(24, 3, rng);
  const Matrix r = gradcheck::random_matrix(m->config().embedding_dim(), 3, rng);
  SeriesEncoder::Cache cache;
  enc.forward(x, &cache);
  m->zero_grad();
  enc.backward(cache, r);
  std::string worst;
  const double err = param_rel_error(enc.params(), [&] { return (enc.forward(x).array() * r.array()).sum(); }, &worst);
  EXPECT_LT(err, 1e-4) << worst;
}

TEST(ModelGradients, InstructionEncoder) {
  auto m = fixtures::tiny_model();
  fixtures::jitter(*m);
  auto& enc = m->instruction_encoder();
  Rng rng(22);
  const Matrix v = m->text_vectors({"No trend.", "The mean of the time series shifts upwards."});
  const Matrix r = gradcheck::random_matrix(m->config().embedding_dim(), 2, rng);
  InstructionEncoder::Cache cache;
  enc.forward(v, &cache);
  m->zero_grad();
  enc.backward(cache, r);
  std::string worst;
  const double err = param_rel_error(enc.params(), [&] { return (enc.forward(v).array() * r.array()).sum(); }, &worst);
  EXPECT_LT(err, 1e-4) << worst;
}

TEST(ModelGradients, DecoderParametersAndInputs) {
  auto m = fixtures::tiny_model();
  fixtures::jitter(*m);
  auto& dec = m->decoder();
  const int d = m->config().embedding_dim();
  Rng rng(23);
  const Matrix za = gradcheck::random_matrix(d, 2, rng, 0.4), zb = gradcheck::random_matrix(d, 2, rng, 0.4);
  const Matrix r = gradcheck::random_matrix(24, 2, rng);
  Decoder::Cache cache;
  dec.forward(za, zb, &cache);
  m->zero_grad();
  const auto [dza, dzb] = dec.backward(cache, r);
  auto loss = [&](const Matrix& a, const Matrix& b) { return (dec.forward(a, b).array() * r.array()).sum(); };
  std::string worst;
  EXPECT_LT(param_rel_error(dec.params(), [&] { return loss(za, zb); }, &worst), 1e-4) << worst;
  Matrix na(d, 2), nb(d, 2);
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < za.size(); ++i) {
    Matrix p = za, q = za;
    p.data()[i] += h;
    q.data()[i] -= h;
    na.data()[i] = (loss(p, zb) - loss(q, zb)) / (2 * h);
    p = zb;
    q = zb;
    p.data()[i] += h;
    q.data()[i] -= h;
    nb.data()[i] = (loss(za, p) - loss(za, q)) / (2 * h);
  }
  EXPECT_LT(gradcheck::rel_error(dza, na), 1e-4);
  EXPECT_LT(gradcheck::rel_error(dzb, nb), 1e-4);
}

TEST(ModelGradients, BackwardBeforeForwardIsUsageError) {
  auto m = fixtures::tiny_model();
  SeriesEncoder::Cache sc;
  EXPECT_THROW(m->series_encoder().backward(sc, Matrix::Zero(8, 1)), UsageError);
  Decoder::Cache dc;
  EXPECT_THROW(m->decoder().backward(dc, Matrix::Zero(24, 1)), UsageError);
}
