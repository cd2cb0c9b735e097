#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "instructtime/editing.hpp"
#include "instructtime/errors.hpp"

using namespace instructtime;
using namespace instructtime::editing;
using model::Modality;

namespace {

std::vector<double> wave(int n) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) x[t] = 3.0 + 0.4 * t + std::cos(0.5 * t);
  return x;
}

EditRequest request(std::vector<double> weights) {
  EditRequest r;
  r.series = wave(24);
  r.instruction = "The mean of the time series shifts upwards.";
  r.weights = std::move(weights);
  return r;
}

}  // namespace

TEST(Interpolate, WorkedExample) {
  Embedding e1{{1.0, 0.0}, Modality::series}, e2{{0.0, 1.0}, Modality::instruction};
  const auto z = interpolate(e1, e2, 0.5);
  EXPECT_EQ(z.values, (std::vector<double>{0.5, 0.5}));
  EXPECT_NEAR(z.norm(), std::sqrt(0.5), 1e-15);
  EXPECT_EQ(z.modality, Modality::interpolated);
  EXPECT_EQ(interpolate(e1, e2, 0.0).values, e1.values);
  EXPECT_EQ(interpolate(e1, e2, 1.0).values, e2.values);
}

TEST(Interpolate, RejectsBadInput) {
  Embedding a{{1.0, 0.0}, Modality::series}, b{{0.0, 1.0}, Modality::instruction};
  EXPECT_THROW(interpolate(a, b, -0.01), InputError);
  EXPECT_THROW(interpolate(a, b, 1.01), InputError);
  EXPECT_THROW(interpolate(a, b, std::nan("")), InputError);
  Embedding c{{1.0}, Modality::instruction};
  EXPECT_THROW(interpolate(a, c, 0.5), InputError);
}

TEST(Interpolate, NormIsConvexAlongThePath) {
  auto m = fixtures::tiny_model();
  const auto zx = m->encode_series(wave(24));
  const auto zc = m->encode_instruction("No trend.");
  const double cos = [&] {
    double d = 0;
    for (std::size_t i = 0; i < zx.values.size(); ++i) d += zx.values[i] * zc.values[i];
    return d;
  }();
  for (int k = 0; k <= 10; ++k) {
    const double w = k / 10.0;
    const double n = interpolate(zx, zc, w).norm();
    EXPECT_LE(n, 1.0 + 1e-12);
    // Unit endpoints: |z_w|^2 = (1-w)^2 + w^2 + 2 w (1-w) cos.
    EXPECT_NEAR(n * n, (1 - w) * (1 - w) + w * w + 2 * w * (1 - w) * cos, 1e-12);
  }
}

TEST(EditRequest, Validation) {
  EXPECT_NO_THROW(request({0.0, 0.5, 1.0}).validate());
  EXPECT_THROW(request({}).validate(), InputError);
  EXPECT_THROW(request({0.5, 0.5}).validate(), InputError);
  EXPECT_THROW(request({0.6, 0.2}).validate(), InputError);
  EXPECT_THROW(request({1.5}).validate(), InputError);
  auto r = request({0.5});
  r.instruction = "  ";
  EXPECT_THROW(r.validate(), InputError);
}

TEST(Edit, OneOutputPerWeight) {
  auto m = fixtures::tiny_model();
  const auto res = edit(*m, request({0.0, 0.5, 1.0}));
  ASSERT_EQ(res.edits.size(), 3u);
  for (const auto& e : res.edits) EXPECT_EQ(e.values.size(), 24u);
  EXPECT_EQ(res.edits[1].w, 0.5);
  EXPECT_NE(res.edits[0].values, res.edits[2].values);
}

TEST(Edit, EndpointsAreBitExact) {
  for (bool with_stats : {false, true}) {
    auto m = fixtures::tiny_model();
    if (with_stats) m->set_normalization(model::NormalizationStats{2.5, 4.0, "x"});
    const auto res = edit(*m, request({0.0, 1.0}));
    auto x = wave(24);
    if (with_stats)
      for (double& v : x) v = (v - 2.5) / 4.0;
    const auto zx = m->encode_series(x);
    const auto zc = m->encode_instruction(request({}).instruction);
    auto at0 = m->decode(zx, zc), at1 = m->decode(zc, zc);
    if (with_stats) {
      for (double& v : at0) v = v * 4.0 + 2.5;
      for (double& v : at1) v = v * 4.0 + 2.5;
    }
    EXPECT_EQ(res.edits[0].values, at0) << with_stats;
    EXPECT_EQ(res.edits[1].values, at1) << with_stats;
    EXPECT_EQ(res.z_x.values, zx.values);
    EXPECT_NEAR(res.edits[0].z_norm, 1.0, 1e-9);
  }
}

TEST(Edit, NormalizationNoneIgnoresStats) {
  auto plain = fixtures::tiny_model(), with = fixtures::tiny_model();
  with->set_normalization(model::NormalizationStats{2.5, 4.0, "x"});
  auto r = request({0.3});
  r.normalization = Normalization::none;
  EXPECT_EQ(edit(*plain, r).edits[0].values, edit(*with, r).edits[0].values);
}

TEST(Edit, InputErrors) {
  auto m = fixtures::tiny_model();
  auto r = request({0.5});
  r.series.pop_back();
  EXPECT_THROW(edit(*m, r), InputError);
  r = request({0.5});
  r.series[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(edit(*m, r), InputError);
}

TEST(EditBatch, MatchesSingleEdits) {
  auto m = fixtures::tiny_model();
  m->set_normalization(model::NormalizationStats{1.0, 2.0, "x"});
  const std::vector<std::string> texts = {"No trend.", "The mean of the time series shifts upwards.", "No trend."};
  tensor::Matrix x(24, 3);
  for (int j = 0; j < 3; ++j) {
    const auto w = wave(24);
    for (int t = 0; t < 24; ++t) x(t, j) = w[t] * (j + 1) - j;
  }
  const auto out = edit_batch(*m, x, texts, 0.6);
  for (int j = 0; j < 3; ++j) {
    EditRequest r;
    r.series.assign(x.col(j).data(), x.col(j).data() + 24);
    r.instruction = texts[j];
    r.weights = {0.6};
    const auto single = edit(*m, r).edits[0].values;
    for (int t = 0; t < 24; ++t) EXPECT_NEAR(out(t, j), single[t], 1e-10);
  }
  EXPECT_THROW(edit_batch(*m, x, {"a"}, 0.5), InputError);
  EXPECT_THROW(edit_batch(*m, x, texts, 1.5), InputError);
}
