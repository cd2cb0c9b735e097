#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dtw_oracle.hpp"
#include "fixtures.hpp"
#include "instructtime/errors.hpp"
#include "instructtime/evaluate.hpp"
#include "instructtime/metrics.hpp"

using namespace instructtime;
using namespace instructtime::metrics;

namespace {

classifier::ClassifierConfig tiny_classifier_config() {
  classifier::ClassifierConfig c;
  c.encoder = fixtures::tiny_config();
  c.epochs = 2;
  c.batch_size = 16;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Dtw, MatchesExhaustiveSearch) {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto x = oracle::random_word(rng), y = oracle::random_word(rng);
    ASSERT_EQ(dtw(x, y), oracle::brute_dtw(x, y)) << trial;
  }
}

TEST(Dtw, Examples) {
  const std::vector<double> x = {1, 2, 3, 2};
  EXPECT_EQ(dtw(x, x), 0.0);
  EXPECT_EQ(dtw(std::vector<double>{0}, std::vector<double>{3}), 9.0);
  EXPECT_EQ(dtw(std::vector<double>{0, 0, 1}, std::vector<double>{0, 1}), 0.0);
  const std::vector<double> y = {2, 0, 1};
  EXPECT_EQ(dtw(x, y), dtw(y, x));
  EXPECT_THROW(dtw(std::vector<double>{}, y), InputError);
}

TEST(Dtw, PathIsMonotoneAndCostConsistent) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = oracle::random_word(rng), y = oracle::random_word(rng);
    const auto p = dtw_path(x, y);
    ASSERT_FALSE(p.path.empty());
    EXPECT_EQ(p.path.front(), std::make_pair(std::size_t{0}, std::size_t{0}));
    EXPECT_EQ(p.path.back(), std::make_pair(x.size() - 1, y.size() - 1));
    double cost = 0.0;
    for (std::size_t k = 0; k < p.path.size(); ++k) {
      const auto [i, j] = p.path[k];
      cost += (x[i] - y[j]) * (x[i] - y[j]);
      if (k == 0) continue;
      const auto di = i - p.path[k - 1].first, dj = j - p.path[k - 1].second;
      EXPECT_TRUE(di <= 1 && dj <= 1 && di + dj >= 1);
    }
    EXPECT_EQ(cost, p.cost);
    EXPECT_EQ(p.cost, dtw(x, y));
  }
}

TEST(DeltaDtw, SignAndPermutationInvariance) {
  const std::vector<double> x = {0, 0, 0}, xhat = {1, 1, 1};
  const std::vector<std::vector<double>> targets = {{1, 1, 1}, {1, 1, 2}, {2, 1, 1}};
  // DTW(xhat, t) = {0, 1, 1}; DTW(x, t) = {3, 6, 6}; differences {-3, -5, -5}.
  EXPECT_EQ(delta_dtw(xhat, x, targets), -5.0);
  EXPECT_EQ(delta_dtw(x, xhat, targets), 5.0);
  const std::vector<std::vector<double>> shuffled = {targets[2], targets[0], targets[1]};
  EXPECT_EQ(delta_dtw(xhat, x, shuffled), delta_dtw(xhat, x, targets));
  EXPECT_EQ(delta_dtw(x, x, targets), 0.0);
  EXPECT_THROW(delta_dtw(x, x, {}), InputError);
}

TEST(Median, OddAndEven) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), InputError);
}

TEST(Rats, ValuesAndClamping) {
  EXPECT_NEAR(rats(0.9, 0.3), std::log(3.0), 1e-12);
  EXPECT_NEAR(rats(0.3, 0.9), -rats(0.9, 0.3), 1e-12);
  EXPECT_EQ(rats(0.5, 0.5), 0.0);
  EXPECT_NEAR(rats(1.0, 0.0), std::log((1 - kProbClamp) / kProbClamp), 1e-9);
  EXPECT_TRUE(std::isfinite(rats(0.0, 1.0)));
}

TEST(PointErrors, WorkedExample) {
  tensor::Matrix x = tensor::Matrix::Zero(2, 1), xh = tensor::Matrix::Ones(2, 1);
  const auto e = mse_mae(xh, x);
  EXPECT_EQ(e.mse, 2.0);
  EXPECT_NEAR(e.mae, std::sqrt(2.0), 1e-15);
  EXPECT_THROW(mse_mae(xh, tensor::Matrix::Zero(3, 1)), InputError);
}

TEST(Spearman, RankCorrelation) {
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {10, 20, 35, 90}), 1.0, 1e-12);
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0, 1e-12);
  EXPECT_NEAR(spearman({1, 2, 3}, {1, 1, 2}), std::sqrt(3.0) / 2.0, 1e-12);
  EXPECT_THROW(spearman({1}, {1}), InputError);
}

TEST(MeanSe, Values) {
  const auto m = mean_se({1, 2, 3, 4});
  EXPECT_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.se, std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
  EXPECT_EQ(m.n, 4u);
}

TEST(Classifier, ProbabilitiesAndDeterminism) {
  const auto ds = synth::generate_dataset(fixtures::tiny_synth(24, 3));
  const auto a = classifier::train_attribute_classifiers(ds, tiny_classifier_config());
  const auto b = classifier::train_attribute_classifiers(ds, tiny_classifier_config());
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0]->attribute(), "trend");
  EXPECT_EQ(a[0]->levels().size(), 5u);
  tensor::Matrix x(24, 4);
  for (int j = 0; j < 4; ++j)
    for (int t = 0; t < 24; ++t) x(t, j) = ds.series[static_cast<std::size_t>(j)].values[t];
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto p = a[k]->predict_proba(x);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-12);
    EXPECT_EQ(p, b[k]->predict_proba(x));
  }
  EXPECT_NE(classifier::find_classifier(a, "shift"), nullptr);
  EXPECT_EQ(classifier::find_classifier(a, "noise"), nullptr);
  EXPECT_THROW(a[1]->level_index("sideways"), SchemaError);
}

TEST(Classifier, SingleObservedLevelRejected) {
  auto ds = synth::generate_dataset(fixtures::tiny_synth(24, 2));
  std::erase_if(ds.series, [](const synth::TimeSeries& ts) { return ts.attributes.at("shift") != "none"; });
  EXPECT_THROW(classifier::train_attribute_classifiers(ds, tiny_classifier_config()), SchemaError);
}

TEST(Classifier, ConfigValidation) {
  auto c = tiny_classifier_config();
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_classifier_config();
  c.val_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

class EvaluateTest : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dataset_ = new synth::Dataset(synth::generate_dataset(fixtures::tiny_synth(24, 3)));
    classifiers_ = new classifier::ClassifierSet(
        classifier::train_attribute_classifiers(*dataset_, tiny_classifier_config()));
  }
  static void TearDownTestSuite() {
    delete classifiers_;
    delete dataset_;
  }
  static synth::Dataset* dataset_;
  static classifier::ClassifierSet* classifiers_;
};
synth::Dataset* EvaluateTest::dataset_ = nullptr;
classifier::ClassifierSet* EvaluateTest::classifiers_ = nullptr;

TEST_F(EvaluateTest, FlipPlanChangesExactlyOneAttribute) {
  const auto plan = evaluate::make_flip_plan(*dataset_, synth::Split::test, 4);
  EXPECT_EQ(plan.size(), dataset_->indices(synth::Split::test).size());
  for (const auto& item : plan) {
    const auto& src = dataset_->series[item.series_index].attributes;
    ASSERT_EQ(item.edited.size(), 1u);
    ASSERT_EQ(item.preserved.size(), 1u);
    EXPECT_NE(item.target.at(item.edited[0]), src.at(item.edited[0]));
    EXPECT_EQ(item.target.at(item.preserved[0]), src.at(item.preserved[0]));
  }
  const auto again = evaluate::make_flip_plan(*dataset_, synth::Split::test, 4);
  for (std::size_t i = 0; i < plan.size(); ++i) EXPECT_EQ(plan[i].target, again[i].target);
}

TEST_F(EvaluateTest, IdentityPlanAtZeroWeight) {
  auto m = fixtures::tiny_model();
  const auto plan = evaluate::make_identity_plan(*dataset_, synth::Split::test);
  for (const auto& item : plan) EXPECT_TRUE(item.edited.empty());
  evaluate::EvalConfig c;
  c.w = 0.0;
  c.synth = fixtures::tiny_synth(24, 3);
  const auto r = evaluate::evaluate(*m, *dataset_, plan, *classifiers_, c);
  EXPECT_EQ(r.items, plan.size());
  EXPECT_EQ(r.rows.size(), plan.size());
  ASSERT_TRUE(r.point_error.has_value());
  EXPECT_TRUE(std::isfinite(r.point_error->mse));
  for (const auto& row : r.rows) {
    EXPECT_TRUE(row.rats.empty());
    EXPECT_EQ(row.abs_rats.size(), 2u);
  }
}

TEST_F(EvaluateTest, ReportFormats) {
  auto m = fixtures::tiny_model();
  const auto plan = evaluate::make_flip_plan(*dataset_, synth::Split::test, 1);
  evaluate::EvalConfig c;
  const auto r = evaluate::evaluate(*m, *dataset_, plan, *classifiers_, c);
  EXPECT_EQ(r.w, 0.9);
  const auto csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "scope,dDTW,RaTS,|RaTS|,MSE,MAE");
  EXPECT_NE(r.to_json().find("\"per_attribute\""), std::string::npos);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.rats.size(), 1u);
    for (const auto& [_, v] : row.abs_rats) EXPECT_GE(v, 0.0);
  }
}

TEST_F(EvaluateTest, MissingClassifierIsConfigError) {
  auto m = fixtures::tiny_model();
  classifier::ClassifierSet partial;
  const auto plan = evaluate::make_flip_plan(*dataset_, synth::Split::test, 1);
  EXPECT_THROW(evaluate::evaluate(*m, *dataset_, plan, partial, {}), ConfigError);
  evaluate::EvalConfig bad;
  bad.w = 1.5;
  EXPECT_THROW(evaluate::evaluate(*m, *dataset_, plan, *classifiers_, bad), InputError);
}
