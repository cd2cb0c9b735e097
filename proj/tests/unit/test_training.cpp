#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "json.hpp"
#include "instructtime/errors.hpp"
#include "instructtime/training.hpp"

using namespace instructtime;
using namespace instructtime::training;
using tensor::Matrix;

namespace {

struct Batch {
  Matrix x;
  std::vector<std::string> texts;
};

Batch small_batch() {
  const auto ds = synth::generate_dataset(fixtures::tiny_synth(24, 1));
  Batch b;
  b.x.resize(24, 5);
  for (int i = 0; i < 5; ++i) {
    const auto& ts = ds.series[static_cast<std::size_t>(i * 3)];
    for (int t = 0; t < 24; ++t) b.x(t, i) = ts.values[t] / 10.0;
    b.texts.push_back(*ts.description);
  }
  b.texts[4] = b.texts[0];  // duplicate instruction exercises the scatter path
  return b;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.batch_size = 8;
  c.phase1_epochs = 3;
  c.phase2_epochs = 3;
  c.seed = 11;
  c.patience = 0;
  return c;
}

double total_of(model::InstructTimeModel& m, const Batch& b, Phase phase, const TrainConfig& c) {
  return accumulate_gradients(m, b.x, b.texts, phase, c).total;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig();
  c.lr_phase2 = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Gradients, JointLossMatchesFiniteDifferences) {
  auto m = fixtures::tiny_model();
  fixtures::jitter(*m);
  const auto b = small_batch();
  TrainConfig c;
  c.alpha_mode = losses::AlphaMode::fixed;
  c.fixed_alpha = 0.3;
  accumulate_gradients(*m, b.x, b.texts, Phase::joint, c);
  std::vector<Matrix> analytic;
  for (auto* p : m->all_params()) analytic.push_back(p->grad);
  const auto params = m->all_params();
  // Hundreds of ReLU pre-activations per batch; a small step keeps them off their kinks.
  const double h = 1e-7;
  std::vector<std::pair<Matrix, Matrix>> checked;
  double largest = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    Matrix num(p->value.rows(), p->value.cols());
    // Every entry of small tensors, a strided sample of larger ones.
    const Eigen::Index stride = p->value.size() > 64 ? 7 : 1;
    Matrix a = Matrix::Zero(p->value.rows(), p->value.cols());
    num.setZero();
    for (Eigen::Index i = 0; i < p->value.size(); i += stride) {
      const double orig = p->value.data()[i];
      p->value.data()[i] = orig + h;
      const double fp = total_of(*m, b, Phase::joint, c);
      p->value.data()[i] = orig - h;
      const double fm = total_of(*m, b, Phase::joint, c);
      p->value.data()[i] = orig;
      num.data()[i] = (fp - fm) / (2 * h);
      a.data()[i] = analytic[k].data()[i];
    }
    largest = std::max(largest, num.cwiseAbs().maxCoeff());
    checked.emplace_back(std::move(a), std::move(num));
  }
  double worst = 0.0;
  std::string worst_name;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double e = gradcheck::rel_error(checked[k].first, checked[k].second, gradcheck::kFloorFraction * largest);
    if (e > worst) {
      worst = e;
      worst_name = params[k]->name;
    }
  }
  EXPECT_LT(worst, 1e-4) << worst_name;
}

TEST(Gradients, EveryParameterReceivesGradient) {
  auto m = fixtures::tiny_model();
  const auto b = small_batch();
  accumulate_gradients(*m, b.x, b.texts, Phase::joint, TrainConfig());
  for (const auto* p : std::as_const(*m).all_params()) EXPECT_GT(p->grad.cwiseAbs().maxCoeff(), 0.0) << p->name;
}

TEST(Gradients, PhaseOneIsolatesDecoder) {
  auto m = fixtures::tiny_model();
  const auto b = small_batch();
  TrainConfig c;
  const double base = accumulate_gradients(*m, b.x, b.texts, Phase::contrastive, c).total;
  for (auto* p : m->decoder_params()) EXPECT_TRUE(p->grad.isZero(0.0)) << p->name;
  for (auto* p : m->decoder_params()) {
    p->value.array() += 0.25;
    EXPECT_EQ(accumulate_gradients(*m, b.x, b.texts, Phase::contrastive, c).total, base) << p->name;
    p->value.array() -= 0.25;
  }
}

TEST(Training, PhaseOneLeavesDecoderAtInitialization) {
  auto m = fixtures::tiny_model();
  std::vector<Matrix> dec_before;
  for (auto* p : m->decoder_params()) dec_before.push_back(p->value);
  auto enc_before = m->series_params()[0]->value;
  auto c = quick_config();
  c.phase1_only = true;
  train(*m, synth::generate_dataset(fixtures::tiny_synth(24, 2)), c);
  const auto dec = m->decoder_params();
  for (std::size_t i = 0; i < dec.size(); ++i) EXPECT_EQ(dec[i]->value, dec_before[i]) << dec[i]->name;
  EXPECT_NE(m->series_params()[0]->value, enc_before);
}

TEST(Training, SeededRunsAreBitIdentical) {
  const auto ds = synth::generate_dataset(fixtures::tiny_synth(24, 2));
  auto a = fixtures::tiny_model(), b = fixtures::tiny_model();
  const auto la = train(*a, ds, quick_config());
  const auto lb = train(*b, ds, quick_config());
  EXPECT_EQ(la.digest(), lb.digest());
  EXPECT_EQ(la.to_jsonl(), lb.to_jsonl());
  const auto pa = a->all_params(), pb = b->all_params();
  for (std::size_t i = 0; i < pa.size(); ++i) ASSERT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
}

TEST(Training, RatioTrackingHoldsOnEveryStep) {
  auto m = fixtures::tiny_model();
  const auto log = train(*m, synth::generate_dataset(fixtures::tiny_synth(24, 2)), quick_config());
  int joint_steps = 0;
  for (const auto& s : log.steps) {
    if (s.phase != Phase::joint) continue;
    ++joint_steps;
    EXPECT_NEAR(s.alpha * s.recon / s.contrast, 0.1, 1e-6);
  }
  EXPECT_GT(joint_steps, 0);
}

TEST(Training, LogFormat) {
  auto m = fixtures::tiny_model();
  auto c = quick_config();
  c.phase2_epochs = 1;
  const auto log = train(*m, synth::generate_dataset(fixtures::tiny_synth(24, 2)), c);
  ASSERT_EQ(log.epochs.size(), 4u + 2u);  // epoch 0 record per phase
  std::istringstream in(log.to_jsonl());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"phase", "epoch", "contrast", "recon", "alpha", "total", "val-retrieval-top1"})
      EXPECT_TRUE(j.contains(key)) << key;
    ++lines;
  }
  EXPECT_EQ(lines, 6);
  EXPECT_EQ(log.digest().size(), 64u);
}

TEST(Training, ValidationContrastImproves) {
  auto m = fixtures::tiny_model();
  auto c = quick_config();
  c.phase1_epochs = 15;
  c.phase1_only = true;
  c.lr_phase1 = 3e-3;
  const auto log = train(*m, synth::generate_dataset(fixtures::tiny_synth(24, 6)), c);
  double best = log.epochs.front().val_loss;
  for (const auto& e : log.epochs) best = std::min(best, e.val_loss);
  EXPECT_LT(best, log.epochs.front().val_loss);
}

TEST(Training, NonFiniteLossAbortsWithDiagnostics) {
  auto m = fixtures::tiny_model();
  m->series_params()[0]->value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    train(*m, synth::generate_dataset(fixtures::tiny_synth(24, 2)), quick_config());
    FAIL();
  } catch (const ModelError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("contrast="), std::string::npos) << msg;
  }
}

TEST(Training, LengthMismatchRejected) {
  auto m = fixtures::tiny_model(30);
  EXPECT_THROW(train(*m, synth::generate_dataset(fixtures::tiny_synth(24, 2)), quick_config()), InputError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  tensor::ParamTensor p("p", 2, 1);
  p.value << 1.0, -1.0;
  p.grad << 0.5, -2.0;
  Adam adam({&p}, 0.01);
  adam.step();
  EXPECT_NEAR(p.value(0), 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.value(1), -1.0 + 0.01, 1e-9);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(FewShot, WeightGridParsing) {
  const auto g = parse_weight_grid("0.1:0.9:0.1");
  ASSERT_EQ(g.size(), 9u);
  for (int i = 0; i < 9; ++i) EXPECT_EQ(g[i], (i + 1) / 10.0);
  EXPECT_EQ(parse_weight_grid("0.2,0.5"), (std::vector<double>{0.2, 0.5}));
  EXPECT_THROW(parse_weight_grid("0.1:0.9"), ConfigError);
  EXPECT_THROW(parse_weight_grid("a,b"), ConfigError);
}

TEST(FewShot, ConfigValidation) {
  FewShotConfig c;
  c.examples = {{std::vector<double>(24, 0.0), "No trend."}};
  EXPECT_THROW(c.validate(), ConfigError);  // empty seen pool
  c.seen_instructions = {"No sharp shifts."};
  EXPECT_NO_THROW(c.validate());
  c.weights = {0.0, 0.5};
  EXPECT_THROW(c.validate(), ConfigError);
  c.weights = {0.5};
  c.examples.clear();
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(FewShot, SyntheticPairCounting) {
  auto m = fixtures::tiny_model();
  FewShotConfig c;
  std::vector<double> x(24);
  for (int t = 0; t < 24; ++t) x[t] = 0.1 * t;
  c.examples = {{x, "The time series shows upward linear trend."}};
  c.seen_instructions = {"No trend.", "The time series shows downward linear trend."};
  const auto pairs = synthesize_fewshot_pairs(*m, c);
  ASSERT_EQ(pairs.size(), 18u);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(pairs[i].instruction, "No trend.");
  for (std::size_t i = 9; i < 18; ++i) EXPECT_EQ(pairs[i].instruction, c.seen_instructions[1]);
  for (const auto& p : pairs) EXPECT_EQ(p.values.size(), 24u);
}

TEST(FewShot, ZeroEpochsIsIdentity) {
  auto m = fixtures::tiny_model();
  const auto before = m->snapshot();
  FewShotConfig c;
  c.examples = {{std::vector<double>(24, 1.0), "The time series shows upward linear trend."}};
  c.seen_instructions = {"No trend."};
  c.epochs = 0;
  few_shot_tune(*m, c);
  const auto after = m->snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
}

TEST(FewShot, TuningUpdatesAllParameters) {
  auto m = fixtures::tiny_model();
  const auto before = m->snapshot();
  FewShotConfig c;
  std::vector<double> x(24);
  for (int t = 0; t < 24; ++t) x[t] = 0.1 * t;
  c.examples = {{x, "The time series shows upward linear trend."}};
  c.seen_instructions = {"No trend.", "The time series shows downward linear trend."};
  c.epochs = 2;
  c.train.batch_size = 8;
  const auto log = few_shot_tune(*m, c);
  EXPECT_FALSE(log.steps.empty());
  const auto after = m->snapshot();
  const auto params = m->all_params();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NE(before[i], after[i]) << params[i]->name;
}
