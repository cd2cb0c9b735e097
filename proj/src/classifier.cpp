#include "instructtime/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "instructtime/errors.hpp"
#include "instructtime/text_embed.hpp"
#include "instructtime/training.hpp"

namespace instructtime::classifier {

using tensor::Index;

void ClassifierConfig::validate() const {
  encoder.validate();
  if (epochs < 1) throw ConfigError("classifier epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("classifier batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("classifier learning rate must be > 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("classifier validation fraction must be in (0, 1)");
}

AttributeClassifier::AttributeClassifier(std::string attribute, std::vector<std::string> levels,
                                         const model::ModelConfig& encoder, std::uint64_t seed)
    : attribute_(std::move(attribute)),
      levels_(std::move(levels)),
      config_(encoder),
      seed_(seed),
      encoder_(encoder, derive_seed(seed, {1}), "classifier." + attribute_) {
  if (levels_.size() < 2)
    throw SchemaError("attribute '" + attribute_ + "' needs at least two levels for a classifier");
  Rng rng(derive_seed(seed, {2}));
  head_ = std::make_unique<tensor::Dense>(
      tensor::BlockSpec::dense(encoder_.output_dim(), static_cast<int>(levels_.size())),
      "classifier." + attribute_ + ".head", rng);
}

std::size_t AttributeClassifier::level_index(std::string_view level) const {
  auto it = std::find(levels_.begin(), levels_.end(), level);
  if (it == levels_.end())
    throw SchemaError("unknown level '" + std::string(level) + "' for attribute '" + attribute_ + "'");
  return static_cast<std::size_t>(it - levels_.begin());
}

Matrix AttributeClassifier::logits(const Matrix& x_std, Cache* cache) const {
  const Matrix h = encoder_.forward(x_std, cache ? &cache->encoder : nullptr, false);
  return head_->forward(h, cache ? &cache->head : nullptr);
}

void AttributeClassifier::backward(const Cache& cache, const Matrix& dlogits) {
  encoder_.backward(cache.encoder, head_->backward(cache.head, dlogits));
}

namespace {

Matrix softmax_columns(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Index n = 0; n < logits.cols(); ++n) {
    const double m = logits.col(n).maxCoeff();
    p.col(n) = (logits.col(n).array() - m).exp().matrix();
    p.col(n) /= p.col(n).sum();
  }
  return p;
}

}  // namespace

Matrix AttributeClassifier::predict_proba(const Matrix& x) const {
  const Matrix xs = ((x.array() - stats_.mean) / stats_.stddev).matrix();
  return softmax_columns(logits(xs));
}

std::vector<double> AttributeClassifier::predict_proba(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != config_.length)
    throw InputError("classifier expects length " + std::to_string(config_.length) + ", got " +
                     std::to_string(x.size()));
  const Matrix p = predict_proba(Eigen::Map<const Matrix>(x.data(), config_.length, 1));
  return {p.data(), p.data() + p.size()};
}

double AttributeClassifier::probability(std::span<const double> x, std::string_view level) const {
  const auto k = level_index(level);
  return predict_proba(x)[k];
}

std::vector<tensor::ParamTensor*> AttributeClassifier::params() {
  auto out = encoder_.params();
  for (auto* p : head_->params()) out.push_back(p);
  return out;
}

std::vector<const tensor::ParamTensor*> AttributeClassifier::params() const {
  auto mut = const_cast<AttributeClassifier*>(this)->params();
  return {mut.begin(), mut.end()};
}

const AttributeClassifier* find_classifier(const ClassifierSet& set, std::string_view attribute) {
  for (const auto& c : set)
    if (c->attribute() == attribute) return c.get();
  return nullptr;
}

namespace {

struct Split {
  Matrix x;
  std::vector<Index> y;
};

Split build(const std::vector<const synth::TimeSeries*>& series, const std::vector<std::size_t>& idx,
            const model::NormalizationStats& stats, const AttributeClassifier& clf, int length) {
  Split s;
  s.x.resize(length, static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& ts = *series[idx[i]];
    for (int t = 0; t < length; ++t) s.x(t, static_cast<Index>(i)) = stats.standardize(ts.values[t]);
    s.y.push_back(static_cast<Index>(clf.level_index(ts.attributes.at(clf.attribute()))));
  }
  return s;
}

double accuracy(const AttributeClassifier& clf, const Split& s) {
  if (s.y.empty()) return 0.0;
  std::size_t correct = 0;
  constexpr Index chunk = 256;
  for (Index start = 0; start < s.x.cols(); start += chunk) {
    const Index n = std::min(chunk, s.x.cols() - start);
    const Matrix lg = clf.logits(s.x.middleCols(start, n));
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      lg.col(i).maxCoeff(&best);
      if (best == s.y[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(s.y.size());
}

double cross_entropy(const AttributeClassifier& clf, const Split& s) {
  double loss = 0.0;
  constexpr Index chunk = 256;
  for (Index start = 0; start < s.x.cols(); start += chunk) {
    const Index n = std::min(chunk, s.x.cols() - start);
    const Matrix p = softmax_columns(clf.logits(s.x.middleCols(start, n)));
    for (Index i = 0; i < n; ++i)
      loss -= std::log(std::max(p(s.y[static_cast<std::size_t>(start + i)], i), 1e-300));
  }
  return loss / static_cast<double>(std::max<std::size_t>(1, s.y.size()));
}

model::NormalizationStats stats_of(const std::vector<const synth::TimeSeries*>& series) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto* ts : series)
    for (double v : ts->values) {
      sum += v;
      ++n;
    }
  model::NormalizationStats st;
  st.mean = sum / static_cast<double>(n);
  for (const auto* ts : series)
    for (double v : ts->values) sq += (v - st.mean) * (v - st.mean);
  st.stddev = std::sqrt(sq / static_cast<double>(n));
  if (!(st.stddev > 0.0)) throw InputError("classifier training data has zero variance");
  return st;
}

std::string fingerprint_of(const std::vector<const synth::TimeSeries*>& series) {
  std::string material;
  for (const auto* ts : series) {
    material += ts->id;
    material.push_back('\n');
  }
  return text::sha256_hex(material);
}

}  // namespace

ClassifierSet train_attribute_classifiers(const std::vector<const synth::TimeSeries*>& series,
                                          const synth::AttributeSchema& schema,
                                          const ClassifierConfig& config) {
  config.validate();
  if (series.size() < 2) throw ConfigError("classifier training needs at least two series");
  for (const auto* ts : series)
    if (static_cast<int>(ts->values.size()) != config.encoder.length)
      throw InputError("series " + ts->id + " has length " + std::to_string(ts->values.size()) +
                       ", classifier expects " + std::to_string(config.encoder.length));
  const auto stats = stats_of(series);
  const auto fp = fingerprint_of(series);

  std::vector<std::size_t> order(series.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(config.seed, {0}));
  split_rng.shuffle(order);
  const auto n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(config.val_fraction * static_cast<double>(series.size()))));
  const std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  const std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  ClassifierSet out;
  for (std::size_t a = 0; a < schema.size(); ++a) {
    const auto& attr = schema.attributes()[a];
    std::set<std::string> observed;
    for (const auto* ts : series) observed.insert(ts->attributes.at(attr.name));
    if (observed.size() < 2)
      throw SchemaError("attribute '" + attr.name + "' has only one observed level; cannot train a classifier");

    auto clf = std::make_unique<AttributeClassifier>(attr.name, attr.levels, config.encoder,
                                                     derive_seed(config.seed, {1, a}));
    clf->set_normalization(stats);
    clf->set_training_fingerprint(fp);
    const Split train = build(series, train_idx, stats, *clf, config.encoder.length);
    const Split val = build(series, val_idx, stats, *clf, config.encoder.length);

    training::Adam adam(clf->params(), config.lr);
    Rng rng(derive_seed(config.seed, {2, a}));
    std::vector<Index> perm(static_cast<std::size_t>(train.x.cols()));
    std::iota(perm.begin(), perm.end(), 0);

    double best = std::numeric_limits<double>::infinity();
    std::vector<Matrix> best_params;
    auto snapshot = [&] {
      best_params.clear();
      for (const auto* p : std::as_const(*clf).params()) best_params.push_back(p->value);
    };
    snapshot();
    int stale = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      rng.shuffle(perm);
      for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(perm.size(), start + static_cast<std::size_t>(config.batch_size));
        Matrix xb(train.x.rows(), static_cast<Index>(end - start));
        std::vector<Index> yb;
        for (std::size_t i = start; i < end; ++i) {
          xb.col(static_cast<Index>(i - start)) = train.x.col(perm[i]);
          yb.push_back(train.y[static_cast<std::size_t>(perm[i])]);
        }
        for (auto* p : clf->params()) p->zero_grad();
        AttributeClassifier::Cache cache;
        Matrix g = softmax_columns(clf->logits(xb, &cache));
        for (std::size_t i = 0; i < yb.size(); ++i) g(yb[i], static_cast<Index>(i)) -= 1.0;
        g /= static_cast<double>(yb.size());
        clf->backward(cache, g);
        adam.step();
      }
      const double vl = cross_entropy(*clf, val);
      if (!std::isfinite(vl)) throw ModelError("classifier '" + attr.name + "' diverged");
      if (vl < best) {
        best = vl;
        snapshot();
        stale = 0;
      } else if (config.patience > 0 && ++stale >= config.patience) {
        break;
      }
    }
    auto params = clf->params();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
    clf->set_validation_accuracy(accuracy(*clf, val));
    out.push_back(std::move(clf));
  }
  return out;
}

ClassifierSet train_attribute_classifiers(const synth::Dataset& dataset,
                                          const ClassifierConfig& config) {
  std::vector<const synth::TimeSeries*> all;
  for (const auto& ts : dataset.series) all.push_back(&ts);
  return train_attribute_classifiers(all, dataset.schema, config);
}

}  // namespace instructtime::classifier
