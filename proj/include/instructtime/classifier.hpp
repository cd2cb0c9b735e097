#pragma once

// Per-attribute classifiers used by the evaluation metrics: the series
// encoder architecture (without the unit-norm projection) plus a softmax head.

#include <memory>
#include <string>
#include <vector>

#include "instructtime/model.hpp"
#include "instructtime/synthgen.hpp"

namespace instructtime::classifier {

using tensor::Matrix;

struct ClassifierConfig {
  model::ModelConfig encoder = model::ModelConfig::desk();
  int epochs = 30;
  int batch_size = 64;
  double lr = 1e-3;
  int patience = 5;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

class AttributeClassifier {
public:
  AttributeClassifier(std::string attribute, std::vector<std::string> levels,
                      const model::ModelConfig& encoder, std::uint64_t seed);

  const std::string& attribute() const { return attribute_; }
  const std::vector<std::string>& levels() const { return levels_; }
  const model::ModelConfig& encoder_config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  const model::NormalizationStats& normalization() const { return stats_; }
  void set_normalization(model::NormalizationStats stats) { stats_ = std::move(stats); }

  double validation_accuracy() const { return val_accuracy_; }
  void set_validation_accuracy(double acc) { val_accuracy_ = acc; }
  const std::string& training_fingerprint() const { return training_fingerprint_; }
  void set_training_fingerprint(std::string fp) { training_fingerprint_ = std::move(fp); }

  // Raw-unit series (T x N) -> probabilities (levels x N); columns sum to 1.
  Matrix predict_proba(const Matrix& x) const;
  std::vector<double> predict_proba(std::span<const double> x) const;
  double probability(std::span<const double> x, std::string_view level) const;
  std::size_t level_index(std::string_view level) const;

  // Logits from standardized input, with caches for training.
  struct Cache {
    model::SeriesEncoder::Cache encoder;
    tensor::Tape head;
  };
  Matrix logits(const Matrix& x_std, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const Matrix& dlogits);

  std::vector<tensor::ParamTensor*> params();
  std::vector<const tensor::ParamTensor*> params() const;

private:
  std::string attribute_;
  std::vector<std::string> levels_;
  model::ModelConfig config_;
  std::uint64_t seed_;
  model::NormalizationStats stats_;
  double val_accuracy_ = 0.0;
  std::string training_fingerprint_;
  model::SeriesEncoder encoder_;
  std::unique_ptr<tensor::Dense> head_;
};

using ClassifierSet = std::vector<std::unique_ptr<AttributeClassifier>>;

const AttributeClassifier* find_classifier(const ClassifierSet& set, std::string_view attribute);

// One classifier per schema attribute, trained on `series` with an internal
// 80/20 split for early stopping.
ClassifierSet train_attribute_classifiers(const std::vector<const synth::TimeSeries*>& series,
                                          const synth::AttributeSchema& schema,
                                          const ClassifierConfig& config);
ClassifierSet train_attribute_classifiers(const synth::Dataset& dataset,
                                          const ClassifierConfig& config);

}  // namespace instructtime::classifier
