#pragma once

// Evaluation harness: edit every planned test item at strength w and score
// editability (RaTS, delta DTW) and preservability (|RaTS|).

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "instructtime/classifier.hpp"
#include "instructtime/metrics.hpp"
#include "instructtime/model.hpp"
#include "instructtime/synthgen.hpp"

namespace instructtime::evaluate {

struct EditPlanItem {
  std::size_t series_index = 0;  // into Dataset::series
  synth::AttributeSet target;
  std::vector<std::string> edited;     // attributes whose level changes
  std::vector<std::string> preserved;  // the rest of the schema
};

// For each series of `split`, flip one attribute (uniformly among `attributes`,
// default all) to a different level chosen uniformly at random.
std::vector<EditPlanItem> make_flip_plan(const synth::Dataset& dataset, synth::Split split,
                                         std::uint64_t seed,
                                         const std::vector<std::string>& attributes = {});

// Every series of `split` with the target equal to its own attributes.
std::vector<EditPlanItem> make_identity_plan(const synth::Dataset& dataset, synth::Split split);

struct EvalConfig {
  double w = 0.9;
  synth::Split population_split = synth::Split::test;
  // Ground-truth generator settings of a synthetic dataset (enables MSE/MAE).
  std::optional<synth::SynthConfig> synth;
  const synth::TemplateBank* templates = nullptr;
};

struct AttributeScores {
  std::string attribute;
  metrics::MeanSe delta_dtw;
  metrics::MeanSe rats;
  metrics::MeanSe abs_rats;
};

struct ItemResult {
  std::string id;
  std::string instruction;
  std::vector<std::string> edited;
  std::map<std::string, double> rats;       // edited attributes
  std::map<std::string, double> abs_rats;   // preserved attributes
  std::optional<double> delta_dtw;          // nullopt when the target population is empty
};

struct EvalReport {
  double w = 0.0;
  std::size_t items = 0;
  std::vector<AttributeScores> per_attribute;
  // Equal-weight means over attributes that have samples.
  double delta_dtw = 0.0;
  double rats = 0.0;
  double abs_rats = 0.0;
  std::optional<metrics::PointError> point_error;
  std::vector<std::string> missing_targets;  // combination keys with no population
  std::vector<ItemResult> rows;

  std::string to_json() const;
  // Columns: dDTW, RaTS, |RaTS|, MSE, MAE.
  std::string to_csv() const;
};

EvalReport evaluate(const model::InstructTimeModel& model, const synth::Dataset& dataset,
                    const std::vector<EditPlanItem>& plan,
                    const classifier::ClassifierSet& classifiers, const EvalConfig& config);

}  // namespace instructtime::evaluate
