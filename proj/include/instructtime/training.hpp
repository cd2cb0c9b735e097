#pragma once

// Two-phase training (contrastive alignment, then joint contrastive +
// reconstruction) and few-shot tuning on unseen conditions.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "instructtime/losses.hpp"
#include "instructtime/model.hpp"
#include "instructtime/synthgen.hpp"

namespace instructtime::training {

using model::InstructTimeModel;
using tensor::Matrix;

enum class Phase { contrastive, joint };

std::string_view to_string(Phase phase);

struct TrainConfig {
  int batch_size = 64;
  int phase1_epochs = 40;
  int phase2_epochs = 60;
  double lr_phase1 = 1e-3;
  double lr_phase2 = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double gamma = 1.0;
  losses::AlphaMode alpha_mode = losses::AlphaMode::ratio_tracking;
  double fixed_alpha = 0.1;
  std::uint64_t seed = 0;
  int patience = 10;  // epochs without validation improvement; 0 disables
  bool phase1_only = false;
  bool standardize = true;  // train on series standardized with train-split stats
  bool paraphrase_mix = false;

  void validate() const;
};

struct EpochRecord {
  Phase phase = Phase::contrastive;
  int epoch = 0;  // 0 = before any update
  double contrast = 0.0;
  double recon = 0.0;
  double alpha = 0.0;
  double total = 0.0;
  double val_loss = 0.0;
  double val_retrieval_top1 = 0.0;
};

struct StepRecord {
  Phase phase = Phase::contrastive;
  int epoch = 0;
  int batch = 0;
  double contrast = 0.0;
  double recon = 0.0;
  double alpha = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  int best_phase1_epoch = 0;
  int best_phase2_epoch = 0;

  // One JSON object per epoch record.
  std::string to_jsonl() const;
  std::string digest() const;
};

// Series in model space (already standardized if applicable) paired with an instruction.
struct Pair {
  std::vector<double> values;
  std::string instruction;
};

class Adam {
public:
  Adam(std::vector<tensor::ParamTensor*> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step();
  int steps() const { return t_; }

private:
  std::vector<tensor::ParamTensor*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

// Zeroes all gradients, runs one forward/backward pass on the batch and leaves
// the gradients in the parameters. Phase::contrastive never touches the decoder.
losses::TotalLoss accumulate_gradients(InstructTimeModel& model, const Matrix& x,
                                       const std::vector<std::string>& instructions, Phase phase,
                                       const TrainConfig& config);

struct ValidationScores {
  double contrast = 0.0;
  double recon = 0.0;
  double retrieval_top1 = 0.0;
};

// Batched validation losses plus top-1 retrieval of each series against the
// distinct `classes` instructions (the pair's own instruction must be among them).
ValidationScores validate_pairs(const InstructTimeModel& model, const std::vector<Pair>& pairs,
                                const std::vector<std::string>& classes, int batch_size,
                                double temperature, bool with_recon);

double retrieval_top1(const InstructTimeModel& model, const std::vector<Pair>& pairs,
                      const std::vector<std::string>& classes);

// Runs one or both phases on explicit pairs. The model ends at the best
// validation snapshot of the last phase run.
TrainLog train_pairs(InstructTimeModel& model, const std::vector<Pair>& train,
                     const std::vector<Pair>& validation, const std::vector<std::string>& classes,
                     const TrainConfig& config, bool run_phase1 = true, bool run_phase2 = true);

// Dataset front end: sets the model's normalization from the train split (when
// standardizing), renders instructions, trains on the train split and validates
// on the validation split.
TrainLog train(InstructTimeModel& model, const synth::Dataset& dataset, const TrainConfig& config,
               const synth::TemplateBank* templates = nullptr);

// Raw-unit series carrying an instruction for the unseen condition.
struct FewShotExample {
  std::vector<double> values;
  std::string instruction;
};

struct FewShotConfig {
  std::vector<FewShotExample> examples;
  std::vector<double> weights = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int epochs = 30;
  std::vector<std::string> seen_instructions;
  TrainConfig train;  // batch size, learning rate (phase 2), gamma, seed

  void validate() const;
};

// Weight grid "a:b:step" (inclusive of b up to rounding) or a comma list.
std::vector<double> parse_weight_grid(std::string_view spec);

// Step 1 of few-shot tuning: edits of every example toward every seen
// instruction at every weight, each labelled with that seen instruction.
// Returned values are in raw units.
std::vector<FewShotExample> synthesize_fewshot_pairs(const InstructTimeModel& model,
                                                     const FewShotConfig& config);

// Step 2: joint training on the synthetic pairs plus the real examples.
TrainLog few_shot_tune(InstructTimeModel& model, const FewShotConfig& config);

}  // namespace instructtime::training
