#pragma once

// Interpolated editing: z_w = (1 - w) z_x + w z_c, output = decode(z_w, z_c).

#include <string>
#include <vector>

#include "instructtime/model.hpp"

namespace instructtime::editing {

using model::Embedding;
using model::InstructTimeModel;

enum class Normalization { dataset_stats, none };

struct EditRequest {
  std::vector<double> series;
  std::string instruction;
  std::vector<double> weights;
  Normalization normalization = Normalization::dataset_stats;

  // Weights non-empty, within [0, 1], strictly increasing.
  void validate() const;
};

struct EditOutput {
  double w = 0.0;
  std::vector<double> values;
  double z_norm = 0.0;
};

struct EditResult {
  std::vector<EditOutput> edits;
  Embedding z_x;
  Embedding z_c;
};

Embedding interpolate(const Embedding& z_x, const Embedding& z_c, double w);

EditResult edit(const InstructTimeModel& model, const EditRequest& request);

// Batched editing at one strength: column n of `series` (raw units, T x N) is
// edited toward instructions[n].
tensor::Matrix edit_batch(const InstructTimeModel& model, const tensor::Matrix& series,
                          const std::vector<std::string>& instructions, double w,
                          Normalization normalization = Normalization::dataset_stats);

}  // namespace instructtime::editing
