#include "instructtime/editing.hpp"

#include <cmath>
#include <map>

#include "instructtime/errors.hpp"

namespace instructtime::editing {

using tensor::Index;
using tensor::Matrix;

void EditRequest::validate() const {
  if (weights.empty()) throw InputError("at least one editing weight is required");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    if (!(w >= 0.0 && w <= 1.0))
      throw InputError("editing weight " + std::to_string(w) + " outside [0, 1]");
    if (i > 0 && !(w > weights[i - 1])) throw InputError("editing weights must be strictly increasing");
  }
  if (instruction.find_first_not_of(" \t\r\n") == std::string::npos)
    throw InputError("instruction is empty");
}

Embedding interpolate(const Embedding& z_x, const Embedding& z_c, double w) {
  if (!(w >= 0.0 && w <= 1.0))
    throw InputError("interpolation weight " + std::to_string(w) + " outside [0, 1]");
  if (z_x.values.size() != z_c.values.size())
    throw InputError("cannot interpolate embeddings of different lengths");
  Embedding out;
  out.modality = model::Modality::interpolated;
  out.values.resize(z_x.values.size());
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = (1.0 - w) * z_x.values[i] + w * z_c.values[i];
  return out;
}

namespace {

const model::NormalizationStats* stats_for(const InstructTimeModel& model, Normalization mode) {
  if (mode == Normalization::none || !model.normalization()) return nullptr;
  return &*model.normalization();
}

}  // namespace

EditResult edit(const InstructTimeModel& model, const EditRequest& request) {
  request.validate();
  const int length = model.config().length;
  if (static_cast<int>(request.series.size()) != length)
    throw InputError("series length " + std::to_string(request.series.size()) +
                     " does not match model length " + std::to_string(length));
  const auto* stats = stats_for(model, request.normalization);
  std::vector<double> x = request.series;
  if (stats)
    for (double& v : x) v = stats->standardize(v);

  EditResult result;
  result.z_x = model.encode_series(x);
  result.z_c = model.encode_instruction(request.instruction);
  for (double w : request.weights) {
    // Endpoints use the embeddings themselves so w = 0 / w = 1 reproduce
    // decode(z_x, z_c) / decode(z_c, z_c) exactly.
    Embedding z_w = w == 0.0 ? result.z_x : w == 1.0 ? result.z_c : interpolate(result.z_x, result.z_c, w);
    EditOutput out;
    out.w = w;
    out.z_norm = z_w.norm();
    out.values = model.decode(z_w, result.z_c);
    if (stats)
      for (double& v : out.values) v = stats->destandardize(v);
    result.edits.push_back(std::move(out));
  }
  return result;
}

Matrix edit_batch(const InstructTimeModel& model, const Matrix& series,
                  const std::vector<std::string>& instructions, double w,
                  Normalization normalization) {
  if (series.rows() != model.config().length)
    throw InputError("series length " + std::to_string(series.rows()) +
                     " does not match model length " + std::to_string(model.config().length));
  if (static_cast<std::size_t>(series.cols()) != instructions.size())
    throw InputError("edit_batch needs one instruction per series");
  if (!(w >= 0.0 && w <= 1.0))
    throw InputError("editing weight " + std::to_string(w) + " outside [0, 1]");
  const auto* stats = stats_for(model, normalization);
  Matrix x = series;
  if (stats) x = ((x.array() - stats->mean) / stats->stddev).matrix();

  std::vector<std::string> unique;
  std::map<std::string, Index> slot;
  std::vector<Index> column(instructions.size());
  for (std::size_t i = 0; i < instructions.size(); ++i) {
    auto [it, inserted] = slot.emplace(instructions[i], static_cast<Index>(unique.size()));
    if (inserted) unique.push_back(instructions[i]);
    column[i] = it->second;
  }
  const Matrix zu = model.encode_instruction_batch(unique);
  Matrix zc(zu.rows(), series.cols());
  for (std::size_t i = 0; i < column.size(); ++i) zc.col(static_cast<Index>(i)) = zu.col(column[i]);
  const Matrix zx = model.encode_series_batch(x);
  const Matrix zw = (1.0 - w) * zx + w * zc;
  Matrix out = model.decoder().forward(zw, zc);
  if (stats) out = (out.array() * stats->stddev + stats->mean).matrix();
  return out;
}

}  // namespace instructtime::editing
