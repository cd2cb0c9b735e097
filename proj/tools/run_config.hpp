#pragma once

// Run configuration shared by the subcommands: a JSON file with sections
// synthgen, model, train, eval and provider. Flags are applied on top of the
// file, and the resolved result is written next to each output.

#include <filesystem>
#include <optional>
#include <string>

#include "instructtime/classifier.hpp"
#include "instructtime/model.hpp"
#include "instructtime/synthgen.hpp"
#include "instructtime/text_embed.hpp"
#include "instructtime/training.hpp"
#include "json.hpp"

namespace instructtime::cli {

struct EvalSection {
  double w = 0.9;
  std::uint64_t plan_seed = 0;
  std::string split = "test";
  std::string plan = "flip";  // flip | identity
};

struct RunConfig {
  synth::SynthConfig synthgen;
  std::string model_preset = "full";  // full | desk
  model::ModelConfig model;
  training::TrainConfig train;
  classifier::ClassifierConfig classifier;
  EvalSection eval;
  text::EmbedProviderConfig provider;

  // Sections present in the file, kept so presets can be re-applied under them.
  nlohmann::json file_model_section;

  // Re-derives the model section from the preset, the file overrides and `length`.
  void resolve_model(int length);

  nlohmann::ordered_json to_json() const;
};

// Defaults overlaid with the file's sections; unknown keys are configuration errors.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path);

// `<output>.config.json` for files, `<dir>/config.json` for directories.
std::filesystem::path resolved_config_path(const std::filesystem::path& output, bool is_directory);
void write_resolved_config(const RunConfig& config, const std::string& command,
                           const std::filesystem::path& output, bool is_directory);

std::vector<std::string> split_list(const std::string& s, char sep = ',');

}  // namespace instructtime::cli
