#pragma once

// Checkpoint container:
//   8 bytes   magic "ITCKPT\0\0"
//   8 bytes   header length L (little-endian u64)
//   L bytes   JSON header (config, fingerprints, tensor index with offsets)
//   payload   little-endian IEEE-754 doubles, tensors back to back
//
// The header records the payload byte count and its SHA-256 so truncation and
// corruption are distinguished on load.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "instructtime/classifier.hpp"
#include "instructtime/model.hpp"
#include "instructtime/synthgen.hpp"
#include "instructtime/text_embed.hpp"

namespace instructtime::checkpoint {

inline constexpr int kFormatVersion = 1;

struct TensorEntry {
  std::string name;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::uint64_t offset = 0;  // bytes from payload start
};

struct Header {
  int format_version = kFormatVersion;
  std::string kind;  // "model" or "classifiers"
  model::ModelConfig config;
  synth::AttributeSchema schema;
  std::vector<synth::DescriptionTemplate> templates;
  text::EmbedProviderConfig provider;
  std::string provider_fingerprint;
  std::optional<model::NormalizationStats> normalization;
  std::string training_log_digest;
  std::uint64_t seed = 0;
  std::vector<TensorEntry> tensors;
  std::uint64_t payload_bytes = 0;
  std::string payload_sha256;
  std::string extra;  // free-form JSON object text (classifier metadata)
};

struct ModelMeta {
  synth::AttributeSchema schema;
  synth::TemplateBank templates;
  text::EmbedProviderConfig provider;
  std::string training_log_digest;
};

void save_model(const model::InstructTimeModel& model, const ModelMeta& meta,
                const std::filesystem::path& path);

struct LoadedModel {
  std::unique_ptr<model::InstructTimeModel> model;
  Header header;
  synth::TemplateBank templates;
};

// Builds a fresh model and fills it; nothing is returned unless every check
// passes. With `embedder` null one is created from the stored provider config.
LoadedModel load_model(const std::filesystem::path& path,
                       std::shared_ptr<const text::TextEmbedder> embedder = nullptr);

// Loads parameters into an existing model only when everything validates.
void load_into(model::InstructTimeModel& model, const std::filesystem::path& path);

void save_classifiers(const classifier::ClassifierSet& set, const std::filesystem::path& path);
classifier::ClassifierSet load_classifiers(const std::filesystem::path& path);

Header read_header(const std::filesystem::path& path);

// SHA-256 of the file bytes.
std::string file_fingerprint(const std::filesystem::path& path);

std::string model_config_to_json(const model::ModelConfig& config);
model::ModelConfig model_config_from_json(const std::string& text);

}  // namespace instructtime::checkpoint
