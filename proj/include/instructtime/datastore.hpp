#pragma once

// Dataset files, normalization statistics and CSV ingestion.
//
// On disk a dataset directory holds:
//   dataset.jsonl   one series per line {id, values, attributes, description, split}
//   splits.json     {"train": [...indices], "validation": [...], "test": [...]}
//   manifest.json   schema, generator settings and counts

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "instructtime/model.hpp"
#include "instructtime/synthgen.hpp"

namespace instructtime::datastore {

using synth::AttributeSchema;
using synth::Dataset;
using synth::TimeSeries;

std::string series_to_json(const TimeSeries& ts);
TimeSeries series_from_json(const std::string& line);

void write_dataset_jsonl(const Dataset& dataset, const std::filesystem::path& path);
// Schema must be supplied or inferable (first-seen level order per attribute).
Dataset read_dataset_jsonl(const std::filesystem::path& path,
                           const std::optional<AttributeSchema>& schema = std::nullopt);

std::string schema_to_json(const AttributeSchema& schema);
AttributeSchema schema_from_json(const std::string& text);

struct Manifest {
  AttributeSchema schema;
  std::optional<synth::SynthConfig> synth;
  std::size_t count = 0;
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

// Writes dataset.jsonl, splits.json and manifest.json into `dir`.
void write_dataset_dir(const Dataset& dataset, const std::filesystem::path& dir,
                       const std::optional<synth::SynthConfig>& synth = std::nullopt);
Dataset read_dataset_dir(const std::filesystem::path& dir, Manifest* manifest = nullptr);
// Accepts either a dataset directory or a bare JSONL file.
Dataset load_dataset(const std::filesystem::path& path, Manifest* manifest = nullptr);

// Global mean / std over every value of every train-split series.
model::NormalizationStats compute_normalization(const Dataset& dataset);
std::string dataset_fingerprint(const Dataset& dataset);

// Write to path + ".tmp" then rename over path.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// ---- CSV ingestion ---------------------------------------------------------

enum class CsvLayout { wide, long_format };

struct CsvOptions {
  CsvLayout layout = CsvLayout::wide;
  std::string id_column = "id";
  // long format
  std::string time_column = "t";
  std::string value_column = "value";
  // Series without a split column are assigned with this seed (70/20/10).
  std::uint64_t split_seed = 0;
};

struct IngestIssue {
  std::size_t row = 0;  // 1-based data row (header excluded)
  std::string message;
};

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t series_accepted = 0;
  std::vector<IngestIssue> issues;

  bool ok() const { return issues.empty(); }
  std::string to_string() const;
};

// Wide: id, attribute columns (named after schema attributes), then value
// columns. Long: id, t, value, plus attribute columns repeated per row.
Dataset ingest_csv(const std::filesystem::path& path, const AttributeSchema& schema,
                   const CsvOptions& options, IngestReport* report = nullptr);
Dataset ingest_csv_text(const std::string& text, const AttributeSchema& schema,
                        const CsvOptions& options, IngestReport* report = nullptr);

}  // namespace instructtime::datastore
