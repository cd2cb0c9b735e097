#pragma once

// Synthetic benchmark: x = trend + season + shift + noise, with attribute
// labels and template-rendered descriptions.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "instructtime/rng.hpp"

namespace instructtime::synth {

struct Attribute {
  std::string name;
  std::vector<std::string> levels;
};

class AttributeSchema {
public:
  AttributeSchema() = default;
  explicit AttributeSchema(std::vector<Attribute> attributes);

  const std::vector<Attribute>& attributes() const { return attributes_; }
  std::size_t size() const { return attributes_.size(); }
  bool empty() const { return attributes_.empty(); }

  bool has(std::string_view attribute) const;
  std::size_t index_of(std::string_view attribute) const;
  std::size_t level_index(std::string_view attribute, std::string_view level) const;
  const Attribute& at(std::string_view attribute) const;

  std::size_t combination_count() const;

  // The four synthetic families: trend (5), seasonality (2), shift (3), noise (2).
  static AttributeSchema synthetic();
  // Subset of the synthetic families, kept in canonical order.
  static AttributeSchema synthetic(const std::vector<std::string>& families);

  friend bool operator==(const AttributeSchema& a, const AttributeSchema& b);

private:
  std::vector<Attribute> attributes_;
};

// attribute name -> level name
using AttributeSet = std::map<std::string, std::string>;

// Every attribute in the schema present with a valid level; throws SchemaError.
void validate_attribute_set(const AttributeSchema& schema, const AttributeSet& attrs);

// Enumerate all level combinations in mixed-radix order (last attribute fastest).
std::vector<AttributeSet> enumerate_combinations(const AttributeSchema& schema);

// "trend=flat|shift=none" in schema order; used as a class key.
std::string combination_key(const AttributeSchema& schema, const AttributeSet& attrs);

enum class Split { train, validation, test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view s);

struct TimeSeries {
  std::string id;
  std::vector<double> values;
  AttributeSet attributes;
  std::optional<std::string> description;
  Split split = Split::train;
};

struct SynthConfig {
  int length = 200;
  int samples_per_combination = 300;
  std::uint64_t seed = 0;
  std::vector<std::string> families = {"trend", "seasonality", "shift", "noise"};

  void validate() const;
};

struct Dataset {
  AttributeSchema schema;
  std::vector<TimeSeries> series;

  int length() const { return series.empty() ? 0 : static_cast<int>(series.front().values.size()); }
  std::vector<std::size_t> indices(Split split) const;
  std::vector<const TimeSeries*> of_split(Split split) const;
  const TimeSeries* find(std::string_view id) const;
};

// ---- components ------------------------------------------------------------

struct TrendParams {
  double slope = 0.0;      // linear a or quadratic curvature a (signed)
  double horizontal = 0.0; // quadratic b
  double offset = 0.0;     // flat c or centering offset m
};

struct SeasonParams {
  std::vector<double> amplitude;
  std::vector<double> period;
  std::vector<double> phase;
  double noise_sigma = 0.0;
};

struct ShiftParams {
  int change_point = -1;  // first index carrying the offset; -1 for none
  double delta = 0.0;     // signed
};

struct NoiseParams {
  double sigma = 0.0;
};

// Seasonal ranges (no published values): A ~ U(2,5), P ~ U(20,50),
// phi ~ U(0,2pi), multi-pattern k in {2,3}; "no" uses A < 0.3, P > 2T.
inline constexpr double kSeasonAmplitudeMin = 2.0;
inline constexpr double kSeasonAmplitudeMax = 5.0;
inline constexpr double kSeasonPeriodMin = 20.0;
inline constexpr double kSeasonPeriodMax = 50.0;
inline constexpr double kSeasonNoiseSigma = 0.05;
inline constexpr double kNoSeasonAmplitudeMin = 0.05;
inline constexpr double kNoSeasonAmplitudeMax = 0.3;
inline constexpr double kShiftBaseSigma = 0.05;

std::vector<double> gen_trend(std::string_view level, int length, Rng& rng,
                              TrendParams* params = nullptr);
std::vector<double> gen_season(std::string_view level, int length, Rng& rng,
                               SeasonParams* params = nullptr);
std::vector<double> gen_shift(std::string_view level, int length, Rng& rng,
                              ShiftParams* params = nullptr);
std::vector<double> gen_noise(std::string_view level, int length, Rng& rng,
                              NoiseParams* params = nullptr);

// One component of sample `sample_index`, drawn from its own seeded stream so
// any component can be regenerated (or swapped to another level) in isolation.
std::vector<double> generate_component(const SynthConfig& config, std::size_t sample_index,
                                       std::string_view family, std::string_view level);

// Sum of the enabled components for the given attribute assignment.
std::vector<double> synthesize(const SynthConfig& config, const AttributeSchema& schema,
                               std::size_t sample_index, const AttributeSet& attrs);

// Sample index encoded in synthetic ids ("syn-000123"); nullopt for foreign ids.
std::optional<std::size_t> synthetic_index(std::string_view id);
std::string synthetic_id(std::size_t sample_index);

// All combinations x samples_per_combination series, with a seeded 70/20/10
// split. Descriptions are the canonical instruction of each series.
Dataset generate_dataset(const SynthConfig& config, const AttributeSchema& schema);
Dataset generate_dataset(const SynthConfig& config);

// Seeded 70/20/10 assignment for n items.
std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed);

// ---- templates -------------------------------------------------------------

struct DescriptionTemplate {
  std::string attribute;
  std::string level;
  std::vector<std::string> sentences;  // [0] canonical, rest paraphrases
};

enum class RenderMode { canonical, paraphrase_train, paraphrase_heldout };

class TemplateBank {
public:
  TemplateBank() = default;

  static TemplateBank synthetic();

  void set_canonical(const std::string& attribute, const std::string& level, std::string sentence);
  void add_paraphrase(const std::string& attribute, const std::string& level, std::string sentence);
  // JSONL records {"attribute", "level", "sentence"}.
  void load_paraphrases(const std::filesystem::path& path);

  bool has_paraphrases() const { return paraphrase_count_ > 0; }

  const std::string& canonical(std::string_view attribute, std::string_view level) const;
  // Paraphrases of one level split 70/30 in file order.
  std::vector<std::string> paraphrases(std::string_view attribute, std::string_view level,
                                       RenderMode mode) const;

  const DescriptionTemplate* find(std::string_view attribute, std::string_view level) const;
  std::vector<DescriptionTemplate> entries() const;

  // Every (attribute, level) of the schema has a canonical sentence.
  void validate_covers(const AttributeSchema& schema) const;

private:
  std::map<std::pair<std::string, std::string>, DescriptionTemplate> entries_;
  std::size_t paraphrase_count_ = 0;
};

// One sentence per attribute in schema order, joined with single spaces.
std::string render_instruction(const AttributeSet& attrs, const AttributeSchema& schema,
                               const TemplateBank& templates,
                               RenderMode mode = RenderMode::canonical, Rng* rng = nullptr);

}  // namespace instructtime::synth
