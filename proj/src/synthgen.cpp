#include "instructtime/synthgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include "json.hpp"

#include "instructtime/errors.hpp"

namespace instructtime::synth {

namespace {

const std::vector<Attribute>& synthetic_families() {
  static const std::vector<Attribute> families = {
      {"trend",
       {"flat", "upward-linear", "downward-linear", "upward-quadratic", "downward-quadratic"}},
      {"seasonality", {"no", "yes"}},
      {"shift", {"none", "upward", "downward"}},
      {"noise", {"low", "high"}},
  };
  return families;
}

std::uint64_t family_stream(std::string_view family) {
  const auto& fams = synthetic_families();
  for (std::size_t i = 0; i < fams.size(); ++i)
    if (fams[i].name == family) return i;
  throw SchemaError("unknown synthetic attribute family '" + std::string(family) + "'");
}

void center(std::vector<double>& x) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  for (double& v : x) v -= mean;
}

[[noreturn]] void unknown_level(std::string_view family, std::string_view level) {
  throw SchemaError("unknown " + std::string(family) + " level '" + std::string(level) + "'");
}

constexpr std::uint64_t kSplitStream = 0x5b11700dULL;

}  // namespace

// ---- schema ----------------------------------------------------------------

AttributeSchema::AttributeSchema(std::vector<Attribute> attributes)
    : attributes_(std::move(attributes)) {
  std::set<std::string> names;
  for (const auto& a : attributes_) {
    if (a.name.empty()) throw SchemaError("attribute with empty name");
    if (!names.insert(a.name).second) throw SchemaError("duplicate attribute '" + a.name + "'");
    if (a.levels.size() < 2)
      throw SchemaError("attribute '" + a.name + "' needs at least 2 levels");
    std::set<std::string> levels(a.levels.begin(), a.levels.end());
    if (levels.size() != a.levels.size())
      throw SchemaError("attribute '" + a.name + "' has duplicate level names");
  }
}

bool AttributeSchema::has(std::string_view attribute) const {
  return std::any_of(attributes_.begin(), attributes_.end(),
                     [&](const Attribute& a) { return a.name == attribute; });
}

std::size_t AttributeSchema::index_of(std::string_view attribute) const {
  for (std::size_t i = 0; i < attributes_.size(); ++i)
    if (attributes_[i].name == attribute) return i;
  throw SchemaError("unknown attribute '" + std::string(attribute) + "'");
}

const Attribute& AttributeSchema::at(std::string_view attribute) const {
  return attributes_[index_of(attribute)];
}

std::size_t AttributeSchema::level_index(std::string_view attribute, std::string_view level) const {
  const auto& a = at(attribute);
  for (std::size_t i = 0; i < a.levels.size(); ++i)
    if (a.levels[i] == level) return i;
  throw SchemaError("unknown level '" + std::string(level) + "' for attribute '" + a.name + "'");
}

std::size_t AttributeSchema::combination_count() const {
  std::size_t n = 1;
  for (const auto& a : attributes_) n *= a.levels.size();
  return n;
}

AttributeSchema AttributeSchema::synthetic() { return AttributeSchema(synthetic_families()); }

AttributeSchema AttributeSchema::synthetic(const std::vector<std::string>& families) {
  std::vector<Attribute> picked;
  for (const auto& f : families) family_stream(f);
  for (const auto& a : synthetic_families())
    if (std::find(families.begin(), families.end(), a.name) != families.end()) picked.push_back(a);
  if (picked.empty()) throw SchemaError("no synthetic attribute families enabled");
  return AttributeSchema(std::move(picked));
}

bool operator==(const AttributeSchema& a, const AttributeSchema& b) {
  if (a.attributes_.size() != b.attributes_.size()) return false;
  for (std::size_t i = 0; i < a.attributes_.size(); ++i)
    if (a.attributes_[i].name != b.attributes_[i].name ||
        a.attributes_[i].levels != b.attributes_[i].levels)
      return false;
  return true;
}

void validate_attribute_set(const AttributeSchema& schema, const AttributeSet& attrs) {
  for (const auto& a : schema.attributes()) {
    auto it = attrs.find(a.name);
    if (it == attrs.end()) throw SchemaError("missing attribute '" + a.name + "'");
    schema.level_index(a.name, it->second);
  }
  for (const auto& [name, level] : attrs)
    if (!schema.has(name)) throw SchemaError("attribute '" + name + "' not in schema");
}

std::vector<AttributeSet> enumerate_combinations(const AttributeSchema& schema) {
  std::vector<AttributeSet> out;
  const std::size_t total = schema.combination_count();
  out.reserve(total);
  const auto& attrs = schema.attributes();
  for (std::size_t c = 0; c < total; ++c) {
    AttributeSet set;
    std::size_t rem = c;
    for (std::size_t i = attrs.size(); i-- > 0;) {
      const std::size_t n = attrs[i].levels.size();
      set[attrs[i].name] = attrs[i].levels[rem % n];
      rem /= n;
    }
    out.push_back(std::move(set));
  }
  return out;
}

std::string combination_key(const AttributeSchema& schema, const AttributeSet& attrs) {
  std::string key;
  for (const auto& a : schema.attributes()) {
    if (!key.empty()) key += '|';
    auto it = attrs.find(a.name);
    key += a.name + "=" + (it == attrs.end() ? std::string("?") : it->second);
  }
  return key;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val") return Split::validation;
  if (s == "test") return Split::test;
  throw InputError("unknown split '" + std::string(s) + "'");
}

void SynthConfig::validate() const {
  if (length < 20) throw ConfigError("series length must be >= 20, got " + std::to_string(length));
  if (samples_per_combination < 1) throw ConfigError("samples per combination must be >= 1");
  AttributeSchema::synthetic(families);
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < series.size(); ++i)
    if (series[i].split == split) out.push_back(i);
  return out;
}

std::vector<const TimeSeries*> Dataset::of_split(Split split) const {
  std::vector<const TimeSeries*> out;
  for (const auto& s : series)
    if (s.split == split) out.push_back(&s);
  return out;
}

const TimeSeries* Dataset::find(std::string_view id) const {
  for (const auto& s : series)
    if (s.id == id) return &s;
  return nullptr;
}

// ---- components ------------------------------------------------------------

std::vector<double> gen_trend(std::string_view level, int length, Rng& rng, TrendParams* params) {
  std::vector<double> x(static_cast<std::size_t>(length));
  TrendParams p;
  if (level == "flat") {
    p.offset = rng.uniform(-5.0, 5.0);
    std::fill(x.begin(), x.end(), p.offset);
  } else if (level == "upward-linear" || level == "downward-linear") {
    p.slope = rng.uniform(0.05, 0.20);
    if (level == "downward-linear") p.slope = -p.slope;
    p.offset = rng.uniform(-5.0, 5.0);
    for (int t = 0; t < length; ++t) x[t] = p.slope * t;
    center(x);
    for (double& v : x) v += p.offset;
  } else if (level == "upward-quadratic" || level == "downward-quadratic") {
    p.slope = rng.uniform(1e-4, 5e-4);
    if (level == "downward-quadratic") p.slope = -p.slope;
    p.horizontal = rng.uniform(0.0, 50.0);
    p.offset = rng.uniform(-5.0, 5.0);
    for (int t = 0; t < length; ++t) x[t] = p.slope * (t + p.horizontal) * (t + p.horizontal);
    const double lo = *std::min_element(x.begin(), x.end());
    if (lo < 0.0)
      for (double& v : x) v -= lo;
    center(x);
    for (double& v : x) v += p.offset;
  } else {
    unknown_level("trend", level);
  }
  if (params) *params = p;
  return x;
}

std::vector<double> gen_season(std::string_view level, int length, Rng& rng,
                               SeasonParams* params) {
  std::vector<double> x(static_cast<std::size_t>(length), 0.0);
  SeasonParams p;
  if (level == "yes") {
    const bool single = rng.bernoulli(0.5);
    const int count = single ? 1 : static_cast<int>(rng.uniform_int(2, 3));
    for (int i = 0; i < count; ++i) {
      p.amplitude.push_back(rng.uniform(kSeasonAmplitudeMin, kSeasonAmplitudeMax));
      p.period.push_back(rng.uniform(kSeasonPeriodMin, kSeasonPeriodMax));
      p.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
    }
    p.noise_sigma = kSeasonNoiseSigma;
  } else if (level == "no") {
    p.amplitude.push_back(rng.uniform(kNoSeasonAmplitudeMin, kNoSeasonAmplitudeMax));
    p.period.push_back(rng.uniform(2.0 * length, 4.0 * length));
    p.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
  } else {
    unknown_level("seasonality", level);
  }
  for (std::size_t i = 0; i < p.amplitude.size(); ++i)
    for (int t = 0; t < length; ++t)
      x[t] += p.amplitude[i] * std::sin(2.0 * std::numbers::pi * t / p.period[i] + p.phase[i]);
  if (p.noise_sigma > 0.0)
    for (double& v : x) v += rng.normal(0.0, p.noise_sigma);
  if (params) *params = p;
  return x;
}

std::vector<double> gen_shift(std::string_view level, int length, Rng& rng, ShiftParams* params) {
  ShiftParams p;
  if (level == "upward" || level == "downward") {
    p.change_point = static_cast<int>(std::floor(rng.uniform(0.1 * length, 0.9 * length)));
    p.delta = rng.uniform(15.0, 20.0);
    if (level == "downward") p.delta = -p.delta;
  } else if (level != "none") {
    unknown_level("shift", level);
  }
  std::vector<double> x(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    x[t] = rng.normal(0.0, kShiftBaseSigma);
    if (p.change_point >= 0 && t >= p.change_point) x[t] += p.delta;
  }
  if (params) *params = p;
  return x;
}

std::vector<double> gen_noise(std::string_view level, int length, Rng& rng, NoiseParams* params) {
  NoiseParams p;
  if (level == "low")
    p.sigma = rng.uniform(0.01, 0.1);
  else if (level == "high")
    p.sigma = rng.uniform(1.5, 2.0);
  else
    unknown_level("noise", level);
  std::vector<double> x(static_cast<std::size_t>(length));
  for (double& v : x) v = rng.normal(0.0, p.sigma);
  if (params) *params = p;
  return x;
}

std::vector<double> generate_component(const SynthConfig& config, std::size_t sample_index,
                                       std::string_view family, std::string_view level) {
  Rng rng(derive_seed(config.seed, {sample_index, family_stream(family)}));
  if (family == "trend") return gen_trend(level, config.length, rng);
  if (family == "seasonality") return gen_season(level, config.length, rng);
  if (family == "shift") return gen_shift(level, config.length, rng);
  return gen_noise(level, config.length, rng);
}

std::vector<double> synthesize(const SynthConfig& config, const AttributeSchema& schema,
                               std::size_t sample_index, const AttributeSet& attrs) {
  validate_attribute_set(schema, attrs);
  std::vector<double> x(static_cast<std::size_t>(config.length), 0.0);
  for (const auto& a : schema.attributes()) {
    const auto part = generate_component(config, sample_index, a.name, attrs.at(a.name));
    for (std::size_t t = 0; t < x.size(); ++t) x[t] += part[t];
  }
  return x;
}

std::optional<std::size_t> synthetic_index(std::string_view id) {
  constexpr std::string_view prefix = "syn-";
  if (id.substr(0, prefix.size()) != prefix) return std::nullopt;
  std::size_t value = 0;
  const char* first = id.data() + prefix.size();
  const char* last = id.data() + id.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
  return value;
}

std::string synthetic_id(std::size_t sample_index) {
  std::string digits = std::to_string(sample_index);
  if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
  return "syn-" + digits;
}

std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {kSplitStream}));
  rng.shuffle(order);
  const std::size_t n_train = n * 7 / 10;
  const std::size_t n_val = n * 2 / 10;
  std::vector<Split> out(n, Split::test);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      out[order[i]] = Split::train;
    else if (i < n_train + n_val)
      out[order[i]] = Split::validation;
  }
  return out;
}

Dataset generate_dataset(const SynthConfig& config, const AttributeSchema& schema) {
  config.validate();
  for (const auto& a : schema.attributes()) {
    family_stream(a.name);
    const auto& canonical = synthetic_families()[family_stream(a.name)];
    for (const auto& level : a.levels)
      if (std::find(canonical.levels.begin(), canonical.levels.end(), level) ==
          canonical.levels.end())
        unknown_level(a.name, level);
  }
  const auto combos = enumerate_combinations(schema);
  const auto templates = TemplateBank::synthetic();
  const auto per = static_cast<std::size_t>(config.samples_per_combination);
  Dataset ds;
  ds.schema = schema;
  ds.series.resize(combos.size() * per);
  for (std::size_t c = 0; c < combos.size(); ++c) {
    const std::string description = render_instruction(combos[c], schema, templates);
    for (std::size_t s = 0; s < per; ++s) {
      const std::size_t index = c * per + s;
      TimeSeries& ts = ds.series[index];
      ts.id = synthetic_id(index);
      ts.values = synthesize(config, schema, index, combos[c]);
      ts.attributes = combos[c];
      ts.description = description;
    }
  }
  const auto splits = assign_splits(ds.series.size(), config.seed);
  for (std::size_t i = 0; i < ds.series.size(); ++i) ds.series[i].split = splits[i];
  return ds;
}

Dataset generate_dataset(const SynthConfig& config) {
  return generate_dataset(config, AttributeSchema::synthetic(config.families));
}

// ---- templates -------------------------------------------------------------

TemplateBank TemplateBank::synthetic() {
  TemplateBank bank;
  bank.set_canonical("trend", "flat", "No trend.");
  bank.set_canonical("trend", "upward-linear", "The time series shows upward linear trend.");
  bank.set_canonical("trend", "downward-linear", "The time series shows downward linear trend.");
  bank.set_canonical("trend", "upward-quadratic", "The time series shows upward quadratic trend.");
  bank.set_canonical("trend", "downward-quadratic",
                     "The time series shows downward quadratic trend.");
  bank.set_canonical("seasonality", "no", "No seasonal pattern.");
  bank.set_canonical("seasonality", "yes", "The time series exhibits a seasonal pattern.");
  bank.set_canonical("shift", "none", "No sharp shifts.");
  bank.set_canonical("shift", "upward", "The mean of the time series shifts upwards.");
  bank.set_canonical("shift", "downward", "The mean of the time series shifts downwards.");
  bank.set_canonical("noise", "low", "The time series exhibits low variability.");
  bank.set_canonical("noise", "high", "The time series exhibits high variability.");
  return bank;
}

void TemplateBank::set_canonical(const std::string& attribute, const std::string& level,
                                 std::string sentence) {
  auto& e = entries_[{attribute, level}];
  e.attribute = attribute;
  e.level = level;
  if (e.sentences.empty())
    e.sentences.push_back(std::move(sentence));
  else
    e.sentences[0] = std::move(sentence);
}

void TemplateBank::add_paraphrase(const std::string& attribute, const std::string& level,
                                  std::string sentence) {
  auto it = entries_.find({attribute, level});
  if (it == entries_.end())
    throw SchemaError("paraphrase for unknown level " + attribute + "=" + level);
  it->second.sentences.push_back(std::move(sentence));
  ++paraphrase_count_;
}

void TemplateBank::load_paraphrases(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open paraphrase file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      add_paraphrase(j.at("attribute").get<std::string>(), j.at("level").get<std::string>(),
                     j.at("sentence").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

const DescriptionTemplate* TemplateBank::find(std::string_view attribute,
                                              std::string_view level) const {
  auto it = entries_.find({std::string(attribute), std::string(level)});
  return it == entries_.end() ? nullptr : &it->second;
}

const std::string& TemplateBank::canonical(std::string_view attribute,
                                           std::string_view level) const {
  const auto* e = find(attribute, level);
  if (!e || e->sentences.empty())
    throw SchemaError("no template for " + std::string(attribute) + "=" + std::string(level));
  return e->sentences.front();
}

std::vector<std::string> TemplateBank::paraphrases(std::string_view attribute,
                                                   std::string_view level,
                                                   RenderMode mode) const {
  const auto* e = find(attribute, level);
  if (!e) throw SchemaError("no template for " + std::string(attribute) + "=" + std::string(level));
  if (mode == RenderMode::canonical) return {e->sentences.front()};
  const std::vector<std::string> pool(e->sentences.begin() + 1, e->sentences.end());
  if (pool.empty())
    throw ConfigError("no paraphrases loaded for " + std::string(attribute) + "=" +
                      std::string(level));
  // Round to nearest, but keep at least one sentence on each side when possible.
  std::size_t n_train = (pool.size() * 7 + 5) / 10;
  if (pool.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, pool.size() - 1);
  if (mode == RenderMode::paraphrase_train) return {pool.begin(), pool.begin() + n_train};
  std::vector<std::string> held(pool.begin() + n_train, pool.end());
  if (held.empty())
    throw ConfigError("no held-out paraphrases for " + std::string(attribute) + "=" +
                      std::string(level));
  return held;
}

std::vector<DescriptionTemplate> TemplateBank::entries() const {
  std::vector<DescriptionTemplate> out;
  for (const auto& [k, v] : entries_) out.push_back(v);
  return out;
}

void TemplateBank::validate_covers(const AttributeSchema& schema) const {
  for (const auto& a : schema.attributes())
    for (const auto& level : a.levels) canonical(a.name, level);
}

std::string render_instruction(const AttributeSet& attrs, const AttributeSchema& schema,
                               const TemplateBank& templates, RenderMode mode, Rng* rng) {
  validate_attribute_set(schema, attrs);
  if (mode != RenderMode::canonical && !templates.has_paraphrases())
    throw ConfigError("paraphrase rendering requested but no paraphrase file was loaded");
  if (mode != RenderMode::canonical && rng == nullptr)
    throw ConfigError("paraphrase rendering needs a random source");
  std::string out;
  for (const auto& a : schema.attributes()) {
    const std::string& level = attrs.at(a.name);
    std::string sentence;
    if (mode == RenderMode::canonical) {
      sentence = templates.canonical(a.name, level);
    } else {
      const auto pool = templates.paraphrases(a.name, level, mode);
      sentence = pool[static_cast<std::size_t>(
          rng->uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
    }
    if (!out.empty()) out += ' ';
    out += sentence;
  }
  return out;
}

}  // namespace instructtime::synth
