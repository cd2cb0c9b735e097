#include "instructtime/datastore.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "instructtime/errors.hpp"
#include "instructtime/text_embed.hpp"

namespace instructtime::datastore {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// ---- files -----------------------------------------------------------------

void atomic_write(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write to " + tmp.string() + " failed");
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- JSONL -----------------------------------------------------------------

std::string series_to_json(const TimeSeries& ts) {
  ordered_json j;
  j["id"] = ts.id;
  j["values"] = ts.values;
  j["attributes"] = ts.attributes;
  j["description"] = ts.description ? ordered_json(*ts.description) : ordered_json(nullptr);
  j["split"] = synth::to_string(ts.split);
  return j.dump();
}

TimeSeries series_from_json(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed series record: ") + e.what());
  }
  TimeSeries ts;
  ts.id = j.at("id").get<std::string>();
  ts.values = j.at("values").get<std::vector<double>>();
  if (j.contains("attributes") && !j["attributes"].is_null())
    ts.attributes = j["attributes"].get<synth::AttributeSet>();
  if (j.contains("description") && !j["description"].is_null())
    ts.description = j["description"].get<std::string>();
  if (j.contains("split") && !j["split"].is_null())
    ts.split = synth::split_from_string(j["split"].get<std::string>());
  for (double v : ts.values)
    if (!std::isfinite(v)) throw InputError("series " + ts.id + " contains non-finite values");
  return ts;
}

void write_dataset_jsonl(const Dataset& dataset, const fs::path& path) {
  std::string out;
  for (const auto& ts : dataset.series) {
    out += series_to_json(ts);
    out += '\n';
  }
  atomic_write(path, out);
}

Dataset read_dataset_jsonl(const fs::path& path, const std::optional<AttributeSchema>& schema) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset " + path.string());
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> attr_order;
  std::map<std::string, std::vector<std::string>> levels_seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ds.series.push_back(series_from_json(line));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const auto& ts = ds.series.back();
    if (ts.values.size() != ds.series.front().values.size())
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": series length " +
                       std::to_string(ts.values.size()) + " differs from " +
                       std::to_string(ds.series.front().values.size()));
    if (!schema) {
      for (const auto& [a, l] : ts.attributes) {
        auto& seen = levels_seen[a];
        if (seen.empty() && std::find(attr_order.begin(), attr_order.end(), a) == attr_order.end())
          attr_order.push_back(a);
        if (std::find(seen.begin(), seen.end(), l) == seen.end()) seen.push_back(l);
      }
    }
  }
  if (schema) {
    ds.schema = *schema;
  } else {
    std::vector<synth::Attribute> attrs;
    for (const auto& a : attr_order) attrs.push_back({a, levels_seen[a]});
    // Prefer the canonical synthetic ordering when the data fits it.
    bool synthetic = !attrs.empty();
    std::vector<std::string> families;
    const auto full = AttributeSchema::synthetic();
    for (const auto& a : attrs) {
      if (!full.has(a.name)) {
        synthetic = false;
        break;
      }
      for (const auto& l : a.levels) {
        const auto& canon = full.at(a.name).levels;
        if (std::find(canon.begin(), canon.end(), l) == canon.end()) synthetic = false;
      }
    }
    if (synthetic) {
      for (const auto& a : full.attributes())
        if (levels_seen.count(a.name)) families.push_back(a.name);
      ds.schema = AttributeSchema::synthetic(families);
    } else if (!attrs.empty()) {
      std::vector<synth::Attribute> valid;
      for (auto& a : attrs)
        if (a.levels.size() >= 2) valid.push_back(std::move(a));
      ds.schema = AttributeSchema(std::move(valid));
    }
  }
  for (const auto& ts : ds.series)
    for (const auto& a : ds.schema.attributes())
      if (ts.attributes.count(a.name)) ds.schema.level_index(a.name, ts.attributes.at(a.name));
  return ds;
}

std::string schema_to_json(const AttributeSchema& schema) {
  ordered_json j = ordered_json::array();
  for (const auto& a : schema.attributes()) j.push_back({{"name", a.name}, {"levels", a.levels}});
  return j.dump();
}

AttributeSchema schema_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  std::vector<synth::Attribute> attrs;
  for (const auto& a : j)
    attrs.push_back({a.at("name").get<std::string>(), a.at("levels").get<std::vector<std::string>>()});
  return AttributeSchema(std::move(attrs));
}

namespace {

ordered_json synth_to_json(const synth::SynthConfig& c) {
  ordered_json j;
  j["length"] = c.length;
  j["samples_per_combination"] = c.samples_per_combination;
  j["seed"] = c.seed;
  j["families"] = c.families;
  return j;
}

synth::SynthConfig synth_from_json(const nlohmann::json& j) {
  synth::SynthConfig c;
  c.length = j.at("length").get<int>();
  c.samples_per_combination = j.at("samples_per_combination").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.families = j.at("families").get<std::vector<std::string>>();
  return c;
}

}  // namespace

void write_dataset_dir(const Dataset& dataset, const fs::path& dir,
                       const std::optional<synth::SynthConfig>& synth) {
  fs::create_directories(dir);
  write_dataset_jsonl(dataset, dir / "dataset.jsonl");
  ordered_json splits;
  for (auto s : {synth::Split::train, synth::Split::validation, synth::Split::test})
    splits[std::string(synth::to_string(s))] = dataset.indices(s);
  atomic_write(dir / "splits.json", splits.dump() + "\n");
  ordered_json m;
  m["schema"] = ordered_json::parse(schema_to_json(dataset.schema));
  m["synth"] = synth ? synth_to_json(*synth) : ordered_json(nullptr);
  m["count"] = dataset.series.size();
  m["train"] = dataset.indices(synth::Split::train).size();
  m["validation"] = dataset.indices(synth::Split::validation).size();
  m["test"] = dataset.indices(synth::Split::test).size();
  m["fingerprint"] = dataset_fingerprint(dataset);
  atomic_write(dir / "manifest.json", m.dump(2) + "\n");
}

Dataset read_dataset_dir(const fs::path& dir, Manifest* manifest) {
  const auto mpath = dir / "manifest.json";
  std::optional<AttributeSchema> schema;
  Manifest man;
  if (fs::exists(mpath)) {
    const auto m = nlohmann::json::parse(read_file(mpath));
    man.schema = schema_from_json(m.at("schema").dump());
    if (m.contains("synth") && !m["synth"].is_null()) man.synth = synth_from_json(m["synth"]);
    schema = man.schema;
  }
  Dataset ds = read_dataset_jsonl(dir / "dataset.jsonl", schema);
  man.schema = ds.schema;
  man.count = ds.series.size();
  man.train = ds.indices(synth::Split::train).size();
  man.validation = ds.indices(synth::Split::validation).size();
  man.test = ds.indices(synth::Split::test).size();
  if (manifest) *manifest = man;
  return ds;
}

Dataset load_dataset(const fs::path& path, Manifest* manifest) {
  if (fs::is_directory(path)) return read_dataset_dir(path, manifest);
  if (!fs::exists(path)) throw InputError("dataset not found: " + path.string());
  Dataset ds = read_dataset_jsonl(path);
  if (manifest) {
    manifest->schema = ds.schema;
    manifest->synth.reset();
    manifest->count = ds.series.size();
  }
  return ds;
}

model::NormalizationStats compute_normalization(const Dataset& dataset) {
  const auto train = dataset.of_split(synth::Split::train);
  std::size_t n = 0;
  double sum = 0.0;
  for (const auto* ts : train)
    for (double v : ts->values) {
      sum += v;
      ++n;
    }
  if (n == 0) throw InputError("cannot compute normalization: no training values");
  model::NormalizationStats s;
  s.mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto* ts : train)
    for (double v : ts->values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(n));
  if (!(s.stddev > 0.0)) throw InputError("cannot normalize a dataset with zero variance");
  s.source_fingerprint = dataset_fingerprint(dataset);
  return s;
}

std::string dataset_fingerprint(const Dataset& dataset) {
  std::string material = schema_to_json(dataset.schema);
  for (const auto& ts : dataset.series) {
    material += '\n';
    material += series_to_json(ts);
  }
  return text::sha256_hex(material);
}

// ---- CSV -------------------------------------------------------------------

std::string IngestReport::to_string() const {
  std::ostringstream os;
  os << rows_read << " rows read, " << series_accepted << " series accepted";
  if (!issues.empty()) os << ", " << issues.size() << " issue(s):";
  for (const auto& i : issues) os << "\n  row " << i.row << ": " << i.message;
  return os.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::optional<double> parse_number(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return std::nullopt;
  const auto e = s.find_last_not_of(" \t");
  const std::string t = s.substr(b, e - b + 1);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

Dataset ingest_csv_text(const std::string& text, const AttributeSchema& schema,
                        const CsvOptions& options, IngestReport* report) {
  IngestReport rep;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InputError("CSV is empty");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw InputError("CSV header lacks column '" + name + "'");
    return it->second;
  };
  const std::size_t id_col = require(options.id_column);
  std::map<std::string, std::size_t> attr_col;
  for (const auto& a : schema.attributes()) attr_col[a.name] = require(a.name);
  const auto split_it = col.find("split");
  const std::optional<std::size_t> split_col =
      split_it == col.end() ? std::nullopt : std::optional<std::size_t>(split_it->second);

  Dataset ds;
  ds.schema = schema;
  std::vector<bool> has_split;

  auto check_attributes = [&](const std::vector<std::string>& cells, synth::AttributeSet& attrs,
                              std::vector<std::string>& problems) {
    for (const auto& [name, c] : attr_col) {
      const auto& level = cells[c];
      const auto& levels = schema.at(name).levels;
      if (std::find(levels.begin(), levels.end(), level) == levels.end())
        problems.push_back("unknown level '" + level + "' for attribute '" + name + "'");
      else
        attrs[name] = level;
    }
  };

  if (options.layout == CsvLayout::wide) {
    std::vector<std::size_t> value_cols;
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i == id_col || (split_col && i == *split_col)) continue;
      bool is_attr = false;
      for (const auto& [n, c] : attr_col) is_attr |= c == i;
      if (!is_attr) value_cols.push_back(i);
    }
    std::size_t row = 0;
    std::optional<std::size_t> expected;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      ++row;
      ++rep.rows_read;
      const auto cells = split_csv_line(line);
      std::vector<std::string> problems;
      if (cells.size() <= id_col) {
        rep.issues.push_back({row, "missing id column"});
        continue;
      }
      // Trailing empty cells shorten a series; anything else must parse.
      std::vector<double> values;
      bool ended = false;
      for (std::size_t c : value_cols) {
        if (c >= cells.size() || cells[c].find_first_not_of(" \t") == std::string::npos) {
          ended = true;
          continue;
        }
        if (ended) {
          problems.push_back("gap in values before column '" + header[c] + "'");
          break;
        }
        if (auto v = parse_number(cells[c]))
          values.push_back(*v);
        else
          problems.push_back("non-numeric value '" + cells[c] + "' in column '" + header[c] + "'");
      }
      synth::AttributeSet attrs;
      bool attrs_present = true;
      for (const auto& [n, c] : attr_col) attrs_present &= c < cells.size();
      if (!attrs_present)
        problems.push_back("missing attribute columns");
      else
        check_attributes(cells, attrs, problems);
      if (problems.empty() && values.empty()) problems.push_back("no values");
      if (problems.empty() && expected && values.size() != *expected)
        problems.push_back("length " + std::to_string(values.size()) + " differs from expected " +
                           std::to_string(*expected));
      if (!problems.empty()) {
        std::string msg = problems.front();
        for (std::size_t i = 1; i < problems.size(); ++i) msg += "; " + problems[i];
        rep.issues.push_back({row, msg});
        continue;
      }
      expected = values.size();
      TimeSeries ts;
      ts.id = cells[id_col];
      ts.values = std::move(values);
      ts.attributes = std::move(attrs);
      bool split_given = false;
      if (split_col && *split_col < cells.size() && !cells[*split_col].empty()) {
        try {
          ts.split = synth::split_from_string(cells[*split_col]);
          split_given = true;
        } catch (const Error& e) {
          rep.issues.push_back({row, e.what()});
          continue;
        }
      }
      has_split.push_back(split_given);
      ds.series.push_back(std::move(ts));
    }
  } else {
    const std::size_t t_col = require(options.time_column);
    const std::size_t v_col = require(options.value_column);
    struct Acc {
      std::vector<std::pair<double, double>> points;
      synth::AttributeSet attrs;
      std::size_t first_row = 0;
      std::optional<synth::Split> split;
      bool bad = false;
    };
    std::vector<std::string> order;
    std::map<std::string, Acc> acc;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      ++row;
      ++rep.rows_read;
      const auto cells = split_csv_line(line);
      if (cells.size() < header.size()) {
        rep.issues.push_back({row, "expected " + std::to_string(header.size()) + " cells, got " +
                                       std::to_string(cells.size())});
        continue;
      }
      const auto& id = cells[id_col];
      auto [it, inserted] = acc.try_emplace(id);
      auto& a = it->second;
      if (inserted) {
        order.push_back(id);
        a.first_row = row;
      }
      std::vector<std::string> problems;
      const auto t = parse_number(cells[t_col]);
      const auto v = parse_number(cells[v_col]);
      if (!t) problems.push_back("non-numeric time '" + cells[t_col] + "'");
      if (!v) problems.push_back("non-numeric value '" + cells[v_col] + "'");
      synth::AttributeSet attrs;
      check_attributes(cells, attrs, problems);
      if (problems.empty() && !inserted && attrs != a.attrs)
        problems.push_back("attributes differ from earlier rows of series '" + id + "'");
      if (!problems.empty()) {
        std::string msg = problems.front();
        for (std::size_t i = 1; i < problems.size(); ++i) msg += "; " + problems[i];
        rep.issues.push_back({row, msg});
        a.bad = true;
        continue;
      }
      if (inserted) a.attrs = attrs;
      if (split_col && !cells[*split_col].empty()) a.split = synth::split_from_string(cells[*split_col]);
      a.points.emplace_back(*t, *v);
    }
    std::optional<std::size_t> expected;
    for (const auto& id : order) {
      auto& a = acc[id];
      if (a.bad) continue;
      std::stable_sort(a.points.begin(), a.points.end(),
                       [](const auto& x, const auto& y) { return x.first < y.first; });
      if (expected && a.points.size() != *expected) {
        rep.issues.push_back({a.first_row, "series '" + id + "' has length " +
                                               std::to_string(a.points.size()) + ", expected " +
                                               std::to_string(*expected)});
        continue;
      }
      expected = a.points.size();
      TimeSeries ts;
      ts.id = id;
      for (const auto& p : a.points) ts.values.push_back(p.second);
      ts.attributes = a.attrs;
      if (a.split) ts.split = *a.split;
      has_split.push_back(a.split.has_value());
      ds.series.push_back(std::move(ts));
    }
  }

  const auto splits = synth::assign_splits(ds.series.size(), options.split_seed);
  for (std::size_t i = 0; i < ds.series.size(); ++i)
    if (!has_split[i]) ds.series[i].split = splits[i];
  rep.series_accepted = ds.series.size();
  if (report) *report = rep;
  return ds;
}

Dataset ingest_csv(const fs::path& path, const AttributeSchema& schema, const CsvOptions& options,
                   IngestReport* report) {
  return ingest_csv_text(read_file(path), schema, options, report);
}

}  // namespace instructtime::datastore
