#include "instructtime/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"

#include "instructtime/datastore.hpp"
#include "instructtime/errors.hpp"

namespace instructtime::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr char kMagic[8] = {'I', 'T', 'C', 'K', 'P', 'T', '\0', '\0'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

ordered_json config_json(const model::ModelConfig& c) {
  ordered_json j;
  j["length"] = c.length;
  j["branches"] = c.branches;
  j["branch_width"] = c.branch_width;
  j["kernel_fractions"] = c.kernel_fractions;
  j["conv1_channels"] = c.conv1_channels;
  j["conv2_channels"] = c.conv2_channels;
  j["conv2_kernel"] = c.conv2_kernel;
  j["pool_bins"] = c.pool_bins;
  j["text_width"] = c.text_width;
  j["mlp_hidden"] = c.mlp_hidden;
  j["decoder_blocks"] = c.decoder_blocks;
  j["heads"] = c.heads;
  j["ff_multiplier"] = c.ff_multiplier;
  j["gamma"] = c.gamma;
  j["temperature"] = c.temperature;
  j["seed"] = c.seed;
  return j;
}

model::ModelConfig config_from(const json& j) {
  model::ModelConfig c;
  c.length = j.at("length").get<int>();
  c.branches = j.at("branches").get<int>();
  c.branch_width = j.at("branch_width").get<int>();
  c.kernel_fractions = j.at("kernel_fractions").get<std::vector<double>>();
  c.conv1_channels = j.at("conv1_channels").get<int>();
  c.conv2_channels = j.at("conv2_channels").get<int>();
  c.conv2_kernel = j.at("conv2_kernel").get<int>();
  c.pool_bins = j.at("pool_bins").get<int>();
  c.text_width = j.at("text_width").get<int>();
  c.mlp_hidden = j.at("mlp_hidden").get<int>();
  c.decoder_blocks = j.at("decoder_blocks").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ff_multiplier = j.at("ff_multiplier").get<int>();
  c.gamma = j.at("gamma").get<double>();
  c.temperature = j.at("temperature").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

ordered_json provider_json(const text::EmbedProviderConfig& p) {
  ordered_json j;
  j["kind"] = text::to_string(p.kind);
  j["width"] = p.width;
  j["model_id"] = p.model_id;
  j["endpoint"] = p.endpoint;
  j["timeout_seconds"] = p.timeout_seconds;
  j["max_attempts"] = p.max_attempts;
  return j;
}

text::EmbedProviderConfig provider_from(const json& j) {
  text::EmbedProviderConfig p;
  p.kind = text::provider_kind_from_string(j.at("kind").get<std::string>());
  p.width = j.at("width").get<int>();
  p.model_id = j.at("model_id").get<std::string>();
  p.endpoint = j.value("endpoint", std::string());
  p.timeout_seconds = j.value("timeout_seconds", 30.0);
  p.max_attempts = j.value("max_attempts", 3);
  return p;
}

ordered_json stats_json(const model::NormalizationStats& s) {
  return ordered_json{{"mean", s.mean}, {"stddev", s.stddev}, {"source_fingerprint", s.source_fingerprint}};
}

model::NormalizationStats stats_from(const json& j) {
  model::NormalizationStats s;
  s.mean = j.at("mean").get<double>();
  s.stddev = j.at("stddev").get<double>();
  s.source_fingerprint = j.value("source_fingerprint", std::string());
  return s;
}

struct Payload {
  std::string bytes;
  std::vector<TensorEntry> index;
};

Payload pack(const std::vector<const tensor::ParamTensor*>& params) {
  Payload p;
  for (const auto* t : params) {
    p.index.push_back({t->name, t->value.rows(), t->value.cols(), p.bytes.size()});
    const double* d = t->value.data();
    for (Eigen::Index i = 0; i < t->value.size(); ++i) put_u64(p.bytes, std::bit_cast<std::uint64_t>(d[i]));
  }
  return p;
}

std::string serialize(Header h, const Payload& payload) {
  h.tensors = payload.index;
  h.payload_bytes = payload.bytes.size();
  h.payload_sha256 = text::sha256_hex(payload.bytes);
  ordered_json j;
  j["format_version"] = h.format_version;
  j["kind"] = h.kind;
  j["config"] = config_json(h.config);
  j["schema"] = ordered_json::parse(datastore::schema_to_json(h.schema));
  j["templates"] = ordered_json::array();
  for (const auto& t : h.templates)
    j["templates"].push_back({{"attribute", t.attribute}, {"level", t.level}, {"sentences", t.sentences}});
  j["provider"] = provider_json(h.provider);
  j["provider_fingerprint"] = h.provider_fingerprint;
  j["normalization"] = h.normalization ? stats_json(*h.normalization) : ordered_json(nullptr);
  j["training_log_digest"] = h.training_log_digest;
  j["seed"] = h.seed;
  j["tensors"] = ordered_json::array();
  for (const auto& t : h.tensors)
    j["tensors"].push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", t.offset}});
  j["payload_bytes"] = h.payload_bytes;
  j["payload_sha256"] = h.payload_sha256;
  j["extra"] = h.extra.empty() ? ordered_json(nullptr) : ordered_json::parse(h.extra);
  const std::string header = j.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, header.size());
  out += header;
  out += payload.bytes;
  return out;
}

Header parse_header(const std::string& text, const fs::path& path) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CorruptCheckpointError(path.string() + ": unreadable header: " + e.what());
  }
  Header h;
  try {
    h.format_version = j.at("format_version").get<int>();
    if (h.format_version != kFormatVersion)
      throw FormatVersionError(path.string() + ": format version " + std::to_string(h.format_version) +
                               " is not supported (expected " + std::to_string(kFormatVersion) + ")");
    h.kind = j.at("kind").get<std::string>();
    h.config = config_from(j.at("config"));
    h.schema = datastore::schema_from_json(j.at("schema").dump());
    for (const auto& t : j.at("templates"))
      h.templates.push_back({t.at("attribute").get<std::string>(), t.at("level").get<std::string>(),
                             t.at("sentences").get<std::vector<std::string>>()});
    h.provider = provider_from(j.at("provider"));
    h.provider_fingerprint = j.at("provider_fingerprint").get<std::string>();
    if (!j.at("normalization").is_null()) h.normalization = stats_from(j["normalization"]);
    h.training_log_digest = j.at("training_log_digest").get<std::string>();
    h.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& t : j.at("tensors"))
      h.tensors.push_back({t.at("name").get<std::string>(), t.at("rows").get<std::int64_t>(),
                           t.at("cols").get<std::int64_t>(), t.at("offset").get<std::uint64_t>()});
    h.payload_bytes = j.at("payload_bytes").get<std::uint64_t>();
    h.payload_sha256 = j.at("payload_sha256").get<std::string>();
    if (!j.at("extra").is_null()) h.extra = j["extra"].dump();
  } catch (const json::exception& e) {
    throw CorruptCheckpointError(path.string() + ": malformed header: " + e.what());
  }
  return h;
}

struct RawFile {
  Header header;
  std::string payload;
};

RawFile read_raw(const fs::path& path, bool with_payload) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  const std::string bytes = datastore::read_file(path);
  if (bytes.size() < 16) {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kMagic, 8) != 0)
      throw CorruptCheckpointError(path.string() + ": not a checkpoint file");
    throw TruncatedCheckpointError(path.string() + ": file ends inside the preamble");
  }
  if (std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw CorruptCheckpointError(path.string() + ": not a checkpoint file (bad magic)");
  const std::uint64_t hlen = get_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16)
    throw TruncatedCheckpointError(path.string() + ": file ends inside the header");
  RawFile raw;
  raw.header = parse_header(bytes.substr(16, hlen), path);
  if (!with_payload) return raw;
  const std::uint64_t have = bytes.size() - 16 - hlen;
  if (have < raw.header.payload_bytes)
    throw TruncatedCheckpointError(path.string() + ": payload has " + std::to_string(have) +
                                   " bytes, expected " + std::to_string(raw.header.payload_bytes));
  if (have > raw.header.payload_bytes)
    throw CorruptCheckpointError(path.string() + ": " + std::to_string(have - raw.header.payload_bytes) +
                                 " unexpected trailing bytes");
  raw.payload = bytes.substr(16 + hlen);
  if (text::sha256_hex(raw.payload) != raw.header.payload_sha256)
    throw CorruptCheckpointError(path.string() + ": payload checksum mismatch");
  return raw;
}

// Decodes every tensor into fresh matrices matching `params`; throws before
// anything is assigned.
std::vector<tensor::Matrix> unpack(const RawFile& raw, const std::vector<tensor::ParamTensor*>& params,
                                   const fs::path& path) {
  const auto& index = raw.header.tensors;
  if (index.size() != params.size())
    throw CorruptCheckpointError(path.string() + ": stores " + std::to_string(index.size()) +
                                 " tensors, model expects " + std::to_string(params.size()));
  std::vector<tensor::Matrix> values;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = index[i];
    const auto& p = *params[i];
    if (e.name != p.name || e.rows != p.value.rows() || e.cols != p.value.cols())
      throw CorruptCheckpointError(path.string() + ": tensor " + std::to_string(i) + " is '" + e.name +
                                   "' " + std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                                   ", model expects '" + p.name + "' " +
                                   std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    const std::uint64_t bytes = static_cast<std::uint64_t>(e.rows * e.cols) * 8;
    if (e.offset + bytes > raw.payload.size())
      throw CorruptCheckpointError(path.string() + ": tensor '" + e.name + "' extends past the payload");
    tensor::Matrix m(e.rows, e.cols);
    for (std::int64_t k = 0; k < e.rows * e.cols; ++k)
      m.data()[k] = std::bit_cast<double>(get_u64(raw.payload.data() + e.offset + 8 * k));
    values.push_back(std::move(m));
  }
  return values;
}

}  // namespace

std::string model_config_to_json(const model::ModelConfig& config) { return config_json(config).dump(); }

model::ModelConfig model_config_from_json(const std::string& text) { return config_from(json::parse(text)); }

void save_model(const model::InstructTimeModel& model, const ModelMeta& meta, const fs::path& path) {
  Header h;
  h.kind = "model";
  h.config = model.config();
  h.schema = meta.schema;
  h.templates = meta.templates.entries();
  h.provider = meta.provider;
  h.provider_fingerprint = model.embedder().fingerprint();
  h.normalization = model.normalization();
  h.training_log_digest = meta.training_log_digest;
  h.seed = model.config().seed;
  datastore::atomic_write(path, serialize(h, pack(model.all_params())));
}

LoadedModel load_model(const fs::path& path, std::shared_ptr<const text::TextEmbedder> embedder) {
  RawFile raw = read_raw(path, true);
  if (raw.header.kind != "model")
    throw CorruptCheckpointError(path.string() + ": holds '" + raw.header.kind + "', not a model");
  if (!embedder) embedder = text::make_embedder(raw.header.provider);
  if (embedder->fingerprint() != raw.header.provider_fingerprint)
    throw FingerprintMismatchError(path.string() + ": trained with provider '" +
                                   raw.header.provider_fingerprint + "', loading with '" +
                                   embedder->fingerprint() + "'");
  LoadedModel out;
  auto m = std::make_unique<model::InstructTimeModel>(raw.header.config, embedder);
  const auto values = unpack(raw, m->all_params(), path);
  m->restore(values);
  m->set_normalization(raw.header.normalization);
  for (const auto& t : raw.header.templates) {
    if (t.sentences.empty()) continue;
    out.templates.set_canonical(t.attribute, t.level, t.sentences.front());
    for (std::size_t i = 1; i < t.sentences.size(); ++i)
      out.templates.add_paraphrase(t.attribute, t.level, t.sentences[i]);
  }
  out.model = std::move(m);
  out.header = std::move(raw.header);
  return out;
}

void load_into(model::InstructTimeModel& model, const fs::path& path) {
  RawFile raw = read_raw(path, true);
  if (raw.header.kind != "model")
    throw CorruptCheckpointError(path.string() + ": holds '" + raw.header.kind + "', not a model");
  if (model.embedder().fingerprint() != raw.header.provider_fingerprint)
    throw FingerprintMismatchError(path.string() + ": trained with provider '" +
                                   raw.header.provider_fingerprint + "', model uses '" +
                                   model.embedder().fingerprint() + "'");
  const auto values = unpack(raw, model.all_params(), path);
  model.restore(values);
  model.set_normalization(raw.header.normalization);
}

void save_classifiers(const classifier::ClassifierSet& set, const fs::path& path) {
  if (set.empty()) throw ConfigError("no classifiers to save");
  Header h;
  h.kind = "classifiers";
  h.config = set.front()->encoder_config();
  std::vector<synth::Attribute> attrs;
  std::vector<const tensor::ParamTensor*> params;
  ordered_json extra = ordered_json::array();
  for (const auto& c : set) {
    attrs.push_back({c->attribute(), c->levels()});
    for (const auto* p : std::as_const(*c).params()) params.push_back(p);
    extra.push_back({{"attribute", c->attribute()},
                     {"seed", c->seed()},
                     {"encoder", config_json(c->encoder_config())},
                     {"normalization", stats_json(c->normalization())},
                     {"validation_accuracy", c->validation_accuracy()},
                     {"training_fingerprint", c->training_fingerprint()}});
  }
  h.schema = synth::AttributeSchema(std::move(attrs));
  h.provider_fingerprint = "none";
  h.extra = extra.dump();
  datastore::atomic_write(path, serialize(h, pack(params)));
}

classifier::ClassifierSet load_classifiers(const fs::path& path) {
  RawFile raw = read_raw(path, true);
  if (raw.header.kind != "classifiers")
    throw CorruptCheckpointError(path.string() + ": holds '" + raw.header.kind + "', not classifiers");
  classifier::ClassifierSet set;
  std::vector<tensor::ParamTensor*> params;
  try {
    const auto extra = json::parse(raw.header.extra);
    for (std::size_t a = 0; a < raw.header.schema.size(); ++a) {
      const auto& attr = raw.header.schema.attributes()[a];
      const auto& e = extra.at(a);
      auto c = std::make_unique<classifier::AttributeClassifier>(
          attr.name, attr.levels, config_from(e.at("encoder")), e.at("seed").get<std::uint64_t>());
      c->set_normalization(stats_from(e.at("normalization")));
      c->set_validation_accuracy(e.at("validation_accuracy").get<double>());
      c->set_training_fingerprint(e.at("training_fingerprint").get<std::string>());
      for (auto* p : c->params()) params.push_back(p);
      set.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw CorruptCheckpointError(path.string() + ": malformed classifier metadata: " + e.what());
  }
  const auto values = unpack(raw, params, path);
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
  return set;
}

Header read_header(const fs::path& path) { return read_raw(path, false).header; }

std::string file_fingerprint(const fs::path& path) { return text::sha256_hex(datastore::read_file(path)); }

}  // namespace instructtime::checkpoint
