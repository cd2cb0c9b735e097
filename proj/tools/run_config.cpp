#include "run_config.hpp"

#include <sstream>

#include "instructtime/checkpoint.hpp"
#include "instructtime/datastore.hpp"
#include "instructtime/errors.hpp"

namespace instructtime::cli {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json synth_json(const synth::SynthConfig& s) {
  ordered_json j;
  j["length"] = s.length;
  j["samples_per_combination"] = s.samples_per_combination;
  j["seed"] = s.seed;
  j["families"] = s.families;
  return j;
}

synth::SynthConfig synth_from(const json& j) {
  synth::SynthConfig s;
  s.length = j.at("length").get<int>();
  s.samples_per_combination = j.at("samples_per_combination").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.families = j.at("families").get<std::vector<std::string>>();
  return s;
}

ordered_json train_json(const training::TrainConfig& t) {
  ordered_json j;
  j["batch_size"] = t.batch_size;
  j["phase1_epochs"] = t.phase1_epochs;
  j["phase2_epochs"] = t.phase2_epochs;
  j["lr_phase1"] = t.lr_phase1;
  j["lr_phase2"] = t.lr_phase2;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["adam_eps"] = t.adam_eps;
  j["gamma"] = t.gamma;
  j["alpha_mode"] = t.alpha_mode == losses::AlphaMode::fixed ? "fixed" : "ratio_tracking";
  j["fixed_alpha"] = t.fixed_alpha;
  j["seed"] = t.seed;
  j["patience"] = t.patience;
  j["phase1_only"] = t.phase1_only;
  j["standardize"] = t.standardize;
  j["paraphrase_mix"] = t.paraphrase_mix;
  return j;
}

training::TrainConfig train_from(const json& j) {
  training::TrainConfig t;
  t.batch_size = j.at("batch_size").get<int>();
  t.phase1_epochs = j.at("phase1_epochs").get<int>();
  t.phase2_epochs = j.at("phase2_epochs").get<int>();
  t.lr_phase1 = j.at("lr_phase1").get<double>();
  t.lr_phase2 = j.at("lr_phase2").get<double>();
  t.beta1 = j.at("beta1").get<double>();
  t.beta2 = j.at("beta2").get<double>();
  t.adam_eps = j.at("adam_eps").get<double>();
  t.gamma = j.at("gamma").get<double>();
  const auto mode = j.at("alpha_mode").get<std::string>();
  if (mode != "fixed" && mode != "ratio_tracking")
    throw ConfigError("train.alpha_mode must be 'ratio_tracking' or 'fixed', got '" + mode + "'");
  t.alpha_mode = mode == "fixed" ? losses::AlphaMode::fixed : losses::AlphaMode::ratio_tracking;
  t.fixed_alpha = j.at("fixed_alpha").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.patience = j.at("patience").get<int>();
  t.phase1_only = j.at("phase1_only").get<bool>();
  t.standardize = j.at("standardize").get<bool>();
  t.paraphrase_mix = j.at("paraphrase_mix").get<bool>();
  return t;
}

ordered_json eval_json(const EvalSection& e, const classifier::ClassifierConfig& c) {
  ordered_json j;
  j["w"] = e.w;
  j["plan_seed"] = e.plan_seed;
  j["split"] = e.split;
  j["plan"] = e.plan;
  ordered_json cj;
  cj["epochs"] = c.epochs;
  cj["batch_size"] = c.batch_size;
  cj["lr"] = c.lr;
  cj["patience"] = c.patience;
  cj["val_fraction"] = c.val_fraction;
  cj["seed"] = c.seed;
  j["classifier"] = cj;
  return j;
}

void eval_from(const json& j, EvalSection& e, classifier::ClassifierConfig& c) {
  e.w = j.at("w").get<double>();
  e.plan_seed = j.at("plan_seed").get<std::uint64_t>();
  e.split = j.at("split").get<std::string>();
  e.plan = j.at("plan").get<std::string>();
  const auto& cj = j.at("classifier");
  c.epochs = cj.at("epochs").get<int>();
  c.batch_size = cj.at("batch_size").get<int>();
  c.lr = cj.at("lr").get<double>();
  c.patience = cj.at("patience").get<int>();
  c.val_fraction = cj.at("val_fraction").get<double>();
  c.seed = cj.at("seed").get<std::uint64_t>();
}

ordered_json provider_json(const text::EmbedProviderConfig& p) {
  ordered_json j;
  j["kind"] = text::to_string(p.kind);
  j["width"] = p.width;
  j["model_id"] = p.model_id;
  j["endpoint"] = p.endpoint;
  j["timeout_seconds"] = p.timeout_seconds;
  j["max_attempts"] = p.max_attempts;
  j["cache_path"] = p.cache_path ? json(p.cache_path->string()) : json(nullptr);
  return j;
}

text::EmbedProviderConfig provider_from(const json& j) {
  text::EmbedProviderConfig p;
  p.kind = text::provider_kind_from_string(j.at("kind").get<std::string>());
  p.width = j.at("width").get<int>();
  p.model_id = j.at("model_id").get<std::string>();
  p.endpoint = j.at("endpoint").get<std::string>();
  p.timeout_seconds = j.at("timeout_seconds").get<double>();
  p.max_attempts = j.at("max_attempts").get<int>();
  if (!j.at("cache_path").is_null()) p.cache_path = j.at("cache_path").get<std::string>();
  return p;
}

// Overlays `patch` onto `base`, rejecting keys the base does not define.
json overlay(const ordered_json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  json out = base;
  for (const auto& [key, value] : patch.items()) {
    if (!out.contains(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
    if (out[key].is_object() && value.is_object())
      out[key] = overlay(out[key], value, where + "." + key);
    else
      out[key] = value;
  }
  return out;
}

model::ModelConfig preset(const std::string& name) {
  if (name == "full") return model::ModelConfig();
  if (name == "desk") return model::ModelConfig::desk();
  throw ConfigError("model preset must be 'full' or 'desk', got '" + name + "'");
}

}  // namespace

void RunConfig::resolve_model(int length) {
  auto base = json::parse(checkpoint::model_config_to_json(preset(model_preset)));
  if (!file_model_section.is_null()) {
    json patch = file_model_section;
    patch.erase("preset");
    base = overlay(base, patch, "model");
  }
  model = checkpoint::model_config_from_json(base.dump());
  model.length = length;
  model.validate();
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path) {
  RunConfig rc;
  if (!path) {
    rc.resolve_model(rc.synthgen.length);
    return rc;
  }
  json file;
  try {
    file = json::parse(datastore::read_file(*path));
  } catch (const json::exception& e) {
    throw ConfigError(path->string() + ": " + e.what());
  }
  if (!file.is_object()) throw ConfigError(path->string() + ": config must be a JSON object");
  try {
    for (const auto& [key, value] : file.items())
      if (key != "synthgen" && key != "model" && key != "train" && key != "eval" && key != "provider")
        throw ConfigError("unknown config section '" + key + "'");
    if (file.contains("synthgen"))
      rc.synthgen = synth_from(overlay(synth_json(rc.synthgen), file["synthgen"], "synthgen"));
    if (file.contains("train")) rc.train = train_from(overlay(train_json(rc.train), file["train"], "train"));
    if (file.contains("eval"))
      eval_from(overlay(eval_json(rc.eval, rc.classifier), file["eval"], "eval"), rc.eval, rc.classifier);
    if (file.contains("provider"))
      rc.provider = provider_from(overlay(provider_json(rc.provider), file["provider"], "provider"));
    if (file.contains("model")) {
      rc.file_model_section = file["model"];
      if (rc.file_model_section.contains("preset"))
        rc.model_preset = rc.file_model_section["preset"].get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(path->string() + ": " + e.what());
  }
  rc.resolve_model(rc.synthgen.length);
  return rc;
}

nlohmann::ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["synthgen"] = synth_json(synthgen);
  ordered_json m = ordered_json::parse(checkpoint::model_config_to_json(model));
  m["preset"] = model_preset;
  j["model"] = m;
  j["train"] = train_json(train);
  j["eval"] = eval_json(eval, classifier);
  j["provider"] = provider_json(provider);
  return j;
}

std::filesystem::path resolved_config_path(const std::filesystem::path& output, bool is_directory) {
  if (is_directory) return output / "config.json";
  return std::filesystem::path(output.string() + ".config.json");
}

void write_resolved_config(const RunConfig& config, const std::string& command,
                           const std::filesystem::path& output, bool is_directory) {
  ordered_json j;
  j["command"] = command;
  const auto body = config.to_json();
  for (const auto& [k, v] : body.items()) j[k] = v;
  datastore::atomic_write(resolved_config_path(output, is_directory), j.dump(2) + "\n");
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace instructtime::cli
