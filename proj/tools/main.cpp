// instructtime: command-line workflows over the library.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <set>
#include <thread>

#include "CLI11.hpp"
#include "instructtime/checkpoint.hpp"
#include "instructtime/classifier.hpp"
#include "instructtime/datastore.hpp"
#include "instructtime/editing.hpp"
#include "instructtime/errors.hpp"
#include "instructtime/evaluate.hpp"
#include "instructtime/service.hpp"
#include "instructtime/training.hpp"
#include "json.hpp"
#include "run_config.hpp"
#include "svg.hpp"

namespace fs = std::filesystem;
using namespace instructtime;
using nlohmann::ordered_json;

namespace {

constexpr int kUsage = 2;
constexpr int kRuntime = 1;

// Usage-class failure detected by the CLI itself (missing files, bad flag combinations).
struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UsageFailure(what + " not found: " + p.string());
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

// Flags shared by every subcommand.
struct Common {
  std::optional<std::string> config_path;
  std::optional<std::string> embed_endpoint;

  cli::RunConfig load() const {
    auto rc = cli::load_run_config(config_path ? std::optional<fs::path>(*config_path) : std::nullopt);
    if (embed_endpoint) {
      rc.provider.kind = text::ProviderKind::external_http;
      rc.provider.endpoint = *embed_endpoint;
    }
    return rc;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run config (sections: synthgen, model, train, eval, provider)");
  cmd->add_option("--embed-endpoint", c.embed_endpoint,
                  "External sentence-embedding endpoint (also INSTRUCTTIME_EMBED_ENDPOINT)");
}

checkpoint::LoadedModel load_checkpoint(const fs::path& path) {
  require_file(path, "checkpoint");
  return checkpoint::load_model(path);
}

synth::Dataset load_data(const fs::path& path, datastore::Manifest* manifest = nullptr) {
  require_file(path, "dataset");
  return datastore::load_dataset(path, manifest);
}

std::string instruction_of(const synth::TimeSeries& ts, const synth::AttributeSchema& schema,
                           const synth::TemplateBank& templates) {
  if (ts.description && !ts.description->empty()) return *ts.description;
  return synth::render_instruction(ts.attributes, schema, templates);
}

std::pair<std::string, std::string> parse_condition(const std::string& s) {
  const auto pos = s.find(':');
  if (pos == std::string::npos || pos == 0 || pos + 1 == s.size())
    throw ConfigError("expected attribute:level, got '" + s + "'");
  return {s.substr(0, pos), s.substr(pos + 1)};
}

// ---- generate-data -----------------------------------------------------------

struct GenerateOpts {
  Common common;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> samples_per_combo;
  std::optional<int> length;
  std::optional<std::string> families;
};

int cmd_generate(const GenerateOpts& o) {
  auto rc = o.common.load();
  if (o.seed) rc.synthgen.seed = *o.seed;
  if (o.samples_per_combo) rc.synthgen.samples_per_combination = *o.samples_per_combo;
  if (o.length) rc.synthgen.length = *o.length;
  if (o.families) rc.synthgen.families = cli::split_list(*o.families);
  rc.synthgen.validate();
  rc.resolve_model(rc.synthgen.length);
  const auto ds = synth::generate_dataset(rc.synthgen);
  datastore::write_dataset_dir(ds, o.out, rc.synthgen);
  cli::write_resolved_config(rc, "generate-data", o.out, true);
  log("wrote " + std::to_string(ds.series.size()) + " series to " + o.out);
  return 0;
}

// ---- ingest-csv --------------------------------------------------------------

struct IngestOpts {
  std::string csv;
  std::string out;
  std::string layout = "wide";
  std::optional<std::string> schema_path;
  std::string families = "trend,seasonality,shift,noise";
  std::uint64_t split_seed = 0;
};

int cmd_ingest(const IngestOpts& o) {
  require_file(o.csv, "CSV file");
  datastore::CsvOptions opts;
  if (o.layout != "wide" && o.layout != "long") throw ConfigError("--layout must be wide or long");
  opts.layout = o.layout == "wide" ? datastore::CsvLayout::wide : datastore::CsvLayout::long_format;
  opts.split_seed = o.split_seed;
  synth::AttributeSchema schema;
  if (o.schema_path) {
    require_file(*o.schema_path, "schema file");
    schema = datastore::schema_from_json(datastore::read_file(*o.schema_path));
  } else {
    schema = synth::AttributeSchema::synthetic(cli::split_list(o.families));
  }
  datastore::IngestReport report;
  const auto ds = datastore::ingest_csv(o.csv, schema, opts, &report);
  if (!report.ok()) {
    std::cerr << report.to_string();
    return kUsage;
  }
  datastore::write_dataset_dir(ds, o.out);
  log("ingested " + std::to_string(report.series_accepted) + " series into " + o.out);
  return 0;
}

// ---- train -------------------------------------------------------------------

struct TrainOpts {
  Common common;
  std::string data;
  std::string out;
  bool phase1_only = false;
  std::optional<std::string> preset;
  std::optional<int> epochs1, epochs2, batch_size, patience;
  std::optional<double> lr1, lr2, gamma;
  std::optional<std::uint64_t> seed, model_seed;
  std::optional<std::string> paraphrases;
  bool paraphrase_mix = false;
};

int cmd_train(const TrainOpts& o) {
  auto rc = o.common.load();
  const auto ds = load_data(o.data);
  if (o.preset) rc.model_preset = *o.preset;
  if (o.epochs1) rc.train.phase1_epochs = *o.epochs1;
  if (o.epochs2) rc.train.phase2_epochs = *o.epochs2;
  if (o.batch_size) rc.train.batch_size = *o.batch_size;
  if (o.patience) rc.train.patience = *o.patience;
  if (o.lr1) rc.train.lr_phase1 = *o.lr1;
  if (o.lr2) rc.train.lr_phase2 = *o.lr2;
  if (o.gamma) rc.train.gamma = *o.gamma;
  if (o.seed) rc.train.seed = *o.seed;
  if (o.phase1_only) rc.train.phase1_only = true;
  if (o.paraphrase_mix) rc.train.paraphrase_mix = true;
  rc.resolve_model(ds.length());
  if (o.model_seed) rc.model.seed = *o.model_seed;
  rc.train.validate();

  auto templates = synth::TemplateBank::synthetic();
  if (o.paraphrases) {
    require_file(*o.paraphrases, "paraphrase file");
    templates.load_paraphrases(*o.paraphrases);
  }
  auto embedder = text::make_embedder(rc.provider);
  rc.model.text_width = embedder->width();
  model::InstructTimeModel m(rc.model, embedder);
  log("training on " + std::to_string(ds.indices(synth::Split::train).size()) + " series");
  const auto tl = training::train(m, ds, rc.train, &templates);
  for (const auto& e : tl.epochs)
    log(std::string(training::to_string(e.phase)) + " epoch " + std::to_string(e.epoch) + " total " +
        std::to_string(e.total) + " val-top1 " + std::to_string(e.val_retrieval_top1));

  checkpoint::ModelMeta meta;
  meta.schema = ds.schema;
  meta.templates = templates;
  meta.provider = rc.provider;
  meta.training_log_digest = tl.digest();
  ensure_parent(o.out);
  checkpoint::save_model(m, meta, o.out);
  datastore::atomic_write(o.out + ".log.jsonl", tl.to_jsonl());
  cli::write_resolved_config(rc, "train", o.out, false);
  log("checkpoint " + o.out + " (" + checkpoint::file_fingerprint(o.out) + ")");
  return 0;
}

// ---- train-classifiers ---------------------------------------------------------

struct ClassifierOpts {
  Common common;
  std::string data;
  std::string out;
  std::string encoder_preset = "desk";
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train_classifiers(const ClassifierOpts& o) {
  auto rc = o.common.load();
  const auto ds = load_data(o.data);
  if (o.epochs) rc.classifier.epochs = *o.epochs;
  if (o.seed) rc.classifier.seed = *o.seed;
  if (o.encoder_preset != "desk" && o.encoder_preset != "full")
    throw ConfigError("--encoder-preset must be desk or full");
  rc.classifier.encoder = o.encoder_preset == "desk" ? model::ModelConfig::desk(ds.length()) : model::ModelConfig();
  rc.classifier.encoder.length = ds.length();
  rc.resolve_model(ds.length());
  const auto set = classifier::train_attribute_classifiers(ds, rc.classifier);
  for (const auto& c : set)
    log("classifier " + c->attribute() + " validation accuracy " + std::to_string(c->validation_accuracy()));
  ensure_parent(o.out);
  checkpoint::save_classifiers(set, o.out);
  cli::write_resolved_config(rc, "train-classifiers", o.out, false);
  return 0;
}

// ---- edit --------------------------------------------------------------------

struct EditOpts {
  std::string checkpoint;
  std::optional<std::string> series_file;
  std::optional<std::string> data;
  std::optional<std::string> series_id;
  std::optional<std::string> instruction;
  std::vector<std::string> templates;
  std::string weights = "0,0.5,1";
  bool raw = false;
  std::optional<std::string> out;
  std::optional<std::string> svg;
};

std::vector<double> read_series_file(const fs::path& p) {
  require_file(p, "series file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(datastore::read_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
  if (j.is_object()) {
    if (j.contains("values"))
      j = j["values"];
    else if (j.contains("input"))
      j = j["input"];
  }
  if (!j.is_array()) throw InputError(p.string() + ": expected a JSON array or an object with 'values'");
  return j.get<std::vector<double>>();
}

int cmd_edit(const EditOpts& o) {
  const auto loaded = load_checkpoint(o.checkpoint);
  const auto& schema = loaded.header.schema;

  editing::EditRequest req;
  if (o.series_file) {
    req.series = read_series_file(*o.series_file);
  } else if (o.data && o.series_id) {
    const auto ds = load_data(*o.data);
    const auto* ts = ds.find(*o.series_id);
    if (!ts) throw UsageFailure("series '" + *o.series_id + "' not in " + *o.data);
    req.series = ts->values;
  } else {
    throw UsageFailure("give --series FILE or --data PATH with --series-id ID");
  }

  if (o.instruction && !o.templates.empty()) throw UsageFailure("use either --instruction or --template");
  if (o.instruction) {
    req.instruction = *o.instruction;
  } else if (!o.templates.empty()) {
    synth::AttributeSet chosen;
    for (const auto& t : o.templates) {
      const auto [attr, level] = parse_condition(t);
      schema.level_index(attr, level);
      chosen[attr] = level;
    }
    for (const auto& a : schema.attributes()) {
      auto it = chosen.find(a.name);
      if (it == chosen.end()) continue;
      if (!req.instruction.empty()) req.instruction += ' ';
      req.instruction += loaded.templates.canonical(a.name, it->second);
    }
  } else {
    throw UsageFailure("give --instruction TEXT or --template attribute:level");
  }
  req.weights = training::parse_weight_grid(o.weights);
  req.normalization = o.raw ? editing::Normalization::none : editing::Normalization::dataset_stats;
  req.validate();

  const auto res = editing::edit(*loaded.model, req);
  ordered_json j;
  j["checkpoint"] = checkpoint::file_fingerprint(o.checkpoint);
  j["instruction"] = req.instruction;
  j["input"] = req.series;
  j["zxNorm"] = res.z_x.norm();
  j["zcNorm"] = res.z_c.norm();
  j["edits"] = ordered_json::array();
  for (const auto& e : res.edits) j["edits"].push_back({{"w", e.w}, {"values", e.values}, {"zNorm", e.z_norm}});
  const std::string text = j.dump(2) + "\n";
  if (o.out) {
    ensure_parent(*o.out);
    datastore::atomic_write(*o.out, text);
  } else {
    std::cout << text;
  }
  if (o.svg) {
    std::vector<cli::Curve> curves{{"input", req.series}};
    for (const auto& e : res.edits) curves.push_back({"w=" + std::to_string(e.w).substr(0, 4), e.values});
    ensure_parent(*o.svg);
    datastore::atomic_write(*o.svg, cli::render_svg(curves, req.instruction));
  }
  return 0;
}

// ---- evaluate ------------------------------------------------------------------

struct EvaluateOpts {
  Common common;
  std::string checkpoint;
  std::string classifiers;
  std::string data;
  std::string out_dir;
  std::optional<double> w;
  std::optional<std::string> plan;
  std::optional<std::uint64_t> plan_seed;
  std::optional<std::string> split;
};

int cmd_evaluate(const EvaluateOpts& o) {
  auto rc = o.common.load();
  if (o.w) rc.eval.w = *o.w;
  if (o.plan) rc.eval.plan = *o.plan;
  if (o.plan_seed) rc.eval.plan_seed = *o.plan_seed;
  if (o.split) rc.eval.split = *o.split;
  if (!fs::exists(o.classifiers))
    throw UsageFailure("classifier checkpoint not found: " + o.classifiers +
                       " (run `instructtime train-classifiers` first)");
  const auto loaded = load_checkpoint(o.checkpoint);
  datastore::Manifest manifest;
  const auto ds = load_data(o.data, &manifest);
  const auto set = checkpoint::load_classifiers(o.classifiers);
  rc.resolve_model(ds.length());
  rc.model = loaded.model->config();
  if (manifest.synth) rc.synthgen = *manifest.synth;

  const auto split = synth::split_from_string(rc.eval.split);
  std::vector<evaluate::EditPlanItem> plan;
  if (rc.eval.plan == "flip")
    plan = evaluate::make_flip_plan(ds, split, rc.eval.plan_seed);
  else if (rc.eval.plan == "identity")
    plan = evaluate::make_identity_plan(ds, split);
  else
    throw ConfigError("eval.plan must be flip or identity, got '" + rc.eval.plan + "'");

  evaluate::EvalConfig ec;
  ec.w = rc.eval.w;
  ec.population_split = split;
  ec.synth = manifest.synth;
  ec.templates = &loaded.templates;
  const auto report = evaluate::evaluate(*loaded.model, ds, plan, set, ec);
  fs::create_directories(o.out_dir);
  datastore::atomic_write(fs::path(o.out_dir) / "report.json", report.to_json() + "\n");
  datastore::atomic_write(fs::path(o.out_dir) / "report.csv", report.to_csv());
  cli::write_resolved_config(rc, "evaluate", o.out_dir, true);
  std::cout << report.to_csv();
  return 0;
}

// ---- tune-fewshot --------------------------------------------------------------

struct FewShotOpts {
  Common common;
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string condition;
  int examples = 1;
  std::optional<std::string> examples_file;
  std::string weights = "0.1:0.9:0.1";
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int cmd_tune_fewshot(const FewShotOpts& o) {
  auto rc = o.common.load();
  auto loaded = load_checkpoint(o.checkpoint);
  const auto ds = load_data(o.data);
  const auto [attr, level] = parse_condition(o.condition);
  ds.schema.level_index(attr, level);

  training::FewShotConfig fc;
  fc.weights = training::parse_weight_grid(o.weights);
  if (o.epochs) fc.epochs = *o.epochs;
  fc.train = rc.train;
  if (o.batch_size) fc.train.batch_size = *o.batch_size;
  if (o.lr) fc.train.lr_phase2 = *o.lr;
  if (o.seed) fc.train.seed = *o.seed;

  if (o.examples_file) {
    require_file(*o.examples_file, "examples file");
    for (const auto& ts : datastore::read_dataset_jsonl(*o.examples_file, ds.schema).series)
      fc.examples.push_back({ts.values, instruction_of(ts, ds.schema, loaded.templates)});
  } else {
    if (o.examples < 1) throw ConfigError("--examples must be >= 1");
    for (const auto* ts : ds.of_split(synth::Split::train)) {
      if (static_cast<int>(fc.examples.size()) == o.examples) break;
      if (ts->attributes.at(attr) == level)
        fc.examples.push_back({ts->values, instruction_of(*ts, ds.schema, loaded.templates)});
    }
    if (static_cast<int>(fc.examples.size()) < o.examples)
      throw ConfigError("dataset has only " + std::to_string(fc.examples.size()) + " train series with " +
                        o.condition);
  }
  std::set<std::string> seen;
  for (const auto* ts : ds.of_split(synth::Split::train))
    if (ts->attributes.at(attr) != level) seen.insert(instruction_of(*ts, ds.schema, loaded.templates));
  fc.seen_instructions.assign(seen.begin(), seen.end());
  fc.validate();

  log("tuning on " + std::to_string(fc.examples.size()) + " example(s) x " + std::to_string(seen.size()) +
      " seen instructions x " + std::to_string(fc.weights.size()) + " weights");
  const auto tl = training::few_shot_tune(*loaded.model, fc);

  checkpoint::ModelMeta meta;
  meta.schema = loaded.header.schema;
  meta.templates = loaded.templates;
  meta.provider = loaded.header.provider;
  meta.training_log_digest = tl.digest();
  ensure_parent(o.out);
  checkpoint::save_model(*loaded.model, meta, o.out);
  datastore::atomic_write(o.out + ".log.jsonl", tl.to_jsonl());
  rc.train = fc.train;
  rc.model = loaded.model->config();
  auto resolved = rc.to_json();
  resolved["fewshot"] = {{"source_checkpoint", checkpoint::file_fingerprint(o.checkpoint)},
                         {"condition", o.condition},
                         {"examples", fc.examples.size()},
                         {"weights", fc.weights},
                         {"epochs", fc.epochs}};
  ordered_json j;
  j["command"] = "tune-fewshot";
  for (const auto& [k, v] : resolved.items()) j[k] = v;
  datastore::atomic_write(cli::resolved_config_path(o.out, false), j.dump(2) + "\n");
  log("checkpoint " + o.out + " (" + checkpoint::file_fingerprint(o.out) + ")");
  return 0;
}

// ---- serve -------------------------------------------------------------------

struct ServeOpts {
  std::string checkpoint;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::string> data;
  std::optional<std::string> static_dir;
  std::string cors_origin = "*";
};

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted.store(true); }

int cmd_serve(const ServeOpts& o) {
  require_file(o.checkpoint, "checkpoint");
  service::ServiceConfig sc;
  sc.host = o.host;
  sc.port = o.port;
  sc.cors_origin = o.cors_origin;
  if (o.static_dir) sc.static_dir = *o.static_dir;
  service::Service svc(sc);
  svc.load_checkpoint(o.checkpoint);
  if (o.data) svc.set_dataset(load_data(*o.data));
  const int port = svc.bind();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread watcher([&] {
    while (!g_interrupted.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    svc.stop();
  });
  log("listening on http://" + o.host + ":" + std::to_string(port));
  svc.run();
  g_interrupted.store(true);
  watcher.join();
  log("stopped");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction-based time-series editing"};
  app.require_subcommand(1);

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate-data", "Generate the synthetic benchmark");
  add_common(g, gen.common);
  g->add_option("--out", gen.out, "Output dataset directory")->required();
  g->add_option("--seed", gen.seed);
  g->add_option("--samples-per-combo", gen.samples_per_combo);
  g->add_option("--length", gen.length);
  g->add_option("--families", gen.families, "Comma list of trend,seasonality,shift,noise");

  IngestOpts ing;
  auto* in = app.add_subcommand("ingest-csv", "Convert a CSV file into a dataset directory");
  in->add_option("--csv", ing.csv)->required();
  in->add_option("--out", ing.out)->required();
  in->add_option("--layout", ing.layout, "wide or long");
  in->add_option("--schema", ing.schema_path, "Schema JSON file");
  in->add_option("--families", ing.families, "Synthetic families when no schema file is given");
  in->add_option("--split-seed", ing.split_seed);

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "Two-phase training");
  add_common(t, tr.common);
  t->add_option("--data", tr.data, "Dataset directory or JSONL file")->required();
  t->add_option("--out", tr.out, "Output checkpoint")->required();
  t->add_flag("--phase1-only", tr.phase1_only, "Contrastive phase only; the decoder stays at initialization");
  t->add_option("--preset", tr.preset, "Model preset: full or desk");
  t->add_option("--epochs1", tr.epochs1);
  t->add_option("--epochs2", tr.epochs2);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--patience", tr.patience);
  t->add_option("--lr1", tr.lr1);
  t->add_option("--lr2", tr.lr2);
  t->add_option("--gamma", tr.gamma);
  t->add_option("--seed", tr.seed, "Training seed (batch order)");
  t->add_option("--model-seed", tr.model_seed, "Parameter initialization seed");
  t->add_option("--paraphrases", tr.paraphrases, "Paraphrase JSONL file");
  t->add_flag("--paraphrase-mix", tr.paraphrase_mix, "Sample train-split paraphrases per epoch");

  ClassifierOpts cl;
  auto* c = app.add_subcommand("train-classifiers", "Train the per-attribute evaluation classifiers");
  add_common(c, cl.common);
  c->add_option("--data", cl.data)->required();
  c->add_option("--out", cl.out)->required();
  c->add_option("--encoder-preset", cl.encoder_preset, "desk or full");
  c->add_option("--epochs", cl.epochs);
  c->add_option("--seed", cl.seed);

  EditOpts ed;
  auto* e = app.add_subcommand("edit", "Edit one series at one or more strengths");
  e->add_option("--checkpoint", ed.checkpoint)->required();
  e->add_option("--series", ed.series_file, "JSON array, or an object with 'values' (or an edit output's 'input')");
  e->add_option("--data", ed.data);
  e->add_option("--series-id", ed.series_id);
  e->add_option("--instruction", ed.instruction);
  e->add_option("--template", ed.templates, "attribute:level, repeatable; expands to canonical sentences");
  e->add_option("--w", ed.weights, "Comma list or start:stop:step");
  e->add_flag("--raw", ed.raw, "Skip dataset normalization");
  e->add_option("--out", ed.out, "Output JSON (default stdout)");
  e->add_option("--svg", ed.svg, "Write an SVG plot of the input and edits");

  EvaluateOpts ev;
  auto* v = app.add_subcommand("evaluate", "Score edits with dDTW, RaTS, |RaTS|, MSE, MAE");
  add_common(v, ev.common);
  v->add_option("--checkpoint", ev.checkpoint)->required();
  v->add_option("--classifiers", ev.classifiers)->required();
  v->add_option("--data", ev.data)->required();
  v->add_option("--out-dir", ev.out_dir)->required();
  v->add_option("--w", ev.w);
  v->add_option("--plan", ev.plan, "flip or identity");
  v->add_option("--plan-seed", ev.plan_seed);
  v->add_option("--split", ev.split);

  FewShotOpts fs_;
  auto* f = app.add_subcommand("tune-fewshot", "Adapt a checkpoint to an unseen condition");
  add_common(f, fs_.common);
  f->add_option("--checkpoint", fs_.checkpoint)->required();
  f->add_option("--data", fs_.data, "Dataset supplying examples and the seen-instruction pool")->required();
  f->add_option("--out", fs_.out)->required();
  f->add_option("--condition", fs_.condition, "Unseen attribute:level")->required();
  f->add_option("--examples", fs_.examples, "Number of example pairs taken from the train split");
  f->add_option("--examples-file", fs_.examples_file, "JSONL series to use as examples instead");
  f->add_option("--weights", fs_.weights, "Weight grid, e.g. 0.1:0.9:0.1");
  f->add_option("--epochs", fs_.epochs);
  f->add_option("--batch-size", fs_.batch_size);
  f->add_option("--lr", fs_.lr);
  f->add_option("--seed", fs_.seed);

  ServeOpts sv;
  auto* s = app.add_subcommand("serve", "Run the HTTP service");
  s->add_option("--checkpoint", sv.checkpoint)->required();
  s->add_option("--host", sv.host);
  s->add_option("--port", sv.port);
  s->add_option("--data", sv.data, "Dataset for /api/datasets/sample and seriesId edits");
  s->add_option("--static-dir", sv.static_dir);
  s->add_option("--cors-origin", sv.cors_origin);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*in) return cmd_ingest(ing);
    if (*t) return cmd_train(tr);
    if (*c) return cmd_train_classifiers(cl);
    if (*e) return cmd_edit(ed);
    if (*v) return cmd_evaluate(ev);
    if (*f) return cmd_tune_fewshot(fs_);
    if (*s) return cmd_serve(sv);
  } catch (const UsageFailure& err) {
    std::cerr << "error: " << err.what() << std::endl;
    return kUsage;
  } catch (const ConfigError& err) {
    std::cerr << "configuration error: " << err.what() << std::endl;
    return kUsage;
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << std::endl;
    return kUsage;
  } catch (const SchemaError& err) {
    std::cerr << "schema error: " << err.what() << std::endl;
    return kUsage;
  } catch (const InputError& err) {
    std::cerr << "input error: " << err.what() << std::endl;
    return kUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << std::endl;
    return kRuntime;
  }
  return kUsage;
}
