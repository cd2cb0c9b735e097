#include "instructtime/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "instructtime/datastore.hpp"
#include "instructtime/editing.hpp"
#include "instructtime/errors.hpp"
#include "instructtime/text_embed.hpp"

namespace instructtime::training {

using tensor::Index;

std::string_view to_string(Phase phase) {
  return phase == Phase::contrastive ? "contrastive" : "joint";
}

void TrainConfig::validate() const {
  if (batch_size < 2)
    throw ConfigError("batch size must be >= 2 (contrastive training needs in-batch negatives)");
  if (phase1_epochs < 0 || phase2_epochs < 0) throw ConfigError("epoch counts must be >= 0");
  if (!(lr_phase1 > 0.0) || !(lr_phase2 > 0.0)) throw ConfigError("learning rates must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  if (patience < 0) throw ConfigError("patience must be >= 0");
  if (alpha_mode == losses::AlphaMode::fixed && !(fixed_alpha >= 0.0))
    throw ConfigError("fixed alpha must be >= 0");
}

// ---- log -------------------------------------------------------------------

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& r : epochs) {
    nlohmann::ordered_json j;
    j["phase"] = to_string(r.phase);
    j["epoch"] = r.epoch;
    j["contrast"] = r.contrast;
    j["recon"] = r.recon;
    j["alpha"] = r.alpha;
    j["total"] = r.total;
    j["val-loss"] = r.val_loss;
    j["val-retrieval-top1"] = r.val_retrieval_top1;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string TrainLog::digest() const { return text::sha256_hex(to_jsonl()); }

// ---- Adam ------------------------------------------------------------------

Adam::Adam(std::vector<tensor::ParamTensor*> params, double lr, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

// ---- one step --------------------------------------------------------------

namespace {

struct UniqueTexts {
  std::vector<std::string> unique;
  std::vector<Index> column;
};

UniqueTexts dedupe(const std::vector<std::string>& texts) {
  UniqueTexts u;
  std::map<std::string, Index> slot;
  for (const auto& t : texts) {
    auto [it, inserted] = slot.emplace(t, static_cast<Index>(u.unique.size()));
    if (inserted) u.unique.push_back(t);
    u.column.push_back(it->second);
  }
  return u;
}

Matrix gather(const Matrix& zu, const std::vector<Index>& column) {
  Matrix out(zu.rows(), static_cast<Index>(column.size()));
  for (std::size_t i = 0; i < column.size(); ++i) out.col(static_cast<Index>(i)) = zu.col(column[i]);
  return out;
}

Matrix scatter_add(const Matrix& dz, const std::vector<Index>& column, Index unique_count) {
  Matrix out = Matrix::Zero(dz.rows(), unique_count);
  for (std::size_t i = 0; i < column.size(); ++i) out.col(column[i]) += dz.col(static_cast<Index>(i));
  return out;
}

Matrix stack(const std::vector<Pair>& pairs, const std::vector<std::size_t>& idx) {
  const Index t = static_cast<Index>(pairs.at(idx.front()).values.size());
  Matrix x(t, static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& v = pairs[idx[i]].values;
    if (static_cast<Index>(v.size()) != t) throw InputError("training series have unequal lengths");
    x.col(static_cast<Index>(i)) = Eigen::Map<const Eigen::VectorXd>(v.data(), t);
  }
  return x;
}

}  // namespace

losses::TotalLoss accumulate_gradients(InstructTimeModel& model, const Matrix& x,
                                       const std::vector<std::string>& instructions, Phase phase,
                                       const TrainConfig& config) {
  model.zero_grad();
  const auto texts = dedupe(instructions);
  const Matrix v = model.text_vectors(texts.unique);

  model::SeriesEncoder::Cache scache;
  model::InstructionEncoder::Cache icache;
  const Matrix zx = model.series_encoder().forward(x, &scache);
  const Matrix zu = model.instruction_encoder().forward(v, &icache);
  const Matrix zc = gather(zu, texts.column);

  const double temperature = model.config().temperature;
  auto contrast = losses::contrastive_loss_grad(zx, zc, temperature);
  Matrix dzx = std::move(contrast.grad_a);
  Matrix dzc = std::move(contrast.grad_b);

  losses::TotalLoss result;
  result.contrast = contrast.value;
  result.total = contrast.value;
  if (phase == Phase::joint) {
    model::Decoder::Cache dcache;
    const Matrix xhat = model.decoder().forward(zx, zc, &dcache);
    const auto recon = losses::recon_loss_grad(x, xhat);
    result = losses::total_loss(contrast.value, recon.value, config.gamma, config.alpha_mode,
                                config.fixed_alpha);
    if (std::isfinite(result.total)) {
      auto [da, db] = model.decoder().backward(dcache, result.alpha * recon.grad_b);
      dzx += da;
      dzc += db;
    }
  }
  if (!std::isfinite(result.total)) return result;
  model.series_encoder().backward(scache, dzx);
  model.instruction_encoder().backward(icache, scatter_add(dzc, texts.column, zu.cols()));
  return result;
}

// ---- validation ------------------------------------------------------------

double retrieval_top1(const InstructTimeModel& model, const std::vector<Pair>& pairs,
                      const std::vector<std::string>& classes) {
  if (pairs.empty() || classes.empty()) return 0.0;
  std::map<std::string, Index> class_index;
  for (std::size_t i = 0; i < classes.size(); ++i) class_index.emplace(classes[i], static_cast<Index>(i));
  const Matrix zc = model.encode_instruction_batch(classes);
  std::size_t correct = 0;
  std::vector<std::size_t> all(pairs.size());
  std::iota(all.begin(), all.end(), 0);
  constexpr std::size_t chunk = 256;
  for (std::size_t start = 0; start < all.size(); start += chunk) {
    const std::vector<std::size_t> idx(all.begin() + static_cast<std::ptrdiff_t>(start),
                                       all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), start + chunk)));
    const Matrix zx = model.encode_series_batch(stack(pairs, idx));
    const Matrix sim = zc.transpose() * zx;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Index best = 0;
      sim.col(static_cast<Index>(i)).maxCoeff(&best);
      auto it = class_index.find(pairs[idx[i]].instruction);
      if (it != class_index.end() && it->second == best) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

ValidationScores validate_pairs(const InstructTimeModel& model, const std::vector<Pair>& pairs,
                                const std::vector<std::string>& classes, int batch_size,
                                double temperature, bool with_recon) {
  ValidationScores s;
  if (pairs.empty()) return s;
  double contrast = 0.0;
  double recon = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(pairs.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix x = stack(pairs, idx);
    std::vector<std::string> texts;
    for (auto i : idx) texts.push_back(pairs[i].instruction);
    const auto u = dedupe(texts);
    const Matrix zc = gather(model.encode_instruction_batch(u.unique), u.column);
    const Matrix zx = model.encode_series_batch(x);
    contrast += losses::contrastive_loss(zx, zc, temperature);
    if (with_recon) recon += losses::recon_loss(x, model.decoder().forward(zx, zc));
    ++batches;
  }
  s.contrast = contrast / static_cast<double>(batches);
  s.recon = recon / static_cast<double>(batches);
  s.retrieval_top1 = retrieval_top1(model, pairs, classes);
  return s;
}

// ---- training loop ---------------------------------------------------------

namespace {

[[noreturn]] void non_finite(Phase phase, int epoch, int batch, const losses::TotalLoss& l) {
  std::ostringstream os;
  os << "non-finite loss in " << to_string(phase) << " phase, epoch " << epoch << ", batch "
     << batch << ": contrast=" << l.contrast << " recon=" << l.recon << " alpha=" << l.alpha
     << " total=" << l.total;
  throw ModelError(os.str());
}

void run_phase(InstructTimeModel& model, Phase phase, const std::vector<Pair>& train,
               const std::vector<Pair>& validation, const std::vector<std::string>& classes,
               const TrainConfig& config, int epochs, TrainLog& log,
               const std::vector<std::vector<std::string>>* instruction_pool) {
  const bool joint = phase == Phase::joint;
  auto params = joint ? model.all_params() : model.series_params();
  if (!joint)
    for (auto* p : model.instruction_params()) params.push_back(p);
  Adam adam(params, joint ? config.lr_phase2 : config.lr_phase1, config.beta1, config.beta2,
            config.adam_eps);
  Rng rng(derive_seed(config.seed, {joint ? 2ULL : 1ULL}));
  const double temperature = model.config().temperature;

  auto val_loss = [&](const ValidationScores& v, double alpha) {
    return joint ? v.contrast + alpha * v.recon : v.contrast;
  };

  double alpha_ref = 0.0;
  {
    const auto v = validate_pairs(model, validation, classes, config.batch_size, temperature, joint);
    if (joint)
      alpha_ref = losses::balancing_alpha(v.contrast, v.recon, config.gamma, config.alpha_mode,
                                          config.fixed_alpha);
    EpochRecord r;
    r.phase = phase;
    r.epoch = 0;
    r.val_loss = val_loss(v, alpha_ref);
    r.val_retrieval_top1 = v.retrieval_top1;
    log.epochs.push_back(r);
  }
  double best = validation.empty() ? std::numeric_limits<double>::infinity()
                                   : log.epochs.back().val_loss;
  int best_epoch = 0;
  std::vector<Matrix> best_snapshot = model.snapshot();
  int stale = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    rng.shuffle(order);
    EpochRecord r;
    r.phase = phase;
    r.epoch = epoch;
    int batch = 0;
    std::size_t start = 0;
    while (start < order.size()) {
      std::size_t end = std::min(order.size(), start + bs);
      // A trailing batch of one has no negatives; fold it into the previous one.
      if (order.size() - end == 1) end = order.size();
      if (end - start < 2) break;
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<std::string> texts;
      for (auto i : idx) {
        if (instruction_pool) {
          const auto& pool = (*instruction_pool)[i];
          texts.push_back(pool[static_cast<std::size_t>(
              rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
        } else {
          texts.push_back(train[i].instruction);
        }
      }
      const auto l = accumulate_gradients(model, stack(train, idx), texts, phase, config);
      if (!std::isfinite(l.total)) non_finite(phase, epoch, batch, l);
      adam.step();
      log.steps.push_back({phase, epoch, batch, l.contrast, l.recon, l.alpha});
      r.contrast += l.contrast;
      r.recon += l.recon;
      r.alpha += l.alpha;
      r.total += l.total;
      ++batch;
      start = end;
    }
    if (batch > 0) {
      r.contrast /= batch;
      r.recon /= batch;
      r.alpha /= batch;
      r.total /= batch;
    }
    const auto v = validate_pairs(model, validation, classes, config.batch_size, temperature, joint);
    r.val_loss = val_loss(v, joint ? r.alpha : 0.0);
    r.val_retrieval_top1 = v.retrieval_top1;
    log.epochs.push_back(r);

    if (validation.empty()) {
      best_epoch = epoch;
      continue;
    }
    // Phase 2 compares epochs under one fixed alpha so the criterion is stable.
    if (joint && alpha_ref == 0.0) alpha_ref = r.alpha;
    const double score = joint ? v.contrast + alpha_ref * v.recon : v.contrast;
    if (score < best) {
      best = score;
      best_epoch = epoch;
      best_snapshot = model.snapshot();
      stale = 0;
    } else if (config.patience > 0 && ++stale >= config.patience) {
      break;
    }
  }
  if (!validation.empty()) model.restore(best_snapshot);
  (joint ? log.best_phase2_epoch : log.best_phase1_epoch) = best_epoch;
}

}  // namespace

TrainLog train_pairs(InstructTimeModel& model, const std::vector<Pair>& train,
                     const std::vector<Pair>& validation, const std::vector<std::string>& classes,
                     const TrainConfig& config, bool run_phase1, bool run_phase2) {
  config.validate();
  if (train.size() < 2) throw ConfigError("training needs at least two pairs");
  TrainLog log;
  if (run_phase1)
    run_phase(model, Phase::contrastive, train, validation, classes, config, config.phase1_epochs,
              log, nullptr);
  if (run_phase2 && !config.phase1_only)
    run_phase(model, Phase::joint, train, validation, classes, config, config.phase2_epochs, log,
              nullptr);
  return log;
}

TrainLog train(InstructTimeModel& model, const synth::Dataset& dataset, const TrainConfig& config,
               const synth::TemplateBank* templates) {
  config.validate();
  if (dataset.length() != model.config().length)
    throw InputError("dataset length " + std::to_string(dataset.length()) +
                     " does not match model length " + std::to_string(model.config().length));
  std::optional<model::NormalizationStats> stats;
  if (config.standardize) stats = datastore::compute_normalization(dataset);
  model.set_normalization(stats);

  const synth::TemplateBank fallback = synth::TemplateBank::synthetic();
  const synth::TemplateBank& bank = templates ? *templates : fallback;
  auto instruction_of = [&](const synth::TimeSeries& ts) {
    if (ts.description) return *ts.description;
    return synth::render_instruction(ts.attributes, dataset.schema, bank);
  };

  std::vector<Pair> train_set;
  std::vector<Pair> val_set;
  std::set<std::string> class_set;
  std::vector<std::vector<std::string>> pool;
  Rng para_rng(derive_seed(config.seed, {7}));
  for (const auto& ts : dataset.series) {
    Pair p;
    p.values = ts.values;
    if (stats)
      for (double& v : p.values) v = stats->standardize(v);
    p.instruction = instruction_of(ts);
    class_set.insert(p.instruction);
    if (ts.split == synth::Split::train) {
      if (config.paraphrase_mix) {
        std::vector<std::string> options{p.instruction};
        for (int k = 0; k < 4; ++k)
          options.push_back(synth::render_instruction(ts.attributes, dataset.schema, bank,
                                                      synth::RenderMode::paraphrase_train,
                                                      &para_rng));
        pool.push_back(std::move(options));
      }
      train_set.push_back(std::move(p));
    } else if (ts.split == synth::Split::validation) {
      val_set.push_back(std::move(p));
    }
  }
  if (train_set.size() < 2) throw ConfigError("dataset has fewer than two training series");
  const std::vector<std::string> classes(class_set.begin(), class_set.end());

  TrainLog log;
  const auto* mix = config.paraphrase_mix ? &pool : nullptr;
  run_phase(model, Phase::contrastive, train_set, val_set, classes, config, config.phase1_epochs,
            log, mix);
  if (!config.phase1_only)
    run_phase(model, Phase::joint, train_set, val_set, classes, config, config.phase2_epochs, log,
              mix);
  return log;
}

// ---- few-shot --------------------------------------------------------------

void FewShotConfig::validate() const {
  if (examples.empty()) throw ConfigError("few-shot tuning needs at least one example pair");
  if (seen_instructions.empty()) throw ConfigError("few-shot tuning needs a non-empty seen-instruction pool");
  if (weights.empty()) throw ConfigError("few-shot weight grid is empty");
  for (double w : weights)
    if (!(w > 0.0 && w < 1.0))
      throw ConfigError("few-shot weight " + std::to_string(w) + " outside (0, 1)");
  if (epochs < 0) throw ConfigError("few-shot epochs must be >= 0");
  for (const auto& e : examples)
    if (e.instruction.find_first_not_of(" \t\r\n") == std::string::npos)
      throw ConfigError("few-shot example without an instruction");
}

std::vector<double> parse_weight_grid(std::string_view spec) {
  auto parse = [&](std::string_view s) {
    try {
      std::size_t used = 0;
      const std::string str(s);
      const double v = std::stod(str, &used);
      if (used != str.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("invalid number '" + std::string(s) + "' in weight grid");
    }
  };
  std::vector<double> out;
  if (spec.find(':') != std::string_view::npos) {
    std::vector<std::string_view> parts;
    std::size_t pos = 0;
    while (true) {
      const auto next = spec.find(':', pos);
      parts.push_back(spec.substr(pos, next == std::string_view::npos ? next : next - pos));
      if (next == std::string_view::npos) break;
      pos = next + 1;
    }
    if (parts.size() != 3) throw ConfigError("weight grid must be start:stop:step");
    const double a = parse(parts[0]);
    const double b = parse(parts[1]);
    const double step = parse(parts[2]);
    if (!(step > 0.0) || b < a) throw ConfigError("weight grid needs step > 0 and stop >= start");
    const auto n = static_cast<int>(std::floor((b - a) / step + 1e-9));
    for (int i = 0; i <= n; ++i) {
      // Round to 12 decimals so 0.1:0.9:0.1 gives exactly 0.1, 0.2, ... 0.9.
      out.push_back(std::round((a + i * step) * 1e12) / 1e12);
    }
    return out;
  }
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const auto next = spec.find(',', pos);
    const auto item = spec.substr(pos, next == std::string_view::npos ? spec.size() - pos : next - pos);
    if (!item.empty()) out.push_back(parse(item));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  if (out.empty()) throw ConfigError("empty weight list");
  return out;
}

std::vector<FewShotExample> synthesize_fewshot_pairs(const InstructTimeModel& model,
                                                     const FewShotConfig& config) {
  config.validate();
  std::vector<double> weights = config.weights;
  std::sort(weights.begin(), weights.end());
  weights.erase(std::unique(weights.begin(), weights.end()), weights.end());
  std::vector<FewShotExample> out;
  for (const auto& ex : config.examples) {
    for (const auto& seen : config.seen_instructions) {
      editing::EditRequest req;
      req.series = ex.values;
      req.instruction = seen;
      req.weights = weights;
      const auto result = editing::edit(model, req);
      for (const auto& e : result.edits) out.push_back({e.values, seen});
    }
  }
  return out;
}

TrainLog few_shot_tune(InstructTimeModel& model, const FewShotConfig& config) {
  config.validate();
  TrainLog log;
  if (config.epochs == 0) return log;
  auto pairs_raw = synthesize_fewshot_pairs(model, config);
  for (const auto& ex : config.examples) pairs_raw.push_back(ex);
  const auto& stats = model.normalization();
  std::vector<Pair> pairs;
  for (auto& p : pairs_raw) {
    Pair q{std::move(p.values), std::move(p.instruction)};
    if (static_cast<int>(q.values.size()) != model.config().length)
      throw InputError("few-shot example length does not match model length");
    if (stats)
      for (double& v : q.values) v = stats->standardize(v);
    pairs.push_back(std::move(q));
  }
  TrainConfig tc = config.train;
  tc.phase2_epochs = config.epochs;
  tc.validate();
  run_phase(model, Phase::joint, pairs, {}, {}, tc, config.epochs, log, nullptr);
  return log;
}

}  // namespace instructtime::training
