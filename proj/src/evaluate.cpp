#include "instructtime/evaluate.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"

#include "instructtime/editing.hpp"
#include "instructtime/errors.hpp"

namespace instructtime::evaluate {

using tensor::Index;
using tensor::Matrix;

std::vector<EditPlanItem> make_flip_plan(const synth::Dataset& dataset, synth::Split split,
                                         std::uint64_t seed,
                                         const std::vector<std::string>& attributes) {
  std::vector<std::string> pool = attributes;
  if (pool.empty())
    for (const auto& a : dataset.schema.attributes()) pool.push_back(a.name);
  for (const auto& a : pool)
    if (!dataset.schema.has(a)) throw SchemaError("unknown attribute '" + a + "' in edit plan");
  Rng rng(seed);
  std::vector<EditPlanItem> plan;
  for (std::size_t i : dataset.indices(split)) {
    const auto& ts = dataset.series[i];
    EditPlanItem item;
    item.series_index = i;
    item.target = ts.attributes;
    const auto& name = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
    const auto& levels = dataset.schema.at(name).levels;
    std::vector<std::string> others;
    for (const auto& l : levels)
      if (l != ts.attributes.at(name)) others.push_back(l);
    item.target[name] = others[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(others.size()) - 1))];
    item.edited = {name};
    for (const auto& a : dataset.schema.attributes())
      if (a.name != name) item.preserved.push_back(a.name);
    plan.push_back(std::move(item));
  }
  return plan;
}

std::vector<EditPlanItem> make_identity_plan(const synth::Dataset& dataset, synth::Split split) {
  std::vector<EditPlanItem> plan;
  for (std::size_t i : dataset.indices(split)) {
    EditPlanItem item;
    item.series_index = i;
    item.target = dataset.series[i].attributes;
    for (const auto& a : dataset.schema.attributes()) item.preserved.push_back(a.name);
    plan.push_back(std::move(item));
  }
  return plan;
}

namespace {

Matrix stack_values(const std::vector<const std::vector<double>*>& cols, int length) {
  Matrix x(length, static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i)
    x.col(static_cast<Index>(i)) = Eigen::Map<const Eigen::VectorXd>(cols[i]->data(), length);
  return x;
}

std::span<const double> column(const Matrix& m, Index c) {
  return {m.col(c).data(), static_cast<std::size_t>(m.rows())};
}

}  // namespace

EvalReport evaluate(const model::InstructTimeModel& model, const synth::Dataset& dataset,
                    const std::vector<EditPlanItem>& plan,
                    const classifier::ClassifierSet& classifiers, const EvalConfig& config) {
  if (!(config.w >= 0.0 && config.w <= 1.0))
    throw InputError("evaluation weight " + std::to_string(config.w) + " outside [0, 1]");
  const auto& schema = dataset.schema;
  for (const auto& a : schema.attributes())
    if (!classifier::find_classifier(classifiers, a.name))
      throw ConfigError("no classifier for attribute '" + a.name + "'; train classifiers first");
  const int length = model.config().length;
  if (dataset.length() != length)
    throw InputError("dataset length does not match model length");

  const synth::TemplateBank fallback = synth::TemplateBank::synthetic();
  const auto& bank = config.templates ? *config.templates : fallback;

  EvalReport report;
  report.w = config.w;
  report.items = plan.size();
  if (plan.empty()) return report;

  // Target populations by combination key.
  std::map<std::string, std::vector<const std::vector<double>*>> population;
  for (std::size_t i : dataset.indices(config.population_split))
    population[synth::combination_key(schema, dataset.series[i].attributes)].push_back(
        &dataset.series[i].values);

  std::vector<const std::vector<double>*> sources;
  std::vector<std::string> instructions;
  for (const auto& item : plan) {
    synth::validate_attribute_set(schema, item.target);
    sources.push_back(&dataset.series.at(item.series_index).values);
    instructions.push_back(synth::render_instruction(item.target, schema, bank));
  }
  const Matrix x = stack_values(sources, length);
  Matrix xhat(length, x.cols());
  constexpr Index chunk = 128;
  for (Index start = 0; start < x.cols(); start += chunk) {
    const Index n = std::min(chunk, x.cols() - start);
    const std::vector<std::string> instr(instructions.begin() + start, instructions.begin() + start + n);
    xhat.middleCols(start, n) = editing::edit_batch(model, x.middleCols(start, n), instr, config.w);
  }

  std::map<std::string, Matrix> p_src, p_edit;
  for (const auto& a : schema.attributes()) {
    const auto* clf = classifier::find_classifier(classifiers, a.name);
    p_src[a.name] = clf->predict_proba(x);
    p_edit[a.name] = clf->predict_proba(xhat);
  }

  std::map<std::string, std::vector<double>> rats_by, abs_by, dtw_by;
  std::set<std::string> missing;
  std::vector<const std::vector<double>*> gt_sources;
  std::vector<std::vector<double>> gt_values;
  std::vector<Index> gt_cols;

  for (std::size_t k = 0; k < plan.size(); ++k) {
    const auto& item = plan[k];
    const auto& ts = dataset.series[item.series_index];
    const auto col = static_cast<Index>(k);
    ItemResult row;
    row.id = ts.id;
    row.instruction = instructions[k];
    row.edited = item.edited;
    for (const auto& a : item.edited) {
      const auto* clf = classifier::find_classifier(classifiers, a);
      const auto li = static_cast<Index>(clf->level_index(item.target.at(a)));
      const double r = metrics::rats(p_edit[a](li, col), p_src[a](li, col));
      row.rats[a] = r;
      rats_by[a].push_back(r);
    }
    for (const auto& a : item.preserved) {
      const auto* clf = classifier::find_classifier(classifiers, a);
      const auto li = static_cast<Index>(clf->level_index(item.target.at(a)));
      const double r = std::abs(metrics::rats(p_edit[a](li, col), p_src[a](li, col)));
      row.abs_rats[a] = r;
      abs_by[a].push_back(r);
    }
    const auto key = synth::combination_key(schema, item.target);
    auto pop = population.find(key);
    if (pop == population.end() || pop->second.empty()) {
      missing.insert(key);
    } else {
      std::vector<std::vector<double>> targets;
      for (const auto* v : pop->second) targets.push_back(*v);
      const double d = metrics::delta_dtw(column(xhat, col), column(x, col), targets);
      row.delta_dtw = d;
      const auto& attrs = item.edited.empty() ? item.preserved : item.edited;
      for (const auto& a : attrs) dtw_by[a].push_back(d);
    }
    if (config.synth) {
      if (auto idx = synth::synthetic_index(ts.id)) {
        gt_values.push_back(synth::synthesize(*config.synth, schema, *idx, item.target));
        gt_cols.push_back(col);
      }
    }
    report.rows.push_back(std::move(row));
  }

  double sum_dtw = 0.0, sum_rats = 0.0, sum_abs = 0.0;
  int n_dtw = 0, n_rats = 0, n_abs = 0;
  for (const auto& a : schema.attributes()) {
    AttributeScores s;
    s.attribute = a.name;
    s.delta_dtw = metrics::mean_se(dtw_by[a.name]);
    s.rats = metrics::mean_se(rats_by[a.name]);
    s.abs_rats = metrics::mean_se(abs_by[a.name]);
    if (s.delta_dtw.n) {
      sum_dtw += s.delta_dtw.mean;
      ++n_dtw;
    }
    if (s.rats.n) {
      sum_rats += s.rats.mean;
      ++n_rats;
    }
    if (s.abs_rats.n) {
      sum_abs += s.abs_rats.mean;
      ++n_abs;
    }
    report.per_attribute.push_back(s);
  }
  report.delta_dtw = n_dtw ? sum_dtw / n_dtw : 0.0;
  report.rats = n_rats ? sum_rats / n_rats : 0.0;
  report.abs_rats = n_abs ? sum_abs / n_abs : 0.0;
  report.missing_targets.assign(missing.begin(), missing.end());

  if (!gt_cols.empty()) {
    Matrix gt(length, static_cast<Index>(gt_cols.size()));
    Matrix ed(length, static_cast<Index>(gt_cols.size()));
    for (std::size_t i = 0; i < gt_cols.size(); ++i) {
      gt.col(static_cast<Index>(i)) = Eigen::Map<const Eigen::VectorXd>(gt_values[i].data(), length);
      ed.col(static_cast<Index>(i)) = xhat.col(gt_cols[i]);
    }
    report.point_error = metrics::mse_mae(ed, gt);
  }
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["w"] = w;
  j["items"] = items;
  j["delta_dtw"] = delta_dtw;
  j["rats"] = rats;
  j["abs_rats"] = abs_rats;
  if (point_error) {
    j["mse"] = point_error->mse;
    j["mae"] = point_error->mae;
  } else {
    j["mse"] = nullptr;
    j["mae"] = nullptr;
  }
  auto stat = [](const metrics::MeanSe& m) {
    nlohmann::ordered_json s;
    s["mean"] = m.mean;
    s["se"] = m.se;
    s["n"] = m.n;
    return s;
  };
  j["per_attribute"] = nlohmann::ordered_json::array();
  for (const auto& a : per_attribute) {
    nlohmann::ordered_json e;
    e["attribute"] = a.attribute;
    e["delta_dtw"] = stat(a.delta_dtw);
    e["rats"] = stat(a.rats);
    e["abs_rats"] = stat(a.abs_rats);
    j["per_attribute"].push_back(e);
  }
  j["missing_targets"] = missing_targets;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json e;
    e["id"] = r.id;
    e["instruction"] = r.instruction;
    e["edited"] = r.edited;
    e["rats"] = r.rats;
    e["abs_rats"] = r.abs_rats;
    e["delta_dtw"] = r.delta_dtw ? nlohmann::ordered_json(*r.delta_dtw) : nlohmann::ordered_json(nullptr);
    j["rows"].push_back(e);
  }
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(6);
  os << "scope,dDTW,RaTS,|RaTS|,MSE,MAE\n";
  auto opt = [](bool has, double v) {
    std::ostringstream s;
    s.precision(6);
    if (has) s << v;
    return s.str();
  };
  for (const auto& a : per_attribute)
    os << a.attribute << ',' << opt(a.delta_dtw.n > 0, a.delta_dtw.mean) << ','
       << opt(a.rats.n > 0, a.rats.mean) << ',' << opt(a.abs_rats.n > 0, a.abs_rats.mean) << ",,\n";
  os << "average," << delta_dtw << ',' << rats << ',' << abs_rats << ','
     << opt(point_error.has_value(), point_error ? point_error->mse : 0.0) << ','
     << opt(point_error.has_value(), point_error ? point_error->mae : 0.0) << '\n';
  return os.str();
}

}  // namespace instructtime::evaluate
