#include "instructtime/service.hpp"

#include "httplib.h"
#include "json.hpp"

#include "instructtime/checkpoint.hpp"
#include "instructtime/editing.hpp"
#include "instructtime/errors.hpp"

namespace instructtime::service {

using nlohmann::json;
using nlohmann::ordered_json;

std::string api_error(const std::string& code, const std::string& message,
                      const std::string& details_json) {
  ordered_json j;
  j["code"] = code;
  j["message"] = message;
  j["details"] = json::parse(details_json);
  return j.dump();
}

namespace {

Response error(int status, const std::string& code, const std::string& message,
               const std::string& details = "null") {
  return {status, api_error(code, message, details)};
}

Response not_loaded() { return error(503, "not_loaded", "no checkpoint is loaded"); }

}  // namespace

Service::Service(ServiceConfig config)
    : config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  srv.set_payload_max_length(config_.max_body_bytes);
  srv.set_default_headers({{"Access-Control-Allow-Origin", config_.cors_origin},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  srv.Post("/api/edit", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_edit(req.body));
  });
  srv.Post("/api/embed", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_embed(req.body));
  });
  srv.Get("/api/templates", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, handle_templates());
  });
  srv.Get("/api/datasets/sample", [this, reply](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> q;
    for (const auto& [k, v] : req.params) q[k] = v;
    reply(res, handle_sample(q));
  });
  srv.Get("/api/health", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, handle_health());
  });
  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 404 ? "not_found" : "http_error";
    res.set_content(api_error(code, "HTTP " + std::to_string(res.status) + " for " + req.path),
                    "application/json");
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(api_error("internal", msg), "application/json");
  });
  if (config_.static_dir) {
    if (!srv.set_mount_point("/", config_.static_dir->string()))
      throw ConfigError("static directory not found: " + config_.static_dir->string());
  }
}

Service::~Service() { stop(); }

void Service::load_checkpoint(const std::filesystem::path& path) {
  auto loaded = checkpoint::load_model(path);
  LoadedState s;
  s.schema = loaded.header.schema;
  s.templates = std::move(loaded.templates);
  s.checkpoint_fingerprint = checkpoint::file_fingerprint(path);
  s.model = std::shared_ptr<const model::InstructTimeModel>(std::move(loaded.model));
  set_state(std::move(s));
}

void Service::set_state(LoadedState state) {
  auto p = std::make_shared<const LoadedState>(std::move(state));
  std::lock_guard lock(mutex_);
  state_ = std::move(p);
}

void Service::set_dataset(synth::Dataset dataset) {
  auto p = std::make_shared<const synth::Dataset>(std::move(dataset));
  std::lock_guard lock(mutex_);
  dataset_ = std::move(p);
}

bool Service::loaded() const { return state() != nullptr; }

std::shared_ptr<const LoadedState> Service::state() const {
  std::lock_guard lock(mutex_);
  return state_;
}

Response Service::handle_edit(const std::string& body) const {
  const auto st = state();
  if (!st) return not_loaded();
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    return error(400, "invalid_json", e.what());
  }
  if (!j.is_object()) return error(400, "invalid_request", "request body must be a JSON object");
  const bool has_series = j.contains("series") && !j["series"].is_null();
  const bool has_id = j.contains("seriesId") && !j["seriesId"].is_null();
  if (has_series == has_id)
    return error(400, "invalid_request", "provide exactly one of 'series' and 'seriesId'");

  editing::EditRequest req;
  try {
    if (has_series) {
      req.series = j["series"].get<std::vector<double>>();
    } else {
      const auto id = j["seriesId"].get<std::string>();
      std::shared_ptr<const synth::Dataset> ds;
      {
        std::lock_guard lock(mutex_);
        ds = dataset_;
      }
      const synth::TimeSeries* ts = ds ? ds->find(id) : nullptr;
      if (!ts) return error(404, "unknown_series", "no series with id '" + id + "'");
      req.series = ts->values;
    }
    req.instruction = j.at("instruction").get<std::string>();
    req.weights = j.at("weights").get<std::vector<double>>();
  } catch (const json::exception& e) {
    return error(400, "invalid_request", e.what());
  }
  const int length = st->model->config().length;
  if (static_cast<int>(req.series.size()) != length)
    return error(400, "length_mismatch",
                 "series has " + std::to_string(req.series.size()) + " values, model expects " +
                     std::to_string(length),
                 ordered_json{{"expected", length}, {"actual", req.series.size()}}.dump());
  try {
    req.validate();
  } catch (const InputError& e) {
    return error(400, "invalid_weights", e.what());
  }
  editing::EditResult result;
  try {
    result = editing::edit(*st->model, req);
  } catch (const InputError& e) {
    return error(400, "invalid_request", e.what());
  } catch (const ProviderError& e) {
    return error(502, "provider_error", e.what());
  }
  ordered_json out;
  out["edits"] = ordered_json::array();
  out["zNorms"] = ordered_json::array();
  out["reconstruction"] = nullptr;
  for (const auto& e : result.edits) {
    out["edits"].push_back({{"w", e.w}, {"values", e.values}});
    out["zNorms"].push_back(e.z_norm);
    if (e.w == 0.0) out["reconstruction"] = e.values;
  }
  return {200, out.dump()};
}

Response Service::handle_embed(const std::string& body) const {
  const auto st = state();
  if (!st) return not_loaded();
  try {
    const auto j = json::parse(body);
    const auto text = j.at("text").get<std::string>();
    const auto z = st->model->encode_instruction(text);
    ordered_json out;
    out["embedding"] = z.values;
    out["norm"] = z.norm();
    return {200, out.dump()};
  } catch (const json::exception& e) {
    return error(400, "invalid_request", e.what());
  } catch (const InputError& e) {
    return error(400, "invalid_request", e.what());
  } catch (const ProviderError& e) {
    return error(502, "provider_error", e.what());
  }
}

Response Service::handle_templates() const {
  const auto st = state();
  if (!st) return not_loaded();
  ordered_json out;
  out["attributes"] = ordered_json::array();
  for (const auto& a : st->schema.attributes()) {
    ordered_json attr;
    attr["name"] = a.name;
    attr["levels"] = ordered_json::array();
    for (const auto& l : a.levels) {
      const auto* t = st->templates.find(a.name, l);
      ordered_json level;
      level["name"] = l;
      level["sentences"] = t ? t->sentences : std::vector<std::string>{};
      attr["levels"].push_back(level);
    }
    out["attributes"].push_back(attr);
  }
  return {200, out.dump()};
}

Response Service::handle_sample(const std::map<std::string, std::string>& query) const {
  std::shared_ptr<const synth::Dataset> ds;
  {
    std::lock_guard lock(mutex_);
    ds = dataset_;
  }
  if (!ds) return error(404, "no_dataset", "the service was started without a dataset");
  synth::AttributeSet filter;
  if (auto it = query.find("attributes"); it != query.end() && !it->second.empty()) {
    std::string_view s = it->second;
    while (!s.empty()) {
      const auto comma = s.find(',');
      const auto item = s.substr(0, comma);
      const auto sep = item.find_first_of(":=");
      if (sep == std::string_view::npos)
        return error(400, "invalid_filter", "attribute filter items look like name:level");
      filter[std::string(item.substr(0, sep))] = std::string(item.substr(sep + 1));
      if (comma == std::string_view::npos) break;
      s.remove_prefix(comma + 1);
    }
  }
  std::uint64_t seed = 0;
  if (auto it = query.find("seed"); it != query.end()) {
    try {
      seed = std::stoull(it->second);
    } catch (const std::exception&) {
      return error(400, "invalid_seed", "seed must be a non-negative integer");
    }
  } else {
    seed = derive_seed(0x5eed, {sample_counter_.fetch_add(1)});
  }
  std::vector<const synth::TimeSeries*> matches;
  for (const auto* ts : ds->of_split(synth::Split::test)) {
    bool ok = true;
    for (const auto& [k, v] : filter) {
      auto a = ts->attributes.find(k);
      ok &= a != ts->attributes.end() && a->second == v;
    }
    if (ok) matches.push_back(ts);
  }
  if (matches.empty())
    return error(404, "no_match", "no test series matches the attribute filter");
  Rng rng(seed);
  const auto* ts = matches[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(matches.size()) - 1))];
  ordered_json out;
  out["id"] = ts->id;
  out["values"] = ts->values;
  out["attributes"] = ts->attributes;
  out["description"] = ts->description ? ordered_json(*ts->description) : ordered_json(nullptr);
  return {200, out.dump()};
}

Response Service::handle_health() const {
  const auto st = state();
  if (!st) return error(503, "not_loaded", "no checkpoint is loaded");
  ordered_json out;
  out["status"] = "ok";
  out["checkpointFingerprint"] = st->checkpoint_fingerprint;
  out["provider"] = st->model->embedder().fingerprint();
  return {200, out.dump()};
}

int Service::bind() {
  int port = config_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(config_.host);
    if (port < 0) throw Error("cannot bind " + config_.host);
  } else if (!server_->bind_to_port(config_.host, port)) {
    throw Error("cannot bind " + config_.host + ":" + std::to_string(port));
  }
  return port;
}

void Service::run() { server_->listen_after_bind(); }

void Service::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

bool Service::running() const { return server_ && server_->is_running(); }

}  // namespace instructtime::service
