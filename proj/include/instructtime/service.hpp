#pragma once

// HTTP/JSON inference service over one immutable checkpoint.
//
//   POST /api/edit             {series | seriesId, instruction, weights}
//   POST /api/embed            {text}
//   GET  /api/templates
//   GET  /api/datasets/sample  ?attributes=trend:flat,shift:none&seed=3
//   GET  /api/health
//
// Every non-2xx body is {"code", "message", "details"}. No authentication:
// this is a local tool. CORS is open to the configured origin.

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "instructtime/model.hpp"
#include "instructtime/synthgen.hpp"

namespace httplib {
class Server;
}

namespace instructtime::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> static_dir;
  std::string cors_origin = "*";
  std::size_t max_body_bytes = 8 * 1024 * 1024;
};

struct Response {
  int status = 200;
  std::string body;
};

struct LoadedState {
  std::shared_ptr<const model::InstructTimeModel> model;
  synth::AttributeSchema schema;
  synth::TemplateBank templates;
  std::string checkpoint_fingerprint;
};

class Service {
public:
  explicit Service(ServiceConfig config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void load_checkpoint(const std::filesystem::path& path);
  void set_state(LoadedState state);
  void set_dataset(synth::Dataset dataset);
  bool loaded() const;

  // Transport-free handlers (the HTTP routes call these).
  Response handle_edit(const std::string& body) const;
  Response handle_embed(const std::string& body) const;
  Response handle_templates() const;
  Response handle_sample(const std::map<std::string, std::string>& query) const;
  Response handle_health() const;

  // Binds the socket; returns the bound port. Throws on failure.
  int bind();
  // Serves until stop(); in-flight requests finish before this returns.
  void run();
  void stop();
  bool running() const;

private:
  std::shared_ptr<const LoadedState> state() const;

  ServiceConfig config_;
  mutable std::mutex mutex_;
  std::shared_ptr<const LoadedState> state_;
  std::shared_ptr<const synth::Dataset> dataset_;
  std::unique_ptr<httplib::Server> server_;
  mutable std::atomic<std::uint64_t> sample_counter_{0};
};

std::string api_error(const std::string& code, const std::string& message,
                      const std::string& details_json = "null");

}  // namespace instructtime::service
