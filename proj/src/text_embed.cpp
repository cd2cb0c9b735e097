#include "instructtime/text_embed.hpp"

#include <openssl/evp.h>

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

#include "instructtime/errors.hpp"

namespace instructtime::text {

namespace {

void l2_normalize(std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double n = std::sqrt(sq);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

void require_text(std::string_view text) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos)
    throw InputError("cannot embed empty text");
}

}  // namespace

std::string_view to_string(ProviderKind kind) {
  return kind == ProviderKind::builtin_hash ? "builtin-hash" : "external-http";
}

ProviderKind provider_kind_from_string(std::string_view s) {
  if (s == "builtin-hash" || s == "builtin") return ProviderKind::builtin_hash;
  if (s == "external-http" || s == "http") return ProviderKind::external_http;
  throw ConfigError("unknown embedding provider '" + std::string(s) + "'");
}

void EmbedProviderConfig::validate() const {
  if (width < 1) throw ConfigError("embedding width must be positive");
  if (kind == ProviderKind::external_http) {
    if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0)
      throw ConfigError("embedding endpoint is not a valid http(s) URL: '" + endpoint + "'");
    const auto rest = endpoint.substr(endpoint.find("://") + 3);
    if (rest.empty() || rest.front() == '/' || rest.front() == ':')
      throw ConfigError("embedding endpoint has no host: '" + endpoint + "'");
    if (!(timeout_seconds > 0.0)) throw ConfigError("embedding timeout must be > 0");
    if (max_attempts < 1) throw ConfigError("embedding retry attempts must be >= 1");
  }
}

std::string EmbedProviderConfig::fingerprint() const {
  return std::string(to_string(kind)) + "/" + std::to_string(width) + "/" + model_id;
}

TextVector TextEmbedder::embed_text(std::string_view text) const {
  return embed_batch({std::string(text)}).front();
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// ---- HashEmbedder ----------------------------------------------------------

HashEmbedder::HashEmbedder(int width, std::string model_id) : width_(width) {
  EmbedProviderConfig cfg;
  cfg.width = width;
  cfg.model_id = std::move(model_id);
  cfg.validate();
  fingerprint_ = cfg.fingerprint();
}

std::vector<double> HashEmbedder::raw_features(std::string_view text, bool unigrams,
                                               bool bigrams) const {
  std::vector<double> v(static_cast<std::size_t>(width_), 0.0);
  const auto tokens = tokenize(text);
  auto add = [&](const std::string& feature) {
    const std::uint64_t h = fnv1a64(feature);
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v[(h & 0x7fffffffffffffffULL) % static_cast<std::uint64_t>(width_)] += sign;
  };
  if (unigrams)
    for (const auto& t : tokens) add("u:" + t);
  if (bigrams)
    for (std::size_t i = 1; i < tokens.size(); ++i) add("b:" + tokens[i - 1] + " " + tokens[i]);
  return v;
}

std::vector<TextVector> HashEmbedder::embed_batch(const std::vector<std::string>& texts) const {
  std::vector<TextVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    require_text(t);
    auto v = raw_features(t);
    l2_normalize(v);
    out.push_back({std::move(v), fingerprint_});
  }
  return out;
}

// ---- HTTP transport --------------------------------------------------------

HttpTransport::HttpTransport(std::string endpoint) {
  const auto scheme_end = endpoint.find("://");
  const auto path_start = endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) {
    base_ = endpoint;
    path_ = "/";
  } else {
    base_ = endpoint.substr(0, path_start);
    path_ = endpoint.substr(path_start);
  }
}

std::string HttpTransport::post_json(const std::string& body, double timeout_seconds) {
  httplib::Client client(base_);
  const auto secs = static_cast<time_t>(timeout_seconds);
  const auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  auto res = client.Post(path_, body, "application/json");
  if (!res) throw TransportError("POST " + base_ + path_ + ": " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw TransportError("POST " + base_ + path_ + ": HTTP " + std::to_string(res->status));
  return res->body;
}

// ---- cache -----------------------------------------------------------------

EmbeddingCache::EmbeddingCache(std::optional<std::filesystem::path> path) : path_(std::move(path)) {
  if (!path_ || !std::filesystem::exists(*path_)) return;
  std::ifstream in(*path_);
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [k, v] : j.items()) entries_[k] = v.get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError("unreadable embedding cache " + path_->string() + ": " + e.what());
  }
}

std::string EmbeddingCache::key(std::string_view fingerprint, std::string_view text) {
  std::string material(fingerprint);
  material.push_back('\0');
  material.append(text);
  return sha256_hex(material);
}

std::optional<std::vector<double>> EmbeddingCache::get(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::put(const std::string& key, std::vector<double> values) {
  std::lock_guard lock(mutex_);
  entries_[key] = std::move(values);
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void EmbeddingCache::flush() const {
  if (!path_) return;
  nlohmann::json j = nlohmann::json::object();
  {
    std::lock_guard lock(mutex_);
    for (const auto& [k, v] : entries_) j[k] = v;
  }
  const auto tmp = path_->string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ProviderError("cannot write embedding cache " + tmp);
    out << j.dump();
  }
  std::filesystem::rename(tmp, *path_);
}

// ---- HttpEmbedder ----------------------------------------------------------

HttpEmbedder::HttpEmbedder(EmbedProviderConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
  config_.validate();
  if (!transport_) transport_ = std::make_shared<HttpTransport>(config_.endpoint);
  cache_ = std::make_unique<EmbeddingCache>(config_.cache_path);
}

std::vector<std::vector<double>> HttpEmbedder::fetch(const std::vector<std::string>& texts) const {
  const std::string body = nlohmann::json{{"texts", texts}}.dump();
  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    std::string reply;
    try {
      reply = transport_->post_json(body, config_.timeout_seconds);
    } catch (const TransportError& e) {
      last_error = e.what();
      continue;
    }
    std::vector<std::vector<double>> vectors;
    try {
      vectors = nlohmann::json::parse(reply).at("vectors").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("malformed response: ") + e.what();
      continue;
    }
    if (vectors.size() != texts.size())
      throw ProviderError("embedding server returned " + std::to_string(vectors.size()) +
                          " vectors for " + std::to_string(texts.size()) + " texts");
    for (const auto& v : vectors)
      if (static_cast<int>(v.size()) != config_.width)
        throw ProviderError("embedding width mismatch: expected " + std::to_string(config_.width) +
                            ", got " + std::to_string(v.size()));
    return vectors;
  }
  throw TransportError("embedding request failed after " + std::to_string(config_.max_attempts) +
                       " attempt(s): " + last_error);
}

std::vector<TextVector> HttpEmbedder::embed_batch(const std::vector<std::string>& texts) const {
  const std::string fp = fingerprint();
  std::vector<TextVector> out(texts.size());
  std::vector<std::string> missing;
  std::vector<std::size_t> missing_at;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    require_text(texts[i]);
    if (auto hit = cache_->get(EmbeddingCache::key(fp, texts[i]))) {
      out[i] = {std::move(*hit), fp};
    } else {
      missing.push_back(texts[i]);
      missing_at.push_back(i);
    }
  }
  if (!missing.empty()) {
    auto vectors = fetch(missing);
    for (std::size_t m = 0; m < missing.size(); ++m) {
      for (double x : vectors[m])
        if (!std::isfinite(x)) throw ProviderError("embedding server returned non-finite values");
      l2_normalize(vectors[m]);
      cache_->put(EmbeddingCache::key(fp, missing[m]), vectors[m]);
      out[missing_at[m]] = {std::move(vectors[m]), fp};
    }
    cache_->flush();
  }
  return out;
}

std::shared_ptr<TextEmbedder> make_embedder(const EmbedProviderConfig& config) {
  EmbedProviderConfig cfg = config;
  if (cfg.kind == ProviderKind::external_http) {
    if (const char* env = std::getenv(kEndpointEnvVar); env && *env) cfg.endpoint = env;
    return std::make_shared<HttpEmbedder>(cfg);
  }
  cfg.validate();
  return std::make_shared<HashEmbedder>(cfg.width, cfg.model_id);
}

}  // namespace instructtime::text
