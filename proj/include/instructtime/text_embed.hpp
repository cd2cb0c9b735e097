#pragma once

// Instruction text -> fixed-width unit vector, behind one provider interface.
//
// HashEmbedder is a deterministic offline stand-in: it has token-overlap
// geometry only, so it does not generalize across paraphrases the way a
// pretrained sentence model does. HttpEmbedder talks to an external
// sentence-embedding server using {"texts": [...]} -> {"vectors": [[...]]}.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace instructtime::text {

struct TextVector {
  std::vector<double> values;
  std::string fingerprint;
};

enum class ProviderKind { builtin_hash, external_http };

std::string_view to_string(ProviderKind kind);
ProviderKind provider_kind_from_string(std::string_view s);

struct EmbedProviderConfig {
  ProviderKind kind = ProviderKind::builtin_hash;
  int width = 768;
  std::string model_id = "hash-unigram-bigram-v1";
  // external only
  std::string endpoint;
  double timeout_seconds = 30.0;
  int max_attempts = 3;
  std::optional<std::filesystem::path> cache_path;

  void validate() const;
  // kind + width + model identifier
  std::string fingerprint() const;
};

class TextEmbedder {
public:
  virtual ~TextEmbedder() = default;

  virtual int width() const = 0;
  virtual std::string fingerprint() const = 0;

  virtual TextVector embed_text(std::string_view text) const;
  virtual std::vector<TextVector> embed_batch(const std::vector<std::string>& texts) const = 0;
};

// Lowercase, split on non-alphanumerics.
std::vector<std::string> tokenize(std::string_view text);

std::uint64_t fnv1a64(std::string_view bytes);
std::string sha256_hex(std::string_view bytes);

class HashEmbedder final : public TextEmbedder {
public:
  explicit HashEmbedder(int width = 768, std::string model_id = "hash-unigram-bigram-v1");

  int width() const override { return width_; }
  std::string fingerprint() const override { return fingerprint_; }
  std::vector<TextVector> embed_batch(const std::vector<std::string>& texts) const override;

  // Signed-hash feature vector before normalization.
  std::vector<double> raw_features(std::string_view text, bool unigrams = true,
                                   bool bigrams = true) const;

private:
  int width_;
  std::string fingerprint_;
};

// Request/response hook so the HTTP path can be exercised without a server.
class Transport {
public:
  virtual ~Transport() = default;
  virtual std::string post_json(const std::string& body, double timeout_seconds) = 0;
};

class HttpTransport final : public Transport {
public:
  explicit HttpTransport(std::string endpoint);
  std::string post_json(const std::string& body, double timeout_seconds) override;

private:
  std::string base_;
  std::string path_;
};

// Persistent vector cache keyed by sha256(fingerprint NUL text). Writes go to a
// temporary file that is renamed over the old one.
class EmbeddingCache {
public:
  EmbeddingCache() = default;
  explicit EmbeddingCache(std::optional<std::filesystem::path> path);

  static std::string key(std::string_view fingerprint, std::string_view text);

  std::optional<std::vector<double>> get(const std::string& key) const;
  void put(const std::string& key, std::vector<double> values);
  void flush() const;
  std::size_t size() const;

private:
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mutex_;
  std::map<std::string, std::vector<double>> entries_;
};

class HttpEmbedder final : public TextEmbedder {
public:
  HttpEmbedder(EmbedProviderConfig config, std::shared_ptr<Transport> transport = nullptr);

  int width() const override { return config_.width; }
  std::string fingerprint() const override { return config_.fingerprint(); }
  std::vector<TextVector> embed_batch(const std::vector<std::string>& texts) const override;

  const EmbeddingCache& cache() const { return *cache_; }

private:
  std::vector<std::vector<double>> fetch(const std::vector<std::string>& texts) const;

  EmbedProviderConfig config_;
  std::shared_ptr<Transport> transport_;
  std::unique_ptr<EmbeddingCache> cache_;
};

std::shared_ptr<TextEmbedder> make_embedder(const EmbedProviderConfig& config);

// Environment override for the external endpoint.
inline constexpr const char* kEndpointEnvVar = "INSTRUCTTIME_EMBED_ENDPOINT";

}  // namespace instructtime::text
