#pragma once

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "instructtime/model.hpp"
#include "instructtime/synthgen.hpp"
#include "instructtime/text_embed.hpp"

namespace fixtures {

using namespace instructtime;

// Small enough that a forward/backward pass takes microseconds.
inline model::ModelConfig tiny_config(int length = 24) {
  model::ModelConfig c;
  c.length = length;
  c.branches = 2;
  c.branch_width = 4;
  c.kernel_fractions = {1.0, 0.25};
  c.conv1_channels = 3;
  c.conv2_channels = 4;
  c.text_width = 32;
  c.mlp_hidden = 8;
  c.decoder_blocks = 1;
  c.heads = 2;
  c.ff_multiplier = 2;
  c.seed = 7;
  return c;
}

inline std::shared_ptr<text::HashEmbedder> tiny_embedder() {
  return std::make_shared<text::HashEmbedder>(32);
}

inline std::unique_ptr<model::InstructTimeModel> tiny_model(int length = 24, std::uint64_t seed = 7) {
  auto c = tiny_config(length);
  c.seed = seed;
  return std::make_unique<model::InstructTimeModel>(c, tiny_embedder());
}

// Freshly built biases are zero, which can park ReLU pre-activations exactly on
// the kink; gradient checks run at a jittered point instead.
inline void jitter(model::InstructTimeModel& m, std::uint64_t seed = 99, double scale = 0.05) {
  Rng rng(seed);
  for (auto* p : m.all_params())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += rng.uniform(-scale, scale);
}

inline synth::SynthConfig tiny_synth(int length = 24, int per_combo = 2, std::uint64_t seed = 3) {
  synth::SynthConfig s;
  s.length = length;
  s.samples_per_combination = per_combo;
  s.seed = seed;
  s.families = {"trend", "shift"};
  return s;
}

class TempDir {
public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("instructtime-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

}  // namespace fixtures
