#pragma once

// Training configuration, named presets and the flat key=value format.
//
//   # comment
//   epochs = 60
//   decay_epochs = 20,40,50,55
//
// Every field is also settable from the environment as C2F_<KEY>, e.g.
// C2F_LEARNING_RATE=1e-3. Precedence: preset < file < environment < CLI.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "c2f/embedding.hpp"
#include "c2f/objectives.hpp"
#include "c2f/retrieval.hpp"

namespace c2f {

inline constexpr const char* kEnvPrefix = "C2F_";

struct TrainConfig {
  std::string name = "run";
  std::string preset = "desk";

  // Optimization.
  std::size_t epochs = 60;
  std::size_t batch_size = 32;           // N
  std::size_t samples_per_identity = 1;  // N / identities per batch
  double learning_rate = 5e-4;
  double lr_decay = 0.1;
  std::vector<std::size_t> decay_epochs = {20, 40, 50, 55};
  double image_backbone_lr_scale = 0.1;
  double text_backbone_lr_scale = 1.0;
  bool freeze_text_backbone = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t max_steps = 0;  // 0 = no cap
  bool horizontal_flip = true;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;  // epochs between validation passes, 0 = never

  // Architecture.
  std::size_t feature_dim = 64;  // d
  std::size_t heads = 4;         // n
  std::size_t coarse_tokens = 4;  // D
  std::size_t fine_parts = 4;     // P
  std::size_t max_words = 40;     // l
  std::size_t grid_height = 8;
  std::size_t grid_width = 4;
  std::size_t image_height = 64;
  std::size_t image_width = 32;
  std::string image_backbone = "tiny-conv";
  std::string text_backbone = "tiny-transformer";
  std::size_t text_heads = 4;
  bool text_position_encoding = true;
  bool foreground_peak_normalize = false;
  double init_stddev = 0.02;
  double attention_init_stddev = 0.0;  // <= 0: Glorot

  // Objective.
  double margin = 0.2;  // alpha
  bool use_coarse = true;
  bool use_fine = true;
  bool use_cmr = true;
  bool cmr_on_coarse = false;
  bool separate_decoders = false;
  bool single_shared_classifier = false;
  bool stop_commonality_gradient = true;

  // Throws ConfigError when an invariant is violated.
  void validate() const;

  ModelConfig model_config(std::size_t vocab_size) const;
  LossConfig loss_config() const;
  // Granularities used for scoring follow the ones used in the loss.
  ScoreConfig score_config() const;
  std::map<std::string, double> group_lr_scales() const;

  // Piecewise-constant schedule: learning_rate * lr_decay^(#decay epochs <= epoch).
  double learning_rate_at(std::size_t epoch) const;

  std::string to_text() const;
  // FNV-1a digest of to_text().
  std::uint64_t fingerprint() const;
};

TrainConfig make_preset(const std::string& name);
std::vector<std::string> preset_names();

std::vector<std::string> config_keys();
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const TrainConfig& cfg, const std::string& key);

// Applies `key = value` lines on top of `cfg`.
void apply_config_text(TrainConfig& cfg, const std::string& text, const std::string& origin = "<text>");
void apply_config_file(TrainConfig& cfg, const std::filesystem::path& path);
// Reads C2F_<KEY> variables; returns the keys that were applied.
std::vector<std::string> apply_env_overrides(TrainConfig& cfg);

}  // namespace c2f
