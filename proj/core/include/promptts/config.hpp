// Copyright 2026 The promptts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace promptts {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FeatureConfig {
  int sample_rate_hz = 24000;
  int n_mels = 80;
  double hop_ms = 10.0;
  double win_ms = 40.0;
  int n_fft = 0;  // 0 selects the next power of two >= window length
  double fmin_hz = 0.0;
  double fmax_hz = 12000.0;
  double log_floor = 1e-5;
  double f0_min_hz = 65.0;
  double f0_max_hz = 400.0;
  double voicing_threshold = 0.45;
  double silence_ratio = 1e-3;  // frame energy relative to the loudest frame
  double default_log_f0 = 4.6051701859880918;  // log(100 Hz)

  int hop_samples() const;
  int win_samples() const;
  int fft_size() const;
  double hop_seconds() const { return hop_ms / 1000.0; }
};

struct ReferenceEncoderConfig {
  std::vector<int> conv_channels{128, 128, 256, 256, 512, 512};
  int conv_kernel = 3;
  int conv_stride = 2;
  int conv_padding = 1;
  int gru_units = 256;
  int num_tokens = 10;
  int token_dim = 256;
  int attention_heads = 4;
  int embed_dim = 256;
};

struct PromptEncoderConfig {
  std::string backbone = "mock";  // "mock" or "bert"
  std::string backbone_path;      // exported BERT weights (backbone == "bert")
  std::string vocab_path;         // WordPiece vocabulary (backbone == "bert")
  int mock_hidden = 256;
  int mock_layers = 2;
  int mock_heads = 4;
  int mock_intermediate = 1024;
  int mock_vocab = 8192;
  int max_tokens = 512;
  int trainable_blocks = 1;  // trailing transformer blocks left trainable
  int head_hidden = 256;
  int mixtures = 10;
  double scale_floor = 1e-4;
};

struct AcousticConfig {
  int hidden = 256;
  int conformer_blocks = 4;
  int conformer_heads = 2;
  int conformer_ff_mult = 4;
  int conformer_kernel = 31;
  int variance_filter = 256;
  int variance_kernel = 3;
  int duration_mixtures = 4;
  double duration_scale_floor = 1e-4;
  int decoder_layers = 20;
  int decoder_channels = 256;
  int dilation_cycle = 4;
  int diffusion_steps = 100;
  std::string schedule = "linear";  // "linear" or "cosine"
  double beta_start = 1e-4;
  double beta_end = 0.06;
};

struct TrainingConfig {
  double base_lr = 0.001;
  int warmup_steps = 4000;
  int max_frames = 30000;
  int epochs = 100;
  int max_steps = 0;  // 0: run all epochs
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double weight_decay = 0.01;
  double grad_clip = 0.0;  // global gradient-norm clip, 0 disables
  std::uint64_t seed = 1234;
  int checkpoint_every = 1000;
  int log_every = 100;
  double validation_speaker_fraction = 0.02;
  double weight_dec = 1.0;
  double weight_dur = 1.0;
  double weight_pitch = 1.0;
  double weight_style = 1.0;
  bool use_mdn = true;
  bool use_speaker_prompt = true;
};

struct DataConfig {
  std::string manifest;
  std::string speaker_prompts;
  std::string templates;
  std::string lexicon;
  std::string feature_cache;
  std::string output_dir;
};

struct Config {
  FeatureConfig features;
  ReferenceEncoderConfig reference_encoder;
  PromptEncoderConfig prompt_encoder;
  AcousticConfig acoustic;
  TrainingConfig training;
  DataConfig data;
};

/// Resolves a (possibly partial) JSON document against the defaults.
/// Throws ConfigError on unknown keys, type mismatches and invalid values.
Config resolve_config(const nlohmann::json& document);
Config load_config(const std::filesystem::path& path);
/// Fully resolved document with every key present.
nlohmann::json config_to_json(const Config& config);
void validate_config(const Config& config);

/// FNV-1a over the canonical JSON of the given section(s).
std::uint64_t config_hash(const Config& config);
std::uint64_t feature_config_hash(const FeatureConfig& features);
std::string hex_hash(std::uint64_t h);

}  // namespace promptts
