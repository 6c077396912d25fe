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

#include "promptts/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "promptts/random.hpp"

namespace promptts {
namespace {

using nlohmann::json;

// Reads fields from `in` (when non-null) and writes resolved values to `out`.
class Binder {
 public:
  Binder(const json* in, json& out, std::string section) : in_(in), out_(out), section_(std::move(section)) {
    if (in_ && !in_->is_object()) throw ConfigError("config: section '" + section_ + "' must be an object");
  }

  template <class T>
  void field(const char* key, T& member) {
    if (in_ && in_->contains(key)) {
      seen_.insert(key);
      read(key, in_->at(key), member);
    }
    out_[key] = member;
  }

  void finish() const {
    if (!in_) return;
    for (const auto& [key, _] : in_->items()) {
      if (!seen_.count(key)) throw ConfigError("config: unknown key '" + section_ + "." + key + "'");
    }
  }

 private:
  [[noreturn]] void mismatch(const char* key, const char* expected) const {
    throw ConfigError("config: type mismatch for '" + section_ + "." + key + "' (expected " + expected + ")");
  }
  void read(const char* key, const json& v, int& m) const {
    if (!v.is_number_integer()) mismatch(key, "integer");
    m = v.get<int>();
  }
  void read(const char* key, const json& v, std::uint64_t& m) const {
    if (!v.is_number_integer()) mismatch(key, "non-negative integer");
    if (!v.is_number_unsigned() && v.get<long long>() < 0) mismatch(key, "non-negative integer");
    m = v.get<std::uint64_t>();
  }
  void read(const char* key, const json& v, double& m) const {
    if (!v.is_number()) mismatch(key, "number");
    m = v.get<double>();
  }
  void read(const char* key, const json& v, bool& m) const {
    if (!v.is_boolean()) mismatch(key, "boolean");
    m = v.get<bool>();
  }
  void read(const char* key, const json& v, std::string& m) const {
    if (!v.is_string()) mismatch(key, "string");
    m = v.get<std::string>();
  }
  void read(const char* key, const json& v, std::vector<int>& m) const {
    if (!v.is_array()) mismatch(key, "array of integers");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) mismatch(key, "array of integers");
      out.push_back(e.get<int>());
    }
    m = std::move(out);
  }

  const json* in_;
  json& out_;
  std::string section_;
  std::set<std::string> seen_;
};

void bind(Binder& b, FeatureConfig& c) {
  b.field("sample_rate_hz", c.sample_rate_hz);
  b.field("n_mels", c.n_mels);
  b.field("hop_ms", c.hop_ms);
  b.field("win_ms", c.win_ms);
  b.field("n_fft", c.n_fft);
  b.field("fmin_hz", c.fmin_hz);
  b.field("fmax_hz", c.fmax_hz);
  b.field("log_floor", c.log_floor);
  b.field("f0_min_hz", c.f0_min_hz);
  b.field("f0_max_hz", c.f0_max_hz);
  b.field("voicing_threshold", c.voicing_threshold);
  b.field("silence_ratio", c.silence_ratio);
  b.field("default_log_f0", c.default_log_f0);
}

void bind(Binder& b, ReferenceEncoderConfig& c) {
  b.field("conv_channels", c.conv_channels);
  b.field("conv_kernel", c.conv_kernel);
  b.field("conv_stride", c.conv_stride);
  b.field("conv_padding", c.conv_padding);
  b.field("gru_units", c.gru_units);
  b.field("num_tokens", c.num_tokens);
  b.field("token_dim", c.token_dim);
  b.field("attention_heads", c.attention_heads);
  b.field("embed_dim", c.embed_dim);
}

void bind(Binder& b, PromptEncoderConfig& c) {
  b.field("backbone", c.backbone);
  b.field("backbone_path", c.backbone_path);
  b.field("vocab_path", c.vocab_path);
  b.field("mock_hidden", c.mock_hidden);
  b.field("mock_layers", c.mock_layers);
  b.field("mock_heads", c.mock_heads);
  b.field("mock_intermediate", c.mock_intermediate);
  b.field("mock_vocab", c.mock_vocab);
  b.field("max_tokens", c.max_tokens);
  b.field("trainable_blocks", c.trainable_blocks);
  b.field("head_hidden", c.head_hidden);
  b.field("mixtures", c.mixtures);
  b.field("scale_floor", c.scale_floor);
}

void bind(Binder& b, AcousticConfig& c) {
  b.field("hidden", c.hidden);
  b.field("conformer_blocks", c.conformer_blocks);
  b.field("conformer_heads", c.conformer_heads);
  b.field("conformer_ff_mult", c.conformer_ff_mult);
  b.field("conformer_kernel", c.conformer_kernel);
  b.field("variance_filter", c.variance_filter);
  b.field("variance_kernel", c.variance_kernel);
  b.field("duration_mixtures", c.duration_mixtures);
  b.field("duration_scale_floor", c.duration_scale_floor);
  b.field("decoder_layers", c.decoder_layers);
  b.field("decoder_channels", c.decoder_channels);
  b.field("dilation_cycle", c.dilation_cycle);
  b.field("diffusion_steps", c.diffusion_steps);
  b.field("schedule", c.schedule);
  b.field("beta_start", c.beta_start);
  b.field("beta_end", c.beta_end);
}

void bind(Binder& b, TrainingConfig& c) {
  b.field("base_lr", c.base_lr);
  b.field("warmup_steps", c.warmup_steps);
  b.field("max_frames", c.max_frames);
  b.field("epochs", c.epochs);
  b.field("max_steps", c.max_steps);
  b.field("adam_beta1", c.adam_beta1);
  b.field("adam_beta2", c.adam_beta2);
  b.field("adam_eps", c.adam_eps);
  b.field("weight_decay", c.weight_decay);
  b.field("grad_clip", c.grad_clip);
  b.field("seed", c.seed);
  b.field("checkpoint_every", c.checkpoint_every);
  b.field("log_every", c.log_every);
  b.field("validation_speaker_fraction", c.validation_speaker_fraction);
  b.field("weight_dec", c.weight_dec);
  b.field("weight_dur", c.weight_dur);
  b.field("weight_pitch", c.weight_pitch);
  b.field("weight_style", c.weight_style);
  b.field("use_mdn", c.use_mdn);
  b.field("use_speaker_prompt", c.use_speaker_prompt);
}

void bind(Binder& b, DataConfig& c) {
  b.field("manifest", c.manifest);
  b.field("speaker_prompts", c.speaker_prompts);
  b.field("templates", c.templates);
  b.field("lexicon", c.lexicon);
  b.field("feature_cache", c.feature_cache);
  b.field("output_dir", c.output_dir);
}

template <class Section>
void bind_section(const json* doc, json& out, const char* name, Section& section) {
  const json* in = (doc && doc->contains(name)) ? &doc->at(name) : nullptr;
  json& o = out[name];
  o = json::object();
  Binder b(in, o, name);
  bind(b, section);
  b.finish();
}

json bind_all(const json* doc, Config& config) {
  if (doc && !doc->is_null() && !doc->is_object()) throw ConfigError("config: document must be an object");
  const json* d = (doc && doc->is_object()) ? doc : nullptr;
  static const std::set<std::string> kSections{"features",  "reference_encoder", "prompt_encoder",
                                               "acoustic",  "training",          "data"};
  if (d) {
    for (const auto& [key, _] : d->items())
      if (!kSections.count(key)) throw ConfigError("config: unknown key '" + key + "'");
  }
  json out = json::object();
  bind_section(d, out, "features", config.features);
  bind_section(d, out, "reference_encoder", config.reference_encoder);
  bind_section(d, out, "prompt_encoder", config.prompt_encoder);
  bind_section(d, out, "acoustic", config.acoustic);
  bind_section(d, out, "training", config.training);
  bind_section(d, out, "data", config.data);
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: invalid value: " + what);
}

}  // namespace

int FeatureConfig::hop_samples() const {
  return static_cast<int>(std::lround(sample_rate_hz * hop_ms / 1000.0));
}
int FeatureConfig::win_samples() const {
  return static_cast<int>(std::lround(sample_rate_hz * win_ms / 1000.0));
}
int FeatureConfig::fft_size() const {
  if (n_fft > 0) return n_fft;
  int n = 1;
  while (n < win_samples()) n <<= 1;
  return n;
}

void validate_config(const Config& c) {
  const auto& f = c.features;
  require(f.sample_rate_hz > 0, "features.sample_rate_hz must be positive");
  require(f.n_mels > 0, "features.n_mels must be positive");
  require(f.hop_ms > 0, "features.hop_ms must be positive");
  require(f.win_ms > 0, "features.win_ms must be positive");
  require(f.hop_samples() > 0, "features.hop_ms too small for the sample rate");
  require(f.n_fft >= 0, "features.n_fft must be >= 0");
  require(f.n_fft == 0 || (f.n_fft >= f.win_samples() && (f.n_fft & (f.n_fft - 1)) == 0),
          "features.n_fft must be a power of two >= window length");
  require(f.fmin_hz >= 0, "features.fmin_hz must be >= 0");
  require(f.fmax_hz > f.fmin_hz && f.fmax_hz <= f.sample_rate_hz / 2.0,
          "features.fmax_hz must lie in (fmin_hz, sample_rate_hz/2]");
  require(f.log_floor > 0, "features.log_floor must be positive");
  require(f.f0_min_hz > 0 && f.f0_max_hz > f.f0_min_hz, "features.f0 range must satisfy 0 < f0_min < f0_max");
  require(f.voicing_threshold > 0 && f.voicing_threshold < 1, "features.voicing_threshold must be in (0,1)");
  require(f.silence_ratio > 0 && f.silence_ratio < 1, "features.silence_ratio must be in (0,1)");
  require(std::isfinite(f.default_log_f0) && f.default_log_f0 > 0, "features.default_log_f0 must be positive");

  const auto& r = c.reference_encoder;
  require(!r.conv_channels.empty(), "reference_encoder.conv_channels must be non-empty");
  for (int ch : r.conv_channels) require(ch > 0, "reference_encoder.conv_channels entries must be positive");
  require(r.conv_kernel > 0 && r.conv_stride > 0 && r.conv_padding >= 0, "reference_encoder conv geometry");
  require(r.gru_units > 0, "reference_encoder.gru_units must be positive");
  require(r.num_tokens >= 1, "reference_encoder.num_tokens must be >= 1");
  require(r.token_dim > 0 && r.embed_dim > 0, "reference_encoder dims must be positive");
  require(r.attention_heads > 0 && r.token_dim % r.attention_heads == 0,
          "reference_encoder.token_dim must be divisible by attention_heads");

  const auto& p = c.prompt_encoder;
  require(p.backbone == "mock" || p.backbone == "bert", "prompt_encoder.backbone must be 'mock' or 'bert'");
  require(p.mock_hidden > 0 && p.mock_layers > 0 && p.mock_heads > 0 && p.mock_intermediate > 0,
          "prompt_encoder mock dims must be positive");
  require(p.mock_hidden % p.mock_heads == 0, "prompt_encoder.mock_hidden must be divisible by mock_heads");
  require(p.mock_vocab > 2, "prompt_encoder.mock_vocab must exceed 2");
  require(p.max_tokens >= 2, "prompt_encoder.max_tokens must be >= 2");
  require(p.trainable_blocks >= 0, "prompt_encoder.trainable_blocks must be >= 0");
  require(p.head_hidden > 0, "prompt_encoder.head_hidden must be positive");
  require(p.mixtures >= 1, "prompt_encoder.mixtures must be >= 1");
  require(p.scale_floor > 0, "prompt_encoder.scale_floor must be positive");

  const auto& a = c.acoustic;
  require(a.hidden > 0 && a.conformer_blocks >= 0 && a.conformer_heads > 0 && a.conformer_ff_mult > 0,
          "acoustic conformer dims must be positive");
  require(a.hidden % a.conformer_heads == 0, "acoustic.hidden must be divisible by conformer_heads");
  require(a.conformer_kernel > 0 && a.conformer_kernel % 2 == 1, "acoustic.conformer_kernel must be odd");
  require(a.variance_filter > 0, "acoustic.variance_filter must be positive");
  require(a.variance_kernel > 0 && a.variance_kernel % 2 == 1, "acoustic.variance_kernel must be odd");
  require(a.duration_mixtures >= 1, "acoustic.duration_mixtures must be >= 1");
  require(a.duration_scale_floor > 0, "acoustic.duration_scale_floor must be positive");
  require(a.decoder_layers > 0 && a.decoder_channels > 0 && a.dilation_cycle > 0, "acoustic decoder dims");
  require(a.diffusion_steps >= 1, "acoustic.diffusion_steps must be >= 1");
  require(a.schedule == "linear" || a.schedule == "cosine", "acoustic.schedule must be 'linear' or 'cosine'");
  require(a.beta_start > 0 && a.beta_end < 1 && a.beta_start <= a.beta_end,
          "acoustic betas must satisfy 0 < beta_start <= beta_end < 1");

  const auto& t = c.training;
  require(t.base_lr > 0, "training.base_lr must be positive");
  require(t.warmup_steps > 0, "training.warmup_steps must be positive");
  require(t.max_frames > 0, "training.max_frames must be positive");
  require(t.epochs > 0, "training.epochs must be positive");
  require(t.max_steps >= 0, "training.max_steps must be >= 0");
  require(t.adam_beta1 > 0 && t.adam_beta1 < 1 && t.adam_beta2 > 0 && t.adam_beta2 < 1, "training adam betas");
  require(t.adam_eps > 0, "training.adam_eps must be positive");
  require(t.weight_decay >= 0, "training.weight_decay must be >= 0");
  require(t.grad_clip >= 0, "training.grad_clip must be >= 0");
  require(t.checkpoint_every > 0 && t.log_every > 0, "training cadences must be positive");
  require(t.validation_speaker_fraction >= 0 && t.validation_speaker_fraction < 1,
          "training.validation_speaker_fraction must be in [0,1)");
  require(t.weight_dec >= 0 && t.weight_dur >= 0 && t.weight_pitch >= 0 && t.weight_style >= 0,
          "training loss weights must be >= 0");
}

Config resolve_config(const nlohmann::json& document) {
  Config config;
  bind_all(&document, config);
  validate_config(config);
  return config;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json doc;
  try {
    doc = text.find_first_not_of(" \t\r\n") == std::string::npos ? json::object() : json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: parse error in " + path.string() + ": " + e.what());
  }
  return resolve_config(doc);
}

nlohmann::json config_to_json(const Config& config) {
  Config copy = config;
  return bind_all(nullptr, copy);
}

std::uint64_t config_hash(const Config& config) { return fnv1a64(config_to_json(config).dump()); }

std::uint64_t feature_config_hash(const FeatureConfig& features) {
  Config c;
  c.features = features;
  return fnv1a64(config_to_json(c).at("features").dump());
}

std::string hex_hash(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace promptts
