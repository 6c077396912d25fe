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

#include "promptts/toy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "promptts/random.hpp"

namespace promptts {
namespace {

struct Voice {
  const char* id;
  Gender gender;
  double f0;
  double tilt;
  double formant_scale;
  std::vector<std::string> words;
  const char* prompt;
};

const std::vector<Voice>& voices() {
  static const std::vector<Voice> kVoices{
      {"spk01", Gender::kFemale, 215.0, 0.10, 1.15, {"young", "clear", "sweet"},
       "A young woman with a clear and sweet voice."},
      {"spk02", Gender::kFemale, 175.0, 0.30, 1.02, {"soft", "breathy"}, "A woman with a soft and breathy voice."},
      {"spk03", Gender::kMale, 128.0, 0.12, 0.98, {"young", "bright"}, "A young man with a bright voice."},
      {"spk04", Gender::kMale, 96.0, 0.35, 0.88, {"old", "deep", "raspy"}, "An old man with a deep and raspy voice."},
      {"spk05", Gender::kFemale, 240.0, 0.20, 1.20, {"thin", "high-pitched"}, "A woman with a thin, high-pitched voice."},
      {"spk06", Gender::kMale, 110.0, 0.22, 0.92, {"calm", "warm"}, "A man with a calm and warm voice."},
      {"spk07", Gender::kFemale, 195.0, 0.40, 1.08, {"husky"}, "A woman with a husky voice."},
      {"spk08", Gender::kMale, 140.0, 0.08, 1.00, {"powerful", "clear"}, "A man with a powerful, clear voice."},
  };
  return kVoices;
}

struct PhoneSpec {
  const char* symbol;
  double f1, f2;  // formant centres, Hz
  bool voiced;
  bool noise;
};

const std::vector<PhoneSpec>& phone_specs() {
  static const std::vector<PhoneSpec> kPhones{
      {"a", 800, 1200, true, false}, {"e", 500, 1900, true, false}, {"i", 300, 2300, true, false},
      {"o", 500, 900, true, false},  {"u", 350, 800, true, false},  {"m", 250, 1100, true, false},
      {"n", 250, 1600, true, false}, {"s", 0, 0, false, true},
  };
  return kPhones;
}

double envelope(double hz, const PhoneSpec& p, double scale) {
  auto bump = [](double x, double c, double w) { return std::exp(-0.5 * (x - c) * (x - c) / (w * w)); };
  const double f1 = p.f1 * scale, f2 = p.f2 * scale;
  return 0.15 + bump(hz, f1, 120.0) + 0.6 * bump(hz, f2, 180.0);
}

}  // namespace

ToyCorpus make_toy_corpus(const ToyCorpusOptions& options, const FeatureConfig& features) {
  if (options.speakers < 1 || options.speakers > voices().size())
    throw DataError("toy corpus supports 1 to " + std::to_string(voices().size()) + " speakers");
  if (options.utterances_per_speaker < 1) throw DataError("toy corpus needs at least one utterance per speaker");
  const int sr = features.sample_rate_hz;
  const auto hop = static_cast<std::size_t>(features.hop_samples());
  const auto& phones = phone_specs();
  const std::array<double, 3> pitch_factor{0.95, 1.0, 1.05};
  const std::array<double, 3> frames_per_phone{6.0, 5.0, 4.2};
  const std::array<double, 3> gain{0.4, 0.5, 0.63};

  ToyCorpus corpus;
  Rng rng(derive_seed(options.seed, "toy-corpus"));
  for (std::size_t s = 0; s < options.speakers; ++s) {
    const Voice& v = voices()[s];
    SpeakerPromptAnnotation a;
    a.speaker_id = v.id;
    a.descriptor_words.insert(v.words.begin(), v.words.end());
    a.prompt_text = v.prompt;
    corpus.speaker_prompts.emplace(v.id, a);

    for (std::size_t u = 0; u < options.utterances_per_speaker; ++u) {
      const std::size_t pl = (u + s) % 3, sl = (u / 3 + s) % 3, ll = (u / 9 + u + 2 * s) % 3;
      UtteranceRecord r;
      r.speaker_id = v.id;
      r.utterance_id = std::string(v.id) + "_" + (u < 9 ? "0" : "") + std::to_string(u + 1);
      r.gender = v.gender;
      r.sample_rate_hz = sr;
      r.audio_path = "wavs/" + r.utterance_id + ".wav";
      const std::size_t count = 6 + static_cast<std::size_t>(rng.below(4));
      r.phonemes.push_back("sil");
      r.durations.push_back(3 + static_cast<std::size_t>(rng.below(2)));
      for (std::size_t k = 0; k < count; ++k) {
        r.phonemes.push_back(phones[static_cast<std::size_t>(rng.below(phones.size()))].symbol);
        const double base = frames_per_phone[sl] * (0.8 + 0.4 * rng.uniform());
        r.durations.push_back(std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(base))));
      }
      r.phonemes.push_back("sil");
      r.durations.push_back(3 + static_cast<std::size_t>(rng.below(2)));
      for (std::size_t k = 0; k < r.phonemes.size(); ++k) r.text += (k ? " " : "") + r.phonemes[k];

      Waveform w;
      w.sample_rate_hz = sr;
      const std::size_t total = r.total_frames() * hop;
      w.samples.assign(total, 0.0);
      const double f0_base = v.f0 * pitch_factor[pl];
      double phase = 0.0;
      std::size_t pos = 0;
      for (std::size_t k = 0; k < r.phonemes.size(); ++k) {
        const std::size_t len = r.durations[k] * hop;
        const PhoneSpec* spec = nullptr;
        for (const auto& p : phones)
          if (r.phonemes[k] == p.symbol) spec = &p;
        for (std::size_t i = 0; i < len; ++i, ++pos) {
          const double t = static_cast<double>(pos) / sr;
          const double f0 = f0_base * (1.0 + 0.04 * std::sin(2.0 * std::numbers::pi * 2.0 * t));
          phase += 2.0 * std::numbers::pi * f0 / sr;
          const double edge = std::min({1.0, static_cast<double>(i) / (0.1 * len), static_cast<double>(len - i) / (0.1 * len)});
          double x = 0.0;
          if (spec == nullptr) {
            x = 1e-4 * rng.normal();
          } else if (spec->noise) {
            x = 0.25 * rng.normal() * edge;
          } else {
            const double nasal = spec->f2 < 1700 && spec->f1 < 300 ? 0.5 : 1.0;
            for (int h = 1; h * f0 < 0.45 * sr && h <= 60; ++h) {
              const double amp = std::exp(-v.tilt * h) * envelope(h * f0, *spec, v.formant_scale);
              x += amp * std::sin(h * phase);
            }
            x *= 0.18 * nasal * edge;
          }
          w.samples[pos] = gain[ll] * x;
        }
      }
      for (auto& x : w.samples) x = std::clamp(x, -1.0, 1.0);
      corpus.records.push_back(std::move(r));
      corpus.waves.push_back(std::move(w));
    }
  }
  return corpus;
}

void write_toy_corpus(const ToyCorpus& corpus, const std::filesystem::path& directory, const Config& config) {
  namespace fs = std::filesystem;
  fs::create_directories(directory / "wavs");
  for (std::size_t i = 0; i < corpus.records.size(); ++i)
    write_wav(directory / corpus.records[i].audio_path, corpus.waves[i]);
  save_manifest(directory / "manifest.jsonl", corpus.records);
  save_speaker_prompts(directory / "speaker_prompts.jsonl", corpus.speaker_prompts);
  Config c = config;
  const fs::path abs = fs::absolute(directory);
  c.data.manifest = (abs / "manifest.jsonl").string();
  c.data.speaker_prompts = (abs / "speaker_prompts.jsonl").string();
  c.data.feature_cache = (abs / "features").string();
  c.data.output_dir = (abs / "run").string();
  write_text_file(directory / "config.json", config_to_json(c).dump(2) + "\n");
}

Config toy_config() {
  Config c;
  c.features.n_mels = 20;
  c.reference_encoder.conv_channels = {8, 8, 16, 16, 16, 16};
  c.reference_encoder.gru_units = 32;
  c.reference_encoder.num_tokens = 10;
  c.reference_encoder.token_dim = 32;
  c.reference_encoder.attention_heads = 4;
  c.reference_encoder.embed_dim = 16;
  c.prompt_encoder.mock_hidden = 32;
  c.prompt_encoder.mock_layers = 1;
  c.prompt_encoder.mock_heads = 2;
  c.prompt_encoder.mock_intermediate = 64;
  c.prompt_encoder.mock_vocab = 1024;
  c.prompt_encoder.head_hidden = 32;
  c.prompt_encoder.mixtures = 4;
  c.acoustic.hidden = 32;
  c.acoustic.conformer_blocks = 1;
  c.acoustic.conformer_heads = 2;
  c.acoustic.conformer_ff_mult = 2;
  c.acoustic.conformer_kernel = 7;
  c.acoustic.variance_filter = 32;
  c.acoustic.duration_mixtures = 2;
  c.acoustic.decoder_layers = 4;
  c.acoustic.decoder_channels = 32;
  c.acoustic.dilation_cycle = 2;
  c.acoustic.diffusion_steps = 10;
  c.acoustic.beta_start = 1e-3;
  c.acoustic.beta_end = 0.5;
  c.training.base_lr = 5e-3;
  c.training.warmup_steps = 40;
  c.training.max_frames = 2000;
  c.training.max_steps = 200;
  c.training.checkpoint_every = 100;
  c.training.log_every = 10;
  c.training.validation_speaker_fraction = 0.0;
  c.training.seed = 1234;
  return c;
}

}  // namespace promptts
