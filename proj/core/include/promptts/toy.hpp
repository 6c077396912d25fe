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
#include <vector>

#include "promptts/config.hpp"
#include "promptts/dataio.hpp"
#include "promptts/features.hpp"

namespace promptts {

/// Small synthetic corpus: harmonic vowels and nasals, a noise fricative and
/// silences, with per-speaker pitch, spectral tilt and formant scaling, and
/// per-utterance pitch, rate and loudness variation.
struct ToyCorpus {
  std::vector<UtteranceRecord> records;
  std::vector<Waveform> waves;
  SpeakerPromptMap speaker_prompts;
};

struct ToyCorpusOptions {
  std::size_t speakers = 4;  // at most 8
  std::size_t utterances_per_speaker = 10;
  std::uint64_t seed = 7;
};

ToyCorpus make_toy_corpus(const ToyCorpusOptions& options, const FeatureConfig& features);

/// Writes wavs/, manifest.jsonl, speaker_prompts.jsonl and a config.json
/// whose data paths point into the directory.
void write_toy_corpus(const ToyCorpus& corpus, const std::filesystem::path& directory, const Config& config);

/// Scaled-down configuration for the toy corpus (T = 10, mock backbone).
Config toy_config();

}  // namespace promptts
