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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace promptts {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Gender { kFemale, kMale };

std::string_view to_string(Gender g);
Gender parse_gender(std::string_view s);

inline constexpr int kCorpusSampleRateHz = 24000;

struct UtteranceRecord {
  std::string utterance_id;
  std::string speaker_id;
  std::string audio_path;
  std::string text;
  std::vector<std::string> phonemes;
  std::vector<std::size_t> durations;  // frames, one per phone
  Gender gender = Gender::kFemale;
  int sample_rate_hz = kCorpusSampleRateHz;

  std::size_t total_frames() const;
  bool operator==(const UtteranceRecord&) const = default;
};

nlohmann::json to_json(const UtteranceRecord& record);
/// Parses and validates one record; throws DataError.
UtteranceRecord record_from_json(const nlohmann::json& j);

/// One JSON object per line. Blank lines are skipped. Errors carry the
/// offending line number. When expected_sample_rate is given, every record
/// must declare it.
std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path,
                                           std::optional<int> expected_sample_rate = std::nullopt);
std::vector<UtteranceRecord> parse_manifest(std::string_view text,
                                            std::optional<int> expected_sample_rate = std::nullopt);
std::string serialize_manifest(const std::vector<UtteranceRecord>& records);
void save_manifest(const std::filesystem::path& path, const std::vector<UtteranceRecord>& records);

// ---- alignments ----

struct AlignmentSegment {
  std::string phone;
  double start_seconds = 0.0;
  double end_seconds = 0.0;
};

struct Alignment {
  std::vector<std::string> phonemes;
  std::vector<std::size_t> durations;
};

/// Converts segment lengths to frame counts: floor each phone's fractional
/// frame count, then hand leftover frames one at a time to the phones with the
/// largest fractional remainder (earlier index wins ties) until the total is
/// total_frames. Without total_frames the target is ceil(last_end / hop).
Alignment segments_to_durations(const std::vector<AlignmentSegment>& segments, double hop_seconds,
                                std::optional<std::size_t> total_frames = std::nullopt);

/// Text file of `phone start_seconds end_seconds` lines; `#` starts a comment.
std::vector<AlignmentSegment> parse_alignment(std::string_view text);
Alignment load_alignment(const std::filesystem::path& path, double hop_seconds,
                         std::optional<std::size_t> total_frames = std::nullopt);

// ---- speaker prompts ----

/// Descriptor words annotators may use; the default list can be extended.
const std::vector<std::string>& default_descriptor_vocabulary();

struct SpeakerPromptAnnotation {
  std::string speaker_id;
  std::set<std::string> descriptor_words;
  std::string prompt_text;

  bool operator==(const SpeakerPromptAnnotation&) const = default;
};

using SpeakerPromptMap = std::map<std::string, SpeakerPromptAnnotation>;

/// JSON-lines file keyed by speaker_id. Validates descriptor words against
/// the vocabulary and rejects duplicate speakers.
SpeakerPromptMap load_speaker_prompts(const std::filesystem::path& path,
                                      const std::vector<std::string>& vocabulary = default_descriptor_vocabulary());
SpeakerPromptMap parse_speaker_prompts(std::string_view text,
                                       const std::vector<std::string>& vocabulary = default_descriptor_vocabulary());
void save_speaker_prompts(const std::filesystem::path& path, const SpeakerPromptMap& prompts);

// ---- splits ----

struct SpeakerSplit {
  std::vector<std::string> train_speakers;
  std::vector<std::string> validation_speakers;
};

/// Seeded speaker-level split; round(fraction * speakers) go to validation.
SpeakerSplit split_speakers(const std::vector<UtteranceRecord>& records, double validation_fraction,
                            std::uint64_t seed);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace promptts
