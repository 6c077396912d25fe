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

#include "promptts/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "promptts/random.hpp"

namespace promptts {
namespace {

using nlohmann::json;

constexpr double kFrameEps = 1e-9;

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

bool is_blank(std::string_view s) { return s.find_first_not_of(" \t") == std::string_view::npos; }

const std::string& require_string(const json& j, const char* key) {
  if (!j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  if (!j.at(key).is_string()) throw DataError(std::string("field '") + key + "' must be a string");
  return j.at(key).get_ref<const std::string&>();
}

}  // namespace

std::string_view to_string(Gender g) { return g == Gender::kFemale ? "female" : "male"; }

Gender parse_gender(std::string_view s) {
  if (s == "female") return Gender::kFemale;
  if (s == "male") return Gender::kMale;
  throw DataError("invalid gender '" + std::string(s) + "' (expected female or male)");
}

std::size_t UtteranceRecord::total_frames() const {
  return std::accumulate(durations.begin(), durations.end(), std::size_t{0});
}

json to_json(const UtteranceRecord& r) {
  return json{{"utterance_id", r.utterance_id}, {"speaker_id", r.speaker_id},  {"audio_path", r.audio_path},
              {"text", r.text},                 {"phonemes", r.phonemes},      {"durations", r.durations},
              {"gender", to_string(r.gender)},  {"sample_rate_hz", r.sample_rate_hz}};
}

UtteranceRecord record_from_json(const json& j) {
  if (!j.is_object()) throw DataError("record must be a JSON object");
  static const std::set<std::string> kFields{"utterance_id", "speaker_id", "audio_path", "text",
                                             "phonemes",     "durations",  "gender",     "sample_rate_hz"};
  for (const auto& [key, _] : j.items())
    if (!kFields.count(key)) throw DataError("unknown field '" + key + "'");

  UtteranceRecord r;
  r.utterance_id = require_string(j, "utterance_id");
  r.speaker_id = require_string(j, "speaker_id");
  r.audio_path = require_string(j, "audio_path");
  r.text = j.contains("text") ? require_string(j, "text") : "";
  if (r.utterance_id.empty()) throw DataError("utterance_id must be non-empty");
  if (r.speaker_id.empty()) throw DataError("speaker_id must be non-empty");

  if (j.contains("phonemes")) {
    if (!j.at("phonemes").is_array()) throw DataError("field 'phonemes' must be an array");
    for (const auto& p : j.at("phonemes")) {
      if (!p.is_string() || p.get_ref<const std::string&>().empty())
        throw DataError("phonemes must be non-empty strings");
      r.phonemes.push_back(p.get<std::string>());
    }
  }
  if (j.contains("durations")) {
    if (!j.at("durations").is_array()) throw DataError("field 'durations' must be an array");
    for (const auto& d : j.at("durations")) {
      if (!d.is_number_integer() || (!d.is_number_unsigned() && d.get<long long>() < 0))
        throw DataError("durations must be non-negative integers");
      r.durations.push_back(d.get<std::size_t>());
    }
  }
  if (r.phonemes.size() != r.durations.size()) {
    throw DataError("length mismatch: " + std::to_string(r.phonemes.size()) + " phonemes vs " +
                    std::to_string(r.durations.size()) + " durations");
  }
  r.gender = parse_gender(require_string(j, "gender"));
  if (j.contains("sample_rate_hz")) {
    const auto& sr = j.at("sample_rate_hz");
    if (!sr.is_number_integer() || sr.get<long long>() <= 0)
      throw DataError("sample_rate_hz must be a positive integer");
    r.sample_rate_hz = sr.get<int>();
  }
  return r;
}

std::vector<UtteranceRecord> parse_manifest(std::string_view text, std::optional<int> expected_sample_rate) {
  std::vector<UtteranceRecord> records;
  std::set<std::string> ids;
  auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const std::string where = "manifest line " + std::to_string(i + 1) + ": ";
    try {
      json j = json::parse(lines[i]);
      UtteranceRecord r = record_from_json(j);
      if (expected_sample_rate && r.sample_rate_hz != *expected_sample_rate) {
        throw DataError("sample_rate_hz " + std::to_string(r.sample_rate_hz) + " does not match configured " +
                        std::to_string(*expected_sample_rate));
      }
      if (!ids.insert(r.utterance_id).second) throw DataError("duplicate utterance_id '" + r.utterance_id + "'");
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(where + "malformed JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  return records;
}

std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path,
                                           std::optional<int> expected_sample_rate) {
  if (!std::filesystem::exists(path)) throw DataError("manifest not found: " + path.string());
  return parse_manifest(read_text_file(path), expected_sample_rate);
}

std::string serialize_manifest(const std::vector<UtteranceRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

void save_manifest(const std::filesystem::path& path, const std::vector<UtteranceRecord>& records) {
  write_text_file(path, serialize_manifest(records));
}

// ---------------------------------------------------------------------------

std::vector<AlignmentSegment> parse_alignment(std::string_view text) {
  std::vector<AlignmentSegment> segments;
  auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (is_blank(line)) continue;
    std::istringstream is{std::string(line)};
    AlignmentSegment s;
    std::string extra;
    if (!(is >> s.phone >> s.start_seconds >> s.end_seconds) || (is >> extra)) {
      throw DataError("alignment line " + std::to_string(i + 1) + ": expected 'phone start end'");
    }
    if (!std::isfinite(s.start_seconds) || !std::isfinite(s.end_seconds) || s.start_seconds < 0) {
      throw DataError("alignment line " + std::to_string(i + 1) + ": invalid times");
    }
    if (s.end_seconds < s.start_seconds) {
      throw DataError("alignment line " + std::to_string(i + 1) + ": segment ends before it starts");
    }
    if (!segments.empty() && s.start_seconds < segments.back().end_seconds - kFrameEps) {
      throw DataError("alignment line " + std::to_string(i + 1) + ": overlapping or out-of-order segment");
    }
    segments.push_back(std::move(s));
  }
  return segments;
}

Alignment segments_to_durations(const std::vector<AlignmentSegment>& segments, double hop_seconds,
                                std::optional<std::size_t> total_frames) {
  if (!(hop_seconds > 0)) throw DataError("alignment: hop must be positive");
  Alignment a;
  if (segments.empty()) {
    if (total_frames && *total_frames != 0) throw DataError("alignment: no segments but non-zero frame total");
    return a;
  }
  const std::size_t n = segments.size();
  std::vector<double> remainder(n);
  std::size_t floored = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = segments[i];
    if (s.end_seconds < s.start_seconds) throw DataError("alignment: segment ends before it starts");
    if (i > 0 && s.start_seconds < segments[i - 1].end_seconds - kFrameEps)
      throw DataError("alignment: overlapping or out-of-order segment");
    const double frames = (s.end_seconds - s.start_seconds) / hop_seconds;
    const double f = std::floor(frames + kFrameEps);
    a.phonemes.push_back(s.phone);
    a.durations.push_back(static_cast<std::size_t>(f));
    remainder[i] = std::max(0.0, frames - f);
    floored += static_cast<std::size_t>(f);
  }
  const std::size_t target = total_frames.value_or(
      static_cast<std::size_t>(std::max(0.0, std::ceil(segments.back().end_seconds / hop_seconds - kFrameEps))));
  if (target < floored) {
    throw DataError("alignment: frame total " + std::to_string(target) + " is smaller than the floored sum " +
                    std::to_string(floored));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return remainder[x] > remainder[y]; });
  std::size_t leftover = target - floored;
  for (std::size_t k = 0; leftover > 0; ++k, --leftover) a.durations[order[k % n]] += 1;
  return a;
}

Alignment load_alignment(const std::filesystem::path& path, double hop_seconds,
                         std::optional<std::size_t> total_frames) {
  if (!std::filesystem::exists(path)) throw DataError("alignment not found: " + path.string());
  try {
    return segments_to_durations(parse_alignment(read_text_file(path)), hop_seconds, total_frames);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& default_descriptor_vocabulary() {
  static const std::vector<std::string> kVocabulary{
      "young",  "old",      "gender-neutral", "deep",  "weak",   "muffled", "raspy",  "clear",
      "cool",   "wild",     "sweet",          "soft",  "adult-like", "husky", "bright", "calm",
      "hoarse", "breathy",  "powerful",       "gentle", "nasal", "thin",    "thick",  "warm",
      "childlike", "elderly", "low-pitched",  "high-pitched", "slightly", "very"};
  return kVocabulary;
}

SpeakerPromptMap parse_speaker_prompts(std::string_view text, const std::vector<std::string>& vocabulary) {
  const std::set<std::string> vocab(vocabulary.begin(), vocabulary.end());
  SpeakerPromptMap out;
  auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const std::string where = "speaker prompt line " + std::to_string(i + 1) + ": ";
    try {
      json j = json::parse(lines[i]);
      if (!j.is_object()) throw DataError("entry must be a JSON object");
      for (const auto& [key, _] : j.items())
        if (key != "speaker_id" && key != "descriptor_words" && key != "prompt_text")
          throw DataError("unknown field '" + key + "'");
      SpeakerPromptAnnotation a;
      a.speaker_id = require_string(j, "speaker_id");
      a.prompt_text = j.contains("prompt_text") ? require_string(j, "prompt_text") : "";
      if (j.contains("descriptor_words")) {
        if (!j.at("descriptor_words").is_array()) throw DataError("descriptor_words must be an array");
        for (const auto& w : j.at("descriptor_words")) {
          if (!w.is_string()) throw DataError("descriptor_words must be strings");
          const auto& word = w.get_ref<const std::string&>();
          if (!vocab.count(word)) throw DataError("descriptor '" + word + "' is not in the vocabulary");
          a.descriptor_words.insert(word);
        }
      }
      if (a.speaker_id.empty()) throw DataError("speaker_id must be non-empty");
      if (!a.descriptor_words.empty() && is_blank(a.prompt_text))
        throw DataError("prompt_text must be non-empty when descriptor_words are given");
      if (out.count(a.speaker_id)) throw DataError("duplicate speaker_id '" + a.speaker_id + "'");
      out.emplace(a.speaker_id, std::move(a));
    } catch (const json::exception& e) {
      throw DataError(where + "malformed JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  return out;
}

SpeakerPromptMap load_speaker_prompts(const std::filesystem::path& path, const std::vector<std::string>& vocabulary) {
  if (!std::filesystem::exists(path)) throw DataError("speaker prompt file not found: " + path.string());
  return parse_speaker_prompts(read_text_file(path), vocabulary);
}

void save_speaker_prompts(const std::filesystem::path& path, const SpeakerPromptMap& prompts) {
  std::string out;
  for (const auto& [id, a] : prompts) {
    out += json{{"speaker_id", a.speaker_id},
                {"descriptor_words", std::vector<std::string>(a.descriptor_words.begin(), a.descriptor_words.end())},
                {"prompt_text", a.prompt_text}}
               .dump();
    out += '\n';
  }
  write_text_file(path, out);
}

// ---------------------------------------------------------------------------

SpeakerSplit split_speakers(const std::vector<UtteranceRecord>& records, double validation_fraction,
                            std::uint64_t seed) {
  if (validation_fraction < 0 || validation_fraction >= 1) throw DataError("validation fraction must be in [0,1)");
  std::set<std::string> unique;
  for (const auto& r : records) unique.insert(r.speaker_id);
  std::vector<std::string> speakers(unique.begin(), unique.end());
  Rng rng(derive_seed(seed, "speaker-split"));
  rng.shuffle(speakers);
  const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(speakers.size())));
  SpeakerSplit split;
  split.validation_speakers.assign(speakers.begin(), speakers.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train_speakers.assign(speakers.begin() + static_cast<std::ptrdiff_t>(n_val), speakers.end());
  std::sort(split.validation_speakers.begin(), split.validation_speakers.end());
  std::sort(split.train_speakers.begin(), split.train_speakers.end());
  return split;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace promptts
