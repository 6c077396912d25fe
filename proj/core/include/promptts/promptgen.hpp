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

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptts/dataio.hpp"
#include "promptts/features.hpp"
#include "promptts/random.hpp"

namespace promptts {

class PromptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Attribute { kPitch = 0, kSpeed = 1, kLoudness = 2 };
inline constexpr std::array<Attribute, 3> kAttributes{Attribute::kPitch, Attribute::kSpeed, Attribute::kLoudness};

/// Three ordered levels. Speed reads them as slow/normal/fast.
enum class Level { kLow = 0, kNormal = 1, kHigh = 2 };

std::string_view to_string(Attribute a);
/// "low"/"normal"/"high", or "slow"/"normal"/"fast" for speed.
std::string_view level_name(Attribute a, Level l);
Level parse_level(Attribute a, std::string_view name);

struct StyleLevels {
  Level pitch = Level::kNormal;
  Level speed = Level::kNormal;
  Level loudness = Level::kNormal;

  Level get(Attribute a) const;
  void set(Attribute a, Level l);
  bool operator==(const StyleLevels&) const = default;
};

struct Cuts {
  double low = 0.0;
  double high = 0.0;
  bool operator==(const Cuts&) const = default;
};

class ThresholdTable {
 public:
  bool has(Gender g) const { return cuts_.count(g) != 0; }
  const Cuts& cuts(Gender g, Attribute a) const;
  void set(Gender g, Attribute a, Cuts c);
  const std::map<Gender, std::array<Cuts, 3>>& entries() const { return cuts_; }

  nlohmann::json to_json() const;
  static ThresholdTable from_json(const nlohmann::json& j);
  bool operator==(const ThresholdTable&) const = default;

 private:
  std::map<Gender, std::array<Cuts, 3>> cuts_;
};

struct GenderedStats {
  StyleStats stats;
  Gender gender = Gender::kFemale;
};

struct ThresholdFit {
  ThresholdTable table;
  std::vector<std::string> warnings;  // one per degenerate (gender, attribute)
};

/// Linear-interpolation percentile of sorted data, q in [0, 1].
double percentile_linear(std::span<const double> sorted, double q);

/// Tertile cut points per gender and attribute. Utterances without a mean F0
/// are left out of the pitch statistics. A constant attribute yields cuts
/// (v, nextafter(v)) so that every value falls in the middle level.
ThresholdFit compute_thresholds(std::span<const GenderedStats> stats);

/// value < low -> low; value >= high -> high; otherwise normal. A missing
/// mean F0 maps to normal pitch.
StyleLevels assign_levels(const StyleStats& stats, Gender gender, const ThresholdTable& table);

// ---- templates ----

inline constexpr std::array<std::string_view, 4> kTemplateSlots{"gender_word", "pitch_level", "speed_level",
                                                                "loudness_level"};

struct PromptTemplate {
  std::string template_id;
  std::string text;

  bool operator==(const PromptTemplate&) const = default;
};

/// Slot names in order of appearance; throws on unbalanced braces.
std::vector<std::string> template_slots(std::string_view text);

/// Throws unless every slot is known and each of the four slots occurs once.
void validate_template(const PromptTemplate& t);

/// Words that may fill each slot. The first entry of every list is canonical.
struct Lexicon {
  std::array<std::vector<std::string>, 2> gender_words;                 // [Gender]
  std::array<std::array<std::vector<std::string>, 3>, 3> level_words;  // [Attribute][Level]

  /// Keeps only the canonical word per entry.
  Lexicon canonical() const;
  const std::vector<std::string>& words(std::string_view slot, Gender g, const StyleLevels& levels) const;

  nlohmann::json to_json() const;
  static Lexicon from_json(const nlohmann::json& j);
  bool operator==(const Lexicon&) const = default;
};

const std::vector<PromptTemplate>& default_templates();
const Lexicon& default_lexicon();

nlohmann::json templates_to_json(const std::vector<PromptTemplate>& templates);
std::vector<PromptTemplate> templates_from_json(const nlohmann::json& j);
std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);
Lexicon load_lexicon(const std::filesystem::path& path);

/// Number of distinct fillings: per template, the product of slot choices.
std::size_t count_surface_forms(const std::vector<PromptTemplate>& templates, const Lexicon& lexicon);

/// Fills one template with explicit word choices (index per slot occurrence).
std::string fill_template(const PromptTemplate& t, Gender gender, const StyleLevels& levels, const Lexicon& lexicon,
                          std::span<const std::size_t> choices);

/// Uniform template, then a uniform word for each slot.
std::string render_style_prompt(const StyleLevels& levels, Gender gender, const std::vector<PromptTemplate>& templates,
                                const Lexicon& lexicon, Rng& rng);
/// Same with the canonical default lexicon.
std::string render_style_prompt(const StyleLevels& levels, Gender gender, const std::vector<PromptTemplate>& templates,
                                Rng& rng);

/// Style prompt, then a space, then the speaker prompt when present.
std::string compose_prompt(const std::optional<std::string>& speaker_prompt, const std::string& style_prompt);

struct ParsedStylePrompt {
  Gender gender = Gender::kFemale;
  StyleLevels levels;
  std::string template_id;
};

/// Inverse of rendering: matches a prompt against every template.
class StylePromptParser {
 public:
  StylePromptParser(const std::vector<PromptTemplate>& templates, const Lexicon& lexicon);
  ~StylePromptParser();
  StylePromptParser(StylePromptParser&&) noexcept;
  StylePromptParser& operator=(StylePromptParser&&) noexcept;

  std::optional<ParsedStylePrompt> parse(const std::string& prompt) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// ---- prompt manifest ----

struct PromptManifestEntry {
  std::string utterance_id;
  std::string speaker_id;
  Gender gender = Gender::kFemale;
  StyleLevels levels;
  std::string style_prompt;
  std::optional<std::string> speaker_prompt;
  std::string prompt;

  bool operator==(const PromptManifestEntry&) const = default;
};

nlohmann::json to_json(const PromptManifestEntry& e);
PromptManifestEntry prompt_entry_from_json(const nlohmann::json& j);
std::string serialize_prompt_manifest(const std::vector<PromptManifestEntry>& entries);
std::vector<PromptManifestEntry> parse_prompt_manifest(std::string_view text);

}  // namespace promptts
