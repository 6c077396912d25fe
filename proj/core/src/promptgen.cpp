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

#include "promptts/promptgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <regex>
#include <sstream>

namespace promptts {
namespace {

using nlohmann::json;

constexpr std::array<std::array<std::string_view, 3>, 3> kLevelNames{{
    {"low", "normal", "high"},
    {"slow", "normal", "fast"},
    {"low", "normal", "high"},
}};

std::size_t idx(Attribute a) { return static_cast<std::size_t>(a); }
std::size_t idx(Level l) { return static_cast<std::size_t>(l); }
std::size_t idx(Gender g) { return g == Gender::kFemale ? 0 : 1; }

std::optional<double> attribute_value(const StyleStats& s, Attribute a) {
  switch (a) {
    case Attribute::kPitch:
      return s.mean_f0_hz;
    case Attribute::kSpeed:
      return s.speaking_rate;
    case Attribute::kLoudness:
      return s.loudness_db;
  }
  return std::nullopt;
}

std::string regex_escape(std::string_view s) {
  static const std::string kSpecial = R"(\^$.|?*+()[]{}/-)";
  std::string out;
  for (char c : s) {
    if (kSpecial.find(c) != std::string::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

std::string slot_key(std::string_view slot) {
  for (auto s : kTemplateSlots)
    if (s == slot) return std::string(s);
  throw PromptError("unknown template slot '{" + std::string(slot) + "}'");
}

}  // namespace

std::string_view to_string(Attribute a) {
  static constexpr std::array<std::string_view, 3> kNames{"pitch", "speed", "loudness"};
  return kNames[idx(a)];
}

std::string_view level_name(Attribute a, Level l) { return kLevelNames[idx(a)][idx(l)]; }

Level parse_level(Attribute a, std::string_view name) {
  for (std::size_t i = 0; i < 3; ++i)
    if (kLevelNames[idx(a)][i] == name) return static_cast<Level>(i);
  throw PromptError("unknown " + std::string(to_string(a)) + " level '" + std::string(name) + "'");
}

Level StyleLevels::get(Attribute a) const {
  switch (a) {
    case Attribute::kPitch:
      return pitch;
    case Attribute::kSpeed:
      return speed;
    case Attribute::kLoudness:
      return loudness;
  }
  return Level::kNormal;
}

void StyleLevels::set(Attribute a, Level l) {
  switch (a) {
    case Attribute::kPitch:
      pitch = l;
      break;
    case Attribute::kSpeed:
      speed = l;
      break;
    case Attribute::kLoudness:
      loudness = l;
      break;
  }
}

// ---------------------------------------------------------------------------

const Cuts& ThresholdTable::cuts(Gender g, Attribute a) const {
  auto it = cuts_.find(g);
  if (it == cuts_.end()) throw PromptError("threshold table has no entry for gender " + std::string(to_string(g)));
  return it->second[idx(a)];
}

void ThresholdTable::set(Gender g, Attribute a, Cuts c) {
  if (!(c.low < c.high)) throw PromptError("threshold cuts must satisfy low < high");
  cuts_[g][idx(a)] = c;
}

json ThresholdTable::to_json() const {
  json j = json::object();
  for (const auto& [g, arr] : cuts_) {
    json inner = json::object();
    for (auto a : kAttributes) inner[std::string(to_string(a))] = {arr[idx(a)].low, arr[idx(a)].high};
    j[std::string(to_string(g))] = inner;
  }
  return j;
}

ThresholdTable ThresholdTable::from_json(const json& j) {
  ThresholdTable t;
  if (!j.is_object()) throw PromptError("threshold table must be a JSON object");
  for (const auto& [gname, inner] : j.items()) {
    const Gender g = parse_gender(gname);
    for (auto a : kAttributes) {
      const auto& pair = inner.at(std::string(to_string(a)));
      t.set(g, a, Cuts{pair.at(0).get<double>(), pair.at(1).get<double>()});
    }
  }
  return t;
}

double percentile_linear(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw PromptError("percentile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

ThresholdFit compute_thresholds(std::span<const GenderedStats> stats) {
  if (stats.empty()) throw PromptError("no statistics to fit thresholds on");
  std::map<Gender, std::array<std::vector<double>, 3>> values;
  std::map<Gender, std::size_t> counts;
  for (const auto& s : stats) {
    ++counts[s.gender];
    auto& per = values[s.gender];
    for (auto a : kAttributes)
      if (auto v = attribute_value(s.stats, a)) per[idx(a)].push_back(*v);
  }
  ThresholdFit fit;
  for (auto& [g, per] : values) {
    for (auto a : kAttributes) {
      auto& v = per[idx(a)];
      if (v.size() < 3) {
        throw PromptError("insufficient data for gender " + std::string(to_string(g)) + ": " +
                          std::to_string(v.size()) + " utterances with " + std::string(to_string(a)) +
                          " statistics (need at least 3)");
      }
      std::sort(v.begin(), v.end());
      Cuts c{percentile_linear(v, 1.0 / 3.0), percentile_linear(v, 2.0 / 3.0)};
      if (!(c.low < c.high)) {
        fit.warnings.push_back("degenerate " + std::string(to_string(a)) + " distribution for gender " +
                               std::string(to_string(g)) + "; cuts widened");
        c.high = std::nextafter(c.low, std::numeric_limits<double>::infinity());
      }
      fit.table.set(g, a, c);
    }
  }
  return fit;
}

StyleLevels assign_levels(const StyleStats& stats, Gender gender, const ThresholdTable& table) {
  StyleLevels levels;
  for (auto a : kAttributes) {
    const Cuts& c = table.cuts(gender, a);
    const auto v = attribute_value(stats, a);
    Level l = Level::kNormal;
    if (v) {
      if (*v < c.low) {
        l = Level::kLow;
      } else if (*v >= c.high) {
        l = Level::kHigh;
      }
    }
    levels.set(a, l);
  }
  return levels;
}

// ---------------------------------------------------------------------------

std::vector<std::string> template_slots(std::string_view text) {
  std::vector<std::string> slots;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '}') throw PromptError("unbalanced '}' in template: " + std::string(text));
    if (text[i] != '{') continue;
    const auto close = text.find('}', i);
    if (close == std::string_view::npos) throw PromptError("unbalanced '{' in template: " + std::string(text));
    slots.emplace_back(text.substr(i + 1, close - i - 1));
    i = close;
  }
  return slots;
}

void validate_template(const PromptTemplate& t) {
  if (t.template_id.empty()) throw PromptError("template without template_id");
  const auto slots = template_slots(t.text);
  for (const auto& s : slots) slot_key(s);
  for (auto required : kTemplateSlots) {
    const auto n = std::count(slots.begin(), slots.end(), std::string(required));
    if (n != 1) {
      throw PromptError("template '" + t.template_id + "' must use {" + std::string(required) + "} exactly once");
    }
  }
}

Lexicon Lexicon::canonical() const {
  Lexicon c = *this;
  for (auto& w : c.gender_words) w.resize(std::min<std::size_t>(w.size(), 1));
  for (auto& per : c.level_words)
    for (auto& w : per) w.resize(std::min<std::size_t>(w.size(), 1));
  return c;
}

const std::vector<std::string>& Lexicon::words(std::string_view slot, Gender g, const StyleLevels& levels) const {
  if (slot == "gender_word") return gender_words[idx(g)];
  if (slot == "pitch_level") return level_words[idx(Attribute::kPitch)][idx(levels.pitch)];
  if (slot == "speed_level") return level_words[idx(Attribute::kSpeed)][idx(levels.speed)];
  if (slot == "loudness_level") return level_words[idx(Attribute::kLoudness)][idx(levels.loudness)];
  slot_key(slot);
  throw PromptError("unreachable");
}

json Lexicon::to_json() const {
  json j;
  j["gender_word"] = {{"female", gender_words[0]}, {"male", gender_words[1]}};
  for (auto a : kAttributes) {
    json inner = json::object();
    for (std::size_t l = 0; l < 3; ++l) inner[std::string(kLevelNames[idx(a)][l])] = level_words[idx(a)][l];
    j[std::string(to_string(a)) + "_level"] = inner;
  }
  return j;
}

Lexicon Lexicon::from_json(const json& j) {
  Lexicon lex;
  auto read_list = [](const json& v, const std::string& where) {
    if (!v.is_array() || v.empty()) throw PromptError("lexicon entry " + where + " must be a non-empty list");
    std::vector<std::string> out;
    for (const auto& w : v) {
      if (!w.is_string() || w.get<std::string>().empty()) throw PromptError("lexicon entry " + where + " has a bad word");
      out.push_back(w.get<std::string>());
    }
    return out;
  };
  try {
    lex.gender_words[0] = read_list(j.at("gender_word").at("female"), "gender_word.female");
    lex.gender_words[1] = read_list(j.at("gender_word").at("male"), "gender_word.male");
    for (auto a : kAttributes) {
      const std::string key = std::string(to_string(a)) + "_level";
      for (std::size_t l = 0; l < 3; ++l) {
        const std::string name(kLevelNames[idx(a)][l]);
        lex.level_words[idx(a)][l] = read_list(j.at(key).at(name), key + "." + name);
      }
    }
  } catch (const json::exception& e) {
    throw PromptError(std::string("malformed lexicon: ") + e.what());
  }
  // Word-to-value lookup must be unambiguous within a slot.
  auto check = [](const std::vector<const std::vector<std::string>*>& groups, const std::string& slot) {
    std::set<std::string> seen;
    for (const auto* g : groups)
      for (const auto& w : *g)
        if (!seen.insert(w).second) throw PromptError("lexicon word '" + w + "' is ambiguous within " + slot);
  };
  check({&lex.gender_words[0], &lex.gender_words[1]}, "gender_word");
  for (auto a : kAttributes) {
    const auto& lw = lex.level_words[idx(a)];
    check({&lw[0], &lw[1], &lw[2]}, std::string(to_string(a)) + "_level");
  }
  return lex;
}

const std::vector<PromptTemplate>& default_templates() {
  static const std::vector<PromptTemplate> kTemplates = [] {
    const std::vector<std::string> texts{
        "A {gender_word} speaks {speed_level} with {loudness_level} volume and {pitch_level} pitch.",
        "A {gender_word} talks {speed_level} in a {pitch_level} pitch with {loudness_level} volume.",
        "The {gender_word} speaks {speed_level}, with {pitch_level} pitch and {loudness_level} volume.",
        "A {gender_word} with {pitch_level} pitch speaks {speed_level} at {loudness_level} volume.",
        "Speaking {speed_level}, a {gender_word} uses {pitch_level} pitch and {loudness_level} volume.",
        "A {gender_word} reads {speed_level} with {loudness_level} energy and {pitch_level} pitch.",
        "The voice of a {gender_word}, speaking {speed_level} with {pitch_level} pitch and {loudness_level} volume.",
        "A {gender_word}'s voice with {pitch_level} pitch and {loudness_level} volume, speaking {speed_level}.",
        "A {gender_word} says this {speed_level} in {pitch_level} pitch and {loudness_level} volume.",
        "Please generate a {gender_word} speaking {speed_level} with {pitch_level} pitch and {loudness_level} volume.",
        "Synthesize a {gender_word} voice that speaks {speed_level} with {loudness_level} volume and {pitch_level} "
        "pitch.",
        "A {gender_word} delivers the line {speed_level}, using {loudness_level} volume and {pitch_level} pitch.",
        "The {gender_word} talks {speed_level}; the pitch is {pitch_level} and the volume is {loudness_level}.",
        "With {loudness_level} volume and {pitch_level} pitch, a {gender_word} speaks {speed_level}.",
        "A {gender_word} speaking {speed_level} in a {loudness_level} volume with {pitch_level} pitch.",
        "Here a {gender_word} speaks {speed_level}, keeping {pitch_level} pitch and {loudness_level} volume.",
        "A {gender_word} voice: {pitch_level} pitch, {loudness_level} volume, speaking {speed_level}.",
        "The speaker is a {gender_word} who talks {speed_level} with {pitch_level} pitch and {loudness_level} volume.",
        "A {gender_word} narrates {speed_level} with a {pitch_level} pitch and {loudness_level} loudness.",
        "In {pitch_level} pitch, a {gender_word} speaks {speed_level} with {loudness_level} volume.",
        "A {gender_word} utters the sentence {speed_level} at {loudness_level} volume, with {pitch_level} pitch.",
        "Generate speech from a {gender_word} who speaks {speed_level}, with {loudness_level} volume and "
        "{pitch_level} pitch.",
        "A {gender_word} is speaking {speed_level} with {pitch_level} pitch and {loudness_level} volume.",
        "The {gender_word}'s speech is {loudness_level} in volume and {pitch_level} in pitch, delivered "
        "{speed_level}.",
        "Speech by a {gender_word}, delivered {speed_level} with {pitch_level} pitch and {loudness_level} volume.",
        "A {gender_word} reads aloud {speed_level}, with {pitch_level} pitch and {loudness_level} volume.",
        "Make a {gender_word} speak {speed_level} with {pitch_level} pitch and {loudness_level} volume.",
        "A {gender_word} voice speaking {speed_level}, {pitch_level} in pitch and {loudness_level} in volume.",
        "The {gender_word} speaks with {pitch_level} pitch and {loudness_level} volume, {speed_level}.",
        "A {gender_word} talks {speed_level} using a {pitch_level} pitch at {loudness_level} volume.",
        "Imagine a {gender_word} speaking {speed_level} with {loudness_level} volume and a {pitch_level} pitch.",
        "Listen to a {gender_word} who speaks {speed_level}; {pitch_level} pitch, {loudness_level} volume.",
    };
    std::vector<PromptTemplate> out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      char id[24];
      std::snprintf(id, sizeof(id), "t%02zu", i + 1);
      out.push_back({id, texts[i]});
    }
    return out;
  }();
  return kTemplates;
}

const Lexicon& default_lexicon() {
  static const Lexicon kLexicon = [] {
    Lexicon lex;
    lex.gender_words = {{{"woman", "female speaker", "lady"}, {"man", "male speaker", "gentleman"}}};
    lex.level_words[idx(Attribute::kPitch)] = {{{"low", "deep"}, {"normal", "medium"}, {"high", "raised"}}};
    lex.level_words[idx(Attribute::kSpeed)] = {
        {{"slowly", "at a slow pace"}, {"at a normal speed", "at a moderate pace"}, {"fast", "quickly"}}};
    lex.level_words[idx(Attribute::kLoudness)] = {{{"low", "quiet"}, {"normal", "moderate"}, {"high", "loud"}}};
    return lex;
  }();
  return kLexicon;
}

json templates_to_json(const std::vector<PromptTemplate>& templates) {
  json j = json::array();
  for (const auto& t : templates) j.push_back({{"template_id", t.template_id}, {"text", t.text}});
  return j;
}

std::vector<PromptTemplate> templates_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw PromptError("template file must be a non-empty JSON array");
  std::vector<PromptTemplate> out;
  std::set<std::string> ids;
  for (const auto& e : j) {
    PromptTemplate t;
    try {
      t.template_id = e.at("template_id").get<std::string>();
      t.text = e.at("text").get<std::string>();
    } catch (const json::exception& ex) {
      throw PromptError(std::string("malformed template entry: ") + ex.what());
    }
    validate_template(t);
    if (!ids.insert(t.template_id).second) throw PromptError("duplicate template_id '" + t.template_id + "'");
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  try {
    return templates_from_json(json::parse(read_text_file(path)));
  } catch (const json::parse_error& e) {
    throw PromptError(path.string() + ": " + e.what());
  }
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  try {
    return Lexicon::from_json(json::parse(read_text_file(path)));
  } catch (const json::parse_error& e) {
    throw PromptError(path.string() + ": " + e.what());
  }
}

std::size_t count_surface_forms(const std::vector<PromptTemplate>& templates, const Lexicon& lexicon) {
  auto slot_size = [&](const std::string& slot) -> std::size_t {
    if (slot == "gender_word") return lexicon.gender_words[0].size() + lexicon.gender_words[1].size();
    const Attribute a = slot == "pitch_level" ? Attribute::kPitch
                        : slot == "speed_level" ? Attribute::kSpeed
                                                : Attribute::kLoudness;
    std::size_t n = 0;
    for (const auto& w : lexicon.level_words[idx(a)]) n += w.size();
    return n;
  };
  std::size_t total = 0;
  for (const auto& t : templates) {
    std::size_t forms = 1;
    for (const auto& s : template_slots(t.text)) forms *= slot_size(slot_key(s));
    total += forms;
  }
  return total;
}

std::string fill_template(const PromptTemplate& t, Gender gender, const StyleLevels& levels, const Lexicon& lexicon,
                          std::span<const std::size_t> choices) {
  std::string out;
  std::size_t slot_index = 0;
  const std::string& text = t.text;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '{') {
      out.push_back(text[i]);
      continue;
    }
    const auto close = text.find('}', i);
    if (close == std::string::npos) throw PromptError("unbalanced '{' in template '" + t.template_id + "'");
    const auto& words = lexicon.words(text.substr(i + 1, close - i - 1), gender, levels);
    const std::size_t c = slot_index < choices.size() ? choices[slot_index] : 0;
    if (c >= words.size()) throw PromptError("word choice out of range");
    out += words[c];
    ++slot_index;
    i = close;
  }
  return out;
}

std::string render_style_prompt(const StyleLevels& levels, Gender gender, const std::vector<PromptTemplate>& templates,
                                const Lexicon& lexicon, Rng& rng) {
  if (templates.empty()) throw PromptError("no prompt templates");
  const auto& t = templates.size() == 1 ? templates[0] : templates[rng.below(templates.size())];
  std::vector<std::size_t> choices;
  for (const auto& s : template_slots(t.text)) {
    const auto& words = lexicon.words(s, gender, levels);
    if (words.empty()) throw PromptError("lexicon has no words for slot {" + s + "}");
    choices.push_back(words.size() == 1 ? 0 : static_cast<std::size_t>(rng.below(words.size())));
  }
  return fill_template(t, gender, levels, lexicon, choices);
}

std::string render_style_prompt(const StyleLevels& levels, Gender gender, const std::vector<PromptTemplate>& templates,
                                Rng& rng) {
  static const Lexicon kCanonical = default_lexicon().canonical();
  return render_style_prompt(levels, gender, templates, kCanonical, rng);
}

std::string compose_prompt(const std::optional<std::string>& speaker_prompt, const std::string& style_prompt) {
  if (style_prompt.empty()) {
    throw PromptError(speaker_prompt && !speaker_prompt->empty() ? "style prompt is empty"
                                                                  : "both speaker and style prompts are empty");
  }
  if (!speaker_prompt || speaker_prompt->empty()) return style_prompt;
  return style_prompt + " " + *speaker_prompt;
}

// ---------------------------------------------------------------------------

struct StylePromptParser::Impl {
  struct Compiled {
    std::string template_id;
    std::regex pattern;
    std::vector<std::string> slots;
  };
  std::vector<Compiled> templates;
  Lexicon lexicon;
};

StylePromptParser::StylePromptParser(const std::vector<PromptTemplate>& templates, const Lexicon& lexicon)
    : impl_(std::make_unique<Impl>()) {
  impl_->lexicon = lexicon;
  auto alternation = [](std::vector<std::string> words) {
    std::sort(words.begin(), words.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
    std::string alt = "(";
    for (std::size_t i = 0; i < words.size(); ++i) alt += (i ? "|" : "") + regex_escape(words[i]);
    return alt + ")";
  };
  for (const auto& t : templates) {
    Impl::Compiled c;
    c.template_id = t.template_id;
    std::string pattern = "^";
    const std::string& text = t.text;
    for (std::size_t i = 0; i < text.size(); ++i) {
      if (text[i] != '{') {
        pattern += regex_escape(std::string_view(&text[i], 1));
        continue;
      }
      const auto close = text.find('}', i);
      const std::string slot = slot_key(text.substr(i + 1, close - i - 1));
      std::vector<std::string> words;
      if (slot == "gender_word") {
        for (const auto& g : lexicon.gender_words) words.insert(words.end(), g.begin(), g.end());
      } else {
        const Attribute a = slot == "pitch_level" ? Attribute::kPitch
                            : slot == "speed_level" ? Attribute::kSpeed
                                                    : Attribute::kLoudness;
        for (const auto& l : lexicon.level_words[idx(a)]) words.insert(words.end(), l.begin(), l.end());
      }
      pattern += alternation(std::move(words));
      c.slots.push_back(slot);
      i = close;
    }
    pattern += "$";
    c.pattern = std::regex(pattern);
    impl_->templates.push_back(std::move(c));
  }
}

StylePromptParser::~StylePromptParser() = default;
StylePromptParser::StylePromptParser(StylePromptParser&&) noexcept = default;
StylePromptParser& StylePromptParser::operator=(StylePromptParser&&) noexcept = default;

std::optional<ParsedStylePrompt> StylePromptParser::parse(const std::string& prompt) const {
  const Lexicon& lex = impl_->lexicon;
  auto find = [](const std::vector<std::string>& words, const std::string& w) {
    return std::find(words.begin(), words.end(), w) != words.end();
  };
  for (const auto& c : impl_->templates) {
    std::smatch m;
    if (!std::regex_match(prompt, m, c.pattern)) continue;
    ParsedStylePrompt out;
    out.template_id = c.template_id;
    for (std::size_t s = 0; s < c.slots.size(); ++s) {
      const std::string word = m[s + 1].str();
      const std::string& slot = c.slots[s];
      if (slot == "gender_word") {
        out.gender = find(lex.gender_words[0], word) ? Gender::kFemale : Gender::kMale;
        continue;
      }
      const Attribute a = slot == "pitch_level" ? Attribute::kPitch
                          : slot == "speed_level" ? Attribute::kSpeed
                                                  : Attribute::kLoudness;
      for (std::size_t l = 0; l < 3; ++l)
        if (find(lex.level_words[idx(a)][l], word)) out.levels.set(a, static_cast<Level>(l));
    }
    return out;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

json to_json(const PromptManifestEntry& e) {
  json j{{"utterance_id", e.utterance_id},
         {"speaker_id", e.speaker_id},
         {"gender", std::string(to_string(e.gender))},
         {"pitch", std::string(level_name(Attribute::kPitch, e.levels.pitch))},
         {"speed", std::string(level_name(Attribute::kSpeed, e.levels.speed))},
         {"loudness", std::string(level_name(Attribute::kLoudness, e.levels.loudness))},
         {"style_prompt", e.style_prompt},
         {"prompt", e.prompt}};
  j["speaker_prompt"] = e.speaker_prompt ? json(*e.speaker_prompt) : json(nullptr);
  return j;
}

PromptManifestEntry prompt_entry_from_json(const json& j) {
  PromptManifestEntry e;
  try {
    e.utterance_id = j.at("utterance_id").get<std::string>();
    e.speaker_id = j.at("speaker_id").get<std::string>();
    e.gender = parse_gender(j.at("gender").get<std::string>());
    for (auto a : kAttributes) e.levels.set(a, parse_level(a, j.at(std::string(to_string(a))).get<std::string>()));
    e.style_prompt = j.at("style_prompt").get<std::string>();
    if (j.contains("speaker_prompt") && !j.at("speaker_prompt").is_null())
      e.speaker_prompt = j.at("speaker_prompt").get<std::string>();
    e.prompt = j.at("prompt").get<std::string>();
  } catch (const json::exception& ex) {
    throw PromptError(std::string("malformed prompt manifest entry: ") + ex.what());
  }
  return e;
}

std::string serialize_prompt_manifest(const std::vector<PromptManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) out += to_json(e).dump() + "\n";
  return out;
}

std::vector<PromptManifestEntry> parse_prompt_manifest(std::string_view text) {
  std::vector<PromptManifestEntry> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prompt_entry_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw PromptError("prompt manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace promptts
