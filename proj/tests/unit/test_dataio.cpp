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

#include <doctest.h>

#include <string>

#include "promptts/config.hpp"
#include "promptts/dataio.hpp"
#include "temp_dir.hpp"

using namespace promptts;

namespace {

const char* kTwoRecords =
    R"({"utterance_id":"u1","speaker_id":"s1","audio_path":"a.wav","text":"hi","phonemes":["p1","p2"],"durations":[3,4],"gender":"female","sample_rate_hz":24000}
{"utterance_id":"u2","speaker_id":"s2","audio_path":"b.wav","text":"yo","phonemes":["a"],"durations":[5],"gender":"male","sample_rate_hz":24000}
)";

}  // namespace

TEST_CASE("manifest parsing") {
  SUBCASE("empty text yields no records") { CHECK(parse_manifest("").empty()); }

  SUBCASE("a record keeps its fields and frame total") {
    auto recs = parse_manifest(kTwoRecords);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].phonemes == std::vector<std::string>{"p1", "p2"});
    CHECK(recs[0].total_frames() == 7);
    CHECK(recs[1].gender == Gender::kMale);
  }

  SUBCASE("phoneme and duration counts must agree") {
    const char* bad =
        R"({"utterance_id":"u","speaker_id":"s","audio_path":"a","text":"t","phonemes":["a","b"],"durations":[1,2,3],"gender":"female","sample_rate_hz":24000})";
    CHECK_THROWS_WITH_AS(parse_manifest(bad), doctest::Contains("length mismatch"), DataError);
  }

  SUBCASE("errors name the line") {
    std::string text = std::string(kTwoRecords) + "{not json}\n";
    CHECK_THROWS_WITH_AS(parse_manifest(text), doctest::Contains("line 3"), DataError);
  }

  SUBCASE("unknown fields and rate mismatches are rejected") {
    CHECK_THROWS_AS(parse_manifest(R"({"utterance_id":"u","bogus":1})"), DataError);
    CHECK_THROWS_AS(parse_manifest(kTwoRecords, 16000), DataError);
  }

  SUBCASE("serialize then parse round-trips") {
    auto recs = parse_manifest(kTwoRecords);
    CHECK(parse_manifest(serialize_manifest(recs)) == recs);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(load_manifest("/nonexistent/manifest.jsonl"), doctest::Contains("not found"), DataError);
  }
}

TEST_CASE("alignment to frame durations") {
  SUBCASE("exact division") {
    auto a = segments_to_durations({{"a", 0.0, 0.10}}, 0.01);
    CHECK(a.durations == std::vector<std::size_t>{10});
  }

  SUBCASE("residual frames keep the ceil total") {
    // 0.015 s at a 10 ms hop floors to 1 frame each; ceil(0.030 / 0.010) = 3.
    auto a = segments_to_durations({{"a", 0.0, 0.015}, {"b", 0.015, 0.030}}, 0.01);
    REQUIRE(a.durations.size() == 2);
    CHECK(a.durations[0] + a.durations[1] == 3);
    // Equal remainders: the earlier phone takes the extra frame.
    CHECK(a.durations == std::vector<std::size_t>{2, 1});
  }

  SUBCASE("largest remainders receive leftovers") {
    // Fractions 0.2, 0.7, 0.6 frames over 1.5 total frames -> ceil = 2 (floors 0,0,0).
    auto a = segments_to_durations({{"a", 0.0, 0.002}, {"b", 0.002, 0.009}, {"c", 0.009, 0.015}}, 0.01);
    CHECK(a.durations == std::vector<std::size_t>{0, 1, 1});
  }

  SUBCASE("bad segments") {
    CHECK_THROWS_WITH_AS(parse_alignment("a 0.2 0.1\n"), doctest::Contains("ends before it starts"), DataError);
    CHECK_THROWS_WITH_AS(parse_alignment("a 0.0 0.2\nb 0.1 0.3\n"), doctest::Contains("overlapping"), DataError);
    CHECK_THROWS_AS(segments_to_durations({{"a", 0.2, 0.1}}, 0.01), DataError);
  }

  SUBCASE("file form with comments") {
    testing::TempDir dir;
    write_text_file(dir / "a.lab", "# phone start end\nsil 0.00 0.05\na 0.05 0.12\n");
    auto a = load_alignment(dir / "a.lab", 0.01);
    CHECK(a.phonemes == std::vector<std::string>{"sil", "a"});
    CHECK(a.durations == std::vector<std::size_t>{5, 7});
  }
}

TEST_CASE("speaker prompt annotations") {
  const auto& vocab = default_descriptor_vocabulary();
  for (const char* w : {"young", "old", "gender-neutral", "deep", "weak", "muffled", "raspy", "clear", "cool", "wild",
                        "sweet"})
    CHECK(std::find(vocab.begin(), vocab.end(), w) != vocab.end());

  auto m = parse_speaker_prompts(
      R"({"speaker_id":"s1","descriptor_words":["deep","raspy"],"prompt_text":"A deep and raspy voice."})");
  REQUIRE(m.count("s1") == 1);
  CHECK(m.at("s1").descriptor_words == std::set<std::string>{"deep", "raspy"});

  CHECK_THROWS_WITH_AS(parse_speaker_prompts(R"({"speaker_id":"s","descriptor_words":["purple"],"prompt_text":"x"})"),
                       doctest::Contains("not in the vocabulary"), DataError);
  CHECK_THROWS_AS(parse_speaker_prompts(R"({"speaker_id":"s","descriptor_words":["deep"],"prompt_text":""})"),
                  DataError);

  testing::TempDir dir;
  save_speaker_prompts(dir / "sp.jsonl", m);
  CHECK(load_speaker_prompts(dir / "sp.jsonl") == m);
}

TEST_CASE("speaker split is seeded and disjoint") {
  std::vector<UtteranceRecord> recs;
  for (int s = 0; s < 50; ++s) {
    UtteranceRecord r;
    r.utterance_id = "u" + std::to_string(s);
    r.speaker_id = "s" + std::to_string(s);
    recs.push_back(r);
  }
  auto a = split_speakers(recs, 0.1, 3), b = split_speakers(recs, 0.1, 3);
  CHECK(a.validation_speakers == b.validation_speakers);
  CHECK(a.validation_speakers.size() == 5);
  CHECK(a.train_speakers.size() == 45);
  for (const auto& v : a.validation_speakers)
    CHECK(std::find(a.train_speakers.begin(), a.train_speakers.end(), v) == a.train_speakers.end());
}

TEST_CASE("config resolution") {
  SUBCASE("empty document gives the defaults") {
    Config c = resolve_config(nlohmann::json::object());
    CHECK(c.features.n_mels == 80);
    CHECK(c.features.hop_ms == 10.0);
    CHECK(c.features.win_ms == 40.0);
  }

  SUBCASE("overrides") {
    Config c = resolve_config(nlohmann::json::parse(R"({"acoustic":{"diffusion_steps":10}})"));
    CHECK(c.acoustic.diffusion_steps == 10);
  }

  SUBCASE("invalid documents") {
    CHECK_THROWS_AS(resolve_config(nlohmann::json::parse(R"({"acoustic":{"diffusion_steps":0}})")), ConfigError);
    CHECK_THROWS_WITH_AS(resolve_config(nlohmann::json::parse(R"({"acoustic":{"bogus":1}})")),
                         doctest::Contains("unknown key"), ConfigError);
    CHECK_THROWS_WITH_AS(resolve_config(nlohmann::json::parse(R"({"features":{"n_mels":"many"}})")),
                         doctest::Contains("type mismatch"), ConfigError);
    CHECK_THROWS_AS(resolve_config(nlohmann::json::parse(R"({"prompt_encoder":{"mixtures":0}})")), ConfigError);
  }

  SUBCASE("resolution is idempotent") {
    Config c = resolve_config(nlohmann::json::parse(R"({"training":{"seed":9},"acoustic":{"hidden":64}})"));
    const auto once = config_to_json(c);
    CHECK(config_to_json(resolve_config(once)) == once);
    CHECK(config_hash(resolve_config(once)) == config_hash(c));
  }

  SUBCASE("file loading") {
    testing::TempDir dir;
    write_text_file(dir / "c.json", R"({"training":{"base_lr":0.002}})");
    CHECK(load_config(dir / "c.json").training.base_lr == 0.002);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
  }
}
