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

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "promptts/features.hpp"
#include "promptts/random.hpp"
#include "temp_dir.hpp"

using namespace promptts;

namespace {

Waveform tone(double hz, double seconds, double amplitude = 0.5, int sr = 24000) {
  Waveform w;
  w.sample_rate_hz = sr;
  w.samples.resize(static_cast<std::size_t>(seconds * sr));
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sr);
  return w;
}

std::size_t argmax_row(const MelSpectrogram& m, std::size_t t) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < m.n_mels; ++k)
    if (m.at(t, k) > m.at(t, best)) best = k;
  return best;
}

}  // namespace

TEST_CASE("fft agrees with a direct transform") {
  Rng rng(5);
  std::vector<std::complex<double>> x(64);
  for (auto& v : x) v = {rng.normal(), rng.normal()};
  auto y = x;
  fft(y);
  const auto ref = testing::direct_dft(x);
  for (std::size_t k = 0; k < x.size(); ++k) CHECK(std::abs(y[k] - ref[k]) < 1e-9);
  fft(y, true);
  for (std::size_t k = 0; k < x.size(); ++k) CHECK(std::abs(y[k] - x[k]) < 1e-12);
  std::vector<std::complex<double>> odd(6);
  CHECK_THROWS_AS(fft(odd), FeatureError);
}

TEST_CASE("log-mel framing and values") {
  FeatureConfig cfg;

  SUBCASE("one second at 24 kHz gives 100 x 80") {
    auto m = compute_logmel(tone(440, 1.0), cfg);
    CHECK(m.frames == 100);
    CHECK(m.n_mels == 80);
    CHECK(m.hop_seconds == doctest::Approx(0.01));
    CHECK(m.window_seconds == doctest::Approx(0.04));
  }

  SUBCASE("silence sits at the log floor") {
    Waveform w;
    w.samples.assign(4800, 0.0);
    auto m = compute_logmel(w, cfg);
    for (double v : m.values) CHECK(v == std::log(1e-5));
  }

  SUBCASE("a 440 Hz tone peaks in one bin on interior frames") {
    auto m = compute_logmel(tone(440, 0.5), cfg);
    const auto bin = argmax_row(m, 5);
    for (std::size_t t = 5; t + 5 < m.frames; ++t) CHECK(argmax_row(m, t) == bin);
  }

  SUBCASE("matches the direct-DFT reference spectrogram") {
    FeatureConfig small;
    small.sample_rate_hz = 8000;
    small.n_mels = 20;
    small.fmax_hz = 4000;
    Rng rng(11);
    Waveform w;
    w.sample_rate_hz = 8000;
    for (int i = 0; i < 1200; ++i) w.samples.push_back(0.3 * std::sin(0.07 * i) + 0.05 * rng.normal());
    auto m = compute_logmel(w, small);
    auto ref = testing::reference_logmel(w.samples, 8000, small.win_samples(), small.hop_samples(),
                                         small.fft_size(), 20, 0.0, 4000.0, 1e-5);
    REQUIRE(ref.size() == m.values.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - m.values[i]));
    CHECK(worst < 1e-8);
  }

  SUBCASE("one-hop shift moves frames by one") {
    Rng rng(2);
    Waveform a;
    for (int i = 0; i < 6000; ++i) a.samples.push_back(rng.normal() * 0.1);
    Waveform b = a;
    b.samples.insert(b.samples.begin(), static_cast<std::size_t>(cfg.hop_samples()), 0.0);
    auto ma = compute_logmel(a, cfg), mb = compute_logmel(b, cfg);
    for (std::size_t t = 3; t + 3 < ma.frames; ++t)
      for (std::size_t k = 0; k < ma.n_mels; ++k) CHECK(std::abs(ma.at(t, k) - mb.at(t + 1, k)) < 1e-6);
  }

  SUBCASE("input errors") {
    CHECK_THROWS_AS(compute_logmel(Waveform{}, cfg), FeatureError);
    CHECK_THROWS_WITH_AS(compute_logmel(tone(440, 0.1, 0.5, 16000), cfg), doctest::Contains("sample-rate"),
                         FeatureError);
  }
}

TEST_CASE("continuous pitch") {
  FeatureConfig cfg;

  SUBCASE("220 Hz tone") {
    auto w = tone(220, 0.5);
    auto p = extract_pitch(w, cfg);
    CHECK(p.frames() == compute_logmel(w, cfg).frames);
    const double oracle = testing::zero_crossing_f0(w.samples, 4800, 960, 24000);
    CHECK(oracle == doctest::Approx(220).epsilon(1e-3));
    for (std::size_t t = 3; t + 3 < p.frames(); ++t) {
      CHECK(p.vuv[t] == 1);
      CHECK(std::exp(p.log_f0[t]) == doctest::Approx(oracle).epsilon(0.05));
    }
  }

  SUBCASE("silence is unvoiced at the default") {
    Waveform w;
    w.samples.assign(2400, 0.0);
    auto p = extract_pitch(w, cfg);
    for (std::size_t t = 0; t < p.frames(); ++t) {
      CHECK(p.vuv[t] == 0);
      CHECK(p.log_f0[t] == cfg.default_log_f0);
    }
  }

  SUBCASE("gaps interpolate between neighbours") {
    auto a = tone(220, 0.3), b = tone(440, 0.3);
    Waveform w = a;
    w.samples.insert(w.samples.end(), 4800, 0.0);
    w.samples.insert(w.samples.end(), b.samples.begin(), b.samples.end());
    auto p = extract_pitch(w, cfg);
    const std::size_t mid = 30 + 10;  // inside the 200 ms gap
    CHECK(p.vuv[mid] == 0);
    CHECK(p.log_f0[mid] > std::log(220.0));
    CHECK(p.log_f0[mid] < std::log(440.0));
  }

  SUBCASE("amplitude scaling leaves the track unchanged") {
    auto w = tone(180, 0.4);
    Waveform s = w;
    for (auto& v : s.samples) v *= 0.01;
    auto p = extract_pitch(w, cfg), q = extract_pitch(s, cfg);
    CHECK(p.vuv == q.vuv);
    for (std::size_t t = 0; t < p.frames(); ++t) CHECK(p.log_f0[t] == doctest::Approx(q.log_f0[t]).epsilon(1e-9));
  }

  SUBCASE("make_continuous edge extension") {
    RawPitch raw{{0, 0, 200, 0, 100, 0}};
    auto p = make_continuous(raw, 1.0);
    CHECK(p.log_f0[0] == std::log(200.0));
    CHECK(p.log_f0[3] == doctest::Approx(0.5 * (std::log(200.0) + std::log(100.0))));
    CHECK(p.log_f0[5] == std::log(100.0));
    CHECK(p.vuv == std::vector<std::uint8_t>{0, 0, 1, 0, 1, 0});
  }
}

TEST_CASE("utterance statistics") {
  FeatureConfig cfg;

  SUBCASE("constant tone, ten phones in two seconds") {
    auto w = tone(220, 2.0);
    UtteranceRecord r;
    r.phonemes = {"sil", "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "sil"};
    r.durations = {5, 19, 19, 19, 19, 19, 19, 19, 19, 19, 19, 5};
    auto s = utterance_stats(extract_pitch(w, cfg), r, w, cfg);
    REQUIRE(s.mean_f0_hz.has_value());
    CHECK(*s.mean_f0_hz == doctest::Approx(220).epsilon(0.02));
    CHECK(s.speaking_rate == doctest::Approx(5.0));
  }

  SUBCASE("unvoiced utterance has no pitch mean") {
    Waveform w;
    w.samples.assign(4800, 0.0);
    UtteranceRecord r;
    r.phonemes = {"s"};
    r.durations = {20};
    auto s = utterance_stats(extract_pitch(w, cfg), r, w, cfg);
    CHECK_FALSE(s.mean_f0_hz.has_value());
  }

  SUBCASE("loudness of a half-amplitude sine") {
    // Direct RMS oracle over the whole signal; frames of a whole number of
    // periods all share it.
    auto w = tone(200, 1.0);
    double sq = 0.0;
    for (double v : w.samples) sq += v * v;
    const double oracle = 20.0 * std::log10(std::sqrt(sq / static_cast<double>(w.samples.size())));
    CHECK(oracle == doctest::Approx(20.0 * std::log10(0.5 / std::sqrt(2.0))).epsilon(1e-4));
    CHECK(loudness_db(w.samples, cfg) == doctest::Approx(oracle).epsilon(1e-4));
  }

  SUBCASE("empty input") {
    UtteranceRecord r;
    CHECK_THROWS_AS(utterance_stats(PitchTrack{}, r, Waveform{}, cfg), FeatureError);
  }
}

TEST_CASE("feature cache") {
  testing::TempDir dir;
  FeatureConfig cfg;
  UtteranceRecord r;
  r.utterance_id = "u1";
  r.phonemes = {"a"};
  r.durations = {20};
  auto w = tone(150, 0.2);
  r.audio_path = (dir / "u1.wav").string();
  write_wav(r.audio_path, w);

  FeatureCache cache(dir / "cache", cfg);
  CHECK_FALSE(cache.load("u1").has_value());
  auto f = cache.load_or_compute(r);
  auto g = cache.load("u1");
  REQUIRE(g.has_value());
  CHECK(g->mel.values == f.mel.values);
  CHECK(g->pitch.vuv == f.pitch.vuv);
  CHECK(g->stats.mean_f0_hz == f.stats.mean_f0_hz);

  FeatureConfig other = cfg;
  other.n_mels = 40;
  FeatureCache stale(dir / "cache", other);
  CHECK_FALSE(stale.load("u1").has_value());
}

TEST_CASE("wav round trip and spectral inversion") {
  testing::TempDir dir;
  auto w = tone(300, 0.1);
  write_wav(dir / "t.wav", w);
  auto r = read_wav(dir / "t.wav");
  REQUIRE(r.samples.size() == w.samples.size());
  CHECK(r.sample_rate_hz == 24000);
  for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) < 1e-4);

  FeatureConfig cfg;
  auto inv = invert_logmel(compute_logmel(w, cfg), cfg, 8);
  CHECK(inv.samples.size() >= w.samples.size() - static_cast<std::size_t>(cfg.hop_samples()));
  for (double v : inv.samples) CHECK(std::isfinite(v));
}
