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

#include <complex>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "promptts/config.hpp"
#include "promptts/dataio.hpp"

namespace promptts {

class FeatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mono waveform in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = kCorpusSampleRateHz;

  double seconds() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

/// Reads 16-bit PCM or 32-bit float RIFF/WAVE; multi-channel input is averaged.
Waveform read_wav(const std::filesystem::path& path);
/// Writes 16-bit PCM mono, clipping to [-1, 1].
void write_wav(const std::filesystem::path& path, const Waveform& wave);

/// Row-major [frames x n_mels] natural-log mel amplitudes.
struct MelSpectrogram {
  std::size_t frames = 0;
  std::size_t n_mels = 0;
  std::vector<double> values;
  double hop_seconds = 0.01;
  double window_seconds = 0.04;

  double at(std::size_t t, std::size_t m) const { return values[t * n_mels + m]; }
};

struct PitchTrack {
  std::vector<double> log_f0;  // continuous, interpolated through unvoiced frames
  std::vector<std::uint8_t> vuv;

  std::size_t frames() const { return log_f0.size(); }
};

struct StyleStats {
  /// Mean over voiced frames; empty when the utterance has none, which
  /// excludes it from pitch statistics.
  std::optional<double> mean_f0_hz;
  double speaking_rate = 0.0;  // non-silence phones per second
  double loudness_db = 0.0;    // mean per-frame RMS in dBFS
};

// ---- spectral primitives ----

/// In-place iterative radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& data, bool inverse = false);

/// Periodic Hann window.
std::vector<double> hann_window(std::size_t length);

/// Slaney-style mel filterbank [n_mels x (n_fft/2 + 1)] with area normalization.
std::vector<double> mel_filterbank(int sample_rate_hz, int n_fft, int n_mels, double fmin_hz, double fmax_hz);
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Number of frames for a signal: ceil(num_samples / hop).
std::size_t frame_count(std::size_t num_samples, int hop_samples);

/// Magnitude STFT frames centered at t*hop with zero padding,
/// row-major [frames x (n_fft/2 + 1)].
std::vector<double> stft_magnitude(std::span<const double> samples, const FeatureConfig& config,
                                   std::size_t* frames_out = nullptr);

MelSpectrogram compute_logmel(const Waveform& wave, const FeatureConfig& config);

// ---- pitch ----

/// Per-frame raw F0 estimate, before continuity filling.
struct RawPitch {
  std::vector<double> f0_hz;  // 0 for unvoiced frames
};

/// Interface for pluggable F0 estimators.
class PitchEstimator {
 public:
  virtual ~PitchEstimator() = default;
  virtual RawPitch estimate(const Waveform& wave, const FeatureConfig& config) const = 0;
};

/// Normalized-autocorrelation estimator (default).
class AutocorrelationPitchEstimator : public PitchEstimator {
 public:
  RawPitch estimate(const Waveform& wave, const FeatureConfig& config) const override;
};

/// Converts raw F0 to continuous log-F0 plus V/UV flags.
PitchTrack make_continuous(const RawPitch& raw, double default_log_f0);

PitchTrack extract_pitch(const Waveform& wave, const FeatureConfig& config);
PitchTrack extract_pitch(const Waveform& wave, const FeatureConfig& config, const PitchEstimator& estimator);

// ---- style statistics ----

/// Phones treated as silence when counting speaking rate.
const std::set<std::string>& silence_phones();

StyleStats utterance_stats(const PitchTrack& pitch, const UtteranceRecord& record, const Waveform& wave,
                           const FeatureConfig& config);

/// Mean per-frame RMS in dBFS over full analysis windows.
double loudness_db(std::span<const double> samples, const FeatureConfig& config);

// ---- feature cache ----

struct UtteranceFeatures {
  std::string utterance_id;
  MelSpectrogram mel;
  PitchTrack pitch;
  StyleStats stats;
  std::size_t num_samples = 0;
};

UtteranceFeatures compute_features(const UtteranceRecord& record, const Waveform& wave,
                                   const FeatureConfig& config);

/// Directory of `<utterance_id>.feat` archives tagged with the hash of the
/// feature configuration; entries written under a different hash are stale.
class FeatureCache {
 public:
  FeatureCache(std::filesystem::path directory, const FeatureConfig& config);

  std::filesystem::path path_for(const std::string& utterance_id) const;
  std::optional<UtteranceFeatures> load(const std::string& utterance_id) const;
  void store(const UtteranceFeatures& features) const;
  /// Loads a fresh entry or computes (reading record.audio_path) and stores one.
  UtteranceFeatures load_or_compute(const UtteranceRecord& record) const;

  std::uint64_t config_hash() const { return hash_; }

 private:
  std::filesystem::path directory_;
  FeatureConfig config_;
  std::uint64_t hash_;
};

// ---- inversion ----

/// Griffin-Lim reconstruction from a log-mel spectrogram. Low fidelity; meant
/// only for auditioning without a neural vocoder.
Waveform invert_logmel(const MelSpectrogram& mel, const FeatureConfig& config, int iterations = 32);

}  // namespace promptts
