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

#include "promptts/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "promptts/archive.hpp"

namespace promptts {
namespace {

using cd = std::complex<double>;

void check_wave(const Waveform& wave, const FeatureConfig& config) {
  if (wave.samples.empty()) throw FeatureError("empty waveform");
  if (wave.sample_rate_hz != config.sample_rate_hz) {
    throw FeatureError("sample-rate mismatch: waveform is " + std::to_string(wave.sample_rate_hz) +
                       " Hz, configuration expects " + std::to_string(config.sample_rate_hz) + " Hz");
  }
}

// Copies the analysis frame centered at center into out (zero outside the signal).
void centered_frame(std::span<const double> samples, std::ptrdiff_t center, std::size_t length,
                    std::vector<double>& out) {
  out.assign(length, 0.0);
  const std::ptrdiff_t start = center - static_cast<std::ptrdiff_t>(length / 2);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(samples.size());
  for (std::size_t i = 0; i < length; ++i) {
    const std::ptrdiff_t s = start + static_cast<std::ptrdiff_t>(i);
    if (s >= 0 && s < n) out[i] = samples[static_cast<std::size_t>(s)];
  }
}

std::vector<cd> stft_complex(std::span<const double> samples, const FeatureConfig& config, std::size_t frames) {
  const int hop = config.hop_samples();
  const std::size_t win = static_cast<std::size_t>(config.win_samples());
  const std::size_t n_fft = static_cast<std::size_t>(config.fft_size());
  const std::size_t bins = n_fft / 2 + 1;
  const auto window = hann_window(win);
  std::vector<cd> out(frames * bins);
  std::vector<double> frame;
  std::vector<cd> buf(n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    centered_frame(samples, static_cast<std::ptrdiff_t>(t) * hop, win, frame);
    std::fill(buf.begin(), buf.end(), cd{});
    for (std::size_t i = 0; i < win; ++i) buf[i] = frame[i] * window[i];
    fft(buf);
    std::copy_n(buf.begin(), bins, out.begin() + static_cast<std::ptrdiff_t>(t * bins));
  }
  return out;
}

}  // namespace

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw FeatureError("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cd w = std::polar(1.0, ang * static_cast<double>(k));
        const cd u = a[i + k];
        const cd v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t i = 0; i < length; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(length));
  return w;
}

double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz >= min_log_hz ? min_log_mel + std::log(hz / min_log_hz) / logstep : hz / f_sp;
}

double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel >= min_log_mel ? min_log_hz * std::exp(logstep * (mel - min_log_mel)) : f_sp * mel;
}

std::vector<double> mel_filterbank(int sample_rate_hz, int n_fft, int n_mels, double fmin_hz, double fmax_hz) {
  const std::size_t bins = static_cast<std::size_t>(n_fft / 2 + 1);
  const double mel_lo = hz_to_mel(fmin_hz), mel_hi = hz_to_mel(fmax_hz);
  std::vector<double> hz(static_cast<std::size_t>(n_mels + 2));
  for (std::size_t i = 0; i < hz.size(); ++i)
    hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  std::vector<double> fb(static_cast<std::size_t>(n_mels) * bins, 0.0);
  for (std::size_t m = 0; m < static_cast<std::size_t>(n_mels); ++m) {
    const double lo = hz[m], mid = hz[m + 1], hi = hz[m + 2];
    const double enorm = 2.0 / (hi - lo);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / n_fft;
      const double w = std::max(0.0, std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid)));
      fb[m * bins + k] = w * enorm;
    }
  }
  return fb;
}

std::size_t frame_count(std::size_t num_samples, int hop_samples) {
  const auto hop = static_cast<std::size_t>(hop_samples);
  return (num_samples + hop - 1) / hop;
}

std::vector<double> stft_magnitude(std::span<const double> samples, const FeatureConfig& config,
                                   std::size_t* frames_out) {
  const std::size_t frames = frame_count(samples.size(), config.hop_samples());
  auto spec = stft_complex(samples, config, frames);
  std::vector<double> mag(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) mag[i] = std::abs(spec[i]);
  if (frames_out) *frames_out = frames;
  return mag;
}

MelSpectrogram compute_logmel(const Waveform& wave, const FeatureConfig& config) {
  check_wave(wave, config);
  std::size_t frames = 0;
  const auto mag = stft_magnitude(wave.samples, config, &frames);
  const std::size_t bins = static_cast<std::size_t>(config.fft_size() / 2 + 1);
  const std::size_t n_mels = static_cast<std::size_t>(config.n_mels);
  const auto fb = mel_filterbank(config.sample_rate_hz, config.fft_size(), config.n_mels, config.fmin_hz,
                                 config.fmax_hz);
  MelSpectrogram mel;
  mel.frames = frames;
  mel.n_mels = n_mels;
  mel.hop_seconds = config.hop_seconds();
  mel.window_seconds = config.win_ms / 1000.0;
  mel.values.resize(frames * n_mels);
  const double log_floor = std::log(config.log_floor);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t m = 0; m < n_mels; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) acc += fb[m * bins + k] * mag[t * bins + k];
      mel.values[t * n_mels + m] = acc > config.log_floor ? std::log(acc) : log_floor;
    }
  }
  return mel;
}

// ---------------------------------------------------------------------------

RawPitch AutocorrelationPitchEstimator::estimate(const Waveform& wave, const FeatureConfig& config) const {
  check_wave(wave, config);
  const double sr = wave.sample_rate_hz;
  const auto lag_min = static_cast<std::size_t>(std::floor(sr / config.f0_max_hz));
  const auto lag_max = static_cast<std::size_t>(std::ceil(sr / config.f0_min_hz));
  const std::size_t length = std::max<std::size_t>(static_cast<std::size_t>(config.win_samples()), 2 * lag_max + 4);
  std::size_t n_ac = 1;
  while (n_ac < 2 * length) n_ac <<= 1;

  const std::size_t frames = frame_count(wave.samples.size(), config.hop_samples());
  std::vector<double> energy(frames, 0.0);
  std::vector<double> best_lag(frames, 0.0);
  std::vector<double> best_score(frames, 0.0);

  std::vector<double> frame;
  std::vector<cd> buf(n_ac);
  std::vector<double> prefix(length + 1);
  std::vector<double> nacf(lag_max + 2, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    centered_frame(wave.samples, static_cast<std::ptrdiff_t>(t) * config.hop_samples(), length, frame);
    prefix[0] = 0.0;
    for (std::size_t i = 0; i < length; ++i) prefix[i + 1] = prefix[i] + frame[i] * frame[i];
    energy[t] = prefix[length];
    if (energy[t] <= 0.0) continue;

    std::fill(buf.begin(), buf.end(), cd{});
    for (std::size_t i = 0; i < length; ++i) buf[i] = frame[i];
    fft(buf);
    for (auto& x : buf) x = std::norm(x);
    fft(buf, true);

    const std::size_t lo = std::max<std::size_t>(1, lag_min > 0 ? lag_min - 1 : 0);
    const std::size_t hi = std::min(lag_max + 1, length - 1);
    std::fill(nacf.begin(), nacf.end(), 0.0);
    for (std::size_t lag = lo; lag <= hi; ++lag) {
      const double e1 = prefix[length - lag];
      const double e2 = prefix[length] - prefix[lag];
      const double denom = std::sqrt(e1 * e2);
      nacf[lag] = denom > 0.0 ? buf[lag].real() / denom : 0.0;
    }
    const std::size_t search_lo = std::max(lag_min, lo + 1);
    const std::size_t search_hi = std::min(lag_max, hi - 1);
    double peak = -1.0;
    for (std::size_t lag = search_lo; lag <= search_hi; ++lag) peak = std::max(peak, nacf[lag]);
    if (peak < config.voicing_threshold) continue;
    // The shortest lag whose local peak is close to the global one guards
    // against picking a subharmonic.
    for (std::size_t lag = search_lo; lag <= search_hi; ++lag) {
      const double a = nacf[lag - 1], b = nacf[lag], c = nacf[lag + 1];
      if (b >= a && b >= c && b >= 0.9 * peak) {
        const double curvature = a - 2.0 * b + c;
        double delta = curvature < 0.0 ? 0.5 * (a - c) / curvature : 0.0;
        delta = std::clamp(delta, -0.5, 0.5);
        best_lag[t] = static_cast<double>(lag) + delta;
        best_score[t] = b;
        break;
      }
    }
  }

  const double max_energy = frames ? *std::max_element(energy.begin(), energy.end()) : 0.0;
  RawPitch raw;
  raw.f0_hz.assign(frames, 0.0);
  if (max_energy <= 0.0) return raw;
  for (std::size_t t = 0; t < frames; ++t) {
    if (best_lag[t] > 0.0 && energy[t] > config.silence_ratio * max_energy) {
      const double f0 = sr / best_lag[t];
      if (f0 >= config.f0_min_hz * 0.95 && f0 <= config.f0_max_hz * 1.05) raw.f0_hz[t] = f0;
    }
  }
  return raw;
}

PitchTrack make_continuous(const RawPitch& raw, double default_log_f0) {
  const std::size_t n = raw.f0_hz.size();
  PitchTrack track;
  track.log_f0.assign(n, default_log_f0);
  track.vuv.assign(n, 0);
  std::vector<std::size_t> voiced;
  for (std::size_t t = 0; t < n; ++t) {
    if (raw.f0_hz[t] > 0.0) {
      track.vuv[t] = 1;
      track.log_f0[t] = std::log(raw.f0_hz[t]);
      voiced.push_back(t);
    }
  }
  if (voiced.empty()) return track;
  for (std::size_t t = 0; t < voiced.front(); ++t) track.log_f0[t] = track.log_f0[voiced.front()];
  for (std::size_t t = voiced.back() + 1; t < n; ++t) track.log_f0[t] = track.log_f0[voiced.back()];
  for (std::size_t i = 0; i + 1 < voiced.size(); ++i) {
    const std::size_t a = voiced[i], b = voiced[i + 1];
    for (std::size_t t = a + 1; t < b; ++t) {
      const double w = static_cast<double>(t - a) / static_cast<double>(b - a);
      track.log_f0[t] = (1.0 - w) * track.log_f0[a] + w * track.log_f0[b];
    }
  }
  return track;
}

PitchTrack extract_pitch(const Waveform& wave, const FeatureConfig& config) {
  return extract_pitch(wave, config, AutocorrelationPitchEstimator{});
}

PitchTrack extract_pitch(const Waveform& wave, const FeatureConfig& config, const PitchEstimator& estimator) {
  check_wave(wave, config);
  RawPitch raw = estimator.estimate(wave, config);
  if (raw.f0_hz.size() != frame_count(wave.samples.size(), config.hop_samples())) {
    throw FeatureError("pitch estimator returned a frame count inconsistent with the mel grid");
  }
  return make_continuous(raw, config.default_log_f0);
}

// ---------------------------------------------------------------------------

const std::set<std::string>& silence_phones() {
  static const std::set<std::string> kSilence{"sil", "sp", "spn", "pau", "<eps>", "SIL", "SP", "SPN", "PAU", ""};
  return kSilence;
}

double loudness_db(std::span<const double> samples, const FeatureConfig& config) {
  if (samples.empty()) throw FeatureError("loudness: empty waveform");
  const std::size_t win = static_cast<std::size_t>(config.win_samples());
  const std::size_t hop = static_cast<std::size_t>(config.hop_samples());
  auto frame_db = [&](std::size_t start, std::size_t len) {
    double s = 0.0;
    for (std::size_t i = start; i < start + len; ++i) s += samples[i] * samples[i];
    const double rms = std::sqrt(s / static_cast<double>(len));
    return 20.0 * std::log10(std::max(rms, 1e-5));
  };
  if (samples.size() < win) return frame_db(0, samples.size());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start + win <= samples.size(); start += hop) {
    total += frame_db(start, win);
    ++count;
  }
  return total / static_cast<double>(count);
}

StyleStats utterance_stats(const PitchTrack& pitch, const UtteranceRecord& record, const Waveform& wave,
                           const FeatureConfig& config) {
  if (wave.samples.empty() || wave.sample_rate_hz <= 0) throw FeatureError("zero-duration utterance");
  StyleStats stats;
  double f0_sum = 0.0;
  std::size_t voiced = 0;
  for (std::size_t t = 0; t < pitch.frames(); ++t) {
    if (pitch.vuv[t]) {
      f0_sum += std::exp(pitch.log_f0[t]);
      ++voiced;
    }
  }
  if (voiced > 0) stats.mean_f0_hz = f0_sum / static_cast<double>(voiced);
  std::size_t phones = 0;
  for (const auto& p : record.phonemes)
    if (!silence_phones().count(p)) ++phones;
  if (phones == 0) throw FeatureError("utterance '" + record.utterance_id + "' has no non-silence phones");
  stats.speaking_rate = static_cast<double>(phones) / wave.seconds();
  stats.loudness_db = loudness_db(wave.samples, config);
  return stats;
}

// ---------------------------------------------------------------------------

UtteranceFeatures compute_features(const UtteranceRecord& record, const Waveform& wave,
                                   const FeatureConfig& config) {
  UtteranceFeatures f;
  f.utterance_id = record.utterance_id;
  f.mel = compute_logmel(wave, config);
  f.pitch = extract_pitch(wave, config);
  f.stats = utterance_stats(f.pitch, record, wave, config);
  f.num_samples = wave.samples.size();
  return f;
}

FeatureCache::FeatureCache(std::filesystem::path directory, const FeatureConfig& config)
    : directory_(std::move(directory)), config_(config), hash_(feature_config_hash(config)) {}

std::filesystem::path FeatureCache::path_for(const std::string& utterance_id) const {
  std::string name = utterance_id;
  for (auto& c : name)
    if (c == '/' || c == '\\' || c == ':') c = '_';
  return directory_ / (name + ".feat");
}

std::optional<UtteranceFeatures> FeatureCache::load(const std::string& utterance_id) const {
  const auto path = path_for(utterance_id);
  if (!std::filesystem::exists(path)) return std::nullopt;
  Archive a = Archive::load(path);
  const auto& meta = a.meta();
  if (meta.value("kind", "") != "utterance-features" || meta.value("feature_config_hash", "") != hex_hash(hash_) ||
      meta.value("utterance_id", "") != utterance_id) {
    return std::nullopt;
  }
  UtteranceFeatures f;
  f.utterance_id = utterance_id;
  f.num_samples = meta.at("num_samples").get<std::size_t>();
  const auto& mel = a.get("mel");
  f.mel.frames = mel.rows;
  f.mel.n_mels = mel.cols;
  f.mel.values = mel.data;
  f.mel.hop_seconds = config_.hop_seconds();
  f.mel.window_seconds = config_.win_ms / 1000.0;
  f.pitch.log_f0 = a.get("log_f0").data;
  for (double v : a.get("vuv").data) f.pitch.vuv.push_back(v > 0.5 ? 1 : 0);
  const auto& s = a.get("stats").data;
  if (s.at(0) > 0.5) f.stats.mean_f0_hz = s.at(1);
  f.stats.speaking_rate = s.at(2);
  f.stats.loudness_db = s.at(3);
  return f;
}

void FeatureCache::store(const UtteranceFeatures& f) const {
  Archive a;
  a.meta() = {{"kind", "utterance-features"},
              {"utterance_id", f.utterance_id},
              {"feature_config_hash", hex_hash(hash_)},
              {"num_samples", f.num_samples}};
  a.put("mel", f.mel.frames, f.mel.n_mels, f.mel.values);
  a.put("log_f0", f.pitch.log_f0);
  a.put("vuv", std::vector<double>(f.pitch.vuv.begin(), f.pitch.vuv.end()));
  a.put("stats", {f.stats.mean_f0_hz ? 1.0 : 0.0, f.stats.mean_f0_hz.value_or(0.0), f.stats.speaking_rate,
                  f.stats.loudness_db});
  a.save(path_for(f.utterance_id));
}

UtteranceFeatures FeatureCache::load_or_compute(const UtteranceRecord& record) const {
  if (auto cached = load(record.utterance_id)) return *cached;
  Waveform wave = read_wav(record.audio_path);
  auto f = compute_features(record, wave, config_);
  store(f);
  return f;
}

// ---------------------------------------------------------------------------

Waveform invert_logmel(const MelSpectrogram& mel, const FeatureConfig& config, int iterations) {
  const std::size_t n_fft = static_cast<std::size_t>(config.fft_size());
  const std::size_t bins = n_fft / 2 + 1;
  const std::size_t n_mels = mel.n_mels;
  if (n_mels != static_cast<std::size_t>(config.n_mels)) throw FeatureError("invert_logmel: mel bin mismatch");
  const auto fb = mel_filterbank(config.sample_rate_hz, config.fft_size(), config.n_mels, config.fmin_hz,
                                 config.fmax_hz);
  const std::size_t frames = mel.frames;

  // Non-negative least squares for linear magnitudes via multiplicative updates.
  std::vector<double> mag(frames * bins, 1e-3);
  std::vector<double> target(n_mels), approx(n_mels), numer(bins), denom(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t m = 0; m < n_mels; ++m) target[m] = std::exp(mel.at(t, m));
    double* row = mag.data() + t * bins;
    for (int it = 0; it < 30; ++it) {
      for (std::size_t m = 0; m < n_mels; ++m) {
        double acc = 0.0;
        for (std::size_t k = 0; k < bins; ++k) acc += fb[m * bins + k] * row[k];
        approx[m] = acc;
      }
      std::fill(numer.begin(), numer.end(), 0.0);
      std::fill(denom.begin(), denom.end(), 0.0);
      for (std::size_t m = 0; m < n_mels; ++m)
        for (std::size_t k = 0; k < bins; ++k) {
          numer[k] += fb[m * bins + k] * target[m];
          denom[k] += fb[m * bins + k] * approx[m];
        }
      for (std::size_t k = 0; k < bins; ++k) row[k] *= numer[k] / (denom[k] + 1e-12);
    }
  }

  const int hop = config.hop_samples();
  const std::size_t win = static_cast<std::size_t>(config.win_samples());
  const std::size_t num_samples = frames * static_cast<std::size_t>(hop);
  const auto window = hann_window(win);
  Waveform out;
  out.sample_rate_hz = config.sample_rate_hz;
  std::vector<cd> spec(frames * bins);
  for (std::size_t i = 0; i < spec.size(); ++i) spec[i] = mag[i];

  std::vector<double> norm(num_samples, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t) * hop - static_cast<std::ptrdiff_t>(win / 2);
    for (std::size_t i = 0; i < win; ++i) {
      const std::ptrdiff_t s = start + static_cast<std::ptrdiff_t>(i);
      if (s >= 0 && s < static_cast<std::ptrdiff_t>(num_samples)) norm[static_cast<std::size_t>(s)] += window[i] * window[i];
    }
  }

  std::vector<cd> buf(n_fft);
  auto istft = [&](const std::vector<cd>& s) {
    std::vector<double> y(num_samples, 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t k = 0; k < bins; ++k) buf[k] = s[t * bins + k];
      for (std::size_t k = bins; k < n_fft; ++k) buf[k] = std::conj(buf[n_fft - k]);
      fft(buf, true);
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t) * hop - static_cast<std::ptrdiff_t>(win / 2);
      for (std::size_t i = 0; i < win; ++i) {
        const std::ptrdiff_t p = start + static_cast<std::ptrdiff_t>(i);
        if (p >= 0 && p < static_cast<std::ptrdiff_t>(num_samples))
          y[static_cast<std::size_t>(p)] += buf[i].real() * window[i];
      }
    }
    for (std::size_t i = 0; i < num_samples; ++i) y[i] = norm[i] > 1e-8 ? y[i] / norm[i] : 0.0;
    return y;
  };

  std::vector<double> y = istft(spec);
  for (int it = 0; it < iterations; ++it) {
    auto rebuilt = stft_complex(y, config, frames);
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const double a = std::abs(rebuilt[i]);
      spec[i] = a > 1e-12 ? rebuilt[i] / a * mag[i] : cd(mag[i], 0.0);
    }
    y = istft(spec);
  }
  out.samples = std::move(y);
  return out;
}

}  // namespace promptts
