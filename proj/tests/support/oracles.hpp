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

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's numeric kernels.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include "promptts/autograd.hpp"

namespace promptts::testing {

/// Central finite differences of a scalar function of leaf's values.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, ag::Var& leaf, double h = 1e-6) {
  std::vector<double> g(leaf.size());
  auto& v = leaf.mutable_value();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = f();
    v[i] = keep - h;
    const double down = f();
    v[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

/// -log of the mixture density summed term by term, without log-sum-exp.
inline double brute_force_gmm_nll(const std::vector<double>& weights, const std::vector<double>& means,
                                  const std::vector<double>& scales, const std::vector<double>& x) {
  const std::size_t k_count = weights.size();
  const std::size_t dim = x.size();
  double density = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    double p = weights[k];
    for (std::size_t d = 0; d < dim; ++d) {
      const double s = scales[k * dim + d];
      const double z = (x[d] - means[k * dim + d]) / s;
      p *= std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi));
    }
    density += p;
  }
  return -std::log(density);
}

/// Percentile in the Hyndman-Fan type 7 form: h = (n - 1) p + 1 (1-based).
inline double percentile_type7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p + 1.0;
  const double fl = std::floor(h);
  const auto lo = static_cast<std::size_t>(fl) - 1;
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - fl) * (v[hi] - v[lo]);
}

/// O(n^2) discrete Fourier transform.
inline std::vector<std::complex<double>> direct_dft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc{};
    for (std::size_t t = 0; t < n; ++t)
      acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n));
    out[k] = acc;
  }
  return out;
}

/// Log-mel spectrogram built from a direct DFT of centered, zero-padded,
/// periodic-Hann frames and a Slaney-normalized triangular filterbank.
inline std::vector<double> reference_logmel(const std::vector<double>& x, int sr, int win, int hop, int n_fft,
                                            int n_mels, double fmin, double fmax, double floor) {
  const auto slaney = [](double f) { return f < 1000.0 ? 3.0 * f / 200.0 : 15.0 + 27.0 * std::log(f / 1000.0) / std::log(6.4); };
  const auto inv = [](double m) { return m < 15.0 ? 200.0 * m / 3.0 : 1000.0 * std::pow(6.4, (m - 15.0) / 27.0); };
  const int bins = n_fft / 2 + 1;
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] = inv(slaney(fmin) + (slaney(fmax) - slaney(fmin)) * i / (n_mels + 1));
  const std::size_t frames = (x.size() + static_cast<std::size_t>(hop) - 1) / static_cast<std::size_t>(hop);
  std::vector<double> out;
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(n_fft));
    for (int i = 0; i < win; ++i) {
      const long s = static_cast<long>(t) * hop - win / 2 + i;
      const double v = (s >= 0 && s < static_cast<long>(x.size())) ? x[static_cast<std::size_t>(s)] : 0.0;
      buf[static_cast<std::size_t>(i)] = v * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win));
    }
    const auto spec = direct_dft(buf);
    for (int m = 0; m < n_mels; ++m) {
      const double lo = edges[static_cast<std::size_t>(m)], mid = edges[static_cast<std::size_t>(m + 1)],
                   hi = edges[static_cast<std::size_t>(m + 2)];
      double acc = 0.0;
      for (int k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * sr / n_fft;
        double w = 0.0;
        if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
        else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
        acc += w * 2.0 / (hi - lo) * std::abs(spec[static_cast<std::size_t>(k)]);
      }
      out.push_back(acc > floor ? std::log(acc) : std::log(floor));
    }
  }
  return out;
}

/// F0 of a pure-tone segment from its rising zero crossings, with linear
/// interpolation of each crossing instant.
inline double zero_crossing_f0(const std::vector<double>& x, std::size_t start, std::size_t length, int sr) {
  double first = -1.0, last = -1.0;
  int count = 0;
  for (std::size_t i = start + 1; i < start + length && i < x.size(); ++i) {
    if (x[i - 1] < 0.0 && x[i] >= 0.0) {
      const double t = static_cast<double>(i - 1) + x[i - 1] / (x[i - 1] - x[i]);
      if (first < 0.0) first = t;
      last = t;
      ++count;
    }
  }
  if (count < 2) return 0.0;
  return static_cast<double>(sr) * (count - 1) / (last - first);
}

}  // namespace promptts::testing
