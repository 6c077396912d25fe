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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "promptts/features.hpp"

namespace promptts {
namespace {

std::uint32_t u32(const std::vector<char>& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[at + static_cast<std::size_t>(i)]);
  return v;
}

std::uint16_t u16(const std::vector<char>& b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<std::uint8_t>(b[at]) | (static_cast<std::uint8_t>(b[at + 1]) << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureError("cannot open audio file: " + path.string());
  std::vector<char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw FeatureError("not a RIFF/WAVE file: " + path.string());
  }
  int format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_at = 0, data_len = 0;
  for (std::size_t pos = 12; pos + 8 <= b.size();) {
    const std::uint32_t len = u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0 && body + 16 <= b.size()) {
      format = u16(b, body);
      channels = u16(b, body + 2);
      rate = u32(b, body + 4);
      bits = u16(b, body + 14);
      if (format == 0xFFFE && len >= 26) format = u16(b, body + 24);
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      data_at = body;
      data_len = std::min<std::size_t>(len, b.size() - body);
    }
    pos = body + len + (len & 1u);
  }
  if (channels <= 0 || data_at == 0) throw FeatureError("malformed WAVE file: " + path.string());
  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32) throw FeatureError("unsupported WAVE encoding in " + path.string());
  const std::size_t width = static_cast<std::size_t>(bits / 8);
  const std::size_t frames = data_len / (width * static_cast<std::size_t>(channels));
  Waveform w;
  w.sample_rate_hz = static_cast<int>(rate);
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const std::size_t at = data_at + (i * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)) * width;
      if (pcm16) {
        acc += static_cast<std::int16_t>(u16(b, at)) / 32768.0;
      } else {
        const std::uint32_t raw = u32(b, at);
        float f;
        std::memcpy(&f, &raw, 4);
        acc += f;
      }
    }
    w.samples[i] = acc / channels;
  }
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  std::string out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  out += "RIFF";
  put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, 2 * n);
  for (double s : wave.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FeatureError("cannot write audio file: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace promptts
