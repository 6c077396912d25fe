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

#include "promptts/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace promptts {
namespace {

constexpr char kMagic[8] = {'P', 'T', 'T', 'S', 'A', 'R', 'C', '\0'};

static_assert(std::endian::native == std::endian::little,
              "archive encoding assumes a little-endian host");

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void raw(void* p, std::size_t n) {
    if (n > in_.size() - pos_) throw std::runtime_error("archive: truncated data");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    std::uint64_t n = u64();
    if (n > in_.size() - pos_) throw std::runtime_error("archive: truncated string");
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

void Archive::put(const std::string& name, std::size_t rows, std::size_t cols,
                  std::vector<double> data) {
  if (rows * cols != data.size()) {
    throw std::invalid_argument("archive: tensor '" + name + "' shape does not match data size");
  }
  tensors_[name] = ArchiveTensor{rows, cols, std::move(data)};
}

void Archive::put(const std::string& name, std::vector<double> data) {
  const std::size_t n = data.size();
  put(name, 1, n, std::move(data));
}

const ArchiveTensor& Archive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("archive: missing tensor '" + name + "'");
  return it->second;
}

std::vector<std::uint8_t> Archive::to_bytes() const {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.str(meta_.dump());
  w.u64(tensors_.size());
  for (const auto& [name, t] : tensors_) {
    w.str(name);
    w.u64(t.rows);
    w.u64(t.cols);
    w.raw(t.data.data(), t.data.size() * sizeof(double));
  }
  return w.take();
}

Archive Archive::from_bytes(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error("archive: bad magic (not a promptts archive)");
  }
  std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("archive: unsupported version " + std::to_string(version));
  }
  Archive a;
  a.meta_ = nlohmann::json::parse(r.str());
  std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = r.str();
    ArchiveTensor t;
    t.rows = r.u64();
    t.cols = r.u64();
    t.data.resize(t.rows * t.cols);
    r.raw(t.data.data(), t.data.size() * sizeof(double));
    a.tensors_.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw std::runtime_error("archive: trailing bytes");
  return a;
}

void Archive::save(const std::filesystem::path& path) const {
  auto bytes = to_bytes();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("archive: cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("archive: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("archive: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_bytes(bytes);
}

}  // namespace promptts
