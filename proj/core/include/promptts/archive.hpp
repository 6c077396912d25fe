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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace promptts {

/// Row-major block of doubles stored in an Archive.
struct ArchiveTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  bool operator==(const ArchiveTensor&) const = default;
};

/// Binary container used for checkpoints and feature caches.
///
/// Layout (all integers little-endian):
///   8 bytes   magic "PTTSARC\0"
///   u32       format version (1)
///   u64       metadata length, followed by UTF-8 JSON metadata
///   u64       tensor count
///   per tensor, in lexicographic name order:
///     u64 name length, name bytes, u64 rows, u64 cols, rows*cols IEEE-754 f64
///
/// The encoding is deterministic: equal archives serialize to equal bytes.
class Archive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void put(const std::string& name, std::size_t rows, std::size_t cols, std::vector<double> data);
  void put(const std::string& name, std::vector<double> data);

  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  const ArchiveTensor& get(const std::string& name) const;
  const std::map<std::string, ArchiveTensor>& tensors() const { return tensors_; }

  std::vector<std::uint8_t> to_bytes() const;
  static Archive from_bytes(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  nlohmann::json meta_ = nlohmann::json::object();
  std::map<std::string, ArchiveTensor> tensors_;
};

}  // namespace promptts
