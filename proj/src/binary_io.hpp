// Copyright 2026 The calens Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Little-endian encoding helpers for the on-disk formats. Values are
// assembled byte by byte so the output does not depend on host endianness.

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "calens/error.hpp"

namespace calens::detail {

class ByteWriter {
 public:
  void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  const std::string& bytes() const noexcept { return bytes_; }

  void write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot open " + path.string() + " for writing");
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw FileError("failed writing " + path.string());
  }

 private:
  std::string bytes_;

  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  static ByteReader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes));
  }

  void expect_magic(std::string_view tag) {
    need(tag.size(), "magic");
    if (std::string_view(bytes_).substr(offset_, tag.size()) != tag) {
      throw FormatError("bad magic, expected '" + std::string(tag) + "'", offset_);
    }
    offset_ += tag.size();
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1, "u8")); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4, "u32")); }
  std::uint64_t u64() { return get(8, "u64"); }
  float f32() { return std::bit_cast<float>(u32()); }

  std::size_t offset() const noexcept { return offset_; }
  std::size_t remaining() const noexcept { return bytes_.size() - offset_; }

  /// Throws unless at least `count` more bytes are available.
  void need(std::size_t count, const char* what) const {
    if (remaining() < count) {
      throw FormatError(std::string("truncated file while reading ") + what, offset_);
    }
  }
  void expect_end() const {
    if (remaining() != 0) throw FormatError("trailing bytes after payload", offset_);
  }

 private:
  std::string bytes_;
  std::size_t offset_ = 0;

  std::uint64_t get(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[offset_ + static_cast<std::size_t>(i)]))
           << (8 * i);
    }
    offset_ += static_cast<std::size_t>(width);
    return v;
  }
};

}  // namespace calens::detail
