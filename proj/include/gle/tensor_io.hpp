// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary encoding of named tensor tables.
//
//   table  := u64 count, entry*
//   entry  := u32 name_len, name bytes, u32 rank, u64 extent*, f64 data*
//
// A weight file is `u32 format_version` followed by one table.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gle/tensor.hpp"

namespace gle {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

using NamedTensor = std::pair<std::string, Tensor>;

class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(const std::string& s);
  void string(const std::string& s);  // u64 length + bytes
  void table(const std::vector<std::pair<std::string, const Tensor*>>& entries);

  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string source) : data_(data), source_(std::move(source)) {}

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string bytes(std::size_t n);
  std::string string();
  std::vector<NamedTensor> table();

  std::size_t position() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n);

  const std::string& data_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

void save_weights(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor*>>& entries);
std::vector<NamedTensor> load_weights(const std::string& path);

}  // namespace gle
