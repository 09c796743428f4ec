// SPDX-License-Identifier: Apache-2.0
#include "gle/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gle {
namespace {

static_assert(std::endian::native == std::endian::little, "encoding assumes a little-endian host");

constexpr std::uint32_t kMaxRank = 8;

}  // namespace

void ByteWriter::u32(std::uint32_t v) { buf_.append(reinterpret_cast<const char*>(&v), 4); }
void ByteWriter::u64(std::uint64_t v) { buf_.append(reinterpret_cast<const char*>(&v), 8); }
void ByteWriter::f64(double v) { buf_.append(reinterpret_cast<const char*>(&v), 8); }
void ByteWriter::bytes(const std::string& s) { buf_.append(s); }

void ByteWriter::string(const std::string& s) {
  u64(s.size());
  bytes(s);
}

void ByteWriter::table(const std::vector<std::pair<std::string, const Tensor*>>& entries) {
  u64(entries.size());
  for (const auto& [name, t] : entries) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name);
    u32(static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) u64(d);
    buf_.append(reinterpret_cast<const char*>(t->ptr()), t->numel() * sizeof(double));
  }
}

void ByteReader::need(std::size_t n) {
  if (data_.size() - pos_ < n) {
    fail(ErrorKind::format, source_ + ": truncated at byte " + std::to_string(pos_));
  }
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

double ByteReader::f64() {
  need(8);
  double v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

std::string ByteReader::bytes(std::size_t n) {
  need(n);
  std::string s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::string ByteReader::string() { return bytes(u64()); }

std::vector<NamedTensor> ByteReader::table() {
  const std::uint64_t count = u64();
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = bytes(u32());
    const std::uint32_t rank = u32();
    if (rank > kMaxRank) fail(ErrorKind::format, source_ + ": tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = u64();
    const std::size_t n = shape_numel(shape);
    need(n * sizeof(double));
    std::vector<double> data(n);
    std::memcpy(data.data(), data_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path);
}

void save_weights(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor*>>& entries) {
  ByteWriter w;
  w.u32(kWeightFormatVersion);
  w.table(entries);
  write_file(path, w.buffer());
}

std::vector<NamedTensor> load_weights(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader r(data, path);
  const std::uint32_t version = r.u32();
  if (version != kWeightFormatVersion) {
    fail(ErrorKind::format, path + ": unsupported weight format version " + std::to_string(version));
  }
  auto table = r.table();
  if (!r.at_end()) fail(ErrorKind::format, path + ": trailing bytes after tensor table");
  return table;
}

}  // namespace gle
