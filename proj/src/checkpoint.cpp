#include "personarl/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace personarl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'R', 'L', 'C', 'K', 'P', '0', '1'};

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<char*>(&v), 4); }
void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<char*>(&v), 8); }

uint32_t take_u32(const std::string& s, size_t& at) {
  if (at + 4 > s.size()) throw FormatError("checkpoint: truncated u32");
  uint32_t v;
  std::memcpy(&v, s.data() + at, 4);
  at += 4;
  return v;
}
uint64_t take_u64(const std::string& s, size_t& at) {
  if (at + 8 > s.size()) throw FormatError("checkpoint: truncated u64");
  uint64_t v;
  std::memcpy(&v, s.data() + at, 8);
  at += 8;
  return v;
}

}  // namespace

void CheckpointWriter::add_string(const std::string& name, const std::string& payload) {
  sections_[name] = Section{0, payload};
}

void CheckpointWriter::add_matrix(const std::string& name, const Mat& m) {
  std::string bytes;
  bytes.reserve(8 + static_cast<size_t>(m.size()) * 8);
  put_u32(bytes, static_cast<uint32_t>(m.rows()));
  put_u32(bytes, static_cast<uint32_t>(m.cols()));
  bytes.append(reinterpret_cast<const char*>(m.data()), static_cast<size_t>(m.size()) * 8);
  sections_[name] = Section{1, std::move(bytes)};
}

void CheckpointWriter::write(const std::string& path) const {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint: cannot open for writing: " + tmp);
    out.write(kMagic, 8);
    std::string head;
    put_u32(head, static_cast<uint32_t>(sections_.size()));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& [name, sec] : sections_) {
      std::string rec;
      put_u32(rec, static_cast<uint32_t>(name.size()));
      rec += name;
      rec.push_back(static_cast<char>(sec.kind));
      put_u64(rec, sec.bytes.size());
      rec += sec.bytes;
      out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    }
    if (!out) throw FormatError("checkpoint: write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("checkpoint: cannot move into place: " + path);
}

CheckpointReader::CheckpointReader(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 12 || std::memcmp(data.data(), kMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic in " + path);
  size_t at = 8;
  uint32_t count = take_u32(data, at);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = take_u32(data, at);
    if (at + name_len > data.size()) throw FormatError("checkpoint: truncated name");
    std::string name = data.substr(at, name_len);
    at += name_len;
    if (at + 1 > data.size()) throw FormatError("checkpoint: truncated kind");
    uint8_t kind = static_cast<uint8_t>(data[at++]);
    uint64_t len = take_u64(data, at);
    if (at + len > data.size()) throw FormatError("checkpoint: truncated payload");
    sections_[name] = Section{kind, data.substr(at, len)};
    at += len;
  }
}

bool CheckpointReader::has(const std::string& name) const { return sections_.count(name) > 0; }

std::string CheckpointReader::get_string(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw FormatError("checkpoint: missing section " + name);
  if (it->second.kind != 0) throw FormatError("checkpoint: section is not a string: " + name);
  return it->second.bytes;
}

Mat CheckpointReader::get_matrix(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw FormatError("checkpoint: missing section " + name);
  if (it->second.kind != 1) throw FormatError("checkpoint: section is not a matrix: " + name);
  const std::string& bytes = it->second.bytes;
  size_t at = 0;
  uint32_t rows = take_u32(bytes, at);
  uint32_t cols = take_u32(bytes, at);
  if (bytes.size() != 8 + static_cast<size_t>(rows) * cols * 8)
    throw FormatError("checkpoint: matrix payload size mismatch: " + name);
  Mat m(rows, cols);
  std::memcpy(m.data(), bytes.data() + at, static_cast<size_t>(rows) * cols * 8);
  return m;
}

std::vector<std::string> CheckpointReader::names() const {
  std::vector<std::string> out;
  for (const auto& [name, sec] : sections_) out.push_back(name);
  return out;
}

}  // namespace personarl
