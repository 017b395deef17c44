#pragma once

// Bit-exact binary checkpoints. Layout (little endian):
//   magic "PRLCKP01" | u32 section_count | sections...
// section: u32 name_len | name | u8 kind | u64 payload_len | payload
//   kind 0 (blob/string): raw bytes
//   kind 1 (matrix): u32 rows | u32 cols | rows*cols f64 (column-major)
// Tensor-walkable parameter structs are stored one section per tensor under
// "<prefix>:<tensor name>", so optimizer moments can sit beside parameters.

#include "personarl/common.hpp"

#include <map>
#include <string>

namespace personarl {

class CheckpointWriter {
 public:
  void add_string(const std::string& name, const std::string& payload);
  void add_matrix(const std::string& name, const Mat& m);

  template <class P>
  void add_params(const std::string& prefix, const P& params) {
    params.for_each_tensor([&](const std::string& name, const auto& t) {
      add_matrix(prefix + ":" + name, Mat(t));
    });
  }

  // Writes the file atomically (temp file + rename). Throws FormatError on IO.
  void write(const std::string& path) const;

 private:
  struct Section {
    uint8_t kind;
    std::string bytes;  // serialized payload
  };
  std::map<std::string, Section> sections_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& path);

  bool has(const std::string& name) const;
  std::string get_string(const std::string& name) const;
  Mat get_matrix(const std::string& name) const;

  // Loads every tensor of a params struct; shapes must match exactly.
  template <class P>
  void load_params(const std::string& prefix, P& params) const {
    params.for_each_tensor([&](const std::string& name, auto& t) {
      Mat stored = get_matrix(prefix + ":" + name);
      if (stored.rows() != t.rows() || stored.cols() != t.cols())
        throw FormatError("checkpoint: shape mismatch for " + prefix + ":" + name);
      t = stored;
    });
  }

  std::vector<std::string> names() const;

 private:
  struct Section {
    uint8_t kind;
    std::string bytes;
  };
  std::map<std::string, Section> sections_;
};

}  // namespace personarl
