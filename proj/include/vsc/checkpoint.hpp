// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container shared by all model families.
//
// Layout (all integers little-endian):
//   magic "SGV1", version u16
//   entries: name length u16, UTF-8 name, rank u8, dims u32 each,
//            f64 payload row-major
// Round trips are bit-exact.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vsc/tensor.hpp"

namespace vsc {

struct CheckpointEntry {
  std::string name;
  Tensor tensor;
};

class Checkpoint {
 public:
  void put(const std::string& name, const Tensor& t);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<CheckpointEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Stores every parameter under its list name.
void store_params(Checkpoint& ck, const ParamList& params);
// Restores parameters by name; missing names or shape mismatches are format
// errors.
void restore_params(const Checkpoint& ck, const ParamList& params);

}  // namespace vsc
