// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace vsc {

// Corrupt or truncated files, wrong magic, dimension mismatches against a
// manifest. CLI maps this to exit code 3.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace vsc
