// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace hmt {

enum class ErrorKind {
  kDimension,
  kNumericDomain,
  kIndex,
  kContract,
  kCapacity,
  kConfig,
  kData,
  kFormat,
  kStability,
  kIo,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; the kind decides the C API status
// and the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& message);

}  // namespace hmt
