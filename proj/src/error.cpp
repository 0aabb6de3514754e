// SPDX-License-Identifier: Apache-2.0
#include "hmt/error.hpp"

namespace hmt {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kNumericDomain: return "numeric-domain error";
    case ErrorKind::kIndex: return "index error";
    case ErrorKind::kContract: return "contract error";
    case ErrorKind::kCapacity: return "capacity error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kStability: return "stability error";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

void raise(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace hmt
