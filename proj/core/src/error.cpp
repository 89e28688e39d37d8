#include "omlab/error.hpp"

namespace omlab {

const char* to_string(FormatError::Code code) noexcept {
  switch (code) {
    case FormatError::Code::kBadMagic:
      return "bad-magic";
    case FormatError::Code::kVersionMismatch:
      return "version-mismatch";
    case FormatError::Code::kTruncated:
      return "truncated";
    case FormatError::Code::kChecksum:
      return "checksum";
    case FormatError::Code::kParse:
      return "parse";
  }
  return "unknown";
}

}  // namespace omlab
