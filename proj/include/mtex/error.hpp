#pragma once

#include <stdexcept>
#include <string>

namespace mtex {

// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MTEX_DEFINE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  };

MTEX_DEFINE_ERROR(ConfigError)       // shape / channel mismatches between operands
MTEX_DEFINE_ERROR(SizeError)         // spatial dimension out of range
MTEX_DEFINE_ERROR(IndexError)        // filter or tap index out of range
MTEX_DEFINE_ERROR(ArgumentError)     // bad call arguments
MTEX_DEFINE_ERROR(DataError)         // non-finite inputs
MTEX_DEFINE_ERROR(FormatError)       // weight file magic / version
MTEX_DEFINE_ERROR(SchemaError)       // weight file shapes
MTEX_DEFINE_ERROR(CorruptionError)   // truncation, CRC mismatch
MTEX_DEFINE_ERROR(ManifestError)
MTEX_DEFINE_ERROR(SpecError)         // preprocessing spec
MTEX_DEFINE_ERROR(IoError)
MTEX_DEFINE_ERROR(UsageError)
MTEX_DEFINE_ERROR(RunConfigError)    // run configuration file
MTEX_DEFINE_ERROR(UnsupportedError)

#undef MTEX_DEFINE_ERROR

}  // namespace mtex
