#pragma once

#include <stdexcept>
#include <string>

namespace lethe {

// Every failure raised by the library derives from Error. The C API maps each
// kind onto a distinct status code.
enum class ErrorKind {
  kDimension,
  kConfig,
  kLabel,
  kIndex,
  kDegenerate,
  kContract,
  kNumeric,
  kDivergence,
  kFormat,
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define LETHE_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

LETHE_DEFINE_ERROR(DimensionError, kDimension)
LETHE_DEFINE_ERROR(ConfigError, kConfig)
LETHE_DEFINE_ERROR(LabelError, kLabel)
LETHE_DEFINE_ERROR(IndexError, kIndex)
LETHE_DEFINE_ERROR(DegenerateError, kDegenerate)
LETHE_DEFINE_ERROR(ContractError, kContract)
LETHE_DEFINE_ERROR(NumericError, kNumeric)
LETHE_DEFINE_ERROR(DivergenceError, kDivergence)
LETHE_DEFINE_ERROR(FormatError, kFormat)
LETHE_DEFINE_ERROR(IoError, kIo)

#undef LETHE_DEFINE_ERROR

}  // namespace lethe
