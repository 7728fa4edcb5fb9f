#pragma once

#include <stdexcept>
#include <string>

namespace liftvsr {

// Every failure raised by the library derives from Error and carries a kind,
// which the command-line tool maps onto its exit codes.
enum class ErrorKind {
  kDimension,
  kConfig,
  kIndex,
  kData,
  kNumeric,
  kTrainingState,
  kIo,
  kVersion,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define LIFTVSR_DEFINE_ERROR(Name, Kind)                               \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

LIFTVSR_DEFINE_ERROR(DimensionError, kDimension)
LIFTVSR_DEFINE_ERROR(ConfigError, kConfig)
LIFTVSR_DEFINE_ERROR(IndexError, kIndex)
LIFTVSR_DEFINE_ERROR(DataError, kData)
LIFTVSR_DEFINE_ERROR(NumericError, kNumeric)
LIFTVSR_DEFINE_ERROR(TrainingStateError, kTrainingState)
LIFTVSR_DEFINE_ERROR(IoError, kIo)
LIFTVSR_DEFINE_ERROR(VersionError, kVersion)

#undef LIFTVSR_DEFINE_ERROR

}  // namespace liftvsr
