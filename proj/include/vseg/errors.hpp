#pragma once

#include <stdexcept>
#include <string>

namespace vseg {

/// Base class for every error raised by the library. `exit_code()` is the
/// process exit status the command-line tool reports for this error class.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "Error"; }
  virtual int exit_code() const noexcept { return 1; }
};

#define VSEG_DEFINE_ERROR(Name, Code)                                  \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(what) {}            \
    const char* kind() const noexcept override { return #Name; }       \
    int exit_code() const noexcept override { return Code; }           \
  };

VSEG_DEFINE_ERROR(ShapeError, 1)
VSEG_DEFINE_ERROR(GraphError, 1)
VSEG_DEFINE_ERROR(DimensionMismatch, 1)
VSEG_DEFINE_ERROR(EmptyBrainMask, 1)
VSEG_DEFINE_ERROR(ConfigError, 2)
VSEG_DEFINE_ERROR(FormatError, 3)
VSEG_DEFINE_ERROR(CheckpointError, 3)
VSEG_DEFINE_ERROR(IoError, 3)
VSEG_DEFINE_ERROR(Divergence, 4)

#undef VSEG_DEFINE_ERROR

}  // namespace vseg
