#pragma once

#include <stdexcept>
#include <string>

namespace fastfusion {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define FASTFUSION_DEFINE_ERROR(Name)  \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

// geometry
FASTFUSION_DEFINE_ERROR(NonPositiveDepth);
FASTFUSION_DEFINE_ERROR(InvalidDepth);
FASTFUSION_DEFINE_ERROR(InvalidArgument);

// sequence io
FASTFUSION_DEFINE_ERROR(SequenceError);
FASTFUSION_DEFINE_ERROR(MissingFile);
FASTFUSION_DEFINE_ERROR(NonDifferentiableTrajectory);

// patches / tracking
FASTFUSION_DEFINE_ERROR(NoValidPixels);
FASTFUSION_DEFINE_ERROR(PatchLost);
FASTFUSION_DEFINE_ERROR(NoResiduals);

// imu
FASTFUSION_DEFINE_ERROR(EmptySamples);
FASTFUSION_DEFINE_ERROR(NonMonotonicTimestamps);

// fusion / metrics / config
FASTFUSION_DEFINE_ERROR(EmptySurface);
FASTFUSION_DEFINE_ERROR(NoOverlap);
FASTFUSION_DEFINE_ERROR(ConfigError);

#undef FASTFUSION_DEFINE_ERROR

/// Raised for a line that cannot be parsed; carries the 1-based line number.
class MalformedLine : public SequenceError {
 public:
  MalformedLine(const std::string& file, int line, const std::string& what)
      : SequenceError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace fastfusion
