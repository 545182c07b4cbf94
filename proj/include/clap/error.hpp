#pragma once

#include <stdexcept>
#include <string>

namespace clap {

/// Base for every error raised by the library. Subclasses name the failure
/// class; the CLI maps them onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CLAP_DEFINE_ERROR(Name)           \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

CLAP_DEFINE_ERROR(DimensionError);
CLAP_DEFINE_ERROR(ParseError);
CLAP_DEFINE_ERROR(IntegrityError);
CLAP_DEFINE_ERROR(RangeError);
CLAP_DEFINE_ERROR(IoError);
CLAP_DEFINE_ERROR(SchemaError);
CLAP_DEFINE_ERROR(ShapeError);
CLAP_DEFINE_ERROR(ContextLengthError);
CLAP_DEFINE_ERROR(EmptyInputError);
CLAP_DEFINE_ERROR(PatchError);
CLAP_DEFINE_ERROR(AlignmentError);
CLAP_DEFINE_ERROR(MetricError);
CLAP_DEFINE_ERROR(ArgumentError);

// Raised when clean and corrupt runs give the same logit difference.
CLAP_DEFINE_ERROR(UndefinedRecoveryError);

#undef CLAP_DEFINE_ERROR

}  // namespace clap
