#pragma once

#include <stdexcept>
#include <string>

namespace pseudosim {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PSEUDOSIM_ERROR(Name)          \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

PSEUDOSIM_ERROR(ParseError);
PSEUDOSIM_ERROR(SchemaError);
PSEUDOSIM_ERROR(ValidationError);
PSEUDOSIM_ERROR(OutOfCorridor);
PSEUDOSIM_ERROR(GenerationError);
PSEUDOSIM_ERROR(RiccatiDivergence);
PSEUDOSIM_ERROR(DomainError);
PSEUDOSIM_ERROR(ConfigError);
PSEUDOSIM_ERROR(PlannerError);
PSEUDOSIM_ERROR(StageError);
PSEUDOSIM_ERROR(DegenerateData);
PSEUDOSIM_ERROR(GridMismatch);
PSEUDOSIM_ERROR(IoError);

// Planner-side failures, transport included, are planner errors as far as
// the evaluator is concerned.
class ProtocolError : public PlannerError {
 public:
  using PlannerError::PlannerError;
};
class TimeoutError : public PlannerError {
 public:
  using PlannerError::PlannerError;
};
class ExitError : public PlannerError {
 public:
  using PlannerError::PlannerError;
};
class NoLaneError : public PlannerError {
 public:
  using PlannerError::PlannerError;
};

#undef PSEUDOSIM_ERROR

}  // namespace pseudosim
