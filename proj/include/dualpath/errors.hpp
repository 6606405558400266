#pragma once

#include <stdexcept>
#include <string>

namespace dualpath {

/// Base class for every error raised by the library. The exit-code class
/// used by the CLI is derived from the concrete subtype.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (bad argument, wrong state).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Two tensors or layouts do not fit together.
class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Input data could not be parsed or does not conform to its schema.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Optimisation produced non-finite values or diverged.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Threshold calibration could not be carried out.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

/// Shapley enumeration would exceed the exact-method cost bound.
class CostError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Not enough real fraud examples to train the synthesizer.
class ColdStartError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

/// The review queue is at capacity.
class BackpressureError : public Error {
 public:
  using Error::Error;
};

/// Service start-up or runtime failure.
class ServiceError : public Error {
 public:
  using Error::Error;
};

}  // namespace dualpath
