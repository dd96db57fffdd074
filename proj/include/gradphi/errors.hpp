#pragma once

#include <stdexcept>
#include <string>

namespace gradphi {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad user input: invalid parameters, shapes, configs.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class NonSymmetricCoefficient : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class BadScale : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class FormatError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class BadShape : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class Unsupported : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class UnknownExperiment : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Failures of the computation itself.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

class NonFinite : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class HorizonTooShort : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class InsufficientSamples : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class NonConvergence : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class TruncationInsufficient : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class EmptyTail : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class SymmetryViolation : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class SlopeOutOfTable : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class ZeroDenominator : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

// Throws InvalidArgument with `msg` unless `cond` holds.
void require(bool cond, const std::string& msg);

}  // namespace gradphi
