#pragma once

#include <stdexcept>
#include <string>

namespace msdn {

// Shape or rank inconsistency between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Out-of-range scalar argument (scale factor, window size, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid model/training configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller broke an API precondition (non-scalar loss, missing gradients, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Metric input for which the metric is undefined (zero mean band, flat image).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed tensor, checkpoint or manifest file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint written by an incompatible format version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace msdn
