#pragma once

#include <stdexcept>
#include <string>

namespace styleadv {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: invalid config, out-of-range parameter, violated precondition.
/// The CLI maps this family to exit code 1; everything else maps to 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Dataset archive missing, unreadable, or failing its checksum.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// On-disk artifact truncated, corrupt, or written by an incompatible format version.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training or optimization produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Pretrained feature-extractor weights are unavailable.
class MissingWeightsError : public Error {
 public:
  using Error::Error;
};

/// A command ran before the artifacts it depends on exist.
class MissingPrerequisiteError : public Error {
 public:
  using Error::Error;
};

}  // namespace styleadv
