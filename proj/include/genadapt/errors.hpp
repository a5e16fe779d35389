#pragma once

#include <stdexcept>
#include <string>

namespace genadapt {

// Base for all toolkit errors. Subclasses exist so callers can react to the
// failure class, not the message text.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape / extent mismatch.
struct DimensionError : Error {
  using Error::Error;
};

// Caller violated an operation precondition (non-scalar loss, step 0, ...).
struct ContractError : Error {
  using Error::Error;
};

// Malformed external input: WAV header, manifest line, x-vector file.
struct FormatError : Error {
  using Error::Error;
};

// Signal too short to produce a single frame, or matrix too short for CMVN.
struct InputTooShortError : Error {
  using Error::Error;
};

// CTC target cannot be aligned within the given number of frames.
struct InfeasibleAlignmentError : Error {
  using Error::Error;
};

// Config / manifest / recipe validation failure.
struct ValidationError : Error {
  using Error::Error;
};

// Checkpoint load: bad magic, version, truncation, key-set mismatch.
struct CheckpointError : Error {
  using Error::Error;
};

// Missing x-vector or unresolvable utterance id.
struct LookupError : Error {
  using Error::Error;
};

// Filesystem-level failure (distinct exit code in the CLI).
struct IoError : Error {
  using Error::Error;
};

// NaN/Inf detected where a finite value is required.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace genadapt
