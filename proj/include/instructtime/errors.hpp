#pragma once

#include <stdexcept>
#include <string>

namespace instructtime {

// Every failure raised by the library derives from Error so callers can catch
// one type at the boundary (CLI exit codes, HTTP status mapping).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Bad caller-supplied data: wrong lengths, empty text, out-of-range weights.
class InputError : public Error {
public:
  using Error::Error;
};

// Tensor shapes that do not line up with what a block expects.
class ShapeError : public InputError {
public:
  using InputError::InputError;
};

// API misuse, e.g. backward() before forward().
class UsageError : public Error {
public:
  using Error::Error;
};

// Unknown attribute or level, missing template.
class SchemaError : public Error {
public:
  using Error::Error;
};

// Invalid configuration values or missing configuration-provided resources.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Model state is unusable (untrained, incompatible checkpoint, non-finite loss).
class ModelError : public Error {
public:
  using Error::Error;
};

// Text embedding provider failures.
class ProviderError : public Error {
public:
  using Error::Error;
};

class TransportError : public ProviderError {
public:
  using ProviderError::ProviderError;
};

// Checkpoint loading. Each failure mode gets its own type.
class CheckpointError : public Error {
public:
  using Error::Error;
};

class FormatVersionError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};

class FingerprintMismatchError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};

class TruncatedCheckpointError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};

class CorruptCheckpointError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};

}  // namespace instructtime
