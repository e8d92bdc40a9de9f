#pragma once

#include <stdexcept>
#include <string>

namespace triggerbench {

// Base type for every error this library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments. CLI exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent data files. CLI exit code 1.
class DataError : public Error {
 public:
  using Error::Error;
};

// Completion backend failures. CLI exit code 2.
class BackendError : public Error {
 public:
  using Error::Error;
};

// Connection, timeout, or rate-limit failure that survived retries.
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

// Missing or rejected credentials. Never retried.
class AuthError : public BackendError {
 public:
  using BackendError::BackendError;
};

// Provider reply that could not be parsed into a completion.
class MalformedResponseError : public BackendError {
 public:
  using BackendError::BackendError;
};

// The scripted oracle was asked about a text missing from its truth table.
class OracleError : public BackendError {
 public:
  using BackendError::BackendError;
};

// An experiment aborted mid-run; completed records were persisted first. CLI exit code 3.
class PartialCompletion : public Error {
 public:
  using Error::Error;
};

}  // namespace triggerbench
