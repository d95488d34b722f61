#pragma once

#include <stdexcept>
#include <string>

namespace pead {

// Base for every error raised by the toolkit. Callers that only care about
// "something in pead failed" catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed input files: bad JSON lines, unknown enum values, bad magic bytes.
class FormatError : public Error {
public:
  using Error::Error;
};

// Data that parses but breaks an invariant (causal mask, row sums, spans).
class ValidationError : public Error {
public:
  using Error::Error;
};

// Bad or incomplete experiment configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Network failure after retries were exhausted, or a non-retryable HTTP status.
class TransportError : public Error {
public:
  using Error::Error;
};

// HTTP 401/403 from the endpoint. Never retried.
class AuthError : public TransportError {
public:
  using TransportError::TransportError;
};

// The endpoint (or available fixtures) cannot provide what was asked for,
// e.g. prompt logprobs for perplexity.
class CapabilityError : public Error {
public:
  using Error::Error;
};

} // namespace pead
