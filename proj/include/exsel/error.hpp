#pragma once

#include <stdexcept>
#include <string>

namespace exsel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file (bad JSON line, bad magic, truncated data).
class ParseError : public Error {
  public:
    using Error::Error;
};

/// Domain invariant violated (duplicate id, empty input text, ...).
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// Matrix or vector dimensions disagree.
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// Non-finite numeric data.
class DataError : public Error {
  public:
    using Error::Error;
};

/// An operation that needs at least one element got none.
class EmptyInputError : public Error {
  public:
    using Error::Error;
};

/// Out-of-range or otherwise invalid parameter.
class ParameterError : public Error {
  public:
    using Error::Error;
};

/// Zero-norm vector where a direction is required.
class DegenerateError : public Error {
  public:
    using Error::Error;
};

/// Remote backend unreachable or returned an HTTP failure.
class TransportError : public Error {
  public:
    TransportError(const std::string& what, int attempts)
        : Error(what + " (after " + std::to_string(attempts) + " attempts)"), attempts_(attempts) {}
    int attempts() const noexcept { return attempts_; }

  private:
    int attempts_;
};

/// Remote backend answered with a payload we cannot interpret.
class ProtocolError : public Error {
  public:
    using Error::Error;
};

/// Prompt template slot could not be filled.
class TemplateError : public Error {
  public:
    TemplateError(const std::string& slot, const std::string& what)
        : Error(what), slot_(slot) {}
    const std::string& slot() const noexcept { return slot_; }

  private:
    std::string slot_;
};

}  // namespace exsel
