#pragma once

#include <stdexcept>
#include <string>

namespace crisisgen {

/// Base for every error raised by the pipeline.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller violated a documented precondition (empty input, bad range...).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Network or server-side failure. Safe to retry.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Backend answered, but with something that breaks the protocol contract
/// (dimension drift, malformed JSON envelope, 4xx status). Never retried.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// Replay fixture could not serve a request.
class FixtureError : public Error {
public:
    using Error::Error;
};

/// Model output could not be parsed into the expected shape.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::string raw)
        : Error(what), raw_(std::move(raw)) {}

    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

/// File content did not match the expected format.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    /// 1-based line number, 0 when not line-oriented.
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace crisisgen
