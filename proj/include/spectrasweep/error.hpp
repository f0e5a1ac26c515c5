#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spectrasweep {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An argument outside the mathematical domain of an operation (e.g. a non-positive wavelength).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A container was built from values that break its invariants.
class InvariantError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    IoError(const std::string& path, const std::string& what)
        : Error(path + ": " + what), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Malformed file header; `offset` is the byte position where parsing failed.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Payload shorter or longer than the header declares.
class TruncationError : public Error {
public:
    TruncationError(const std::string& path, std::size_t expected, std::size_t actual)
        : Error(path + ": payload size mismatch, expected " + std::to_string(expected) +
                " bytes, got " + std::to_string(actual)),
          expected_(expected), actual_(actual) {}
    std::size_t expected() const noexcept { return expected_; }
    std::size_t actual() const noexcept { return actual_; }

private:
    std::size_t expected_;
    std::size_t actual_;
};

/// Ill-conditioned or rank-deficient estimation problem.
class DegeneracyError : public Error {
public:
    using Error::Error;
};

/// Too few corners, features, matches or inliers to estimate a model.
class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Invalid or inconsistent run configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Failure inside a named pipeline stage.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& cause)
        : Error(stage + ": " + cause), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace spectrasweep
