#pragma once

#include <stdexcept>
#include <string>

namespace divseg {

// Base of every error raised by the library. The CLI maps subclasses of
// UserError to exit code 1 and anything else to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UserError : public Error {
public:
    using Error::Error;
};

class InvalidInput : public UserError {
public:
    explicit InvalidInput(const std::string& what) : UserError("invalid input: " + what) {}
};

class ShapeError : public UserError {
public:
    explicit ShapeError(const std::string& what) : UserError("shape error: " + what) {}
};

class ConfigError : public UserError {
public:
    explicit ConfigError(const std::string& what) : UserError("configuration error: " + what) {}
};

class IoError : public UserError {
public:
    IoError(const std::string& path, const std::string& what)
        : UserError("I/O error: " + path + ": " + what), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

// Raised when training produces a non-finite loss.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace divseg
