#pragma once

#include <stdexcept>
#include <string>

namespace jachess {

// Error categories map onto CLI exit codes (see tools/).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid tensor shapes, bad op arguments, graph misuse.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(what) {}
};

// Malformed run configuration (files, field values, cross-field checks).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what) {}
};

// Dataset ingestion and generation problems.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(what) {}
};

// Failures while executing a run (missing checkpoints, IO, guards).
class RunError : public Error {
public:
    explicit RunError(const std::string& what) : Error(what) {}
};

}  // namespace jachess
