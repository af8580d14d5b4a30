#pragma once

#include <stdexcept>
#include <string>

namespace knobtune {

// Bad input files, bad session configs, unknown names. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Failures after a session has started (collector gone, backend dead). CLI exit code 3/4.
class SessionError : public std::runtime_error {
public:
    explicit SessionError(const std::string& what) : std::runtime_error(what) {}
};

// Operator interrupt, delivered at a window boundary.
class Interrupted : public std::runtime_error {
public:
    Interrupted() : std::runtime_error("interrupted") {}
};

} // namespace knobtune
