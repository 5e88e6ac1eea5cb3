#pragma once

#include <stdexcept>
#include <string>

namespace coin {

/// Invalid configuration, spec, or usage. Maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable/unwritable file or malformed on-disk artifact. Maps to exit code 3.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or failed numerical precondition. Maps to exit code 4.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require_config(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

}  // namespace coin
