#pragma once

#include <stdexcept>
#include <string>

namespace pg {

// Exit-code mapping used by the CLI: 2 config, 3 numeric, 4 I/O.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : IoError {
    explicit FormatError(const std::string& msg) : IoError(msg) {}
};

} // namespace pg
