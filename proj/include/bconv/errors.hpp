#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bconv {

// Shape disagreement between tensors or between a tensor and a layer spec.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (bad mode parameters, unknown config keys, ...).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external file (checkpoint, dataset). Carries the byte offset at
// which parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& msg, std::size_t offset)
        : std::runtime_error(msg + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// Training produced a non-finite loss.
class DivergedError : public std::runtime_error {
public:
    explicit DivergedError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bconv
