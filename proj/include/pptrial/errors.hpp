#pragma once

#include <stdexcept>
#include <string>

namespace pptrial {

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ModelError : std::runtime_error {
    explicit ModelError(const std::string& msg) : std::runtime_error(msg) {}
};

// logistic fit diverged: perfectly separable response
struct SeparationError : ModelError {
    explicit SeparationError(const std::string& msg) : ModelError(msg) {}
};

struct RankDeficientError : ModelError {
    explicit RankDeficientError(const std::string& msg) : ModelError(msg) {}
};

struct PositivityError : std::runtime_error {
    explicit PositivityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace pptrial
