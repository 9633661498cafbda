#pragma once

#include <stdexcept>
#include <string>

namespace tve {

// Invalid shapes, bad config values, malformed files, unknown classes.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// A public operation produced (or was fed) NaN/Inf.
class NonFiniteError : public std::runtime_error {
public:
    explicit NonFiniteError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training loss went non-finite; carries the offending step.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& msg, long long step)
        : std::runtime_error(msg + " at step " + std::to_string(step)), step_(step) {}
    long long step() const { return step_; }

private:
    long long step_;
};

} // namespace tve
