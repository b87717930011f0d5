#pragma once

#include <stdexcept>
#include <string>

namespace mfne {

/// Base of every error raised by the toolkit. `kind()` is a stable short tag
/// used in structured error reports.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error("usage", what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct NumericalBlowup : Error {
    NumericalBlowup(const std::string& what, std::size_t particle, std::size_t step)
        : Error("numerical_blowup", what), particle(particle), step(step) {}
    std::size_t particle;
    std::size_t step;
};

struct SchemeError : Error {
    explicit SchemeError(const std::string& what) : Error("scheme", what) {}
};

struct DegenerateInput : Error {
    explicit DegenerateInput(const std::string& what) : Error("degenerate_input", what) {}
};

struct NumericalError : Error {
    explicit NumericalError(const std::string& what) : Error("numerical", what) {}
};

struct OptimizerFailure : Error {
    explicit OptimizerFailure(const std::string& what) : Error("optimizer_failure", what) {}
};

} // namespace mfne
