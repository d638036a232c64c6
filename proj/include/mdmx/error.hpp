#pragma once

#include <stdexcept>
#include <string>

namespace mdmx {

enum class ErrorCode {
    InvalidInput,
    RankDeficient,
    InsufficientData,
    BracketError,
    TrainingDiverged,
    OptimizationFailed,
    DomainError,
    ParseError,
    DuplicateKey,
    PoolingError,
    EmptyTensor,
    DecompositionError,
    ExtrapolationError,
    NoSupport,
    SingleProfileFallback,
    StratificationError,
    MissingInput,
    ConfigError,
    IoError,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure in the library surfaces as an Error carrying a code, so the
/// C API and the CLI can map it to a stable status without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) throw Error(code, message);
}

}  // namespace mdmx
