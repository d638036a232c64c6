#include "mdmx/error.hpp"

namespace mdmx {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidInput: return "InvalidInput";
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::BracketError: return "BracketError";
        case ErrorCode::TrainingDiverged: return "TrainingDiverged";
        case ErrorCode::OptimizationFailed: return "OptimizationFailed";
        case ErrorCode::DomainError: return "DomainError";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::DuplicateKey: return "DuplicateKey";
        case ErrorCode::PoolingError: return "PoolingError";
        case ErrorCode::EmptyTensor: return "EmptyTensor";
        case ErrorCode::DecompositionError: return "DecompositionError";
        case ErrorCode::ExtrapolationError: return "ExtrapolationError";
        case ErrorCode::NoSupport: return "NoSupport";
        case ErrorCode::SingleProfileFallback: return "SingleProfileFallback";
        case ErrorCode::StratificationError: return "StratificationError";
        case ErrorCode::MissingInput: return "MissingInput";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace mdmx
