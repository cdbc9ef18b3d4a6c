#include "error.hpp"

namespace ustab {

const char* error_code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidMatrix: return "InvalidMatrix";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::NoStochasticity: return "NoStochasticity";
    case ErrorCode::EmptyRetainSet: return "EmptyRetainSet";
    case ErrorCode::EmptyForgetSet: return "EmptyForgetSet";
    case ErrorCode::DegenerateEnsemble: return "DegenerateEnsemble";
    case ErrorCode::TooManyPairs: return "TooManyPairs";
    case ErrorCode::UndefinedThreshold: return "UndefinedThreshold";
    case ErrorCode::BoundInapplicable: return "BoundInapplicable";
    case ErrorCode::InfeasibleSpec: return "InfeasibleSpec";
    case ErrorCode::InvalidBatch: return "InvalidBatch";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

} // namespace ustab
