#pragma once

#include <stdexcept>
#include <string>

namespace ustab {

enum class ErrorCode {
    InvalidArgument = 1,
    InvalidMatrix,
    NotPSD,
    ShapeError,
    NoStochasticity,
    EmptyRetainSet,
    EmptyForgetSet,
    DegenerateEnsemble,
    TooManyPairs,
    UndefinedThreshold,
    BoundInapplicable,
    InfeasibleSpec,
    InvalidBatch,
    TrainingDiverged,
    ParseError,
    IoError,
    ConfigError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

} // namespace ustab
