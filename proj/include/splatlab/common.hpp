#pragma once

#include <stdexcept>
#include <string>

namespace splatlab {

enum class ErrorKind {
    // configuration problems (CLI exit code 2)
    ConfigError,
    UnmappedField,
    AmbiguousConvention,
    VanillaModel,
    // data problems (CLI exit code 3)
    DataError,
    BehindCamera,
    OutOfImage,
    DimensionMismatch,
    BadQuaternion,
    MissingManifest,
    MissingGroundTruth,
    CorruptCheckpoint,
    MissingForwardState,
    // numerical failures (CLI exit code 4)
    NonFiniteLoss,
    EmptySceneAfterPrune,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    int exit_code() const {
        switch (kind_) {
        case ErrorKind::ConfigError:
        case ErrorKind::UnmappedField:
        case ErrorKind::AmbiguousConvention:
        case ErrorKind::VanillaModel:
            return 2;
        case ErrorKind::NonFiniteLoss:
        case ErrorKind::EmptySceneAfterPrune:
            return 4;
        default:
            return 3;
        }
    }

private:
    ErrorKind kind_;
};

} // namespace splatlab
