#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ncps {

enum class ErrorKind {
    NotOrdered,
    ConfigInvalid,
    PathIncomplete,
    IndexOrder,
    SigmaSingular,
    GammaDegenerate,
    CollidedPath,
    DegenerateWeights,
    TooFewSamples,
    IoError,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::NotOrdered: return "NotOrdered";
        case ErrorKind::ConfigInvalid: return "ConfigInvalid";
        case ErrorKind::PathIncomplete: return "PathIncomplete";
        case ErrorKind::IndexOrder: return "IndexOrder";
        case ErrorKind::SigmaSingular: return "SigmaSingular";
        case ErrorKind::GammaDegenerate: return "GammaDegenerate";
        case ErrorKind::CollidedPath: return "CollidedPath";
        case ErrorKind::DegenerateWeights: return "DegenerateWeights";
        case ErrorKind::TooFewSamples: return "TooFewSamples";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    /// Message without the kind prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

}  // namespace ncps
