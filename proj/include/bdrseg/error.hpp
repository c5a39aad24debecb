#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bdrseg {

enum class ErrorKind {
    ShapeMismatch,
    LabelOutOfRange,
    MissingGradient,
    EmptyMask,
    EmptySiteSet,
    EmptyResult,
    DegenerateContour,
    OpenRegion,
    InvalidParams,
    IoFailure,
    MalformedHeader,
    TruncatedData,
    BadMagic,
    DivergedTraining,
    TooFewSamples,
    ManifestMismatch,
    Usage,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::MissingGradient: return "MissingGradient";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::EmptySiteSet: return "EmptySiteSet";
    case ErrorKind::EmptyResult: return "EmptyResult";
    case ErrorKind::DegenerateContour: return "DegenerateContour";
    case ErrorKind::OpenRegion: return "OpenRegion";
    case ErrorKind::InvalidParams: return "InvalidParams";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::TruncatedData: return "TruncatedData";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::DivergedTraining: return "DivergedTraining";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::ManifestMismatch: return "ManifestMismatch";
    case ErrorKind::Usage: return "Usage";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind so
/// callers (tests, the CLI exit-code mapping) can dispatch without parsing
/// messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what)
{
    throw Error(kind, what);
}

} // namespace bdrseg
