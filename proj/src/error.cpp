#include "knnlens/error.hpp"

namespace knnlens {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::TrailingData: return "TrailingData";
    case ErrorCode::InvalidHeader: return "InvalidHeader";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::ProbRowNotNormalized: return "ProbRowNotNormalized";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::MissingSidecar: return "MissingSidecar";
    case ErrorCode::UnknownField: return "UnknownField";
    case ErrorCode::InvalidRule: return "InvalidRule";
    case ErrorCode::EmptyStore: return "EmptyStore";
    case ErrorCode::SubsetOutOfRange: return "SubsetOutOfRange";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::EmptyNeighborList: return "EmptyNeighborList";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::LabelSpaceMismatch: return "LabelSpaceMismatch";
    case ErrorCode::MissingModelProbs: return "MissingModelProbs";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingLabels: return "MissingLabels";
    case ErrorCode::KExceedsOnePercentRule: return "KExceedsOnePercentRule";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::ModeStoreMismatch: return "ModeStoreMismatch";
    case ErrorCode::FractionOutOfRange: return "FractionOutOfRange";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::PartialCollapseMap: return "PartialCollapseMap";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace knnlens
