#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace knnlens {

enum class ErrorCode {
  // container format
  MagicMismatch,
  VersionUnsupported,
  TruncatedFile,
  TrailingData,
  InvalidHeader,
  NonFiniteValue,
  LabelOutOfRange,
  ProbRowNotNormalized,
  IoFailure,
  // sidecar / slices
  MissingSidecar,
  UnknownField,
  InvalidRule,
  // normalization and index
  EmptyStore,
  SubsetOutOfRange,
  DimensionMismatch,
  KTooLarge,
  // classifier
  EmptyNeighborList,
  NonPositiveTemperature,
  LabelSpaceMismatch,
  MissingModelProbs,
  InvalidConfig,
  // tuning
  MissingLabels,
  KExceedsOnePercentRule,
  EmptyGrid,
  // analysis
  ModeStoreMismatch,
  FractionOutOfRange,
  LengthMismatch,
  PartialCollapseMap,
  // synthetic data
  InvalidSpec,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so that
/// callers (and tests) can dispatch on the kind of failure rather than the text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace knnlens
