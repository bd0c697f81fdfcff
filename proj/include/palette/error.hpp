#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace palette {

enum class ErrorCode {
  // tensor_store
  MalformedHeader,
  ShapeMismatch,
  DuplicateName,
  UnsupportedDtype,
  IoFailure,
  SchemaMismatch,
  InvalidPattern,
  // merge_engine
  BadDensity,
  TooFewExperts,
  GateDimensionMismatch,
  UnnormalizedGate,
  BadCoefficients,
  // reference_model
  BadConfig,
  TooLong,
  EmptyContinuation,
  EmptyPrompt,
  // gate_router
  DimensionMismatch,
  NonFiniteInput,
  // align_trainer
  WrongRejectionCount,
  EmptyDataset,
  BadTrainConfig,
  BadEpsilon,
  // metrics
  LengthMismatch,
  SupportViolation,
  DegenerateVariance,
  EndpointUnreachable,
  MalformedScorerResponse,
  EmptyText,
  AllZero,
  NegativeEntry,
  InvalidDistribution,
  // agent_pipeline / data_synth
  BackendFailure,
  UnparseableDistribution,
  TemplateError,
  InvalidDraft,
  EmptyItems,
  InvalidItem,
  LabelError,
  IncompleteQuery,
  AmbiguousVerdict,
  ParseError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Base exception for every failure the library reports. `context` carries
/// the offending name/label/item id when one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string context = {})
      : std::runtime_error(message), code_(code), context_(std::move(context)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& context() const noexcept { return context_; }

 private:
  ErrorCode code_;
  std::string context_;
};

}  // namespace palette
