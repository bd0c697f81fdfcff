#include "palette/error.hpp"

namespace palette {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::InvalidPattern: return "InvalidPattern";
    case ErrorCode::BadDensity: return "BadDensity";
    case ErrorCode::TooFewExperts: return "TooFewExperts";
    case ErrorCode::GateDimensionMismatch: return "GateDimensionMismatch";
    case ErrorCode::UnnormalizedGate: return "UnnormalizedGate";
    case ErrorCode::BadCoefficients: return "BadCoefficients";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::TooLong: return "TooLong";
    case ErrorCode::EmptyContinuation: return "EmptyContinuation";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::WrongRejectionCount: return "WrongRejectionCount";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::BadTrainConfig: return "BadTrainConfig";
    case ErrorCode::BadEpsilon: return "BadEpsilon";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::SupportViolation: return "SupportViolation";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::EndpointUnreachable: return "EndpointUnreachable";
    case ErrorCode::MalformedScorerResponse: return "MalformedScorerResponse";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::AllZero: return "AllZero";
    case ErrorCode::NegativeEntry: return "NegativeEntry";
    case ErrorCode::InvalidDistribution: return "InvalidDistribution";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::UnparseableDistribution: return "UnparseableDistribution";
    case ErrorCode::TemplateError: return "TemplateError";
    case ErrorCode::InvalidDraft: return "InvalidDraft";
    case ErrorCode::EmptyItems: return "EmptyItems";
    case ErrorCode::InvalidItem: return "InvalidItem";
    case ErrorCode::LabelError: return "LabelError";
    case ErrorCode::IncompleteQuery: return "IncompleteQuery";
    case ErrorCode::AmbiguousVerdict: return "AmbiguousVerdict";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace palette
