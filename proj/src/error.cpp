#include "optin/error.hpp"

namespace optin {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegeneratePoint: return "DegeneratePoint";
    case ErrorKind::BadBox: return "BadBox";
    case ErrorKind::NonPositiveDt: return "NonPositiveDt";
    case ErrorKind::CovarianceNotPD: return "CovarianceNotPD";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NonMonotonicTimestamps: return "NonMonotonicTimestamps";
    case ErrorKind::SingularCovariance: return "SingularCovariance";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteObjective: return "NonFiniteObjective";
    case ErrorKind::NoValidHypothesis: return "NoValidHypothesis";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::InvalidPolygon: return "InvalidPolygon";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::ClockSkew: return "ClockSkew";
    case ErrorKind::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace optin
