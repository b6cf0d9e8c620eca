#include "brainage/error.hpp"

namespace brainage {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadHeader: return "BadHeader";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NonFiniteVoxel: return "NonFiniteVoxel";
    case ErrorCode::InvalidVolume: return "InvalidVolume";
    case ErrorCode::ZeroDivisor: return "ZeroDivisor";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::BadSexCode: return "BadSexCode";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::InvalidRecord: return "InvalidRecord";
    case ErrorCode::DegenerateAges: return "DegenerateAges";
    case ErrorCode::MismatchedBins: return "MismatchedBins";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BadEdge: return "BadEdge";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::NotNested: return "NotNested";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::MissingStageInput: return "MissingStageInput";
    case ErrorCode::StaleStageInput: return "StaleStageInput";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace brainage
