#include "fundus/error.hpp"

namespace fundus {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateChannel: return "DegenerateChannel";
    case ErrorCode::CropTooLarge: return "CropTooLarge";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::TransmissionUnderflow: return "TransmissionUnderflow";
    case ErrorCode::OddSpatialDims: return "OddSpatialDims";
    case ErrorCode::BadSpatialDims: return "BadSpatialDims";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::MissingGrad: return "MissingGrad";
    case ErrorCode::SingleClassDataset: return "SingleClassDataset";
    case ErrorCode::MalformedCsv: return "MalformedCsv";
    case ErrorCode::UnknownSplit: return "UnknownSplit";
    case ErrorCode::GradeOutOfRange: return "GradeOutOfRange";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace fundus
