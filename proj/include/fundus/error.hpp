#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fundus {

enum class ErrorCode {
  ShapeMismatch,
  DegenerateChannel,
  CropTooLarge,
  UnsupportedFormat,
  CorruptFile,
  IoFailure,
  EmptyDataset,
  TransmissionUnderflow,
  OddSpatialDims,
  BadSpatialDims,
  DomainError,
  NonScalarLoss,
  MissingGrad,
  SingleClassDataset,
  MalformedCsv,
  UnknownSplit,
  GradeOutOfRange,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fundus
