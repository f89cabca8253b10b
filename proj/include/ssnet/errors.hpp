#pragma once

#include <stdexcept>
#include <string>

namespace ssnet {

// Error hierarchy. The three branches map onto CLI exit codes:
// usage -> 1, data -> 2, numeric -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

#define SSNET_DATA_ERROR(NAME)          \
  struct NAME : DataError {             \
    using DataError::DataError;         \
    NAME() : DataError(#NAME) {}        \
  }
#define SSNET_NUMERIC_ERROR(NAME)       \
  struct NAME : NumericError {          \
    using NumericError::NumericError;   \
    NAME() : NumericError(#NAME) {}     \
  }

// signal-io
SSNET_DATA_ERROR(MalformedHeader);
SSNET_DATA_ERROR(TruncatedData);
SSNET_DATA_ERROR(CalibrationDegenerate);
SSNET_DATA_ERROR(RangeOverflow);
SSNET_DATA_ERROR(UnknownStageToken);
SSNET_DATA_ERROR(OverlappingEntries);
SSNET_DATA_ERROR(MissingChannel);
SSNET_DATA_ERROR(MixedSampleRate);

// dataset-pipeline
SSNET_DATA_ERROR(EmptyOverlap);
SSNET_NUMERIC_ERROR(NonFiniteInput);
SSNET_DATA_ERROR(TargetExceedsAvailable);
SSNET_DATA_ERROR(NyquistViolation);
SSNET_DATA_ERROR(ChecksumMismatch);
SSNET_DATA_ERROR(SchemaVersionMismatch);

// autodiff-nn
SSNET_DATA_ERROR(ShapeMismatch);
SSNET_DATA_ERROR(InputTooShort);
SSNET_DATA_ERROR(DegenerateBatch);
SSNET_DATA_ERROR(LabelOutOfRange);
SSNET_DATA_ERROR(NonScalarRoot);

// ssnet-model
SSNET_DATA_ERROR(InvalidConfig);

// trainer
SSNET_DATA_ERROR(EmptyDataset);
SSNET_NUMERIC_ERROR(DivergedLoss);
SSNET_NUMERIC_ERROR(NonFiniteGradient);

// metrics-eval
SSNET_DATA_ERROR(EmptyCounts);
SSNET_DATA_ERROR(LengthMismatch);
SSNET_DATA_ERROR(ClassOutOfRange);
SSNET_DATA_ERROR(NotFiveClass);

#undef SSNET_DATA_ERROR
#undef SSNET_NUMERIC_ERROR

}  // namespace ssnet
