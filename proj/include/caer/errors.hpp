#pragma once

#include <stdexcept>
#include <string>

namespace caer {

// Incompatible tensor shapes (wrong rank, extent mismatch, bad broadcast).
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Pooling window does not tile the input extents.
struct PoolGeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite or otherwise unusable numeric input.
struct InvalidValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Configuration violates a documented precondition.
struct InvalidConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Class label outside [0, K).
struct InvalidLabelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Batch statistics requested over fewer than two values per channel.
struct DegenerateBatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Internal bookkeeping (argmax maps, caches) no longer matches its tensor.
struct CorruptedStateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint file unreadable, truncated, or inconsistent with the model.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset files or records unreadable or malformed.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Clip has no usable face box in any frame.
struct NoFaceError : DataError {
  using DataError::DataError;
};

// Training loss became non-finite.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace caer
