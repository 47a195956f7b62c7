// result.hpp - lightweight status/result types for the I/O paths.
//
// Media errors, failed disks and unrecoverable stripes are ordinary runtime
// outcomes here, not exceptions; they travel as values so callers can react
// inline (recovery, degraded mode). Exceptions are reserved for contract
// violations (bad geometry, mismatched buffer lengths) and simulated power
// loss.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace raid0e {

enum class ErrKind : std::uint8_t {
  none = 0,
  bad_range,      // address outside device / volume
  media_error,    // unreadable or transiently failing sector
  write_error,    // write-fail fault hit, nothing persisted
  disk_failed,    // member rejects all I/O
  unrecoverable,  // double fault: reconstruction impossible
  config,         // invalid configuration or malformed on-disk metadata
  offline,        // array has lost two or more data members
  state,          // operation not allowed in the current array state
};

const char* err_kind_name(ErrKind k);

// One error shape for disk and array level; unused fields stay at their
// defaults (-1 / 0).
struct IoError {
  ErrKind kind = ErrKind::none;
  int disk = -1;            // member index, data disks first
  std::uint64_t sector = 0; // first offending sector on that disk
  std::int64_t stripe = -1; // stripe involved, when known
  std::string detail;

  std::string to_string() const;
};

class Status {
public:
  Status() = default;
  Status(IoError e) : err_(std::move(e)) {}

  static Status ok() { return Status(); }
  static Status error(ErrKind k, std::string detail = {}) {
    IoError e;
    e.kind = k;
    e.detail = std::move(detail);
    return Status(std::move(e));
  }

  bool is_ok() const { return !err_.has_value(); }
  explicit operator bool() const { return is_ok(); }
  const IoError& error() const { return *err_; }
  std::string to_string() const { return err_ ? err_->to_string() : "ok"; }

private:
  std::optional<IoError> err_;
};

template <typename T>
class Result {
public:
  Result(T v) : value_(std::move(v)) {}
  Result(IoError e) : err_(std::move(e)) {}

  static Result value(T v) { return Result(std::move(v)); }
  static Result error(IoError e) { return Result(std::move(e)); }
  static Result error(ErrKind k, std::string detail = {}) {
    IoError e;
    e.kind = k;
    e.detail = std::move(detail);
    return Result(std::move(e));
  }

  bool is_ok() const { return !err_.has_value(); }
  explicit operator bool() const { return is_ok(); }
  T& value() { return *value_; }
  const T& value() const { return *value_; }
  const IoError& error() const { return *err_; }
  Status status() const { return err_ ? Status(*err_) : Status::ok(); }

private:
  std::optional<T> value_;
  std::optional<IoError> err_;
};

// Thrown when the simulated power rail dies mid-operation. Nothing after the
// throw point is persisted; the array object must be discarded and reopened.
struct power_failure_error : std::runtime_error {
  power_failure_error() : std::runtime_error("simulated power failure") {}
};

} // namespace raid0e
