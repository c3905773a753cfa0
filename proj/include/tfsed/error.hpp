// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tfsed {

/// Failure categories. Each maps 1:1 onto a C API status code and onto the
/// category token the CLI prints on failure.
enum class ErrorCode {
  kParameter = 1,
  kDimension,
  kFormat,
  kIo,
  kCheckpoint,
  kConfig,
  kState,
  kNumeric,
  kPlacement,
  kInput,
  kUndefined,
  kInternal,
};

std::string_view error_category(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void check(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace tfsed
