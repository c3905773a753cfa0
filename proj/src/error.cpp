// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include "tfsed/error.hpp"

namespace tfsed {

std::string_view error_category(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kParameter: return "parameter";
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kCheckpoint: return "checkpoint";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kState: return "state";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kPlacement: return "placement";
    case ErrorCode::kInput: return "input";
    case ErrorCode::kUndefined: return "undefined";
    case ErrorCode::kInternal: return "internal";
  }
  return "internal";
}

}  // namespace tfsed
