// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tfsed {

/// One row of `filename<TAB>onset_s<TAB>offset_s<TAB>class_name`. Used for
/// both ground truth and detections; clips without an event have no row.
struct AnnotationRow {
  std::string filename;
  double onset_s = 0.0;
  double offset_s = 0.0;
  std::string class_name;
};

std::string format_annotations(const std::vector<AnnotationRow>& rows);
std::vector<AnnotationRow> parse_annotations(std::string_view text);
std::vector<AnnotationRow> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRow>& rows);

}  // namespace tfsed
