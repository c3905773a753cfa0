// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include "tfsed/annotations.hpp"

#include <charconv>
#include <cstdio>

#include "binary_io.hpp"
#include "tfsed/error.hpp"

namespace tfsed {

std::string format_annotations(const std::vector<AnnotationRow>& rows) {
  std::string out;
  char buf[64];
  for (const auto& r : rows) {
    out += r.filename;
    std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\t", r.onset_s, r.offset_s);
    out += buf;
    out += r.class_name;
    out += '\n';
  }
  return out;
}

namespace {

double parse_seconds(std::string_view field, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  check(ec == std::errc{} && ptr == field.data() + field.size(), ErrorCode::kFormat,
        "annotations line " + std::to_string(line) + ": bad time value '" + std::string(field) +
            "'");
  return v;
}

}  // namespace

std::vector<AnnotationRow> parse_annotations(std::string_view text) {
  std::vector<AnnotationRow> rows;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    check(fields.size() == 4, ErrorCode::kFormat,
          "annotations line " + std::to_string(line_no) + ": expected 4 tab-separated fields");
    AnnotationRow r;
    r.filename = std::string(fields[0]);
    r.onset_s = parse_seconds(fields[1], line_no);
    r.offset_s = parse_seconds(fields[2], line_no);
    r.class_name = std::string(fields[3]);
    check(!r.filename.empty() && r.onset_s >= 0.0 && r.onset_s < r.offset_s, ErrorCode::kFormat,
          "annotations line " + std::to_string(line_no) + ": invalid event interval");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<AnnotationRow> read_annotations(const std::filesystem::path& path) {
  try {
    return parse_annotations(io::read_text(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRow>& rows) {
  io::write_text(path, format_annotations(rows));
}

}  // namespace tfsed
