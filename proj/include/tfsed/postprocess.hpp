// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

// Segment decoding (threshold, median filter, longest run) and event-based
// scoring with an onset-only collar.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfsed/annotations.hpp"

namespace tfsed::post {

inline constexpr double kSegmentSeconds = 0.08;
inline constexpr double kMedianSeconds = 0.24;
inline constexpr double kThreshold = 0.5;
inline constexpr double kCollarSeconds = 0.5;

using Binary = std::vector<std::uint8_t>;

/// 1 iff y > threshold.
Binary binarize(std::span<const float> y, double threshold = kThreshold);

/// Sliding median over round(length_s / segment_s) taps, edges replicated.
Binary median_filter(std::span<const std::uint8_t> b, double length_s = kMedianSeconds,
                     double segment_s = kSegmentSeconds);

struct Interval {
  double onset_s = 0.0;
  double offset_s = 0.0;
};

/// Longest run of ones (earliest on ties) as [start, end + 1) * segment_s.
std::optional<Interval> longest_run(std::span<const std::uint8_t> b,
                                    double segment_s = kSegmentSeconds);

struct DetectionResult {
  std::string clip_id;
  std::optional<Interval> event;
  std::vector<float> probabilities;
};

DetectionResult decode(std::string clip_id, std::span<const float> y);

struct Event {
  std::string clip_id;
  std::string class_name;
  double onset_s = 0.0;
  double offset_s = 0.0;
};

std::vector<Event> events_from_rows(std::span<const AnnotationRow> rows);
std::vector<AnnotationRow> rows_from_events(std::span<const Event> events);

struct MatchCounts {
  std::size_t tp = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
};

/// At most one reference and one detection per clip.
MatchCounts match_events(std::span<const Event> references, std::span<const Event> detections,
                         double collar_s = kCollarSeconds);

struct Metrics {
  std::size_t n_ref = 0;
  std::size_t n_sys = 0;
  std::size_t tp = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  double er = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
};

/// Throws kUndefined when n_ref is zero.
Metrics compute_metrics(std::size_t tp, std::size_t deletions, std::size_t insertions,
                        std::size_t n_ref);

struct ClassReport {
  std::string class_name;
  MatchCounts counts;
  std::size_t n_ref = 0;
  std::size_t n_sys = 0;
  std::optional<Metrics> metrics;  // empty when n_ref == 0
};

struct MetricsReport {
  std::vector<ClassReport> classes;
  /// Counts summed over classes; ER and F averaged over classes with
  /// defined metrics.
  ClassReport average;
};

/// Scores each class in `class_names` on the events of that class.
MetricsReport evaluate_events(std::span<const Event> references, std::span<const Event> detections,
                              std::span<const std::string> class_names,
                              double collar_s = kCollarSeconds);

std::string metrics_csv(const MetricsReport& report);
std::string metrics_table(const MetricsReport& report);

}  // namespace tfsed::post
