// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include "tfsed/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "tfsed/error.hpp"

namespace tfsed::post {

Binary binarize(std::span<const float> y, double threshold) {
  Binary out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    check(std::isfinite(y[i]), ErrorCode::kNumeric, "binarize: non-finite probability");
    out[i] = static_cast<double>(y[i]) > threshold ? 1 : 0;
  }
  return out;
}

Binary median_filter(std::span<const std::uint8_t> b, double length_s, double segment_s) {
  check(length_s > 0.0 && segment_s > 0.0, ErrorCode::kConfig,
        "median filter: lengths must be positive");
  const long taps = std::lround(length_s / segment_s);
  check(taps >= 1 && taps % 2 == 1, ErrorCode::kConfig,
        "median filter: " + std::to_string(taps) + " taps; the tap count must be odd");
  const auto n = static_cast<long>(b.size());
  const long half = taps / 2;
  Binary out(b.size());
  for (long i = 0; i < n; ++i) {
    long ones = 0;
    for (long k = i - half; k <= i + half; ++k) ones += b[static_cast<std::size_t>(std::clamp(k, 0L, n - 1))] != 0;
    out[static_cast<std::size_t>(i)] = 2 * ones > taps ? 1 : 0;
  }
  return out;
}

std::optional<Interval> longest_run(std::span<const std::uint8_t> b, double segment_s) {
  std::size_t best_start = 0, best_len = 0;
  for (std::size_t i = 0; i < b.size();) {
    if (!b[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < b.size() && b[j]) ++j;
    if (j - i > best_len) {
      best_start = i;
      best_len = j - i;
    }
    i = j;
  }
  if (best_len == 0) return std::nullopt;
  return Interval{static_cast<double>(best_start) * segment_s,
                  static_cast<double>(best_start + best_len) * segment_s};
}

DetectionResult decode(std::string clip_id, std::span<const float> y) {
  DetectionResult r;
  r.clip_id = std::move(clip_id);
  r.probabilities.assign(y.begin(), y.end());
  r.event = longest_run(median_filter(binarize(y)));
  return r;
}

std::vector<Event> events_from_rows(std::span<const AnnotationRow> rows) {
  std::vector<Event> out;
  for (const auto& r : rows) out.push_back({r.filename, r.class_name, r.onset_s, r.offset_s});
  return out;
}

std::vector<AnnotationRow> rows_from_events(std::span<const Event> events) {
  std::vector<AnnotationRow> out;
  for (const auto& e : events) out.push_back({e.clip_id, e.onset_s, e.offset_s, e.class_name});
  return out;
}

namespace {

std::map<std::string, const Event*> index_by_clip(std::span<const Event> events, const char* what) {
  std::map<std::string, const Event*> out;
  for (const auto& e : events)
    check(out.emplace(e.clip_id, &e).second, ErrorCode::kInput,
          std::string("duplicate clip id in ") + what + ": " + e.clip_id);
  return out;
}

}  // namespace

MatchCounts match_events(std::span<const Event> references, std::span<const Event> detections,
                         double collar_s) {
  const auto refs = index_by_clip(references, "references");
  const auto dets = index_by_clip(detections, "detections");
  MatchCounts c;
  for (const auto& [clip, ref] : refs) {
    const auto it = dets.find(clip);
    // Tolerance absorbs decimal round-off in onsets read back from text.
    const bool hit = it != dets.end() && it->second->class_name == ref->class_name &&
                     std::abs(it->second->onset_s - ref->onset_s) <= collar_s + 1e-9;
    if (hit)
      ++c.tp;
    else
      ++c.deletions;
  }
  c.insertions = detections.size() - c.tp;
  return c;
}

Metrics compute_metrics(std::size_t tp, std::size_t deletions, std::size_t insertions,
                        std::size_t n_ref) {
  check(n_ref > 0, ErrorCode::kUndefined, "error rate undefined: no reference events");
  check(tp + deletions == n_ref, ErrorCode::kParameter,
        "inconsistent counts: tp + deletions != n_ref");
  Metrics m;
  m.n_ref = n_ref;
  m.n_sys = tp + insertions;
  m.tp = tp;
  m.deletions = deletions;
  m.insertions = insertions;
  m.er = static_cast<double>(deletions + insertions) / static_cast<double>(n_ref);
  m.precision = m.n_sys ? static_cast<double>(tp) / static_cast<double>(m.n_sys) : 0.0;
  m.recall = static_cast<double>(tp) / static_cast<double>(n_ref);
  m.f_score = m.precision + m.recall > 0.0
                  ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                  : 0.0;
  return m;
}

MetricsReport evaluate_events(std::span<const Event> references, std::span<const Event> detections,
                              std::span<const std::string> class_names, double collar_s) {
  MetricsReport report;
  report.average.class_name = "average";
  std::set<std::string> known(class_names.begin(), class_names.end());
  for (const auto& e : references)
    check(known.count(e.class_name) > 0, ErrorCode::kInput,
          "reference event of unexpected class '" + e.class_name + "' in " + e.clip_id);
  double er_sum = 0.0, f_sum = 0.0;
  std::size_t defined = 0;
  for (const auto& name : class_names) {
    std::vector<Event> refs, dets;
    for (const auto& e : references)
      if (e.class_name == name) refs.push_back(e);
    for (const auto& e : detections)
      if (e.class_name == name) dets.push_back(e);
    ClassReport cr;
    cr.class_name = name;
    cr.counts = match_events(refs, dets, collar_s);
    cr.n_ref = refs.size();
    cr.n_sys = dets.size();
    if (cr.n_ref > 0) {
      cr.metrics = compute_metrics(cr.counts.tp, cr.counts.deletions, cr.counts.insertions, cr.n_ref);
      er_sum += cr.metrics->er;
      f_sum += cr.metrics->f_score;
      ++defined;
    }
    report.average.counts.tp += cr.counts.tp;
    report.average.counts.deletions += cr.counts.deletions;
    report.average.counts.insertions += cr.counts.insertions;
    report.average.n_ref += cr.n_ref;
    report.average.n_sys += cr.n_sys;
    report.classes.push_back(std::move(cr));
  }
  if (defined > 0) {
    Metrics avg;
    avg.n_ref = report.average.n_ref;
    avg.n_sys = report.average.n_sys;
    avg.tp = report.average.counts.tp;
    avg.deletions = report.average.counts.deletions;
    avg.insertions = report.average.counts.insertions;
    avg.er = er_sum / static_cast<double>(defined);
    avg.f_score = f_sum / static_cast<double>(defined);
    avg.precision = avg.n_sys ? static_cast<double>(avg.tp) / static_cast<double>(avg.n_sys) : 0.0;
    avg.recall = static_cast<double>(avg.tp) / static_cast<double>(avg.n_ref);
    report.average.metrics = avg;
  }
  return report;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
  std::string out = "class,er,f_score,tp,del,ins,n_ref\n";
  auto row = [&](const ClassReport& c) {
    out += c.class_name + ',';
    out += c.metrics ? fixed(c.metrics->er) + ',' + fixed(c.metrics->f_score) : "n/a,n/a";
    out += ',' + std::to_string(c.counts.tp) + ',' + std::to_string(c.counts.deletions) + ',' +
           std::to_string(c.counts.insertions) + ',' + std::to_string(c.n_ref) + '\n';
  };
  for (const auto& c : report.classes) row(c);
  if (report.classes.size() > 1) row(report.average);
  return out;
}

std::string metrics_table(const MetricsReport& report) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %8s %8s %5s %5s %5s %6s\n", "class", "ER", "F", "TP", "D",
                "I", "N_ref");
  out += buf;
  auto row = [&](const ClassReport& c) {
    const std::string er = c.metrics ? fixed(c.metrics->er) : "n/a";
    const std::string f = c.metrics ? fixed(c.metrics->f_score) : "n/a";
    std::snprintf(buf, sizeof buf, "%-12s %8s %8s %5zu %5zu %5zu %6zu\n", c.class_name.c_str(),
                  er.c_str(), f.c_str(), c.counts.tp, c.counts.deletions, c.counts.insertions,
                  c.n_ref);
    out += buf;
  };
  for (const auto& c : report.classes) row(c);
  if (report.classes.size() > 1) row(report.average);
  return out;
}

}  // namespace tfsed::post
