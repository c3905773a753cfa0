// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

// Synthetic rare-event mixtures: pink-noise scenes with distractor beeps,
// three event families, and event-to-background ratio (EBR) mixing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tfsed/annotations.hpp"
#include "tfsed/rng.hpp"

namespace tfsed::synth {

inline constexpr int kSampleRate = 44100;
inline constexpr int kNumClasses = 3;

/// 0 babycry, 1 glassbreak, 2 gunshot.
std::string_view class_name(int class_id);
int class_id_from_name(std::string_view name);

struct Interval {
  double onset_s = 0.0;
  double offset_s = 0.0;
};

struct EventInfo {
  int class_id = 0;
  double onset_s = 0.0;
  double offset_s = 0.0;
};

struct AnnotatedClip {
  std::string name;  // "<class>_<index>" without extension
  std::vector<float> samples;
  double duration_s = 0.0;
  std::optional<EventInfo> event;
  double ebr_db = 0.0;
  std::uint64_t seed = 0;
  std::vector<Interval> distractors;  // beep tones inside the background
};

struct SynthConfig {
  std::size_t n_clips = 200;  // per class
  double clip_duration_s = 10.0;
  double event_presence_prob = 0.9;
  std::vector<double> ebr_set{-6.0, 0.0, 6.0};
  std::uint64_t master_seed = 0;
  std::vector<int> classes{0, 1, 2};

  void validate() const;
};

std::vector<float> gen_background(double duration_s, Rng& rng,
                                  std::vector<Interval>* distractors = nullptr);

std::vector<float> gen_event(int class_id, Rng& rng);

struct MixResult {
  std::vector<float> samples;
  double gain = 0.0;         // applied to the event before summation
  double normalization = 1.0;  // < 1 when the anti-clipping rescale fired
};

MixResult mix_at_ebr_detailed(std::span<const float> background, std::span<const float> event,
                              double onset_s, double ebr_db);
std::vector<float> mix_at_ebr(std::span<const float> background, std::span<const float> event,
                              double onset_s, double ebr_db);

/// Unmixed parts of one clip, for verifying placement and EBR.
struct ClipParts {
  std::vector<float> background;
  std::vector<float> event;
  std::size_t onset_sample = 0;
  MixResult mix;
};

std::uint64_t clip_seed(std::uint64_t master_seed, int class_id, std::size_t index);
AnnotatedClip synthesize_clip(const SynthConfig& cfg, int class_id, std::size_t index,
                              ClipParts* parts = nullptr);
std::vector<AnnotatedClip> synthesize_class(const SynthConfig& cfg, int class_id);

std::vector<AnnotationRow> clip_annotations(std::span<const AnnotatedClip> clips);

struct DatasetSummary {
  std::size_t clips = 0;
  std::size_t events = 0;
  std::vector<std::filesystem::path> wav_files;
  std::filesystem::path annotations;
};

/// Writes `<class>_<idx>.wav` files plus `annotations.tsv` for every class
/// in cfg.classes into out_dir.
DatasetSummary synthesize_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace tfsed::synth
