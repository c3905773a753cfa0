// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

// Pipeline commands behind the CLI. Each writes a manifest.json (config
// hash, seed, input and output hashes) next to its outputs.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tfsed/run_config.hpp"

namespace tfsed::cmd {

using Log = std::function<void(std::string_view line)>;

struct SynthReport {
  std::size_t clips = 0;
  std::size_t events = 0;
};

/// Synthesizes the corpus for `cfg.synth` into out_dir.
SynthReport synth(const RunConfig& cfg, const std::filesystem::path& out_dir, const Log& log = {});

struct FeaturizeReport {
  std::size_t files = 0;
  std::vector<std::string> failures;  // "<file>: <reason>"
  std::filesystem::path stats;
};

/// Extracts normalized features for every *.wav in wav_dir. Statistics are
/// fitted on these files unless `stats` names an existing statistics file.
/// Unreadable files are skipped and listed; the call then fails with kInput
/// after writing everything else.
FeaturizeReport featurize(const RunConfig& cfg, const std::filesystem::path& wav_dir,
                          const std::filesystem::path& out_dir,
                          const std::optional<std::filesystem::path>& stats = std::nullopt,
                          const Log& log = {});

enum class TrainMode { kBaseline, kTemporal, kFull, kPipeline };

TrainMode train_mode_from_name(std::string_view name);
std::string_view train_mode_name(TrainMode mode);

struct TrainRequest {
  TrainMode mode = TrainMode::kPipeline;
  std::filesystem::path train_dir;
  std::optional<std::filesystem::path> val_dir;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> init;  // baseline checkpoint for ta/full
};

struct TrainReport {
  std::vector<std::filesystem::path> checkpoints;
  std::optional<double> best_val_er;
  double final_loss = 0.0;
};

TrainReport train(const RunConfig& cfg, const TrainRequest& request, const Log& log = {});

struct EvalRequest {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> checkpoint;
  /// Scores an existing detection file instead of running a model.
  std::optional<std::filesystem::path> detections;
};

post::MetricsReport eval(const RunConfig& cfg, const EvalRequest& request, const Log& log = {});

struct DumpRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path clip;  // .fbnk (normalized) or .wav
  std::optional<std::filesystem::path> stats;  // required for .wav input
  std::filesystem::path out_dir;
};

/// Attention weights and probabilities of one clip.
struct AttentionDump {
  std::string clip_id;
  std::vector<float> temporal;       // [segments]
  std::vector<float> probabilities;  // [segments]
  Tensor<float> frequential;         // [frames x 128]
  Tensor<float> features;            // [frames x 128]
  Tensor<float> weighted_features;   // [frames x 128]
};

AttentionDump attention_dump(model::Model<float>& m, const std::string& clip_id,
                             const Tensor<float>& features);

/// Writes a.csv, M.pgm, fbank.pgm and weighted_fbank.pgm.
AttentionDump dump_attention(const RunConfig& cfg, const DumpRequest& request, const Log& log = {});

/// Binary PGM, `rows` x `cols` bytes.
std::string encode_pgm(std::size_t cols, std::size_t rows, const std::vector<std::uint8_t>& pixels);

/// Frames as columns, highest mel at the top. Values below lo map to 0 and
/// values above hi map to 255.
std::vector<std::uint8_t> spectrogram_pixels(const Tensor<float>& values, double lo, double hi);

/// Per-frame normalization of attention weights: a weight equal to the
/// frame's mean maps to mid-gray, twice the mean or more to white.
std::vector<std::uint8_t> attention_pixels(const Tensor<float>& weights);

}  // namespace tfsed::cmd
