// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

// Weighted cross-entropy training of the CRNN, baseline pre-training,
// attention fine-tuning and held-out evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tfsed/autodiff.hpp"
#include "tfsed/fbank.hpp"
#include "tfsed/model.hpp"
#include "tfsed/postprocess.hpp"

namespace tfsed::train {

/// -sum(w * yhat * log y + (1 - yhat) * log(1 - y)) / N over all segments,
/// with y clamped to [1e-7, 1 - 1e-7].
template <typename T>
ad::Var<T> weighted_bce(const ad::Var<T>& y, const Tensor<T>& labels, double positive_weight);

/// 1 for segments at least half covered by [onset_s, offset_s).
std::vector<float> segment_labels(double onset_s, double offset_s, std::size_t segments,
                                  double segment_s = post::kSegmentSeconds);

struct Example {
  std::string clip_id;  // wav file name, as in the annotation file
  Tensor<float> features;  // normalized [T x 128]
  std::vector<float> labels;
  std::optional<post::Event> reference;
};

struct Dataset {
  std::string class_name;
  std::vector<Example> examples;
};

/// Builds an example; `reference` counts only if it has the target class.
Example make_example(std::string clip_id, Tensor<float> features,
                     const std::optional<post::Event>& reference, const std::string& class_name);

/// Loads `<class>_*.fbnk` plus `annotations.tsv` from a featurized directory.
Dataset load_dataset(const std::filesystem::path& feature_dir, const std::string& class_name);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t pretrain_epochs = 10;
  std::size_t main_epochs = 30;
  double positive_weight = 10.0;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;  // empty: keep checkpoints in memory only
  std::ostream* log = nullptr;
  /// Ends training after the first epoch whose validation ER is at or below this.
  std::optional<double> stop_val_er;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_er;
  double seconds = 0.0;
};

struct TrainResult {
  model::Model<float> final_model;
  model::Model<float> best_model;  // lowest validation ER (final when no validation set)
  std::vector<EpochStats> curve;
};

std::string loss_curve_csv(std::span<const EpochStats> curve);

/// Trains every active parameter of `m` for `epochs` epochs. Files are
/// written as `<tag>_final.tfat`, `<tag>_best.tfat` and `<tag>_loss.csv`
/// when cfg.checkpoint_dir is set.
TrainResult train_model(model::Model<float> m, const Dataset& train, const Dataset* validation,
                        const TrainConfig& cfg, std::size_t epochs, const std::string& tag);

/// Attention-free model trained for pretrain_epochs; tag "baseline".
TrainResult pretrain_baseline(const Dataset& train, const Dataset* validation,
                              const model::ModelConfig& model_cfg, const TrainConfig& cfg);

/// Full attention model initialized from a baseline and trained for
/// main_epochs; tag "full".
TrainResult train_full(const Dataset& train, const Dataset* validation,
                       const model::Model<float>& baseline, const model::ModelConfig& model_cfg,
                       const TrainConfig& cfg);

struct Evaluation {
  post::MetricsReport report;
  std::vector<post::DetectionResult> detections;

  std::vector<post::Event> detected_events(const std::string& class_name) const;
};

/// Segment probabilities for every example (eval mode, no dropout).
std::vector<std::vector<float>> predict(model::Model<float>& m, const Dataset& data,
                                        std::size_t batch_size = 8);

/// Decodes and scores externally supplied probabilities.
Evaluation evaluate_probabilities(const Dataset& data, const std::vector<std::vector<float>>& probs);

Evaluation evaluate(model::Model<float>& m, const Dataset& data, std::size_t batch_size = 8);

}  // namespace tfsed::train
