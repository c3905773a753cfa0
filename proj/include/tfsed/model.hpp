// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

// CRNN with frequential attention on the input features and temporal
// attention on the segment logits.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tfsed/autodiff.hpp"
#include "tfsed/rng.hpp"
#include "tfsed/tensor.hpp"

namespace tfsed::model {

struct PoolWindow {
  std::size_t t = 1;
  std::size_t f = 1;
  bool operator==(const PoolWindow&) const = default;
};

struct ModelConfig {
  std::size_t n_mels = 128;
  std::vector<std::size_t> conv_channels{32, 32, 64, 64};
  std::size_t kernel_t = 3;
  std::size_t kernel_f = 3;
  /// 2 adds layer 1's output to layer 2's, and layer 3's to layer 4's.
  std::size_t residual_connections = 2;
  std::vector<PoolWindow> pool_windows{{1, 2}, {2, 2}, {2, 2}, {1, 4}};
  std::size_t gru_units = 32;
  std::size_t ta_units = 32;
  std::size_t fa_units = 128;
  double dropout_p = 0.2;
  ad::Activation ta_activation = ad::Activation::kRelu;
  ad::Activation fa_activation = ad::Activation::kSigmoid;
  bool use_temporal_attention = true;
  bool use_frequential_attention = true;

  void validate() const;
  std::size_t n_conv_layers() const { return conv_channels.size(); }
  std::size_t time_pool() const;
  std::size_t freq_pool() const;
  std::size_t segments(std::size_t frames) const;
  /// Width of one stacked CNN output column (channels x pooled mels).
  std::size_t cnn_features() const;
  bool operator==(const ModelConfig&) const = default;
};

std::string_view activation_name(ad::Activation a);
ad::Activation activation_from_name(std::string_view name);

template <typename T>
struct NamedParam {
  std::string name;
  ad::Var<T> var;
};

template <typename T>
struct NamedStats {
  std::string name;
  ad::BatchNormStats<T> stats;
};

template <typename T>
struct ForwardOptions {
  /// Replaces the temporal weights a; shape [N x T_seg].
  std::optional<Tensor<T>> temporal_override;
  /// Seeds dropout masks in train mode.
  Rng* rng = nullptr;
};

template <typename T>
struct ForwardTrace {
  ad::Var<T> weighted_features;    // F~   [N x T x 128]
  ad::Var<T> frequential_weights;  // M    [N x T x 128]
  ad::Var<T> cnn_output;           // C    [N x C x T_seg x F']
  ad::Var<T> temporal_raw;         // a^   [N x T_seg]
  ad::Var<T> temporal_weights;     // a    [N x T_seg]
  ad::Var<T> logits;               // h    [N x T_seg]
  ad::Var<T> probabilities;        // y    [N x T_seg]
};

/// Parameter group of a parameter name: cnn, bn, gru, fc, ta or fa.
std::string param_group(std::string_view name);

template <typename T>
class Model {
 public:
  Model() = default;
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  void set_attention(bool temporal, bool frequential);

  std::vector<NamedParam<T>>& params() { return params_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<NamedStats<T>>& bn_stats() { return stats_; }
  const std::vector<NamedStats<T>>& bn_stats() const { return stats_; }
  ad::Var<T>& param(std::string_view name);
  const ad::Var<T>& param(std::string_view name) const;

  /// Parameters on the active path (attention groups only when enabled).
  std::vector<ad::Var<T>> trainable() const;
  std::size_t parameter_count() const;

  /// Draws fresh attention parameters (small weights, near-identity output).
  void init_attention(Rng& rng);

  ForwardTrace<T> forward(const ad::Var<T>& features, ad::Mode mode,
                          const ForwardOptions<T>& options = {});

  template <typename U>
  Model<U> cast() const;

  /// Deep copy with independent parameter storage.
  Model clone() const { return cast<T>(); }

 private:
  ad::Var<T> frequential(const ad::Var<T>& f, ad::Var<T>* weights) const;
  ad::Var<T> cnn(const ad::Var<T>& x, ad::Mode mode, Rng* rng);
  ad::Var<T> temporal(const ad::Var<T>& seq, ad::Var<T>* raw) const;
  ad::Var<T> bigru_fc(const ad::Var<T>& seq) const;

  template <typename U>
  friend class Model;

  ModelConfig config_;
  std::vector<NamedParam<T>> params_;
  std::vector<NamedStats<T>> stats_;
};

/// Wraps a [T x 128] feature matrix as a batch of one.
template <typename T>
ad::Var<T> batch_of_one(const Tensor<float>& features);

/// Stacks equally sized [T x 128] matrices into [N x T x 128].
template <typename T>
ad::Var<T> stack_batch(std::span<const Tensor<float>* const> features);

// Checkpoints ("TFAT"): magic, u32 version, config, named parameter blobs,
// then batchnorm running statistics.
std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model);
Model<float> decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model);
Model<float> load_checkpoint(const std::filesystem::path& path);

/// Builds a model with `config` whose CNN, bi-GRU, FC and batchnorm state
/// come from a baseline checkpoint; attention parameters are fresh.
Model<float> load_pretrained_crnn(const std::filesystem::path& baseline, const ModelConfig& config,
                                  std::uint64_t seed);
Model<float> adopt_pretrained(const Model<float>& baseline, const ModelConfig& config,
                              std::uint64_t seed);

}  // namespace tfsed::model
