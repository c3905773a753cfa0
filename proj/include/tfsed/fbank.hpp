// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

// Log mel filterbank ("Fbank") features: 40 ms Hann frames every 20 ms at
// 44.1 kHz, 2048-point magnitude spectrum, 128 triangular mel filters over
// 300-22050 Hz, natural log with a 1e-10 floor.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tfsed/tensor.hpp"

namespace tfsed::fbank {

inline constexpr int kSampleRate = 44100;
inline constexpr std::size_t kFrameLength = 1764;  // 40 ms
inline constexpr std::size_t kFrameShift = 882;    // 20 ms
inline constexpr std::size_t kFftSize = 2048;
inline constexpr std::size_t kNumMels = 128;
inline constexpr double kMinHz = 300.0;
inline constexpr double kMaxHz = 22050.0;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kStdFloor = 1e-8;

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Sparse triangular filterbank: filter m has weights over bins
/// [first_bin[m], first_bin[m] + weights[m].size()).
struct MelFilterbank {
  std::size_t n_bins = 0;
  std::vector<double> edge_hz;  // n_filters + 2 mel-spaced points
  std::vector<std::size_t> first_bin;
  std::vector<std::vector<float>> weights;

  std::size_t size() const { return weights.size(); }
  double center_hz(std::size_t filter) const { return edge_hz.at(filter + 1); }
  /// Dense [n_filters x n_bins] matrix.
  Tensor<float> dense() const;
};

MelFilterbank build_mel_filterbank(std::size_t n_filters = kNumMels, double f_min = kMinHz,
                                   double f_max = kMaxHz, std::size_t n_fft = kFftSize,
                                   int sample_rate = kSampleRate);

/// Hann-windowed frames [ceil(N / 882) x 1764]; the tail is zero-padded.
Tensor<float> frame_signal(std::span<const float> samples, int sample_rate = kSampleRate);

struct FeatureMatrix {
  Tensor<float> values;  // [frames x 128]

  std::size_t frames() const { return values.dim(0); }
  std::size_t n_mels() const { return values.dim(1); }
  static constexpr double frame_shift_s = 0.020;
  static constexpr double frame_len_s = 0.040;
  static constexpr int sample_rate_hz = kSampleRate;
};

FeatureMatrix fbank_extract(std::span<const float> samples, int sample_rate);

struct NormStats {
  std::vector<float> mean;
  std::vector<float> std;
};

NormStats fit_norm_stats(std::span<const FeatureMatrix> features);
FeatureMatrix apply_norm(const FeatureMatrix& features, const NormStats& stats);

// On-disk formats (little-endian). FBNK: magic, u32 frames, u32 n_mels,
// row-major f32. NormStats: 128 f32 means followed by 128 f32 stds.
std::vector<std::uint8_t> encode_fbnk(const FeatureMatrix& features);
FeatureMatrix decode_fbnk(std::span<const std::uint8_t> bytes);
void write_fbnk(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_fbnk(const std::filesystem::path& path);
void write_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats read_norm_stats(const std::filesystem::path& path);

}  // namespace tfsed::fbank
