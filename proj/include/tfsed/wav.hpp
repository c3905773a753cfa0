// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace tfsed {

/// Mono PCM audio with samples scaled to [-1, 1).
struct WavAudio {
  int sample_rate = 44100;
  std::vector<float> samples;
};

/// Reads a mono 16-bit PCM WAV. Anything else is a format error.
WavAudio read_wav(const std::filesystem::path& path);
WavAudio decode_wav(std::span<const std::uint8_t> bytes);

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1] then quantized.
void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate);
std::vector<std::uint8_t> encode_wav(std::span<const float> samples, int sample_rate);

}  // namespace tfsed
