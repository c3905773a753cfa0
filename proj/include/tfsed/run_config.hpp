// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

// Merged run configuration: synthesis, model and training settings plus the
// target class and master seed, read from key=value text.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tfsed/model.hpp"
#include "tfsed/synth.hpp"
#include "tfsed/trainer.hpp"

namespace tfsed {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string class_name = "babycry";
  synth::SynthConfig synth;
  model::ModelConfig model;
  train::TrainConfig train;

  /// Sets one key from its text form. Unknown keys and malformed values
  /// raise kConfig.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;

  /// Validates every section; the synth and train seeds follow `seed`.
  void validate() const;

  /// Sorted key=value lines, one per known key.
  std::string serialize() const;

  /// FNV-1a 64 of serialize().
  std::uint64_t hash() const;

  static const std::vector<std::string>& keys();
};

/// Applies `text` on top of `base`. Blank lines and lines starting with '#'
/// are skipped; everything else must be `key = value`.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::uint64_t fnv1a64_file(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

}  // namespace tfsed
