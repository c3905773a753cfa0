// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

// Command-line front end. Uses only the C interface in tfsed/tfsed.h.

#include <CLI11.hpp>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "tfsed/tfsed.h"

namespace {

struct ConfigDeleter {
  void operator()(tfsed_config* c) const { tfsed_config_destroy(c); }
};
using ConfigPtr = std::unique_ptr<tfsed_config, ConfigDeleter>;

struct Failure {
  tfsed_status status;
  std::string message;
};

void ok(tfsed_status s) {
  if (s != TFSED_OK) throw Failure{s, tfsed_last_error()};
}

void print_line(const char* line, void*) {
  std::fputs(line, stdout);
  std::fputc('\n', stdout);
  std::fflush(stdout);
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

int report(tfsed_status status, const std::string& message) {
  std::string one_line = message;
  for (auto& c : one_line)
    if (c == '\n' || c == '\r') c = ' ';
  std::fprintf(stderr, "error: %s: %s\n", tfsed_status_name(status), one_line.c_str());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sound event detection with attention-augmented CRNNs", "tfsed"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, class_name;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Master seed");
  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--class", class_name, "Target class (babycry, glassbreak, gunshot)");
  app.add_option("--set", overrides, "Override one key, e.g. --set train.main_epochs=5");

  std::string out_dir;

  auto* synth = app.add_subcommand("synth", "Synthesize a corpus of mixtures with annotations");
  std::string clips, duration, presence;
  synth->add_option("--out", out_dir, "Output directory")->required();
  auto* clips_opt = synth->add_option("--clips", clips, "Clips per class");
  auto* duration_opt = synth->add_option("--duration", duration, "Clip length in seconds");
  auto* presence_opt = synth->add_option("--presence", presence, "Event presence probability");

  auto* featurize = app.add_subcommand("featurize", "Extract normalized log mel features");
  std::string wav_dir, stats;
  featurize->add_option("--wavs", wav_dir, "Directory of .wav clips")->required();
  featurize->add_option("--out", out_dir, "Output directory")->required();
  featurize->add_option("--stats", stats, "Apply these statistics instead of fitting new ones");

  auto* train = app.add_subcommand("train", "Train a detector for one class");
  std::string mode = "pipeline", train_dir, val_dir, init;
  train->add_option("--mode", mode, "baseline, ta, full or pipeline")
      ->check(CLI::IsMember({"baseline", "ta", "full", "pipeline"}));
  train->add_option("--train", train_dir, "Featurized training directory")->required();
  train->add_option("--val", val_dir, "Featurized validation directory");
  train->add_option("--out", out_dir, "Checkpoint directory")->required();
  train->add_option("--init", init, "Baseline checkpoint for the ta and full modes");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint or a detection file");
  std::string data_dir, checkpoint, detections;
  eval->add_option("--data", data_dir, "Featurized evaluation directory")->required();
  auto* ck = eval->add_option("--checkpoint", checkpoint, "Model checkpoint");
  auto* det = eval->add_option("--detections", detections, "Detection TSV to score");
  ck->excludes(det);
  eval->add_option("--out", out_dir, "Report directory")->required();

  auto* dump = app.add_subcommand("dump-attention", "Export attention weights of one clip");
  std::string clip;
  dump->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  dump->add_option("--clip", clip, ".fbnk features or a .wav clip")->required();
  dump->add_option("--stats", stats, "Normalization statistics (for .wav clips)");
  dump->add_option("--out", out_dir, "Output directory")->required();

  auto* show = app.add_subcommand("config", "Print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(TFSED_ERR_CONFIG, e.what());
  }

  try {
    tfsed_config* raw = nullptr;
    ok(tfsed_config_create(&raw));
    ConfigPtr cfg(raw);
    if (!config_path.empty()) ok(tfsed_config_load(cfg.get(), config_path.c_str()));
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Failure{TFSED_ERR_CONFIG, "--set expects key=value, got '" + kv + "'"};
      ok(tfsed_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    if (*seed_opt) ok(tfsed_config_set(cfg.get(), "seed", std::to_string(seed).c_str()));
    if (!class_name.empty()) ok(tfsed_config_set(cfg.get(), "class", class_name.c_str()));
    if (*clips_opt) ok(tfsed_config_set(cfg.get(), "synth.clips", clips.c_str()));
    if (*duration_opt) ok(tfsed_config_set(cfg.get(), "synth.duration_s", duration.c_str()));
    if (*presence_opt) ok(tfsed_config_set(cfg.get(), "synth.presence_prob", presence.c_str()));
    ok(tfsed_config_validate(cfg.get()));

    if (synth->parsed()) {
      ok(tfsed_synth(cfg.get(), out_dir.c_str(), print_line, nullptr));
    } else if (featurize->parsed()) {
      ok(tfsed_featurize(cfg.get(), wav_dir.c_str(), out_dir.c_str(), opt(stats), print_line, nullptr));
    } else if (train->parsed()) {
      ok(tfsed_train(cfg.get(), mode.c_str(), train_dir.c_str(), opt(val_dir), out_dir.c_str(),
                     opt(init), print_line, nullptr));
    } else if (eval->parsed()) {
      if (checkpoint.empty() == detections.empty())
        throw Failure{TFSED_ERR_CONFIG, "eval needs --checkpoint or --detections"};
      ok(tfsed_eval(cfg.get(), data_dir.c_str(), opt(checkpoint), opt(detections), out_dir.c_str(),
                    print_line, nullptr));
    } else if (dump->parsed()) {
      ok(tfsed_dump_attention(cfg.get(), checkpoint.c_str(), clip.c_str(), opt(stats),
                              out_dir.c_str(), print_line, nullptr));
    } else if (show->parsed()) {
      std::size_t len = 0;
      tfsed_config_serialize(cfg.get(), nullptr, 0, &len);
      std::string text(len, '\0');
      ok(tfsed_config_serialize(cfg.get(), text.data(), text.size(), &len));
      std::fputs(text.c_str(), stdout);
    }
  } catch (const Failure& f) {
    return report(f.status, f.message);
  }
  return 0;
}
