// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include "tfsed/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "binary_io.hpp"
#include "tfsed/annotations.hpp"
#include "tfsed/error.hpp"
#include "tfsed/fbank.hpp"
#include "tfsed/wav.hpp"

namespace tfsed::cmd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kAnnotations = "annotations.tsv";
constexpr const char* kStatsFile = "norm_stats.bin";

void emit(const Log& log, const std::string& line) {
  if (log) log(line);
}

// Forwards complete lines written to an ostream to a Log callback.
class LogBuf : public std::stringbuf {
 public:
  explicit LogBuf(const Log& log) : log_(log) {}
  ~LogBuf() override { flush_lines(true); }

 protected:
  int sync() override {
    flush_lines(false);
    return 0;
  }

 private:
  void flush_lines(bool all) {
    std::string s = str();
    std::size_t start = 0, nl;
    while ((nl = s.find('\n', start)) != std::string::npos) {
      emit(log_, s.substr(start, nl - start));
      start = nl + 1;
    }
    if (all && start < s.size()) {
      emit(log_, s.substr(start));
      start = s.size();
    }
    str(s.substr(start));
  }
  const Log& log_;
};

std::vector<fs::path> list_files(const fs::path& dir, std::string_view ext) {
  check(fs::is_directory(dir), ErrorCode::kIo, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

json hashes(const std::vector<fs::path>& files, const fs::path& relative_to) {
  json out = json::object();
  for (const auto& f : files) {
    const auto key = relative_to.empty() ? f.generic_string()
                                         : fs::relative(f, relative_to).generic_string();
    out[key] = hex64(fnv1a64_file(f));
  }
  return out;
}

void write_manifest(const fs::path& out_dir, const std::string& command, const RunConfig& cfg,
                    json inputs, const std::vector<fs::path>& outputs, json extra = json::object()) {
  json m;
  m["command"] = command;
  m["config"] = cfg.serialize();
  m["config_hash"] = hex64(cfg.hash());
  m["seed"] = cfg.seed;
  m["inputs"] = std::move(inputs);
  m["outputs"] = hashes(outputs, out_dir);
  for (auto& [k, v] : extra.items()) m[k] = v;
  io::write_text(out_dir / "manifest.json", m.dump(2) + "\n");
}

template <typename F>
void parallel_for(std::size_t n, F&& body) {
  const std::size_t workers = std::max<std::size_t>(
      1, std::min<std::size_t>(n, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) body(i);
    });
  for (auto& t : pool) t.join();
}

RunConfig seeded(RunConfig cfg) {
  cfg.synth.master_seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------

SynthReport synth(const RunConfig& config, const fs::path& out_dir, const Log& log) {
  const RunConfig cfg = seeded(config);
  cfg.synth.validate();
  const auto summary = synth::synthesize_dataset(cfg.synth, out_dir);
  SynthReport r{summary.clips, summary.events};
  char buf[160];
  std::snprintf(buf, sizeof buf, "synth: %zu clips, %zu events, event rate %.3f", r.clips,
                r.events, r.clips ? double(r.events) / double(r.clips) : 0.0);
  emit(log, buf);
  auto outputs = summary.wav_files;
  outputs.push_back(summary.annotations);
  write_manifest(out_dir, "synth", cfg, json::object(), outputs,
                 {{"clips", r.clips}, {"events", r.events}});
  return r;
}

// ---------------------------------------------------------------------------

FeaturizeReport featurize(const RunConfig& config, const fs::path& wav_dir, const fs::path& out_dir,
                          const std::optional<fs::path>& stats_path, const Log& log) {
  const RunConfig cfg = seeded(config);
  const auto wavs = list_files(wav_dir, ".wav");
  check(!wavs.empty(), ErrorCode::kInput, "no .wav files in " + wav_dir.string());
  if (stats_path)
    check(fs::exists(*stats_path), ErrorCode::kIo, "statistics file not found: " + stats_path->string());

  std::vector<std::optional<fbank::FeatureMatrix>> feats(wavs.size());
  std::vector<std::string> errors(wavs.size());
  parallel_for(wavs.size(), [&](std::size_t i) {
    try {
      const auto audio = read_wav(wavs[i]);
      feats[i] = fbank::fbank_extract(audio.samples, audio.sample_rate);
    } catch (const Error& e) {
      errors[i] = std::string(error_category(e.code())) + ": " + e.what();
    } catch (const std::exception& e) {
      errors[i] = std::string("internal: ") + e.what();
    }
  });

  FeaturizeReport report;
  std::vector<fbank::FeatureMatrix> ok;
  for (std::size_t i = 0; i < wavs.size(); ++i) {
    if (feats[i]) {
      ok.push_back(*feats[i]);
    } else {
      report.failures.push_back(wavs[i].filename().string() + ": " + errors[i]);
      emit(log, "featurize: skipped " + report.failures.back());
    }
  }
  check(!ok.empty(), ErrorCode::kInput, "featurize: every input file failed");

  fs::create_directories(out_dir);
  fbank::NormStats stats;
  std::vector<fs::path> outputs;
  json inputs = hashes(wavs, {});
  if (stats_path) {
    stats = fbank::read_norm_stats(*stats_path);
    report.stats = *stats_path;
    inputs[stats_path->generic_string()] = hex64(fnv1a64_file(*stats_path));
  } else {
    stats = fbank::fit_norm_stats(ok);
    report.stats = out_dir / kStatsFile;
    fbank::write_norm_stats(report.stats, stats);
    outputs.push_back(report.stats);
  }

  for (std::size_t i = 0; i < wavs.size(); ++i) {
    if (!feats[i]) continue;
    const auto path = out_dir / (wavs[i].stem().string() + ".fbnk");
    fbank::write_fbnk(path, fbank::apply_norm(*feats[i], stats));
    outputs.push_back(path);
    ++report.files;
  }
  if (fs::exists(wav_dir / kAnnotations)) {
    io::write_text(out_dir / kAnnotations, io::read_text(wav_dir / kAnnotations));
    outputs.push_back(out_dir / kAnnotations);
  }
  emit(log, "featurize: " + std::to_string(report.files) + " files, " +
                std::to_string(report.failures.size()) + " failed, stats " + report.stats.string());
  write_manifest(out_dir, "featurize", cfg, inputs, outputs,
                 {{"stats_hash", hex64(fnv1a64_file(report.stats))},
                  {"stats_fitted", !stats_path.has_value()},
                  {"failures", report.failures}});
  if (!report.failures.empty()) {
    std::string msg = std::to_string(report.failures.size()) + " of " +
                      std::to_string(wavs.size()) + " files failed:";
    for (const auto& f : report.failures) msg += " [" + f + "]";
    fail(ErrorCode::kInput, msg);
  }
  return report;
}

// ---------------------------------------------------------------------------

TrainMode train_mode_from_name(std::string_view name) {
  if (name == "baseline") return TrainMode::kBaseline;
  if (name == "ta") return TrainMode::kTemporal;
  if (name == "full") return TrainMode::kFull;
  if (name == "pipeline") return TrainMode::kPipeline;
  fail(ErrorCode::kConfig,
       "unknown train mode '" + std::string(name) + "' (baseline, ta, full, pipeline)");
}

std::string_view train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kBaseline: return "baseline";
    case TrainMode::kTemporal: return "ta";
    case TrainMode::kFull: return "full";
    case TrainMode::kPipeline: return "pipeline";
  }
  return "?";
}

TrainReport train(const RunConfig& config, const TrainRequest& req, const Log& log) {
  RunConfig cfg = seeded(config);
  cfg.validate();
  check(!(req.init && (req.mode == TrainMode::kBaseline || req.mode == TrainMode::kPipeline)),
        ErrorCode::kConfig, "--init applies to the ta and full modes only");
  const auto train_set = train::load_dataset(req.train_dir, cfg.class_name);
  std::optional<train::Dataset> val_set;
  if (req.val_dir) val_set = train::load_dataset(*req.val_dir, cfg.class_name);
  const train::Dataset* val = val_set ? &*val_set : nullptr;

  fs::create_directories(req.out_dir);
  LogBuf buf(log);
  std::ostream out(&buf);
  auto tcfg = cfg.train;
  tcfg.checkpoint_dir = req.out_dir;
  tcfg.log = &out;

  TrainReport report;
  std::vector<fs::path> outputs;
  auto note = [&](const std::string& tag, const train::TrainResult& r) {
    for (const char* suffix : {"_final.tfat", "_best.tfat", "_loss.csv"})
      outputs.push_back(req.out_dir / (tag + suffix));
    report.checkpoints.push_back(req.out_dir / (tag + "_final.tfat"));
    report.checkpoints.push_back(req.out_dir / (tag + "_best.tfat"));
    report.final_loss = r.curve.back().mean_loss;
    report.best_val_er.reset();
    for (const auto& e : r.curve)
      if (e.val_er && (!report.best_val_er || *e.val_er < *report.best_val_er))
        report.best_val_er = e.val_er;
  };

  auto attention_model = [&](bool temporal, bool frequential, std::uint64_t stream) {
    auto mc = cfg.model;
    mc.use_temporal_attention = temporal;
    mc.use_frequential_attention = frequential;
    if (req.init) {
      const auto base = model::load_checkpoint(*req.init);
      return model::adopt_pretrained(base, mc, derive_seed(cfg.seed, stream));
    }
    return model::Model<float>(mc, derive_seed(cfg.seed, stream));
  };

  json inputs = hashes(list_files(req.train_dir, ".fbnk"), {});
  if (req.val_dir) inputs.update(hashes(list_files(*req.val_dir, ".fbnk"), {}));
  if (req.init) inputs[req.init->generic_string()] = hex64(fnv1a64_file(*req.init));

  switch (req.mode) {
    case TrainMode::kBaseline: {
      note("baseline", train::pretrain_baseline(train_set, val, cfg.model, tcfg));
      break;
    }
    case TrainMode::kTemporal: {
      auto r = train::train_model(attention_model(true, false, 0x7a), train_set, val, tcfg,
                                  tcfg.main_epochs, "ta");
      note("ta", r);
      break;
    }
    case TrainMode::kFull: {
      auto r = train::train_model(attention_model(true, true, 0xf011), train_set, val, tcfg,
                                  tcfg.main_epochs, "full");
      note("full", r);
      break;
    }
    case TrainMode::kPipeline: {
      auto base = train::pretrain_baseline(train_set, val, cfg.model, tcfg);
      note("baseline", base);
      note("full", train::train_full(train_set, val, base.final_model, cfg.model, tcfg));
      break;
    }
  }
  out.flush();
  json extra = {{"mode", std::string(train_mode_name(req.mode))}, {"final_loss", report.final_loss}};
  if (report.best_val_er) extra["best_val_er"] = *report.best_val_er;
  write_manifest(req.out_dir, "train", cfg, inputs, outputs, extra);
  return report;
}

// ---------------------------------------------------------------------------

post::MetricsReport eval(const RunConfig& config, const EvalRequest& req, const Log& log) {
  const RunConfig cfg = seeded(config);
  check(req.checkpoint.has_value() != req.detections.has_value(), ErrorCode::kConfig,
        "eval needs exactly one of a checkpoint or a detection file");
  const auto data = train::load_dataset(req.data_dir, cfg.class_name);
  json inputs = hashes(list_files(req.data_dir, ".fbnk"), {});
  inputs[(req.data_dir / kAnnotations).generic_string()] =
      hex64(fnv1a64_file(req.data_dir / kAnnotations));

  std::vector<post::Event> detections;
  post::MetricsReport report;
  if (req.checkpoint) {
    inputs[req.checkpoint->generic_string()] = hex64(fnv1a64_file(*req.checkpoint));
    auto m = model::load_checkpoint(*req.checkpoint);
    const auto ev = train::evaluate(m, data, cfg.train.batch_size);
    detections = ev.detected_events(cfg.class_name);
    report = ev.report;
  } else {
    inputs[req.detections->generic_string()] = hex64(fnv1a64_file(*req.detections));
    for (const auto& row : read_annotations(*req.detections))
      if (row.class_name == cfg.class_name)
        detections.push_back({row.filename, row.class_name, row.onset_s, row.offset_s});
    std::vector<post::Event> refs;
    for (const auto& ex : data.examples)
      if (ex.reference) refs.push_back(*ex.reference);
    const std::vector<std::string> classes{cfg.class_name};
    report = post::evaluate_events(refs, detections, classes);
  }

  fs::create_directories(req.out_dir);
  const auto csv = req.out_dir / "metrics.csv";
  const auto table = req.out_dir / "metrics.txt";
  const auto dets = req.out_dir / "detections.tsv";
  io::write_text(csv, post::metrics_csv(report));
  io::write_text(table, post::metrics_table(report));
  write_annotations(dets, post::rows_from_events(detections));
  std::istringstream lines(post::metrics_table(report));
  for (std::string line; std::getline(lines, line);) emit(log, line);
  write_manifest(req.out_dir, "eval", cfg, inputs, {csv, table, dets});
  return report;
}

// ---------------------------------------------------------------------------

std::string encode_pgm(std::size_t cols, std::size_t rows, const std::vector<std::uint8_t>& pixels) {
  check(pixels.size() == cols * rows, ErrorCode::kDimension, "pgm: pixel count mismatch");
  std::string out = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  out.append(pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> spectrogram_pixels(const Tensor<float>& values, double lo, double hi) {
  check(values.rank() == 2, ErrorCode::kDimension, "image: expected [frames x bins]");
  const std::size_t frames = values.dim(0), bins = values.dim(1);
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<std::uint8_t> px(frames * bins);
  for (std::size_t b = 0; b < bins; ++b)
    for (std::size_t t = 0; t < frames; ++t) {
      const double q = std::clamp((values[t * bins + b] - lo) / span, 0.0, 1.0);
      px[(bins - 1 - b) * frames + t] = static_cast<std::uint8_t>(std::lround(q * 255.0));
    }
  return px;
}

std::vector<std::uint8_t> attention_pixels(const Tensor<float>& weights) {
  check(weights.rank() == 2, ErrorCode::kDimension, "image: expected [frames x bins]");
  const std::size_t frames = weights.dim(0), bins = weights.dim(1);
  Tensor<float> scaled({frames, bins});
  for (std::size_t t = 0; t < frames; ++t) {
    double sum = 0.0;
    for (std::size_t b = 0; b < bins; ++b) sum += weights[t * bins + b];
    const double mean = sum / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b)
      scaled[t * bins + b] =
          mean > 0.0 ? static_cast<float>(weights[t * bins + b] / (2.0 * mean)) : 0.0f;
  }
  return spectrogram_pixels(scaled, 0.0, 1.0);
}

AttentionDump attention_dump(model::Model<float>& m, const std::string& clip_id,
                             const Tensor<float>& features) {
  ad::NoGradGuard guard;
  const auto tr = m.forward(model::batch_of_one<float>(features), ad::Mode::kEval);
  AttentionDump d;
  d.clip_id = clip_id;
  const auto a = tr.temporal_weights.data();
  const auto y = tr.probabilities.data();
  d.temporal.assign(a.begin(), a.end());
  d.probabilities.assign(y.begin(), y.end());
  const Shape fshape{features.dim(0), features.dim(1)};
  auto copy = [&](const ad::Var<float>& v) {
    const auto s = v.data();
    return Tensor<float>(fshape, std::vector<float>(s.begin(), s.end()));
  };
  d.frequential = copy(tr.frequential_weights);
  d.features = features;
  d.weighted_features = copy(tr.weighted_features);
  return d;
}

AttentionDump dump_attention(const RunConfig& config, const DumpRequest& req, const Log& log) {
  const RunConfig cfg = seeded(config);
  json inputs = json::object();
  inputs[req.checkpoint.generic_string()] = hex64(fnv1a64_file(req.checkpoint));
  inputs[req.clip.generic_string()] = hex64(fnv1a64_file(req.clip));
  Tensor<float> features;
  std::string clip_id = req.clip.filename().string();
  if (req.clip.extension() == ".fbnk") {
    features = fbank::read_fbnk(req.clip).values;
    clip_id = req.clip.stem().string() + ".wav";
  } else {
    check(req.stats.has_value(), ErrorCode::kConfig,
          "dump-attention on a .wav clip needs --stats (normalization statistics)");
    inputs[req.stats->generic_string()] = hex64(fnv1a64_file(*req.stats));
    const auto audio = read_wav(req.clip);
    features = fbank::apply_norm(fbank::fbank_extract(audio.samples, audio.sample_rate),
                                 fbank::read_norm_stats(*req.stats))
                   .values;
  }
  auto m = model::load_checkpoint(req.checkpoint);
  auto d = attention_dump(m, clip_id, features);

  fs::create_directories(req.out_dir);
  std::string csv = "segment_index,time_s,weight,probability\n";
  char line[96];
  for (std::size_t i = 0; i < d.temporal.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.2f,%.6f,%.6f\n", i, post::kSegmentSeconds * double(i),
                  d.temporal[i], d.probabilities[i]);
    csv += line;
  }
  const std::size_t frames = features.dim(0), bins = features.dim(1);
  float lo = features[0], hi = features[0];
  for (float v : features.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  float wlo = d.weighted_features[0], whi = d.weighted_features[0];
  for (float v : d.weighted_features.data()) wlo = std::min(wlo, v), whi = std::max(whi, v);

  const std::vector<fs::path> outputs{req.out_dir / "a.csv", req.out_dir / "M.pgm",
                                      req.out_dir / "fbank.pgm", req.out_dir / "weighted_fbank.pgm"};
  io::write_text(outputs[0], csv);
  io::write_text(outputs[1], encode_pgm(frames, bins, attention_pixels(d.frequential)));
  io::write_text(outputs[2], encode_pgm(frames, bins, spectrogram_pixels(features, lo, hi)));
  io::write_text(outputs[3], encode_pgm(frames, bins, spectrogram_pixels(d.weighted_features, wlo, whi)));
  emit(log, "dump-attention: " + clip_id + ", " + std::to_string(d.temporal.size()) +
                " segments, " + std::to_string(frames) + " frames");
  write_manifest(req.out_dir, "dump-attention", cfg, inputs, outputs, {{"clip_id", clip_id}});
  return d;
}

}  // namespace tfsed::cmd
