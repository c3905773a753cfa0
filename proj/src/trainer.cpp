// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include "tfsed/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "autodiff_internal.hpp"
#include "binary_io.hpp"
#include "tfsed/annotations.hpp"
#include "tfsed/error.hpp"

namespace tfsed::train {

using ad::Var;
using model::Model;

namespace {

constexpr double kClampLo = 1e-7;
constexpr double kClampHi = 1.0 - 1e-7;

}  // namespace

template <typename T>
Var<T> weighted_bce(const Var<T>& y, const Tensor<T>& labels, double positive_weight) {
  check(y.shape() == labels.shape(), ErrorCode::kDimension,
        "weighted_bce: probabilities " + shape_string(y.shape()) + " vs labels " +
            shape_string(labels.shape()));
  check(positive_weight > 0.0 && std::isfinite(positive_weight), ErrorCode::kParameter,
        "weighted_bce: positive weight must be > 0");
  const std::size_t n = y.size();
  auto yv = y.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(static_cast<double>(yv[i]), kClampLo, kClampHi);
    const double l = labels[i];
    acc += positive_weight * l * std::log(p) + (1.0 - l) * std::log1p(-p);
  }
  Tensor<T> out({1}, static_cast<T>(-acc / static_cast<double>(n)));
  return ad::detail::record<T>(std::move(out), {y}, [labels, positive_weight, n](ad::Node<T>& self) {
    const double g = self.value.grad()[0];
    auto gx = ad::detail::parent_grad(self, 0);
    const auto& yv = ad::detail::parent_value(self, 0);
    // Evaluated at the clamped probability so saturated outputs still
    // receive a restoring gradient.
    for (std::size_t i = 0; i < n; ++i) {
      const double p = std::clamp(static_cast<double>(yv[i]), kClampLo, kClampHi);
      const double l = labels[i];
      gx[i] += static_cast<T>(-g * (positive_weight * l / p - (1.0 - l) / (1.0 - p)) /
                              static_cast<double>(n));
    }
  });
}

template Var<float> weighted_bce<float>(const Var<float>&, const Tensor<float>&, double);
template Var<double> weighted_bce<double>(const Var<double>&, const Tensor<double>&, double);

std::vector<float> segment_labels(double onset_s, double offset_s, std::size_t segments,
                                  double segment_s) {
  check(segment_s > 0.0, ErrorCode::kParameter, "segment_labels: segment length must be positive");
  check(onset_s <= offset_s, ErrorCode::kParameter, "segment_labels: onset after offset");
  std::vector<float> out(segments, 0.0f);
  for (std::size_t i = 0; i < segments; ++i) {
    const double lo = static_cast<double>(i) * segment_s, hi = lo + segment_s;
    const double overlap = std::min(hi, offset_s) - std::max(lo, onset_s);
    // The tolerance absorbs decimal rounding of onsets stored as text.
    if (overlap >= 0.5 * segment_s - 1e-9) out[i] = 1.0f;
  }
  return out;
}

Example make_example(std::string clip_id, Tensor<float> features,
                     const std::optional<post::Event>& reference, const std::string& class_name) {
  check(features.rank() == 2 && features.dim(1) == fbank::kNumMels, ErrorCode::kDimension,
        clip_id + ": features must be [T x 128]");
  Example ex;
  ex.clip_id = std::move(clip_id);
  const std::size_t segments = (features.dim(0) + 3) / 4;
  ex.features = std::move(features);
  ex.labels.assign(segments, 0.0f);
  if (reference && reference->class_name == class_name) {
    ex.reference = reference;
    ex.reference->clip_id = ex.clip_id;
    ex.labels = segment_labels(reference->onset_s, reference->offset_s, segments);
  }
  return ex;
}

Dataset load_dataset(const std::filesystem::path& feature_dir, const std::string& class_name) {
  check(std::filesystem::is_directory(feature_dir), ErrorCode::kIo,
        "feature directory not found: " + feature_dir.string());
  const auto ann_path = feature_dir / "annotations.tsv";
  check(std::filesystem::exists(ann_path), ErrorCode::kIo, "missing " + ann_path.string());
  std::map<std::string, post::Event> refs;
  for (const auto& row : read_annotations(ann_path)) {
    const bool fresh =
        refs.emplace(row.filename, post::Event{row.filename, row.class_name, row.onset_s, row.offset_s})
            .second;
    check(fresh, ErrorCode::kInput, ann_path.string() + ": duplicate clip " + row.filename);
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(feature_dir)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() == ".fbnk" && name.rfind(class_name + "_", 0) == 0)
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  check(!files.empty(), ErrorCode::kInput,
        "no " + class_name + "_*.fbnk files in " + feature_dir.string());
  Dataset ds;
  ds.class_name = class_name;
  for (const auto& f : files) {
    const std::string clip = f.stem().string() + ".wav";
    const auto it = refs.find(clip);
    std::optional<post::Event> ref;
    if (it != refs.end()) ref = it->second;
    ds.examples.push_back(make_example(clip, fbank::read_fbnk(f).values, ref, class_name));
  }
  return ds;
}

void TrainConfig::validate() const {
  check(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::kConfig,
        "train: learning rate must be positive");
  check(batch_size >= 1, ErrorCode::kConfig, "train: batch size must be at least 1");
  check(pretrain_epochs >= 1 && main_epochs >= 1, ErrorCode::kConfig,
        "train: epoch counts must be at least 1");
  check(positive_weight > 0.0 && std::isfinite(positive_weight), ErrorCode::kConfig,
        "train: positive weight must be > 0");
}

std::string loss_curve_csv(std::span<const EpochStats> curve) {
  std::string out = "epoch,mean_loss,val_er\n";
  char buf[96];
  for (const auto& e : curve) {
    if (e.val_er)
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f\n", e.epoch, e.mean_loss, *e.val_er);
    else
      std::snprintf(buf, sizeof buf, "%zu,%.9g,n/a\n", e.epoch, e.mean_loss);
    out += buf;
  }
  return out;
}

namespace {

Tensor<float> stack_labels(const Dataset& data, std::span<const std::size_t> idx) {
  const std::size_t t = data.examples[idx[0]].labels.size();
  Tensor<float> out({idx.size(), t});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& l = data.examples[idx[b]].labels;
    check(l.size() == t, ErrorCode::kDimension, "batch clips differ in length");
    std::copy(l.begin(), l.end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * t));
  }
  return out;
}

Var<float> batch_features(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<const Tensor<float>*> ptrs;
  for (auto i : idx) ptrs.push_back(&data.examples[i].features);
  return model::stack_batch<float>(ptrs);
}

std::string norm_report(const Model<float>& m) {
  std::string out;
  char buf[128];
  for (const auto& p : m.params()) {
    double s = 0.0;
    for (float v : p.var.data()) s += static_cast<double>(v) * v;
    std::snprintf(buf, sizeof buf, "  %-16s |w| = %.6g\n", p.name.c_str(), std::sqrt(s));
    out += buf;
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5ead0000ULL + epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

TrainResult train_model(Model<float> m, const Dataset& train, const Dataset* validation,
                        const TrainConfig& cfg, std::size_t epochs, const std::string& tag) {
  cfg.validate();
  check(!train.examples.empty(), ErrorCode::kInput, "train: empty training set");
  check(epochs >= 1, ErrorCode::kConfig, "train: epochs must be at least 1");
  // Examples are ordered by clip id so batches do not depend on file order.
  std::vector<std::size_t> by_id(train.examples.size());
  std::iota(by_id.begin(), by_id.end(), std::size_t{0});
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) {
    return train.examples[a].clip_id < train.examples[b].clip_id;
  });

  auto params = m.trainable();
  ad::AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  TrainResult result;
  std::optional<double> best_er;
  const bool to_disk = !cfg.checkpoint_dir.empty();

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(by_id.size(), cfg.seed, epoch);
    Rng dropout(derive_seed(cfg.seed, 0xd20b0000ULL + epoch));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      std::vector<std::size_t> idx;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        idx.push_back(by_id[order[k]]);
      ad::zero_grads(params);
      auto tr = m.forward(batch_features(train, idx), ad::Mode::kTrain, {std::nullopt, &dropout});
      auto loss = weighted_bce(tr.probabilities, stack_labels(train, idx), cfg.positive_weight);
      const double value = loss.value()[0];
      if (!std::isfinite(value))
        fail(ErrorCode::kNumeric, tag + ": non-finite loss at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(batch) + "\n" + norm_report(m));
      ad::backward(loss);
      ad::adam_step(params, adam);
      loss_sum += value * static_cast<double>(idx.size());
      seen += idx.size();
    }
    EpochStats st;
    st.epoch = epoch;
    st.mean_loss = loss_sum / static_cast<double>(seen);
    if (validation && !validation->examples.empty()) {
      const auto ev = evaluate(m, *validation, cfg.batch_size);
      if (ev.report.average.metrics) st.val_er = ev.report.average.metrics->er;
    }
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.curve.push_back(st);
    if (cfg.log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[%s] epoch %zu/%zu loss %.5f val_er %s (%.1f s)\n",
                    tag.c_str(), epoch, epochs, st.mean_loss,
                    st.val_er ? std::to_string(*st.val_er).c_str() : "n/a", st.seconds);
      *cfg.log << buf << std::flush;
    }
    // Best-by-validation; ties keep the earlier epoch.
    if (st.val_er && (!best_er || *st.val_er < *best_er)) {
      best_er = st.val_er;
      result.best_model = m.clone();
      if (to_disk) model::save_checkpoint(cfg.checkpoint_dir / (tag + "_best.tfat"), m);
    }
    if (cfg.stop_val_er && st.val_er && *st.val_er <= *cfg.stop_val_er) break;
  }
  if (!best_er) {
    result.best_model = m.clone();
    if (to_disk) model::save_checkpoint(cfg.checkpoint_dir / (tag + "_best.tfat"), m);
  }
  if (to_disk) {
    model::save_checkpoint(cfg.checkpoint_dir / (tag + "_final.tfat"), m);
    io::write_text(cfg.checkpoint_dir / (tag + "_loss.csv"), loss_curve_csv(result.curve));
  }
  result.final_model = std::move(m);
  return result;
}

TrainResult pretrain_baseline(const Dataset& train, const Dataset* validation,
                              const model::ModelConfig& model_cfg, const TrainConfig& cfg) {
  auto c = model_cfg;
  c.use_temporal_attention = false;
  c.use_frequential_attention = false;
  Model<float> m(c, derive_seed(cfg.seed, 0x1417));
  return train_model(std::move(m), train, validation, cfg, cfg.pretrain_epochs, "baseline");
}

TrainResult train_full(const Dataset& train, const Dataset* validation,
                       const Model<float>& baseline, const model::ModelConfig& model_cfg,
                       const TrainConfig& cfg) {
  auto m = model::adopt_pretrained(baseline, model_cfg, derive_seed(cfg.seed, 0xf011));
  return train_model(std::move(m), train, validation, cfg, cfg.main_epochs, "full");
}

std::vector<post::Event> Evaluation::detected_events(const std::string& class_name) const {
  std::vector<post::Event> out;
  for (const auto& d : detections)
    if (d.event) out.push_back({d.clip_id, class_name, d.event->onset_s, d.event->offset_s});
  return out;
}

std::vector<std::vector<float>> predict(Model<float>& m, const Dataset& data, std::size_t batch_size) {
  check(batch_size >= 1, ErrorCode::kParameter, "predict: batch size must be at least 1");
  ad::NoGradGuard guard;
  std::vector<std::vector<float>> out;
  std::size_t start = 0;
  while (start < data.examples.size()) {
    // Batches must share a length; split at length changes.
    std::vector<std::size_t> idx{start};
    std::size_t k = start + 1;
    for (; k < std::min(data.examples.size(), start + batch_size); ++k) {
      if (data.examples[k].features.shape() != data.examples[start].features.shape()) break;
      idx.push_back(k);
    }
    const auto tr = m.forward(batch_features(data, idx), ad::Mode::kEval);
    const std::size_t t = tr.probabilities.shape()[1];
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto y = tr.probabilities.data().subspan(b * t, t);
      out.emplace_back(y.begin(), y.end());
    }
    start = k;
  }
  return out;
}

Evaluation evaluate_probabilities(const Dataset& data, const std::vector<std::vector<float>>& probs) {
  check(probs.size() == data.examples.size(), ErrorCode::kDimension,
        "evaluate: one probability sequence per clip required");
  Evaluation ev;
  std::vector<post::Event> refs;
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const auto& ex = data.examples[i];
    ev.detections.push_back(post::decode(ex.clip_id, probs[i]));
    if (ex.reference) refs.push_back(*ex.reference);
  }
  const auto dets = ev.detected_events(data.class_name);
  const std::vector<std::string> classes{data.class_name};
  ev.report = post::evaluate_events(refs, dets, classes);
  return ev;
}

Evaluation evaluate(Model<float>& m, const Dataset& data, std::size_t batch_size) {
  return evaluate_probabilities(data, predict(m, data, batch_size));
}

}  // namespace tfsed::train
