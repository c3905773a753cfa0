// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "oracles.hpp"
#include "tfsed/annotations.hpp"
#include "tfsed/error.hpp"
#include "tfsed/trainer.hpp"

using namespace tfsed;
using namespace tfsed::train;
using ad::Var;

namespace {

constexpr std::size_t kFrames = 100;  // 2 s, 25 segments

model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.conv_channels = {4, 4, 8, 8};
  c.gru_units = 8;
  c.ta_units = 8;
  return c;
}

// Event frames get a bright band across mels 40-80; background is noise.
Dataset toy_dataset(std::size_t clips, std::uint64_t seed, bool with_events = true) {
  Rng rng(seed);
  Dataset ds;
  ds.class_name = "babycry";
  for (std::size_t c = 0; c < clips; ++c) {
    Tensor<float> f({kFrames, 128});
    for (auto& v : f.data()) v = static_cast<float>(rng.normal(0.0, 0.5));
    std::optional<post::Event> ref;
    if (with_events && c % 4 != 3) {
      const double onset = 0.08 * static_cast<double>(rng.below(12));
      const double offset = onset + 0.08 * static_cast<double>(4 + rng.below(8));
      ref = post::Event{"", "babycry", onset, offset};
      for (std::size_t t = static_cast<std::size_t>(onset / 0.02);
           t < static_cast<std::size_t>(offset / 0.02); ++t)
        for (std::size_t m = 40; m < 80; ++m) f[t * 128 + m] += 2.0f;
    }
    char name[32];
    std::snprintf(name, sizeof name, "babycry_%04zu.wav", c);
    ds.examples.push_back(make_example(name, std::move(f), ref, "babycry"));
  }
  return ds;
}

TrainConfig quick_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.learning_rate = 3e-3;
  cfg.seed = seed;
  return cfg;
}

double brute_bce(std::span<const double> y, std::span<const double> l, double w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::min(std::max(y[i], 1e-7), 1.0 - 1e-7);
    acc -= w * l[i] * std::log(p) + (1.0 - l[i]) * std::log(1.0 - p);
  }
  return acc / static_cast<double>(y.size());
}

}  // namespace

TEST_CASE("weighted cross-entropy examples") {
  const auto half = Var<double>::constant(Tensor<double>({2, 3}, 0.5));
  CHECK(weighted_bce(half, Tensor<double>({2, 3}, 1.0), 10.0).value()[0] ==
        doctest::Approx(10.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(weighted_bce(half, Tensor<double>({2, 3}, 0.0), 10.0).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor<double> labels({1, 4});
  labels[1] = labels[2] = 1.0;
  Tensor<double> perfect = labels;
  CHECK(weighted_bce(Var<double>::constant(perfect), labels, 10.0).value()[0] < 1e-5);

  CHECK_THROWS_AS(weighted_bce(half, Tensor<double>({3, 2}, 0.0), 10.0), Error);
  CHECK_THROWS_AS(weighted_bce(half, Tensor<double>({2, 3}, 0.0), 0.0), Error);
}

TEST_CASE("weighted cross-entropy matches a direct sum and its gradient") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto y = testing::random_tensor<double>({3, 7}, rng, 0.01, 0.99);
    Tensor<double> l({3, 7});
    for (auto& v : l.data()) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    const double w = trial % 2 ? 1.0 : rng.uniform(0.5, 20.0);
    const auto got = weighted_bce(Var<double>::constant(y), l, w).value()[0];
    CHECK(got == doctest::Approx(brute_bce(y.data(), l.data(), w)).epsilon(1e-12));
    if (w == 1.0) CHECK(std::abs(got - brute_bce(y.data(), l.data(), 1.0)) < 1e-7);

    const auto r = testing::grad_check(
        [&](const std::vector<Var<double>>& in) { return weighted_bce(in[0], l, w); }, {y}, 1e-6,
        trial, 1e-6);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("saturated outputs still receive a gradient") {
  auto y = Var<double>::parameter(Tensor<double>({1, 2}, 0.0));
  Tensor<double> l({1, 2});
  l[0] = 1.0;
  ad::backward(weighted_bce(y, l, 10.0));
  CHECK(y.grad()[0] < -1e6);
  CHECK(std::isfinite(y.grad()[1]));
}

TEST_CASE("segment labels against fine-grained overlap") {
  const auto l = segment_labels(2.0, 4.0, 125);
  for (std::size_t i = 0; i < 125; ++i) CHECK(l[i] == ((i >= 25 && i < 50) ? 1.0f : 0.0f));

  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const double onset = rng.uniform(0.0, 9.0);
    const double offset = std::min(10.0, onset + rng.uniform(0.01, 4.0));
    const auto got = segment_labels(onset, offset, 125);
    for (std::size_t i = 0; i < 125; ++i) {
      // Count 1 ms ticks of segment i inside the event.
      std::size_t inside = 0;
      for (std::size_t k = 0; k < 80; ++k) {
        const double t = 0.08 * double(i) + (double(k) + 0.5) * 0.001;
        inside += t >= onset && t < offset;
      }
      if (inside >= 41) CHECK(got[i] == 1.0f);
      if (inside <= 39) CHECK(got[i] == 0.0f);
    }
  }
  CHECK_THROWS_AS(segment_labels(3.0, 2.0, 10), Error);
}

TEST_CASE("examples only keep references of the target class") {
  const post::Event other{"x.wav", "gunshot", 1.0, 2.0};
  const auto ex = make_example("x.wav", Tensor<float>({kFrames, 128}), other, "babycry");
  CHECK(!ex.reference);
  CHECK(ex.labels.size() == 25);
  CHECK(std::all_of(ex.labels.begin(), ex.labels.end(), [](float v) { return v == 0.0f; }));
  CHECK_THROWS_AS(make_example("y.wav", Tensor<float>({kFrames, 64}), std::nullopt, "babycry"),
                  Error);
}

TEST_CASE("training lowers the loss and is deterministic") {
  const auto data = toy_dataset(8, 1);
  const auto cfg = quick_config(5);
  auto a = train_model(model::Model<float>(tiny_config(), 2), data, nullptr, cfg, 10, "t");
  auto b = train_model(model::Model<float>(tiny_config(), 2), data, nullptr, cfg, 10, "t");
  REQUIRE(a.curve.size() == 10);
  CHECK(a.curve.back().mean_loss < a.curve.front().mean_loss);
  for (std::size_t e = 0; e < 10; ++e) CHECK(a.curve[e].mean_loss == b.curve[e].mean_loss);
  const auto pa = a.final_model.params();
  const auto pb = b.final_model.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i].var.value().storage() == pb[i].var.value().storage());

  // Input order does not matter: batches follow clip ids.
  auto shuffled = data;
  std::reverse(shuffled.examples.begin(), shuffled.examples.end());
  auto c = train_model(model::Model<float>(tiny_config(), 2), shuffled, nullptr, cfg, 10, "t");
  for (std::size_t e = 0; e < 10; ++e) CHECK(c.curve[e].mean_loss == a.curve[e].mean_loss);
}

TEST_CASE("an all-background corpus drives probabilities below 0.5") {
  const auto data = toy_dataset(8, 3, false);
  auto cfg = quick_config(6);
  auto r = train_model(model::Model<float>(tiny_config(), 4), data, nullptr, cfg, 8, "bg");
  for (const auto& y : predict(r.final_model, data))
    for (float v : y) CHECK(v < 0.5f);
}

TEST_CASE("validation picks the best epoch and checkpoints are written") {
  const auto dir = std::filesystem::temp_directory_path() / "tfsed_trainer_test";
  std::filesystem::remove_all(dir);
  const auto train = toy_dataset(8, 11);
  const auto val = toy_dataset(4, 12);
  auto cfg = quick_config(7);
  cfg.checkpoint_dir = dir;
  cfg.pretrain_epochs = 3;
  cfg.main_epochs = 2;
  std::ostringstream log;
  cfg.log = &log;
  auto base = pretrain_baseline(train, &val, tiny_config(), cfg);
  REQUIRE(base.curve.size() == 3);
  CHECK(!base.final_model.config().use_temporal_attention);
  std::size_t best = 0;
  for (std::size_t e = 0; e < 3; ++e) {
    REQUIRE(base.curve[e].val_er);
    if (*base.curve[e].val_er < *base.curve[best].val_er) best = e;
  }
  const auto best_er = evaluate(base.best_model, val).report.average.metrics->er;
  CHECK(best_er == doctest::Approx(*base.curve[best].val_er));
  for (const char* f : {"baseline_final.tfat", "baseline_best.tfat", "baseline_loss.csv"})
    CHECK(std::filesystem::exists(dir / f));
  const auto csv = loss_curve_csv(base.curve);
  CHECK(csv.rfind("epoch,mean_loss,val_er\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(log.str().find("[baseline] epoch 3/3") != std::string::npos);

  auto full = train_full(train, &val, base.final_model, tiny_config(), cfg);
  CHECK(full.curve.size() == 2);
  CHECK(full.final_model.config().use_temporal_attention);
  CHECK(std::filesystem::exists(dir / "full_final.tfat"));
  const auto reloaded = model::load_checkpoint(dir / "full_final.tfat");
  CHECK(reloaded.config() == full.final_model.config());
  std::filesystem::remove_all(dir);
}

TEST_CASE("training stops early at the target validation ER") {
  const auto train = toy_dataset(8, 11);
  const auto val = toy_dataset(4, 12);
  auto cfg = quick_config(7);
  cfg.stop_val_er = 1e9;  // any defined ER qualifies
  auto r = train_model(model::Model<float>(tiny_config(), 2), train, &val, cfg, 5, "t");
  CHECK(r.curve.size() == 1);
  // Without validation there is nothing to stop on.
  r = train_model(model::Model<float>(tiny_config(), 2), train, nullptr, cfg, 3, "t");
  CHECK(r.curve.size() == 3);
}

TEST_CASE("attention fine-tuning descends") {
  const auto data = toy_dataset(8, 31);
  auto cfg = quick_config(9);
  cfg.main_epochs = 10;
  auto base = train_model(model::Model<float>(tiny_config(), 10), data, nullptr, cfg, 3, "b");
  auto full = train_full(data, nullptr, base.final_model, tiny_config(), cfg);
  REQUIRE(full.curve.size() == 10);
  double first = 0.0, last = 0.0;
  for (std::size_t e = 0; e < 5; ++e) {
    first += full.curve[e].mean_loss;
    last += full.curve[e + 5].mean_loss;
  }
  CHECK(last < first);
}

TEST_CASE("evaluation of fixed predictors") {
  const auto data = toy_dataset(8, 21);
  std::size_t n_ref = 0;
  std::vector<std::vector<float>> perfect, zeros, ones;
  for (const auto& ex : data.examples) {
    n_ref += ex.reference.has_value();
    perfect.push_back(ex.labels);
    zeros.emplace_back(ex.labels.size(), 0.0f);
    ones.emplace_back(ex.labels.size(), 1.0f);
  }
  REQUIRE(n_ref == 6);

  const auto p = evaluate_probabilities(data, perfect);
  CHECK(p.report.average.metrics->er == 0.0);
  CHECK(p.report.average.metrics->f_score == 1.0);

  const auto z = evaluate_probabilities(data, zeros);
  CHECK(z.report.average.metrics->er == 1.0);
  CHECK(z.report.average.metrics->f_score == 0.0);
  CHECK(z.detected_events("babycry").empty());

  // Every clip yields [0, 2 s): hits only where the reference onset is
  // within the collar of 0.
  std::size_t hits = 0;
  for (const auto& ex : data.examples)
    if (ex.reference && ex.reference->onset_s <= 0.5 + 1e-9) ++hits;
  const auto o = evaluate_probabilities(data, ones);
  const double expect = double((n_ref - hits) + (8 - hits)) / double(n_ref);
  CHECK(o.report.average.metrics->er == doctest::Approx(expect));

  CHECK_THROWS_AS(evaluate_probabilities(data, std::vector<std::vector<float>>(3)), Error);
}

TEST_CASE("datasets load from featurized directories") {
  const auto dir = std::filesystem::temp_directory_path() / "tfsed_dataset_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  Rng rng(1);
  for (const char* stem : {"babycry_0001", "babycry_0000", "gunshot_0000"}) {
    fbank::FeatureMatrix f{testing::random_tensor<float>({50, 128}, rng)};
    fbank::write_fbnk(dir / (std::string(stem) + ".fbnk"), f);
  }
  write_annotations(dir / "annotations.tsv", {{"babycry_0001.wav", 0.24, 0.72, "babycry"},
                                              {"gunshot_0000.wav", 0.1, 0.3, "gunshot"}});
  const auto ds = load_dataset(dir, "babycry");
  REQUIRE(ds.examples.size() == 2);
  CHECK(ds.examples[0].clip_id == "babycry_0000.wav");
  CHECK(!ds.examples[0].reference);
  REQUIRE(ds.examples[1].reference);
  CHECK(ds.examples[1].labels.size() == 13);
  CHECK(ds.examples[1].labels[3] == 1.0f);
  CHECK(ds.examples[1].labels[8] == 1.0f);
  CHECK(ds.examples[1].labels[9] == 0.0f);
  CHECK_THROWS_AS(load_dataset(dir, "glassbreak"), Error);
  CHECK_THROWS_AS(load_dataset(dir / "missing", "babycry"), Error);
  std::filesystem::remove_all(dir);
}
