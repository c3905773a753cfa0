// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include "tfsed/tfsed.h"

#include <cstring>
#include <new>
#include <optional>
#include <string>

#include "tfsed/commands.hpp"
#include "tfsed/error.hpp"
#include "tfsed/model.hpp"
#include "tfsed/run_config.hpp"

struct tfsed_config {
  tfsed::RunConfig value;
};

struct tfsed_model {
  tfsed::model::Model<float> value;
};

namespace {

thread_local std::string last_error;

template <typename F>
tfsed_status guarded(F&& body) noexcept {
  try {
    last_error.clear();
    body();
    return TFSED_OK;
  } catch (const tfsed::Error& e) {
    last_error = e.what();
    return static_cast<tfsed_status>(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown failure";
  }
  return TFSED_ERR_INTERNAL;
}

void require(const void* p, const char* what) {
  tfsed::check(p != nullptr, tfsed::ErrorCode::kParameter, std::string(what) + " is NULL");
}

std::optional<std::filesystem::path> opt_path(const char* p) {
  if (p == nullptr || *p == '\0') return std::nullopt;
  return std::filesystem::path(p);
}

void copy_out(const std::string& s, char* buffer, size_t capacity, size_t* length) {
  require(length, "length");
  *length = s.size() + 1;
  tfsed::check(buffer != nullptr && capacity >= s.size() + 1, tfsed::ErrorCode::kParameter,
               "buffer too small: need " + std::to_string(s.size() + 1) + " bytes");
  std::memcpy(buffer, s.c_str(), s.size() + 1);
}

tfsed::cmd::Log make_log(tfsed_log_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](std::string_view line) { fn(std::string(line).c_str(), user); };
}

}  // namespace

extern "C" {

const char* tfsed_version(void) { return "0.1.0"; }

const char* tfsed_status_name(tfsed_status status) {
  if (status == TFSED_OK) return "ok";
  if (status < TFSED_ERR_PARAMETER || status > TFSED_ERR_INTERNAL) return "internal";
  // Category names are string literals, so data() is NUL-terminated.
  return tfsed::error_category(static_cast<tfsed::ErrorCode>(status)).data();
}

const char* tfsed_last_error(void) { return last_error.c_str(); }

tfsed_status tfsed_config_create(tfsed_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new tfsed_config{};
  });
}

void tfsed_config_destroy(tfsed_config* config) { delete config; }

tfsed_status tfsed_config_load(tfsed_config* config, const char* path) {
  return guarded([&] {
    require(config, "config");
    require(path, "path");
    config->value = tfsed::load_run_config(path, config->value);
  });
}

tfsed_status tfsed_config_parse(tfsed_config* config, const char* text) {
  return guarded([&] {
    require(config, "config");
    require(text, "text");
    config->value = tfsed::parse_run_config(text, config->value);
  });
}

tfsed_status tfsed_config_set(tfsed_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    config->value.set(key, value);
  });
}

tfsed_status tfsed_config_get(const tfsed_config* config, const char* key, char* buffer,
                              size_t capacity, size_t* length) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    copy_out(config->value.get(key), buffer, capacity, length);
  });
}

tfsed_status tfsed_config_serialize(const tfsed_config* config, char* buffer, size_t capacity,
                                    size_t* length) {
  return guarded([&] {
    require(config, "config");
    copy_out(config->value.serialize(), buffer, capacity, length);
  });
}

tfsed_status tfsed_config_validate(const tfsed_config* config) {
  return guarded([&] {
    require(config, "config");
    config->value.validate();
  });
}

tfsed_status tfsed_synth(const tfsed_config* config, const char* out_dir, tfsed_log_fn log,
                         void* user) {
  return guarded([&] {
    require(config, "config");
    require(out_dir, "out_dir");
    tfsed::cmd::synth(config->value, out_dir, make_log(log, user));
  });
}

tfsed_status tfsed_featurize(const tfsed_config* config, const char* wav_dir, const char* out_dir,
                             const char* stats_path, tfsed_log_fn log, void* user) {
  return guarded([&] {
    require(config, "config");
    require(wav_dir, "wav_dir");
    require(out_dir, "out_dir");
    tfsed::cmd::featurize(config->value, wav_dir, out_dir, opt_path(stats_path), make_log(log, user));
  });
}

tfsed_status tfsed_train(const tfsed_config* config, const char* mode, const char* train_dir,
                         const char* val_dir, const char* out_dir, const char* init_checkpoint,
                         tfsed_log_fn log, void* user) {
  return guarded([&] {
    require(config, "config");
    require(mode, "mode");
    require(train_dir, "train_dir");
    require(out_dir, "out_dir");
    tfsed::cmd::TrainRequest req;
    req.mode = tfsed::cmd::train_mode_from_name(mode);
    req.train_dir = train_dir;
    req.val_dir = opt_path(val_dir);
    req.out_dir = out_dir;
    req.init = opt_path(init_checkpoint);
    tfsed::cmd::train(config->value, req, make_log(log, user));
  });
}

tfsed_status tfsed_eval(const tfsed_config* config, const char* data_dir, const char* checkpoint,
                        const char* detections, const char* out_dir, tfsed_log_fn log, void* user) {
  return guarded([&] {
    require(config, "config");
    require(data_dir, "data_dir");
    require(out_dir, "out_dir");
    tfsed::cmd::EvalRequest req;
    req.data_dir = data_dir;
    req.out_dir = out_dir;
    req.checkpoint = opt_path(checkpoint);
    req.detections = opt_path(detections);
    tfsed::cmd::eval(config->value, req, make_log(log, user));
  });
}

tfsed_status tfsed_dump_attention(const tfsed_config* config, const char* checkpoint,
                                  const char* clip, const char* stats_path, const char* out_dir,
                                  tfsed_log_fn log, void* user) {
  return guarded([&] {
    require(config, "config");
    require(checkpoint, "checkpoint");
    require(clip, "clip");
    require(out_dir, "out_dir");
    tfsed::cmd::DumpRequest req;
    req.checkpoint = checkpoint;
    req.clip = clip;
    req.stats = opt_path(stats_path);
    req.out_dir = out_dir;
    tfsed::cmd::dump_attention(config->value, req, make_log(log, user));
  });
}

tfsed_status tfsed_model_load(const char* checkpoint, tfsed_model** out) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(out, "out");
    *out = new tfsed_model{tfsed::model::load_checkpoint(checkpoint)};
  });
}

void tfsed_model_destroy(tfsed_model* model) { delete model; }

tfsed_status tfsed_model_segments(const tfsed_model* model, size_t frames, size_t* segments) {
  return guarded([&] {
    require(model, "model");
    require(segments, "segments");
    tfsed::check(frames > 0, tfsed::ErrorCode::kDimension, "frames must be positive");
    *segments = model->value.config().segments(frames);
  });
}

tfsed_status tfsed_model_predict(tfsed_model* model, const float* features, size_t frames,
                                 size_t n_mels, float* probabilities, size_t capacity) {
  return guarded([&] {
    require(model, "model");
    require(features, "features");
    require(probabilities, "probabilities");
    tfsed::check(frames > 0 && n_mels == model->value.config().n_mels, tfsed::ErrorCode::kDimension,
                 "features must be [frames x " + std::to_string(model->value.config().n_mels) + "]");
    const std::size_t segments = model->value.config().segments(frames);
    tfsed::check(capacity >= segments, tfsed::ErrorCode::kParameter,
                 "probability buffer holds " + std::to_string(capacity) + ", need " +
                     std::to_string(segments));
    tfsed::Tensor<float> f({frames, n_mels}, std::vector<float>(features, features + frames * n_mels));
    tfsed::ad::NoGradGuard guard;
    const auto tr = model->value.forward(tfsed::model::batch_of_one<float>(f), tfsed::ad::Mode::kEval);
    const auto y = tr.probabilities.data();
    std::memcpy(probabilities, y.data(), segments * sizeof(float));
  });
}

}  // extern "C"
