// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include "tfsed/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>

#include "binary_io.hpp"
#include "tfsed/error.hpp"

namespace tfsed::model {

using ad::Var;

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kAttentionEps = 1e-8;

bool has_residual_into(const ModelConfig& c, std::size_t layer) {
  return c.residual_connections == 2 && (layer == 1 || layer == 3);
}

std::string layer_name(const char* prefix, std::size_t layer) {
  return prefix + std::to_string(layer);
}

}  // namespace

std::string_view activation_name(ad::Activation a) {
  switch (a) {
    case ad::Activation::kRelu:
      return "relu";
    case ad::Activation::kSigmoid:
      return "sigmoid";
    case ad::Activation::kTanh:
      return "tanh";
    case ad::Activation::kSoftmax:
      return "softmax";
  }
  return "unknown";
}

ad::Activation activation_from_name(std::string_view name) {
  for (auto a : {ad::Activation::kRelu, ad::Activation::kSigmoid, ad::Activation::kTanh,
                 ad::Activation::kSoftmax})
    if (activation_name(a) == name) return a;
  fail(ErrorCode::kConfig, "unknown activation '" + std::string(name) + "'");
}

std::size_t ModelConfig::time_pool() const {
  std::size_t p = 1;
  for (const auto& w : pool_windows) p *= w.t;
  return p;
}

std::size_t ModelConfig::freq_pool() const {
  std::size_t p = 1;
  for (const auto& w : pool_windows) p *= w.f;
  return p;
}

std::size_t ModelConfig::segments(std::size_t frames) const {
  std::size_t t = frames;
  for (const auto& w : pool_windows) t = (t + w.t - 1) / w.t;
  return t;
}

std::size_t ModelConfig::cnn_features() const {
  std::size_t f = n_mels;
  for (const auto& w : pool_windows) f = (f + w.f - 1) / w.f;
  return conv_channels.back() * f;
}

void ModelConfig::validate() const {
  check(n_mels == 128, ErrorCode::kConfig, "model: n_mels must be 128");
  check(conv_channels.size() == 4, ErrorCode::kConfig, "model: expected 4 conv layers");
  check(pool_windows.size() == conv_channels.size(), ErrorCode::kConfig,
        "model: need one pool window per conv layer");
  for (auto c : conv_channels) check(c > 0, ErrorCode::kConfig, "model: zero conv channels");
  for (const auto& w : pool_windows)
    check(w.t > 0 && w.f > 0, ErrorCode::kConfig, "model: zero pool window");
  check(kernel_t > 0 && kernel_f > 0 && kernel_t % 2 == 1 && kernel_f % 2 == 1, ErrorCode::kConfig,
        "model: kernel sizes must be odd and positive");
  check(residual_connections == 0 || residual_connections == 2, ErrorCode::kConfig,
        "model: residual_connections must be 0 or 2");
  check(time_pool() == 4, ErrorCode::kConfig,
        "model: time pooling factors must multiply to 4 (got " + std::to_string(time_pool()) + ")");
  check(n_mels % freq_pool() == 0, ErrorCode::kConfig,
        "model: frequency pooling factors must divide 128");
  check(gru_units > 0 && ta_units > 0, ErrorCode::kConfig, "model: zero hidden units");
  check(fa_units == n_mels, ErrorCode::kConfig, "model: fa_units must equal n_mels (128)");
  check(dropout_p >= 0.0 && dropout_p < 1.0, ErrorCode::kConfig, "model: dropout must lie in [0, 1)");
}

std::string param_group(std::string_view name) {
  const std::string_view head = name.substr(0, name.find('.'));
  if (head.starts_with("conv") || head.starts_with("res")) return "cnn";
  if (head.starts_with("bn")) return "bn";
  if (head.starts_with("gru")) return "gru";
  if (head == "fc") return "fc";
  if (head == "ta") return "ta";
  if (head == "fa") return "fa";
  fail(ErrorCode::kInternal, "unknown parameter group for " + std::string(name));
}

// ---------------------------------------------------------------------------
// Construction

template <typename T>
Model<T>::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  auto uniform = [&](Shape shape, double bound) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return Var<T>::parameter(std::move(t));
  };
  auto fill = [](Shape shape, T value) { return Var<T>::parameter(Tensor<T>(std::move(shape), value)); };

  const auto& ch = config_.conv_channels;
  const std::size_t kt = config_.kernel_t, kf = config_.kernel_f;
  for (std::size_t l = 0; l < ch.size(); ++l) {
    const std::size_t cin = l == 0 ? 1 : ch[l - 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * kt * kf));
    params_.push_back({layer_name("conv", l) + ".kernel", uniform({ch[l], cin, kt, kf}, bound)});
    params_.push_back({layer_name("conv", l) + ".bias", uniform({ch[l]}, bound)});
    params_.push_back({layer_name("bn", l) + ".gamma", fill({ch[l]}, T(1))});
    params_.push_back({layer_name("bn", l) + ".beta", fill({ch[l]}, T(0))});
    stats_.push_back({layer_name("bn", l), ad::BatchNormStats<T>(ch[l])});
    if (has_residual_into(config_, l) && cin != ch[l])
      params_.push_back({layer_name("res", l) + ".proj",
                         uniform({ch[l], cin, 1, 1}, 1.0 / std::sqrt(static_cast<double>(cin)))});
  }
  const std::size_t d = config_.cnn_features(), u = config_.gru_units;
  const double gru_bound = 1.0 / std::sqrt(static_cast<double>(u));
  for (const char* dir : {"gru_fwd", "gru_bwd"}) {
    params_.push_back({std::string(dir) + ".w_ih", uniform({3 * u, d}, gru_bound)});
    params_.push_back({std::string(dir) + ".w_hh", uniform({3 * u, u}, gru_bound)});
    params_.push_back({std::string(dir) + ".b", uniform({3 * u}, gru_bound)});
  }
  params_.push_back({"fc.w", uniform({1, u}, gru_bound)});
  params_.push_back({"fc.b", uniform({1}, gru_bound)});
  params_.push_back({"ta.W", fill({config_.ta_units, d}, T(0))});
  params_.push_back({"ta.b", fill({config_.ta_units}, T(0))});
  params_.push_back({"fa.V", fill({config_.fa_units, config_.n_mels}, T(0))});
  params_.push_back({"fa.c", fill({config_.fa_units}, T(0))});
  init_attention(rng);
}

template <typename T>
void Model<T>::init_attention(Rng& rng) {
  // Small weights keep both attentions close to uniform at the start: a
  // ReLU unit with bias 1 gives a ~ 1, a sigmoid with bias 0 gives M ~ 1.
  auto redraw = [&](Var<T>& v, double bound, double bias) {
    for (auto& x : v.mutable_value().data())
      x = static_cast<T>(bias + (bound > 0 ? rng.uniform(-bound, bound) : 0.0));
  };
  const double d = static_cast<double>(config_.cnn_features());
  const bool relu_ta = config_.ta_activation == ad::Activation::kRelu;
  redraw(param("ta.W"), 0.1 / std::sqrt(d), 0.0);
  redraw(param("ta.b"), 0.0, relu_ta ? 1.0 : 0.0);
  redraw(param("fa.V"), 0.1 / std::sqrt(static_cast<double>(config_.n_mels)), 0.0);
  redraw(param("fa.c"), 0.0, config_.fa_activation == ad::Activation::kRelu ? 1.0 : 0.0);
}

template <typename T>
void Model<T>::set_attention(bool temporal, bool frequential) {
  config_.use_temporal_attention = temporal;
  config_.use_frequential_attention = frequential;
}

template <typename T>
Var<T>& Model<T>::param(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p.var;
  fail(ErrorCode::kParameter, "model has no parameter named " + std::string(name));
}

template <typename T>
const Var<T>& Model<T>::param(std::string_view name) const {
  return const_cast<Model*>(this)->param(name);
}

template <typename T>
std::vector<Var<T>> Model<T>::trainable() const {
  std::vector<Var<T>> out;
  for (const auto& p : params_) {
    const auto group = param_group(p.name);
    if (group == "ta" && !config_.use_temporal_attention) continue;
    if (group == "fa" && !config_.use_frequential_attention) continue;
    out.push_back(p.var);
  }
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : trainable()) n += v.size();
  return n;
}

// ---------------------------------------------------------------------------
// Forward pass

template <typename T>
Var<T> Model<T>::frequential(const Var<T>& f, Var<T>* weights) const {
  const Shape shape = f.shape();
  const std::size_t rows = shape[0] * shape[1];
  auto flat = ad::reshape(f, {rows, shape[2]});
  auto raw = ad::activation(ad::linear(flat, param("fa.V"), param("fa.c")), config_.fa_activation, 1);
  auto m = ad::rescale_to_sum(raw, static_cast<T>(config_.n_mels), static_cast<T>(kAttentionEps),
                              config_.fa_activation == ad::Activation::kRelu);
  m = ad::reshape(m, shape);
  *weights = m;
  return ad::mul(m, f);
}

template <typename T>
Var<T> Model<T>::cnn(const Var<T>& x, ad::Mode mode, Rng* rng) {
  Var<T> h = x;
  const double p = config_.dropout_p;
  check(mode == ad::Mode::kEval || p == 0.0 || rng != nullptr, ErrorCode::kState,
        "model: train-mode forward with dropout needs an rng");
  for (std::size_t l = 0; l < config_.n_conv_layers(); ++l) {
    const std::string conv = layer_name("conv", l), bn = layer_name("bn", l);
    auto z = ad::conv2d(h, param(conv + ".kernel"), param(conv + ".bias"));
    z = ad::batchnorm(z, param(bn + ".gamma"), param(bn + ".beta"), stats_[l].stats, mode);
    if (has_residual_into(config_, l)) {
      const std::string proj = layer_name("res", l) + ".proj";
      const bool project = h.shape()[1] != z.shape()[1];
      z = ad::add(z, project ? ad::conv2d(h, param(proj), Var<T>{}) : h);
    }
    z = ad::relu(z);
    if (mode == ad::Mode::kTrain && p > 0.0) z = ad::dropout(z, p, mode, *rng);
    h = ad::maxpool2d(z, config_.pool_windows[l].t, config_.pool_windows[l].f);
  }
  return h;
}

template <typename T>
Var<T> Model<T>::temporal(const Var<T>& seq, Var<T>* raw) const {
  const std::size_t n = seq.shape()[0], t = seq.shape()[1], d = seq.shape()[2];
  auto hidden = ad::activation(ad::linear(ad::reshape(seq, {n * t, d}), param("ta.W"), param("ta.b")),
                               config_.ta_activation, 1);
  auto a_hat = ad::max_last(ad::reshape(hidden, {n, t, config_.ta_units}));
  *raw = a_hat;
  return ad::rescale_to_sum(a_hat, static_cast<T>(t), static_cast<T>(kAttentionEps), true);
}

template <typename T>
Var<T> Model<T>::bigru_fc(const Var<T>& seq) const {
  const std::size_t n = seq.shape()[0], t = seq.shape()[1], d = seq.shape()[2];
  const std::size_t u = config_.gru_units;
  const auto flat = ad::reshape(seq, {n * t, d});
  auto run = [&](const char* dir, bool reverse) {
    const std::string p(dir);
    auto gx = ad::reshape(ad::linear(flat, param(p + ".w_ih"), param(p + ".b")), {n, t, 3 * u});
    Var<T> h = Var<T>::constant(Tensor<T>({n, u}));
    std::vector<Var<T>> out(t);
    for (std::size_t k = 0; k < t; ++k) {
      const std::size_t step = reverse ? t - 1 - k : k;
      h = ad::gru_step(ad::select_step(gx, step), h, param(p + ".w_hh"));
      out[step] = h;
    }
    return ad::stack_steps(out);
  };
  auto both = ad::add(run("gru_fwd", false), run("gru_bwd", true));
  auto logits = ad::linear(ad::reshape(both, {n * t, u}), param("fc.w"), param("fc.b"));
  return ad::reshape(logits, {n, t});
}

template <typename T>
ForwardTrace<T> Model<T>::forward(const Var<T>& features, ad::Mode mode,
                                  const ForwardOptions<T>& options) {
  check(features.value().rank() == 3 && features.shape()[2] == config_.n_mels,
        ErrorCode::kDimension,
        "model: expected features [N x T x 128], got " + shape_string(features.shape()));
  ForwardTrace<T> tr;
  const std::size_t n = features.shape()[0], frames = features.shape()[1];
  if (config_.use_frequential_attention) {
    tr.weighted_features = frequential(features, &tr.frequential_weights);
  } else {
    tr.weighted_features = features;
    tr.frequential_weights = Var<T>::constant(Tensor<T>(features.shape(), T(1)));
  }
  tr.cnn_output = cnn(ad::reshape(tr.weighted_features, {n, 1, frames, config_.n_mels}), mode,
                      options.rng);
  const auto seq = ad::channels_to_features(tr.cnn_output);
  const std::size_t t_seg = seq.shape()[1];
  tr.logits = bigru_fc(seq);
  if (options.temporal_override) {
    check(options.temporal_override->shape() == Shape{n, t_seg}, ErrorCode::kDimension,
          "model: temporal override must be [N x T_seg]");
    tr.temporal_weights = Var<T>::constant(*options.temporal_override);
    tr.temporal_raw = tr.temporal_weights;
  } else if (config_.use_temporal_attention) {
    tr.temporal_weights = temporal(seq, &tr.temporal_raw);
  } else {
    tr.temporal_weights = Var<T>::constant(Tensor<T>({n, t_seg}, T(1)));
    tr.temporal_raw = tr.temporal_weights;
  }
  const bool unit_weights = !options.temporal_override && !config_.use_temporal_attention;
  tr.probabilities = ad::sigmoid(unit_weights ? tr.logits : ad::mul(tr.temporal_weights, tr.logits));
  return tr;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out;
  out.config_ = config_;
  for (const auto& p : params_) {
    auto v = p.var.value().template cast<U>();
    out.params_.push_back({p.name, Var<U>::parameter(std::move(v))});
  }
  for (const auto& s : stats_) out.stats_.push_back({s.name, s.stats.template cast<U>()});
  return out;
}

template <typename T>
Var<T> batch_of_one(const Tensor<float>& features) {
  check(features.rank() == 2, ErrorCode::kDimension, "features must be [T x 128]");
  auto t = features.template cast<T>();
  t.reshape({1, features.dim(0), features.dim(1)});
  return Var<T>::constant(std::move(t));
}

template <typename T>
Var<T> stack_batch(std::span<const Tensor<float>* const> features) {
  check(!features.empty(), ErrorCode::kDimension, "stack_batch: empty batch");
  const Shape& s0 = features[0]->shape();
  Tensor<T> out({features.size(), s0.at(0), s0.at(1)});
  for (std::size_t b = 0; b < features.size(); ++b) {
    check(features[b]->shape() == s0, ErrorCode::kDimension,
          "stack_batch: clips differ in shape " + shape_string(features[b]->shape()) + " vs " +
              shape_string(s0));
    std::copy(features[b]->data().begin(), features[b]->data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(b * features[b]->size()));
  }
  return Var<T>::constant(std::move(out));
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;
template Var<float> batch_of_one<float>(const Tensor<float>&);
template Var<double> batch_of_one<double>(const Tensor<float>&);
template Var<float> stack_batch<float>(std::span<const Tensor<float>* const>);
template Var<double> stack_batch<double>(std::span<const Tensor<float>* const>);

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_config(io::Writer& w, const ModelConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.n_mels));
  w.u32(static_cast<std::uint32_t>(c.conv_channels.size()));
  for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(c.conv_channels[i]));
    w.u32(static_cast<std::uint32_t>(c.pool_windows[i].t));
    w.u32(static_cast<std::uint32_t>(c.pool_windows[i].f));
  }
  w.u32(static_cast<std::uint32_t>(c.kernel_t));
  w.u32(static_cast<std::uint32_t>(c.kernel_f));
  w.u32(static_cast<std::uint32_t>(c.residual_connections));
  w.u32(static_cast<std::uint32_t>(c.gru_units));
  w.u32(static_cast<std::uint32_t>(c.ta_units));
  w.u32(static_cast<std::uint32_t>(c.fa_units));
  w.u64(std::bit_cast<std::uint64_t>(c.dropout_p));
  w.str(activation_name(c.ta_activation));
  w.str(activation_name(c.fa_activation));
  w.u32(c.use_temporal_attention ? 1 : 0);
  w.u32(c.use_frequential_attention ? 1 : 0);
}

ModelConfig read_config(io::Reader& r) {
  ModelConfig c;
  c.n_mels = r.u32();
  const std::uint32_t layers = r.u32();
  check(layers <= 64, ErrorCode::kCheckpoint, r.what() + ": implausible layer count");
  c.conv_channels.resize(layers);
  c.pool_windows.resize(layers);
  for (std::uint32_t i = 0; i < layers; ++i) {
    c.conv_channels[i] = r.u32();
    c.pool_windows[i].t = r.u32();
    c.pool_windows[i].f = r.u32();
  }
  c.kernel_t = r.u32();
  c.kernel_f = r.u32();
  c.residual_connections = r.u32();
  c.gru_units = r.u32();
  c.ta_units = r.u32();
  c.fa_units = r.u32();
  c.dropout_p = std::bit_cast<double>(r.u64());
  c.ta_activation = activation_from_name(r.str());
  c.fa_activation = activation_from_name(r.str());
  c.use_temporal_attention = r.u32() != 0;
  c.use_frequential_attention = r.u32() != 0;
  return c;
}

/// Names of architecture fields that differ outside the attention blocks.
std::vector<std::string> shared_mismatches(const ModelConfig& a, const ModelConfig& b) {
  std::vector<std::string> out;
  if (a.n_mels != b.n_mels) out.push_back("n_mels");
  if (a.conv_channels != b.conv_channels) out.push_back("conv_channels");
  if (a.pool_windows != b.pool_windows) out.push_back("pool_windows");
  if (a.kernel_t != b.kernel_t || a.kernel_f != b.kernel_f) out.push_back("kernel");
  if (a.residual_connections != b.residual_connections) out.push_back("residual_connections");
  if (a.gru_units != b.gru_units) out.push_back("gru_units");
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model) {
  io::Writer w;
  w.magic("TFAT");
  w.u32(kCheckpointVersion);
  write_config(w, model.config());
  w.u32(static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    w.str(p.name);
    const auto& v = p.var.value();
    w.u32(static_cast<std::uint32_t>(v.rank()));
    for (auto d : v.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(v.data());
  }
  w.u32(static_cast<std::uint32_t>(model.bn_stats().size()));
  for (const auto& s : model.bn_stats()) {
    w.str(s.name);
    w.u32(static_cast<std::uint32_t>(s.stats.mean.size()));
    w.u64(s.stats.updates);
    w.f32s(s.stats.mean);
    w.f32s(s.stats.var);
  }
  return w.take();
}

Model<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes, "checkpoint");
  try {
    r.expect_magic("TFAT");
  } catch (const Error& e) {
    throw Error(ErrorCode::kCheckpoint, e.what());
  }
  const std::uint32_t version = r.u32();
  check(version == kCheckpointVersion, ErrorCode::kCheckpoint,
        "checkpoint: unsupported format version " + std::to_string(version));
  ModelConfig cfg = read_config(r);
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kCheckpoint, std::string("checkpoint: invalid architecture: ") + e.what());
  }
  // A fresh model fixes the expected names and shapes.
  Model<float> model(cfg, 0);
  const std::uint32_t count = r.u32();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    check(rank <= 8, ErrorCode::kCheckpoint, "checkpoint: implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    Var<float>* target = nullptr;
    for (auto& p : model.params())
      if (p.name == name) target = &p.var;
    check(target != nullptr, ErrorCode::kCheckpoint, "checkpoint: unexpected parameter " + name);
    check(target->shape() == shape, ErrorCode::kCheckpoint,
          "checkpoint: parameter " + name + " has shape " + shape_string(shape) + ", expected " +
              shape_string(target->shape()));
    r.f32s(target->mutable_value().data());
    seen.insert(name);
  }
  for (const auto& p : model.params())
    check(seen.count(p.name) > 0, ErrorCode::kCheckpoint, "checkpoint: missing parameter " + p.name);
  const std::uint32_t n_stats = r.u32();
  check(n_stats == model.bn_stats().size(), ErrorCode::kCheckpoint,
        "checkpoint: batchnorm layer count mismatch");
  for (auto& s : model.bn_stats()) {
    const std::string name = r.str();
    check(name == s.name, ErrorCode::kCheckpoint,
          "checkpoint: expected statistics for " + s.name + ", found " + name);
    const std::uint32_t channels = r.u32();
    check(channels == s.stats.mean.size(), ErrorCode::kCheckpoint,
          "checkpoint: channel count mismatch in " + name);
    s.stats.updates = r.u64();
    r.f32s(s.stats.mean);
    r.f32s(s.stats.var);
  }
  check(r.done(), ErrorCode::kCheckpoint, "checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model) {
  io::write_file(path, encode_checkpoint(model));
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const Error& e) {
    const auto code = e.code() == ErrorCode::kFormat ? ErrorCode::kCheckpoint : e.code();
    throw Error(code, path.string() + ": " + e.what());
  }
}

Model<float> adopt_pretrained(const Model<float>& baseline, const ModelConfig& config,
                              std::uint64_t seed) {
  const auto diff = shared_mismatches(baseline.config(), config);
  if (!diff.empty()) {
    std::string fields;
    for (const auto& f : diff) fields += (fields.empty() ? "" : ", ") + f;
    fail(ErrorCode::kCheckpoint, "pretrained model architecture differs in: " + fields);
  }
  Model<float> out(config, seed);
  for (auto& p : out.params()) {
    const auto group = param_group(p.name);
    if (group == "ta" || group == "fa") continue;
    p.var.mutable_value() = baseline.param(p.name).value();
  }
  for (std::size_t i = 0; i < out.bn_stats().size(); ++i)
    out.bn_stats()[i].stats = baseline.bn_stats()[i].stats;
  Rng rng(derive_seed(seed, 0xa77e));
  out.init_attention(rng);
  return out;
}

Model<float> load_pretrained_crnn(const std::filesystem::path& baseline, const ModelConfig& config,
                                  std::uint64_t seed) {
  const auto base = load_checkpoint(baseline);
  try {
    return adopt_pretrained(base, config, seed);
  } catch (const Error& e) {
    throw Error(e.code(), baseline.string() + ": " + e.what());
  }
}

}  // namespace tfsed::model
