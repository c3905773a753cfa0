// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include "tfsed/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <map>

#include "binary_io.hpp"
#include "tfsed/error.hpp"

namespace tfsed {

namespace {

std::string_view trim(std::string_view s) {
  const auto issp = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && issp(s.front())) s.remove_prefix(1);
  while (!s.empty() && issp(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* want) {
  fail(ErrorCode::kConfig, "config key '" + std::string(key) + "': expected " + want + ", got '" +
                               std::string(value) + "'");
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size())
    bad_value(key, v, "an unsigned integer");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::string fmt_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename V, typename F>
std::string join(const std::vector<V>& xs, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += fmt(xs[i]);
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field size_field(M member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            std::invoke(member, c) = static_cast<std::size_t>(parse_u64(k, v));
          },
          [member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename M>
Field double_field(M member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            std::invoke(member, c) = parse_double(k, v);
          },
          [member](const RunConfig& c) { return fmt_double(std::invoke(member, c)); }};
}

template <typename M>
Field bool_field(M member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            std::invoke(member, c) = parse_bool(k, v);
          },
          [member](const RunConfig& c) { return std::string(std::invoke(member, c) ? "true" : "false"); }};
}

template <typename M>
Field activation_field(M member) {
  return {[member](RunConfig& c, std::string_view, std::string_view v) {
            std::invoke(member, c) = model::activation_from_name(v);
          },
          [member](const RunConfig& c) { return std::string(model::activation_name(std::invoke(member, c))); }};
}

const std::map<std::string, Field, std::less<>>& schema() {
  static const std::map<std::string, Field, std::less<>> fields = [] {
    std::map<std::string, Field, std::less<>> f;
    f["seed"] = {[](RunConfig& c, std::string_view k, std::string_view v) { c.seed = parse_u64(k, v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};
    f["class"] = {[](RunConfig& c, std::string_view, std::string_view v) {
                    synth::class_id_from_name(v);
                    c.class_name = std::string(v);
                  },
                  [](const RunConfig& c) { return c.class_name; }};

    f["synth.clips"] = size_field([](auto& c) -> auto& { return c.synth.n_clips; });
    f["synth.duration_s"] = double_field([](auto& c) -> auto& { return c.synth.clip_duration_s; });
    f["synth.presence_prob"] =
        double_field([](auto& c) -> auto& { return c.synth.event_presence_prob; });
    f["synth.ebr_db"] = {
        [](RunConfig& c, std::string_view k, std::string_view v) {
          std::vector<double> out;
          for (auto part : split(v, ',')) out.push_back(parse_double(k, part));
          c.synth.ebr_set = std::move(out);
        },
        [](const RunConfig& c) { return join(c.synth.ebr_set, fmt_double); }};
    f["synth.classes"] = {
        [](RunConfig& c, std::string_view, std::string_view v) {
          std::vector<int> out;
          for (auto part : split(v, ',')) out.push_back(synth::class_id_from_name(part));
          c.synth.classes = std::move(out);
        },
        [](const RunConfig& c) {
          return join(c.synth.classes, [](int id) { return std::string(synth::class_name(id)); });
        }};

    f["model.n_mels"] = size_field([](auto& c) -> auto& { return c.model.n_mels; });
    f["model.channels"] = {
        [](RunConfig& c, std::string_view k, std::string_view v) {
          std::vector<std::size_t> out;
          for (auto part : split(v, ',')) out.push_back(static_cast<std::size_t>(parse_u64(k, part)));
          c.model.conv_channels = std::move(out);
        },
        [](const RunConfig& c) {
          return join(c.model.conv_channels, [](std::size_t x) { return std::to_string(x); });
        }};
    f["model.pool"] = {
        [](RunConfig& c, std::string_view k, std::string_view v) {
          std::vector<model::PoolWindow> out;
          for (auto part : split(v, ',')) {
            const auto tf = split(part, 'x');
            if (tf.size() != 2) bad_value(k, v, "a list of TxF windows such as 1x2,2x2");
            out.push_back({static_cast<std::size_t>(parse_u64(k, tf[0])),
                           static_cast<std::size_t>(parse_u64(k, tf[1]))});
          }
          c.model.pool_windows = std::move(out);
        },
        [](const RunConfig& c) {
          return join(c.model.pool_windows, [](const model::PoolWindow& w) {
            return std::to_string(w.t) + "x" + std::to_string(w.f);
          });
        }};
    f["model.kernel_t"] = size_field([](auto& c) -> auto& { return c.model.kernel_t; });
    f["model.kernel_f"] = size_field([](auto& c) -> auto& { return c.model.kernel_f; });
    f["model.residual"] = size_field([](auto& c) -> auto& { return c.model.residual_connections; });
    f["model.gru_units"] = size_field([](auto& c) -> auto& { return c.model.gru_units; });
    f["model.ta_units"] = size_field([](auto& c) -> auto& { return c.model.ta_units; });
    f["model.fa_units"] = size_field([](auto& c) -> auto& { return c.model.fa_units; });
    f["model.dropout"] = double_field([](auto& c) -> auto& { return c.model.dropout_p; });
    f["model.ta_activation"] = activation_field([](auto& c) -> auto& { return c.model.ta_activation; });
    f["model.fa_activation"] = activation_field([](auto& c) -> auto& { return c.model.fa_activation; });
    f["model.temporal_attention"] =
        bool_field([](auto& c) -> auto& { return c.model.use_temporal_attention; });
    f["model.frequential_attention"] =
        bool_field([](auto& c) -> auto& { return c.model.use_frequential_attention; });

    f["train.learning_rate"] = double_field([](auto& c) -> auto& { return c.train.learning_rate; });
    f["train.batch_size"] = size_field([](auto& c) -> auto& { return c.train.batch_size; });
    f["train.pretrain_epochs"] = size_field([](auto& c) -> auto& { return c.train.pretrain_epochs; });
    f["train.main_epochs"] = size_field([](auto& c) -> auto& { return c.train.main_epochs; });
    f["train.positive_weight"] =
        double_field([](auto& c) -> auto& { return c.train.positive_weight; });
    return f;
  }();
  return fields;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto& s = schema();
  const auto it = s.find(key);
  check(it != s.end(), ErrorCode::kConfig, "unknown config key '" + std::string(key) + "'");
  it->second.set(*this, key, trim(value));
  synth.master_seed = seed;
  train.seed = seed;
}

std::string RunConfig::get(std::string_view key) const {
  const auto& s = schema();
  const auto it = s.find(key);
  check(it != s.end(), ErrorCode::kConfig, "unknown config key '" + std::string(key) + "'");
  return it->second.get(*this);
}

void RunConfig::validate() const {
  synth::class_id_from_name(class_name);
  synth.validate();
  model.validate();
  train.validate();
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [key, field] : schema()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

std::uint64_t RunConfig::hash() const { return fnv1a64(serialize()); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [key, field] : schema()) out.push_back(key);
    return out;
  }();
  return k;
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    check(eq != std::string_view::npos, ErrorCode::kConfig,
          "config line " + std::to_string(line_no) + ": expected key = value");
    try {
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      fail(e.code(), "config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  try {
    return parse_run_config(io::read_text(path), std::move(base));
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace tfsed
