// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include "tfsed/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>

#include "tfsed/error.hpp"
#include "tfsed/wav.hpp"

namespace tfsed::synth {

namespace {

constexpr std::array<std::string_view, kNumClasses> kClassNames{"babycry", "glassbreak",
                                                                "gunshot"};
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kRate = kSampleRate;

std::size_t seconds_to_samples(double s) {
  return static_cast<std::size_t>(std::llround(s * kRate));
}

double rms(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double peak(std::span<const float> x) {
  double p = 0.0;
  for (float v : x) p = std::max(p, std::abs(static_cast<double>(v)));
  return p;
}

void normalize_peak(std::vector<double>& x, double target) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  if (p > 0.0)
    for (double& v : x) v *= target / p;
}

std::vector<float> to_float(const std::vector<double>& x) {
  return std::vector<float>(x.begin(), x.end());
}

double clamped_duration(Rng& rng, double mean, double sd, double lo, double hi) {
  return std::clamp(rng.normal(mean, sd), lo, hi);
}

/// Half-cosine ramp that never reaches exactly zero, so the first and last
/// samples of an event still carry energy.
double ramp(std::size_t i, std::size_t len) {
  if (i >= len) return 1.0;
  return std::sin(0.5 * std::numbers::pi * static_cast<double>(i + 1) / static_cast<double>(len));
}

std::vector<double> babycry(double duration_s, Rng& rng) {
  const std::size_t n = seconds_to_samples(duration_s);
  std::vector<double> out(n, 0.0);
  // Syllables separated by short breaths; the last one runs to the end.
  std::vector<std::pair<std::size_t, std::size_t>> syllables;
  std::size_t pos = 0;
  while (pos < n) {
    std::size_t len = seconds_to_samples(rng.uniform(0.35, 0.8));
    const std::size_t gap = seconds_to_samples(rng.uniform(0.04, 0.12));
    if (pos + len + gap + seconds_to_samples(0.25) >= n) len = n - pos;
    syllables.emplace_back(pos, len);
    pos += len + gap;
  }
  const double vib_rate = rng.uniform(5.0, 7.0);
  const double vib_depth = rng.uniform(0.02, 0.05);
  const std::size_t attack = seconds_to_samples(0.03), release = seconds_to_samples(0.06);
  for (const auto& [start, len] : syllables) {
    const double f0 = rng.uniform(350.0, 550.0);
    const double rise = rng.uniform(0.08, 0.2);
    // Harmonic k tracks k times the fundamental phase, so each sample needs
    // one complex rotation per harmonic instead of a sine.
    std::array<std::complex<double>, 16> partial{};
    const std::size_t n_harm = std::min<std::size_t>(partial.size(), static_cast<std::size_t>(16000.0 / (f0 * 1.3)));
    for (std::size_t k = 1; k <= n_harm; ++k) {
      const double fk = f0 * static_cast<double>(k);
      // Mild formant emphasis around 1.2 kHz.
      const double formant = 1.0 + 1.5 * std::exp(-std::pow((fk - 1200.0) / 700.0, 2.0));
      partial[k - 1] = std::polar(formant / std::pow(static_cast<double>(k), 0.8), rng.uniform(0.0, kTwoPi));
    }
    const double vib_phase = rng.uniform(0.0, kTwoPi);
    double phase = 0.0;
    // Pitch contour (half sine over the syllable) and vibrato, both advanced
    // by rotation.
    std::complex<double> contour(1.0, 0.0), vibrato = std::polar(1.0, vib_phase);
    const std::complex<double> contour_step =
        std::polar(1.0, std::numbers::pi / static_cast<double>(len));
    const std::complex<double> vibrato_step = std::polar(1.0, kTwoPi * vib_rate / kRate);
    for (std::size_t i = 0; i < len; ++i) {
      const double f = f0 * (1.0 + rise * contour.imag()) * (1.0 + vib_depth * vibrato.imag());
      contour = {contour.real() * contour_step.real() - contour.imag() * contour_step.imag(),
                 contour.real() * contour_step.imag() + contour.imag() * contour_step.real()};
      vibrato = {vibrato.real() * vibrato_step.real() - vibrato.imag() * vibrato_step.imag(),
                 vibrato.real() * vibrato_step.imag() + vibrato.imag() * vibrato_step.real()};
      phase += kTwoPi * f / kRate;
      const double zr = std::cos(phase), zi = std::sin(phase);
      double kr = zr, ki = zi, s = 0.0;
      for (std::size_t k = 0; k < n_harm; ++k) {
        s += partial[k].real() * ki + partial[k].imag() * kr;
        const double nr = kr * zr - ki * zi;
        ki = kr * zi + ki * zr;
        kr = nr;
      }
      out[start + i] = s * ramp(i, attack) * ramp(len - 1 - i, release);
    }
  }
  normalize_peak(out, 1.0);
  return out;
}

std::vector<double> glassbreak(double duration_s, Rng& rng) {
  const std::size_t n = seconds_to_samples(duration_s);
  std::vector<double> out(n, 0.0);
  auto burst = [&](std::size_t at, double amp, double tau_s) {
    double prev = 0.0;
    for (std::size_t i = at; i < n; ++i) {
      const double env = amp * std::exp(-static_cast<double>(i - at) / (tau_s * kRate));
      if (env < 1e-5) break;
      const double w = rng.normal();
      out[i] += env * (w - 0.6 * prev);  // first difference tilts toward highs
      prev = w;
    }
  };
  burst(0, 1.0, rng.uniform(0.015, 0.05));
  const std::size_t shards = 3 + rng.below(5);
  for (std::size_t s = 0; s < shards; ++s)
    burst(static_cast<std::size_t>(rng.uniform(0.0, 0.6) * static_cast<double>(n)),
          rng.uniform(0.2, 0.6), rng.uniform(0.005, 0.02));
  const std::size_t partials = 6 + rng.below(7);
  for (std::size_t p = 0; p < partials; ++p) {
    const double f = rng.uniform(2500.0, 12000.0);
    const double amp = rng.uniform(0.1, 0.4);
    const double tau = rng.uniform(0.15, 0.45) * duration_s * kRate;
    // Damped sinusoid by complex recurrence.
    std::complex<double> z = std::polar(amp, rng.uniform(0.0, kTwoPi));
    const std::complex<double> step = std::polar(std::exp(-1.0 / tau), kTwoPi * f / kRate);
    for (std::size_t i = 0; i < n; ++i, z *= step) out[i] += z.imag();
  }
  const std::size_t fade = std::min(n, seconds_to_samples(0.01));
  for (std::size_t i = 0; i < fade; ++i) out[n - 1 - i] *= ramp(i, fade);
  normalize_peak(out, 1.0);
  return out;
}

std::vector<double> gunshot(double duration_s, Rng& rng) {
  const std::size_t n = seconds_to_samples(duration_s);
  std::vector<double> out(n, 0.0);
  const double tau = duration_s / rng.uniform(6.0, 9.0) * kRate;
  const std::size_t attack = seconds_to_samples(rng.uniform(0.001, 0.003));
  const double smooth = rng.uniform(0.3, 0.7);
  const double boom_hz = rng.uniform(50.0, 120.0);
  const double boom_amp = rng.uniform(0.3, 0.7);
  double lp = 0.0, decay = 1.0;
  const double decay_step = std::exp(-1.0 / tau);
  std::complex<double> boom(0.0, 0.0), boom_phase(boom_amp, 0.0);
  const std::complex<double> boom_step = std::polar(std::exp(-1.0 / (1.5 * tau)), kTwoPi * boom_hz / kRate);
  for (std::size_t i = 0; i < n; ++i, decay *= decay_step, boom_phase *= boom_step) {
    lp = smooth * lp + (1.0 - smooth) * rng.normal();
    out[i] = ramp(i, attack) * (2.0 * decay * lp + boom_phase.imag());
  }
  normalize_peak(out, 1.0);
  return out;
}

}  // namespace

std::string_view class_name(int class_id) {
  check(class_id >= 0 && class_id < kNumClasses, ErrorCode::kParameter,
        "unknown event class " + std::to_string(class_id));
  return kClassNames[static_cast<std::size_t>(class_id)];
}

int class_id_from_name(std::string_view name) {
  for (int c = 0; c < kNumClasses; ++c)
    if (kClassNames[static_cast<std::size_t>(c)] == name) return c;
  fail(ErrorCode::kParameter, "unknown event class '" + std::string(name) +
                                  "' (expected babycry, glassbreak or gunshot)");
}

void SynthConfig::validate() const {
  check(n_clips > 0, ErrorCode::kConfig, "synth: n_clips must be positive");
  check(clip_duration_s > 0.0 && std::isfinite(clip_duration_s), ErrorCode::kConfig,
        "synth: clip duration must be positive");
  check(event_presence_prob >= 0.0 && event_presence_prob <= 1.0, ErrorCode::kConfig,
        "synth: event presence probability must lie in [0, 1]");
  check(!ebr_set.empty(), ErrorCode::kConfig, "synth: ebr set is empty");
  for (double e : ebr_set)
    check(std::isfinite(e), ErrorCode::kConfig, "synth: non-finite ebr value");
  check(!classes.empty(), ErrorCode::kConfig, "synth: no classes selected");
  for (int c : classes) class_name(c);
}

std::vector<float> gen_background(double duration_s, Rng& rng, std::vector<Interval>* distractors) {
  check(duration_s > 0.0 && std::isfinite(duration_s), ErrorCode::kParameter,
        "gen_background: duration must be positive");
  const std::size_t n = std::max<std::size_t>(1, seconds_to_samples(duration_s));
  std::vector<double> out(n);

  // Paul Kellet's pink filter, warmed up past its slowest pole.
  std::array<double, 7> b{};
  auto pink = [&] {
    const double w = rng.normal();
    b[0] = 0.99886 * b[0] + w * 0.0555179;
    b[1] = 0.99332 * b[1] + w * 0.0750759;
    b[2] = 0.96900 * b[2] + w * 0.1538520;
    b[3] = 0.86650 * b[3] + w * 0.3104856;
    b[4] = 0.55000 * b[4] + w * 0.5329522;
    b[5] = -0.7616 * b[5] - w * 0.0168980;
    const double p = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + w * 0.5362;
    b[6] = w * 0.115926;
    return p;
  };
  for (int i = 0; i < 8192; ++i) pink();
  for (auto& v : out) v = pink();

  const double depth = rng.uniform(0.1, 0.35);
  const double mod_hz = rng.uniform(0.05, 0.3);
  const double mod_phase = rng.uniform(0.0, kTwoPi);
  for (std::size_t i = 0; i < n; ++i)
    out[i] *= 1.0 + depth * std::sin(kTwoPi * mod_hz * static_cast<double>(i) / kRate + mod_phase);

  double acc = 0.0;
  for (double v : out) acc += v * v;
  const double target = rng.uniform(0.06, 0.15);
  const double scale = acc > 0.0 ? target / std::sqrt(acc / static_cast<double>(n)) : 0.0;
  for (auto& v : out) v *= scale;

  // Distractor beeps: short pure tones at background level.
  const auto n_tones = rng.below(static_cast<std::uint64_t>(duration_s / 5.0) + 1);
  if (distractors) distractors->clear();
  for (std::uint64_t k = 0; k < n_tones; ++k) {
    const double len_s = std::min(rng.uniform(0.1, 0.5), duration_s);
    const double start_s = rng.uniform(0.0, duration_s - len_s);
    const double hz = rng.uniform(700.0, 3500.0);
    const double amp = rng.uniform(0.5, 1.5) * target * std::numbers::sqrt2;
    const std::size_t s0 = seconds_to_samples(start_s);
    const std::size_t len = std::min(seconds_to_samples(len_s), n - s0);
    const std::size_t edge = std::min(len / 2, seconds_to_samples(0.005));
    for (std::size_t i = 0; i < len; ++i)
      out[s0 + i] += amp * ramp(i, edge) * ramp(len - 1 - i, edge) *
                     std::sin(kTwoPi * hz * static_cast<double>(i) / kRate);
    if (distractors)
      distractors->push_back({static_cast<double>(s0) / kRate, static_cast<double>(s0 + len) / kRate});
  }

  double p = 0.0;
  for (double v : out) p = std::max(p, std::abs(v));
  if (p > 0.95)
    for (auto& v : out) v *= 0.95 / p;
  return to_float(out);
}

std::vector<float> gen_event(int class_id, Rng& rng) {
  switch (class_id) {
    case 0:
      return to_float(babycry(clamped_duration(rng, 2.25, 0.4, 1.0, 4.0), rng));
    case 1:
      return to_float(glassbreak(clamped_duration(rng, 1.16, 0.3, 0.5, 2.5), rng));
    case 2:
      return to_float(gunshot(clamped_duration(rng, 1.32, 0.3, 0.5, 2.5), rng));
    default:
      fail(ErrorCode::kParameter, "gen_event: unknown class " + std::to_string(class_id));
  }
}

MixResult mix_at_ebr_detailed(std::span<const float> background, std::span<const float> event,
                              double onset_s, double ebr_db) {
  check(std::isfinite(onset_s) && onset_s >= 0.0, ErrorCode::kPlacement,
        "mix_at_ebr: onset must be non-negative");
  check(std::isfinite(ebr_db), ErrorCode::kParameter, "mix_at_ebr: non-finite ebr");
  const std::size_t onset = seconds_to_samples(onset_s);
  check(onset + event.size() <= background.size(), ErrorCode::kPlacement,
        "mix_at_ebr: event of " + std::to_string(event.size()) + " samples at sample " +
            std::to_string(onset) + " does not fit in a clip of " +
            std::to_string(background.size()) + " samples");
  MixResult res;
  res.samples.assign(background.begin(), background.end());
  const double ev_rms = rms(event);
  if (ev_rms == 0.0) return res;
  const double bg_rms = rms(background.subspan(onset, event.size()));
  check(bg_rms > 0.0, ErrorCode::kParameter,
        "mix_at_ebr: background is silent over the event support, ratio undefined");
  res.gain = std::pow(10.0, ebr_db / 20.0) * bg_rms / ev_rms;
  for (std::size_t i = 0; i < event.size(); ++i)
    res.samples[onset + i] =
        static_cast<float>(static_cast<double>(res.samples[onset + i]) + res.gain * event[i]);
  const double p = peak(res.samples);
  if (p > 1.0) {
    res.normalization = 0.9 / p;
    for (auto& v : res.samples) v = static_cast<float>(v * res.normalization);
  }
  return res;
}

std::vector<float> mix_at_ebr(std::span<const float> background, std::span<const float> event,
                              double onset_s, double ebr_db) {
  return mix_at_ebr_detailed(background, event, onset_s, ebr_db).samples;
}

std::uint64_t clip_seed(std::uint64_t master_seed, int class_id, std::size_t index) {
  return derive_seed(derive_seed(master_seed, static_cast<std::uint64_t>(class_id)), index);
}

AnnotatedClip synthesize_clip(const SynthConfig& cfg, int class_id, std::size_t index,
                              ClipParts* parts) {
  cfg.validate();
  AnnotatedClip clip;
  char idx[16];
  std::snprintf(idx, sizeof idx, "%04zu", index);
  clip.name = std::string(class_name(class_id)) + "_" + idx;
  clip.duration_s = static_cast<double>(seconds_to_samples(cfg.clip_duration_s)) / kRate;
  clip.seed = clip_seed(cfg.master_seed, class_id, index);
  Rng rng(clip.seed);

  auto background = gen_background(cfg.clip_duration_s, rng, &clip.distractors);
  const bool present = rng.bernoulli(cfg.event_presence_prob);
  clip.ebr_db = cfg.ebr_set[rng.below(cfg.ebr_set.size())];
  if (!present) {
    clip.samples = background;
    if (parts) *parts = ClipParts{std::move(background), {}, 0, MixResult{clip.samples, 0.0, 1.0}};
    return clip;
  }
  auto event = gen_event(class_id, rng);
  check(event.size() <= background.size(), ErrorCode::kPlacement,
        "synthesize: " + clip.name + ": event longer than the clip");
  const std::size_t onset = rng.below(background.size() - event.size() + 1);
  const double onset_s = static_cast<double>(onset) / kRate;
  MixResult mix = mix_at_ebr_detailed(background, event, onset_s, clip.ebr_db);
  clip.samples = mix.samples;
  clip.event = EventInfo{class_id, onset_s, static_cast<double>(onset + event.size()) / kRate};
  if (parts) *parts = ClipParts{std::move(background), std::move(event), onset, std::move(mix)};
  return clip;
}

std::vector<AnnotatedClip> synthesize_class(const SynthConfig& cfg, int class_id) {
  std::vector<AnnotatedClip> clips;
  clips.reserve(cfg.n_clips);
  for (std::size_t i = 0; i < cfg.n_clips; ++i) clips.push_back(synthesize_clip(cfg, class_id, i));
  return clips;
}

std::vector<AnnotationRow> clip_annotations(std::span<const AnnotatedClip> clips) {
  std::vector<AnnotationRow> rows;
  for (const auto& c : clips)
    if (c.event)
      rows.push_back({c.name + ".wav", c.event->onset_s, c.event->offset_s,
                      std::string(class_name(c.event->class_id))});
  return rows;
}

DatasetSummary synthesize_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  DatasetSummary summary;
  std::vector<AnnotationRow> rows;
  for (int c : cfg.classes) {
    for (std::size_t i = 0; i < cfg.n_clips; ++i) {
      const AnnotatedClip clip = synthesize_clip(cfg, c, i);
      const auto path = out_dir / (clip.name + ".wav");
      write_wav(path, clip.samples, kSampleRate);
      summary.wav_files.push_back(path);
      ++summary.clips;
      const auto row = clip_annotations(std::span(&clip, 1));
      summary.events += row.size();
      rows.insert(rows.end(), row.begin(), row.end());
    }
  }
  summary.annotations = out_dir / "annotations.tsv";
  write_annotations(summary.annotations, rows);
  return summary;
}

}  // namespace tfsed::synth
