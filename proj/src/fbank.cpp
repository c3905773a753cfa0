// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include "tfsed/fbank.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <set>

#include "binary_io.hpp"

namespace tfsed::fbank {

double hz_to_mel(double hz) {
  check(hz >= 0.0, ErrorCode::kParameter, "hz_to_mel: negative frequency");
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor<float> MelFilterbank::dense() const {
  Tensor<float> out({weights.size(), n_bins});
  for (std::size_t m = 0; m < weights.size(); ++m)
    for (std::size_t j = 0; j < weights[m].size(); ++j)
      out[m * n_bins + first_bin[m] + j] = weights[m][j];
  return out;
}

MelFilterbank build_mel_filterbank(std::size_t n_filters, double f_min, double f_max,
                                   std::size_t n_fft, int sample_rate) {
  check(n_filters > 0 && n_fft >= 2 && sample_rate > 0, ErrorCode::kConfig,
        "mel filterbank: invalid sizes");
  check(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0, ErrorCode::kConfig,
        "mel filterbank: need 0 <= f_min < f_max <= sample_rate / 2");
  MelFilterbank fb;
  fb.n_bins = n_fft / 2 + 1;
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n_fft);
  const double lo = hz_to_mel(f_min), hi = hz_to_mel(f_max);
  std::set<long> seen_bins;
  for (std::size_t i = 0; i < n_filters + 2; ++i) {
    const double hz =
        mel_to_hz(lo + static_cast<double>(i) * (hi - lo) / static_cast<double>(n_filters + 1));
    fb.edge_hz.push_back(hz);
    const bool fresh = seen_bins.insert(std::lround(hz / bin_hz)).second;
    check(fresh, ErrorCode::kConfig,
          "mel filterbank: " + std::to_string(n_filters) +
              " filters are too narrow for a " + std::to_string(n_fft) +
              "-point FFT (edge points collide in bin space)");
  }
  for (std::size_t m = 0; m < n_filters; ++m) {
    const double left = fb.edge_hz[m], center = fb.edge_hz[m + 1], right = fb.edge_hz[m + 2];
    std::size_t first = 0;
    std::vector<float> w;
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double v = 0.0;
      if (f > left && f <= center)
        v = (f - left) / (center - left);
      else if (f > center && f < right)
        v = (right - f) / (right - center);
      if (v <= 0.0) continue;
      if (w.empty()) first = k;
      w.resize(k - first + 1, 0.0f);
      w.back() = static_cast<float>(v);
    }
    fb.first_bin.push_back(first);
    fb.weights.push_back(std::move(w));
  }
  return fb;
}

namespace {

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n));
  return w;
}

void check_rate(int sample_rate) {
  check(sample_rate == kSampleRate, ErrorCode::kFormat,
        "unsupported sample rate " + std::to_string(sample_rate) + " Hz (expected 44100)");
}

/// FFTW plan plus derived tables. Plan creation is not thread-safe, so a
/// single instance is built once; execution on fresh arrays is.
class SpectrumEngine {
 public:
  SpectrumEngine() : window_(hann_window(kFrameLength)), filters_(build_mel_filterbank()) {
    double* in = fftw_alloc_real(kFftSize);
    fftw_complex* out = fftw_alloc_complex(kFftSize / 2 + 1);
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(kFftSize), in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    check(plan_ != nullptr, ErrorCode::kInternal, "FFTW plan creation failed");
  }
  ~SpectrumEngine() { fftw_destroy_plan(plan_); }
  SpectrumEngine(const SpectrumEngine&) = delete;
  SpectrumEngine& operator=(const SpectrumEngine&) = delete;

  static const SpectrumEngine& instance() {
    static const SpectrumEngine engine;
    return engine;
  }

  const std::vector<double>& window() const { return window_; }
  const MelFilterbank& filters() const { return filters_; }

  void magnitude(const float* frame, double* in, fftw_complex* out, std::vector<double>& mag) const {
    for (std::size_t i = 0; i < kFrameLength; ++i) in[i] = frame[i];
    for (std::size_t i = kFrameLength; i < kFftSize; ++i) in[i] = 0.0;
    fftw_execute_dft_r2c(plan_, in, out);
    mag.resize(kFftSize / 2 + 1);
    for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
  }

 private:
  std::vector<double> window_;
  MelFilterbank filters_;
  fftw_plan plan_ = nullptr;
};

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

Tensor<float> frame_signal(std::span<const float> samples, int sample_rate) {
  check(!samples.empty(), ErrorCode::kParameter, "frame_signal: empty input");
  check_rate(sample_rate);
  const auto& window = SpectrumEngine::instance().window();
  const std::size_t n_frames = (samples.size() + kFrameShift - 1) / kFrameShift;
  Tensor<float> frames({n_frames, kFrameLength});
  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::size_t start = t * kFrameShift;
    for (std::size_t i = 0; i < kFrameLength && start + i < samples.size(); ++i)
      frames[t * kFrameLength + i] = static_cast<float>(samples[start + i] * window[i]);
  }
  return frames;
}

FeatureMatrix fbank_extract(std::span<const float> samples, int sample_rate) {
  check_rate(sample_rate);
  const Tensor<float> frames = frame_signal(samples, sample_rate);
  const auto& engine = SpectrumEngine::instance();
  const auto& fb = engine.filters();
  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(kFftSize));
  std::unique_ptr<fftw_complex, FftwDeleter> out(fftw_alloc_complex(kFftSize / 2 + 1));
  std::vector<double> mag;
  const std::size_t n_frames = frames.dim(0);
  FeatureMatrix fm{Tensor<float>({n_frames, kNumMels})};
  for (std::size_t t = 0; t < n_frames; ++t) {
    engine.magnitude(frames.data().data() + t * kFrameLength, in.get(), out.get(), mag);
    for (std::size_t m = 0; m < kNumMels; ++m) {
      double e = 0.0;
      for (std::size_t j = 0; j < fb.weights[m].size(); ++j)
        e += fb.weights[m][j] * mag[fb.first_bin[m] + j];
      fm.values[t * kNumMels + m] = static_cast<float>(std::log(e + kLogFloor));
    }
  }
  return fm;
}

NormStats fit_norm_stats(std::span<const FeatureMatrix> features) {
  std::size_t total = 0;
  std::vector<double> sum(kNumMels, 0.0);
  for (const auto& f : features) {
    check(f.n_mels() == kNumMels, ErrorCode::kDimension, "fit_norm_stats: expected 128 mels");
    total += f.frames();
    for (std::size_t t = 0; t < f.frames(); ++t)
      for (std::size_t m = 0; m < kNumMels; ++m) sum[m] += f.values[t * kNumMels + m];
  }
  check(total >= 2, ErrorCode::kParameter, "fit_norm_stats: need at least 2 frames");
  std::vector<double> mean(kNumMels), sq(kNumMels, 0.0);
  for (std::size_t m = 0; m < kNumMels; ++m) mean[m] = sum[m] / static_cast<double>(total);
  for (const auto& f : features)
    for (std::size_t t = 0; t < f.frames(); ++t)
      for (std::size_t m = 0; m < kNumMels; ++m) {
        const double d = f.values[t * kNumMels + m] - mean[m];
        sq[m] += d * d;
      }
  NormStats stats;
  for (std::size_t m = 0; m < kNumMels; ++m) {
    stats.mean.push_back(static_cast<float>(mean[m]));
    stats.std.push_back(static_cast<float>(
        std::max(std::sqrt(sq[m] / static_cast<double>(total)), kStdFloor)));
  }
  return stats;
}

FeatureMatrix apply_norm(const FeatureMatrix& features, const NormStats& stats) {
  check(features.n_mels() == stats.mean.size() && stats.mean.size() == stats.std.size(),
        ErrorCode::kDimension, "apply_norm: statistics do not match feature width");
  FeatureMatrix out = features;
  const std::size_t n = features.n_mels();
  for (std::size_t t = 0; t < features.frames(); ++t)
    for (std::size_t m = 0; m < n; ++m) {
      const double d = std::max(static_cast<double>(stats.std[m]), kStdFloor);
      out.values[t * n + m] =
          static_cast<float>((static_cast<double>(features.values[t * n + m]) - stats.mean[m]) / d);
    }
  return out;
}

std::vector<std::uint8_t> encode_fbnk(const FeatureMatrix& features) {
  io::Writer w;
  w.magic("FBNK");
  w.u32(static_cast<std::uint32_t>(features.frames()));
  w.u32(static_cast<std::uint32_t>(features.n_mels()));
  w.f32s(features.values.data());
  return w.take();
}

FeatureMatrix decode_fbnk(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes, "fbnk");
  r.expect_magic("FBNK");
  const std::uint32_t frames = r.u32();
  const std::uint32_t mels = r.u32();
  check(frames > 0 && mels == kNumMels, ErrorCode::kFormat,
        "fbnk: unexpected header (" + std::to_string(frames) + ", " + std::to_string(mels) + ")");
  check(r.remaining() == std::size_t{frames} * mels * 4, ErrorCode::kFormat,
        "fbnk: payload size does not match header");
  FeatureMatrix fm{Tensor<float>({frames, mels})};
  r.f32s(fm.values.data());
  return fm;
}

void write_fbnk(const std::filesystem::path& path, const FeatureMatrix& features) {
  io::write_file(path, encode_fbnk(features));
}

FeatureMatrix read_fbnk(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  try {
    return decode_fbnk(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_norm_stats(const std::filesystem::path& path, const NormStats& stats) {
  check(stats.mean.size() == kNumMels && stats.std.size() == kNumMels, ErrorCode::kDimension,
        "norm stats must hold 128 means and 128 stds");
  io::Writer w;
  w.f32s(stats.mean);
  w.f32s(stats.std);
  io::write_file(path, w.buffer());
}

NormStats read_norm_stats(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  check(bytes.size() == 2 * kNumMels * 4, ErrorCode::kFormat,
        path.string() + ": norm stats file must hold exactly 256 f32 values");
  io::Reader r(bytes, path.string());
  NormStats s{std::vector<float>(kNumMels), std::vector<float>(kNumMels)};
  r.f32s(s.mean);
  r.f32s(s.std);
  return s;
}

}  // namespace tfsed::fbank
