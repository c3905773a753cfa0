// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include "tfsed/wav.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "binary_io.hpp"

namespace tfsed {

WavAudio decode_wav(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes, "wav");
  r.expect_magic("RIFF");
  r.u32();
  r.expect_magic("WAVE");
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (r.remaining() >= 8) {
    char id[4];
    r.bytes(id, 4);
    const std::uint32_t size = r.u32();
    const std::string tag(id, 4);
    if (tag == "fmt ") {
      check(size >= 16 && size <= r.remaining(), ErrorCode::kFormat, "wav: malformed fmt chunk");
      const std::uint16_t format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      r.skip(size - 16 + (size & 1u));
      check(format == 1 || format == 0xFFFE, ErrorCode::kFormat,
            "wav: only PCM encoding is supported (format tag " + std::to_string(format) + ")");
      have_fmt = true;
    } else if (tag == "data") {
      check(have_fmt, ErrorCode::kFormat, "wav: data chunk before fmt chunk");
      check(channels == 1, ErrorCode::kFormat,
            "wav: expected mono audio, got " + std::to_string(channels) + " channels");
      check(bits == 16, ErrorCode::kFormat,
            "wav: expected 16-bit samples, got " + std::to_string(bits));
      check(size <= r.remaining(), ErrorCode::kFormat, "wav: data chunk truncated");
      WavAudio audio;
      audio.sample_rate = static_cast<int>(rate);
      audio.samples.resize(size / 2);
      for (auto& s : audio.samples) {
        std::int16_t v;
        r.bytes(&v, 2);
        s = static_cast<float>(v) / 32768.0f;
      }
      return audio;
    } else {
      check(size <= r.remaining(), ErrorCode::kFormat, "wav: chunk exceeds file size");
      r.skip(std::min<std::size_t>(size + (size & 1u), r.remaining()));
    }
  }
  fail(ErrorCode::kFormat, "wav: no data chunk");
}

WavAudio read_wav(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  try {
    return decode_wav(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(std::span<const float> samples, int sample_rate) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  io::Writer w;
  w.magic("RIFF");
  w.u32(36 + data_bytes);
  w.magic("WAVE");
  w.magic("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(sample_rate));
  w.u32(static_cast<std::uint32_t>(sample_rate) * 2);
  w.u16(2);
  w.u16(16);
  w.magic("data");
  w.u32(data_bytes);
  for (float s : samples) {
    const double scaled = std::round(static_cast<double>(std::clamp(s, -1.0f, 1.0f)) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    w.bytes(&v, 2);
  }
  return w.take();
}

void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate) {
  io::write_file(path, encode_wav(samples, sample_rate));
}

}  // namespace tfsed
