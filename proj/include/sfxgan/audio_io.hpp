#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "sfxgan/tensor.hpp"

namespace sfxgan {

/// The training sound: mono layers, peak-normalized and length-aligned.
struct AudioLayerSet {
  std::vector<std::vector<float>> layers;
  std::vector<std::string> names;
  int sample_rate = 44100;
  int pre_pad = 0;  // leading zeros added to every layer, in samples
};

enum class WavFormat { Float32, Pcm16 };

namespace wav {

inline uint32_t read_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
inline uint16_t read_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

struct LoadedWav {
  std::vector<float> samples;
  int sample_rate = 0;
};

/// Reads a mono RIFF/WAVE file: PCM 16/24-bit or IEEE float 32-bit.
inline LoadedWav read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open audio file: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw ValidationError("not a RIFF/WAVE file: " + path.string());

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  bool got_fmt = false;
  const uint8_t* data = nullptr;
  uint32_t data_size = 0;

  size_t off = 12;
  while (off + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + off);
    const uint32_t size = read_u32(bytes.data() + off + 4);
    const size_t body = off + 8;
    if (body + size > bytes.size())
      throw ValidationError("truncated chunk in " + path.string());
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw ValidationError("malformed fmt chunk in " + path.string());
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      sample_rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      got_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    off = body + size + (size & 1);  // chunks are word-aligned
  }
  if (!got_fmt || data == nullptr)
    throw ValidationError("missing fmt/data chunk in " + path.string());
  if (channels != 1)
    throw ValidationError(path.string() + " has " + std::to_string(channels) +
                          " channels; only mono input is supported");

  LoadedWav out;
  out.sample_rate = static_cast<int>(sample_rate);
  if (format == 1 && bits == 16) {
    const size_t n = data_size / 2;
    out.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const int16_t v = static_cast<int16_t>(read_u16(data + 2 * i));
      out.samples[i] = static_cast<float>(v) / 32768.0f;
    }
  } else if (format == 1 && bits == 24) {
    const size_t n = data_size / 3;
    out.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      int32_t v = int32_t(data[3 * i]) | int32_t(data[3 * i + 1]) << 8 |
                  int32_t(data[3 * i + 2]) << 16;
      if (v & 0x800000) v |= ~0xFFFFFF;  // sign extend
      out.samples[i] = static_cast<float>(v) / 8388608.0f;
    }
  } else if (format == 3 && bits == 32) {
    const size_t n = data_size / 4;
    out.samples.resize(n);
    std::memcpy(out.samples.data(), data, n * 4);
  } else {
    throw ValidationError(path.string() + ": unsupported format (tag " +
                          std::to_string(format) + ", " + std::to_string(bits) +
                          " bit); expected PCM 16/24 or float 32");
  }
  return out;
}

inline void append_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(uint8_t(x));
  v.push_back(uint8_t(x >> 8));
  v.push_back(uint8_t(x >> 16));
  v.push_back(uint8_t(x >> 24));
}
inline void append_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(uint8_t(x));
  v.push_back(uint8_t(x >> 8));
}
inline void append_tag(std::vector<uint8_t>& v, const char* tag) {
  v.insert(v.end(), tag, tag + 4);
}

}  // namespace wav

/// Writes a mono WAV file (float-32 by default, PCM-16 selectable). Samples
/// outside [-1, 1] are clipped; the clip count is returned so callers can
/// surface a warning.
inline int64_t write_wav(std::span<const float> samples, int sample_rate,
                         const std::filesystem::path& path,
                         WavFormat format = WavFormat::Float32) {
  using namespace wav;
  for (float s : samples)
    if (!std::isfinite(s))
      throw ValidationError("non-finite sample; refusing to write " + path.string());

  int64_t clipped = 0;
  std::vector<uint8_t> body;
  if (format == WavFormat::Float32) {
    body.reserve(samples.size() * 4);
    for (float s : samples) {
      const float c = std::clamp(s, -1.0f, 1.0f);
      if (c != s) ++clipped;
      uint32_t u;
      std::memcpy(&u, &c, 4);
      append_u32(body, u);
    }
  } else {
    body.reserve(samples.size() * 2);
    for (float s : samples) {
      const float c = std::clamp(s, -1.0f, 1.0f);
      if (c != s) ++clipped;
      const long q = std::lround(double(c) * 32768.0);
      const int16_t v = static_cast<int16_t>(std::clamp(q, -32768L, 32767L));
      append_u16(body, static_cast<uint16_t>(v));
    }
  }

  const uint16_t bits = format == WavFormat::Float32 ? 32 : 16;
  const uint16_t tag = format == WavFormat::Float32 ? 3 : 1;
  const uint16_t block = uint16_t(bits / 8);
  const bool fact = format == WavFormat::Float32;  // required for non-PCM

  std::vector<uint8_t> out;
  append_tag(out, "RIFF");
  append_u32(out, uint32_t(4 + 8 + 16 + (fact ? 12 : 0) + 8 + body.size()));
  append_tag(out, "WAVE");
  append_tag(out, "fmt ");
  append_u32(out, 16);
  append_u16(out, tag);
  append_u16(out, 1);  // mono
  append_u32(out, uint32_t(sample_rate));
  append_u32(out, uint32_t(sample_rate) * block);
  append_u16(out, block);
  append_u16(out, bits);
  if (fact) {
    append_tag(out, "fact");
    append_u32(out, 4);
    append_u32(out, uint32_t(samples.size()));
  }
  append_tag(out, "data");
  append_u32(out, uint32_t(body.size()));
  out.insert(out.end(), body.begin(), body.end());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw ValidationError("write failed for " + path.string());
  return clipped;
}

/// Loads the layer files, peak-normalizes each to [-1, 1], prepends
/// pre_pad_ms of silence, and zero-pads every layer to the longest length.
inline AudioLayerSet load_layers(const std::vector<std::filesystem::path>& paths,
                                 double pre_pad_ms = 0.0) {
  if (paths.empty()) throw ValidationError("no input layers given");
  if (pre_pad_ms < 0.0) throw ValidationError("pre_pad_ms must be >= 0");

  AudioLayerSet set;
  size_t longest = 0;
  for (const auto& path : paths) {
    auto loaded = wav::read_wav(path);
    if (loaded.samples.empty())
      throw ValidationError(path.string() + " is empty");
    if (set.layers.empty()) {
      set.sample_rate = loaded.sample_rate;
    } else if (loaded.sample_rate != set.sample_rate) {
      throw ValidationError("sample-rate mismatch: " + path.string() + " is " +
                            std::to_string(loaded.sample_rate) + " Hz, expected " +
                            std::to_string(set.sample_rate) + " Hz");
    }
    float peak = 0.0f;
    for (float s : loaded.samples) peak = std::max(peak, std::abs(s));
    if (peak == 0.0f)
      throw ValidationError(path.string() + " is silent; cannot normalize");
    for (auto& s : loaded.samples) s /= peak;
    set.layers.push_back(std::move(loaded.samples));
    set.names.push_back(path.stem().string());
    longest = std::max(longest, set.layers.back().size());
  }

  set.pre_pad = static_cast<int>(std::lround(set.sample_rate * pre_pad_ms / 1000.0));
  const size_t target = longest + static_cast<size_t>(set.pre_pad);
  for (auto& layer : set.layers) {
    layer.insert(layer.begin(), static_cast<size_t>(set.pre_pad), 0.0f);
    layer.resize(target, 0.0f);
  }
  return set;
}

}  // namespace sfxgan
