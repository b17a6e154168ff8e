#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <vector>

#include "sfxgan/audio_io.hpp"
#include "sfxgan/rng.hpp"
#include "test_helpers.hpp"

using namespace sfxgan;
using test_helpers::TempDir;

namespace {

std::filesystem::path write_fixture(const TempDir& dir, const std::string& name,
                                    const std::vector<float>& samples, int rate = 44100,
                                    WavFormat fmt = WavFormat::Float32) {
  const auto path = dir.path / name;
  write_wav(samples, rate, path, fmt);
  return path;
}

}  // namespace

TEST_CASE("load_layers aligns lengths to the longest layer") {
  TempDir dir("align");
  Rng rng(1);
  std::vector<std::filesystem::path> paths;
  for (int i = 0; i < 3; ++i) {
    const int len = 8000 + i * 1000;  // 8000, 9000, 10000
    std::vector<float> s(static_cast<size_t>(len));
    for (auto& v : s) v = static_cast<float>(rng.normal() * 0.3);
    s[100] = 0.9f;  // nonzero peak
    paths.push_back(write_fixture(dir, "layer" + std::to_string(i) + ".wav", s));
  }
  const auto set = load_layers(paths, 0.0);
  REQUIRE(set.layers.size() == 3);
  for (const auto& l : set.layers) REQUIRE(l.size() == 10000);
  REQUIRE(set.pre_pad == 0);
}

TEST_CASE("load_layers peak-normalizes each layer to exactly 1") {
  TempDir dir("norm");
  std::vector<float> s(4000, 0.0f);
  s[5] = 0.5f;
  s[6] = -0.25f;
  const auto set = load_layers({write_fixture(dir, "a.wav", s)});
  float peak = 0.0f;
  for (float v : set.layers[0]) peak = std::max(peak, std::abs(v));
  REQUIRE(peak == 1.0f);
}

TEST_CASE("pre_pad_ms adds the right number of leading zeros") {
  TempDir dir("prepad");
  std::vector<float> s(2000, 0.0f);
  s[0] = 1.0f;
  const auto a = write_fixture(dir, "a.wav", s);
  const auto b = write_fixture(dir, "b.wav", s);
  const auto set = load_layers({a, b}, 10.0);
  REQUIRE(set.pre_pad == 441);  // 44100 * 0.010
  for (const auto& l : set.layers) {
    REQUIRE(l.size() == 2441);
    for (int i = 0; i < 441; ++i) REQUIRE(l[static_cast<size_t>(i)] == 0.0f);
    REQUIRE(l[441] == 1.0f);
  }
}

TEST_CASE("load_layers error paths") {
  TempDir dir("errors");
  std::vector<float> s(1000, 0.0f);
  s[0] = 1.0f;

  SECTION("missing file") {
    REQUIRE_THROWS_AS(load_layers({dir.path / "nope.wav"}), ValidationError);
  }
  SECTION("sample-rate mismatch") {
    const auto a = write_fixture(dir, "a.wav", s, 44100);
    const auto b = write_fixture(dir, "b.wav", s, 48000);
    REQUIRE_THROWS_WITH(load_layers({a, b}), Catch::Matchers::ContainsSubstring("sample-rate"));
  }
  SECTION("all-zero file") {
    const auto z = write_fixture(dir, "z.wav", std::vector<float>(500, 0.0f));
    REQUIRE_THROWS_WITH(load_layers({z}), Catch::Matchers::ContainsSubstring("silent"));
  }
  SECTION("stereo file rejected") {
    // Hand-build a 2-channel file.
    std::vector<uint8_t> bytes;
    wav::append_tag(bytes, "RIFF");
    wav::append_u32(bytes, 36 + 8);
    wav::append_tag(bytes, "WAVE");
    wav::append_tag(bytes, "fmt ");
    wav::append_u32(bytes, 16);
    wav::append_u16(bytes, 1);
    wav::append_u16(bytes, 2);  // stereo
    wav::append_u32(bytes, 44100);
    wav::append_u32(bytes, 44100 * 4);
    wav::append_u16(bytes, 4);
    wav::append_u16(bytes, 16);
    wav::append_tag(bytes, "data");
    wav::append_u32(bytes, 8);
    for (int i = 0; i < 8; ++i) bytes.push_back(0);
    const auto path = dir.path / "stereo.wav";
    std::ofstream(path, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    REQUIRE_THROWS_WITH(load_layers({path}), Catch::Matchers::ContainsSubstring("mono"));
  }
  SECTION("not a wav file") {
    const auto path = dir.path / "garbage.wav";
    std::ofstream(path) << "not audio";
    REQUIRE_THROWS_AS(load_layers({path}), ValidationError);
  }
}

TEST_CASE("write_wav clips out-of-range samples and reports them") {
  TempDir dir("clip");
  std::vector<float> s{0.0f, 1.5f, -2.0f, 0.25f};
  const auto path = dir.path / "clipped.wav";
  const int64_t clipped = write_wav(s, 44100, path);
  REQUIRE(clipped == 2);
  const auto back = wav::read_wav(path);
  REQUIRE(back.samples[1] == 1.0f);
  REQUIRE(back.samples[2] == -1.0f);
  REQUIRE(back.samples[3] == 0.25f);
}

TEST_CASE("write_wav round-trip error is within the quantization step") {
  TempDir dir("roundtrip");
  Rng rng(2);
  std::vector<float> s(2048);
  for (auto& v : s) v = static_cast<float>(std::clamp(rng.normal() * 0.4, -1.0, 1.0));

  SECTION("float32 is exact") {
    const auto path = dir.path / "f32.wav";
    write_wav(s, 44100, path, WavFormat::Float32);
    const auto back = wav::read_wav(path);
    REQUIRE(back.samples == s);
  }
  SECTION("pcm16 within one step") {
    const auto path = dir.path / "p16.wav";
    write_wav(s, 44100, path, WavFormat::Pcm16);
    const auto back = wav::read_wav(path);
    REQUIRE(back.samples.size() == s.size());
    for (size_t i = 0; i < s.size(); ++i)
      REQUIRE(std::abs(back.samples[i] - s[i]) <= 1.0f / 32768.0f);
  }
}

TEST_CASE("24-bit PCM files load") {
  TempDir dir("pcm24");
  // Hand-build: two samples, +0.5 and -0.5 in 24-bit.
  std::vector<uint8_t> bytes;
  wav::append_tag(bytes, "RIFF");
  wav::append_u32(bytes, 36 + 6);
  wav::append_tag(bytes, "WAVE");
  wav::append_tag(bytes, "fmt ");
  wav::append_u32(bytes, 16);
  wav::append_u16(bytes, 1);
  wav::append_u16(bytes, 1);
  wav::append_u32(bytes, 44100);
  wav::append_u32(bytes, 44100 * 3);
  wav::append_u16(bytes, 3);
  wav::append_u16(bytes, 24);
  wav::append_tag(bytes, "data");
  wav::append_u32(bytes, 6);
  const int32_t half = 0x400000;
  bytes.push_back(half & 0xFF);
  bytes.push_back((half >> 8) & 0xFF);
  bytes.push_back((half >> 16) & 0xFF);
  const int32_t neg = -half & 0xFFFFFF;
  bytes.push_back(neg & 0xFF);
  bytes.push_back((neg >> 8) & 0xFF);
  bytes.push_back((neg >> 16) & 0xFF);
  const auto path = dir.path / "x.wav";
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  const auto back = wav::read_wav(path);
  REQUIRE(back.samples.size() == 2);
  REQUIRE(back.samples[0] == Catch::Approx(0.5).margin(1e-6));
  REQUIRE(back.samples[1] == Catch::Approx(-0.5).margin(1e-6));
}

TEST_CASE("alignment property: all lengths equal max input length plus pre-pad") {
  TempDir dir("prop");
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::filesystem::path> paths;
    size_t longest = 0;
    const int n = 1 + static_cast<int>(rng.integer(4));
    for (int i = 0; i < n; ++i) {
      const int len = 500 + static_cast<int>(rng.integer(4000));
      longest = std::max(longest, static_cast<size_t>(len));
      std::vector<float> s(static_cast<size_t>(len));
      for (auto& v : s) v = static_cast<float>(rng.normal() * 0.2);
      s[0] = 0.7f;
      paths.push_back(
          write_fixture(dir, "t" + std::to_string(trial) + "_" + std::to_string(i) + ".wav", s));
    }
    const double pad_ms = rng.uniform(0.0, 20.0);
    const auto set = load_layers(paths, pad_ms);
    const size_t expect = longest + static_cast<size_t>(set.pre_pad);
    for (const auto& l : set.layers) REQUIRE(l.size() == expect);
    // Shape idempotence: reloading our own output preserves lengths.
    std::vector<std::filesystem::path> round;
    for (size_t i = 0; i < set.layers.size(); ++i)
      round.push_back(write_fixture(dir, "r" + std::to_string(trial) + "_" + std::to_string(i) + ".wav",
                                    set.layers[i]));
    const auto again = load_layers(round, 0.0);
    for (const auto& l : again.layers) REQUIRE(l.size() == expect);
  }
}
