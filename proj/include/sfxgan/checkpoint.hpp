#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfxgan/config.hpp"
#include "sfxgan/model.hpp"
#include "sfxgan/spectral.hpp"
#include "sfxgan/tensor.hpp"

namespace sfxgan {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr uint32_t kBlobMagic = 0x57584653;  // "SFXW"

/// Everything needed to synthesize without the training audio.
struct Checkpoint {
  TrainConfig cfg;
  StftParams stft;
  int sample_rate = 44100;
  int pre_pad = 0;
  std::vector<std::string> layer_names;
  double norm_mean = 0.0;
  double norm_std = 1.0;
  std::vector<std::array<int, 2>> stage_shapes;  // (F, T) per stage
  std::vector<double> noise_amps;
  int trained_stages = 0;
  Generator gen;
  std::optional<Discriminator> d1;
  std::optional<Discriminator> d2;
  std::vector<Tensor> fixed_noise;  // reconstruction noise, one map per stage
  std::vector<LossRow> history;

  int channels() const { return gen.channels; }
};

namespace blob {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void write_blob(const std::filesystem::path& path, const NamedTensors& tensors) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp.string());
    auto put_u32 = [&out](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(kBlobMagic);
    put_u32(1);
    put_u32(static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      put_u32(static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u32(static_cast<uint32_t>(t.shape.size()));
      for (int d : t.shape) put_u32(static_cast<uint32_t>(d));
      const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * 4;
      out.write(reinterpret_cast<const char*>(&nbytes), 8);
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(nbytes));
    }
    if (!out) throw RuntimeFailure("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);  // atomic publish
}

inline NamedTensors read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("missing checkpoint blob: " + path.string());
  auto fail = [&path](const std::string& why) -> RuntimeFailure {
    return RuntimeFailure("corrupt checkpoint blob " + path.string() + ": " + why);
  };
  auto get_u32 = [&in, &fail]() {
    uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw fail("truncated");
    return v;
  };
  if (get_u32() != kBlobMagic) throw fail("bad magic");
  if (get_u32() != 1) throw fail("unsupported blob version");
  const uint32_t count = get_u32();
  NamedTensors out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32();
    if (name_len > 4096) throw fail("implausible tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw fail("truncated name");
    const uint32_t ndim = get_u32();
    if (ndim > 8) throw fail("implausible rank");
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(get_u32());
    uint64_t nbytes = 0;
    if (!in.read(reinterpret_cast<char*>(&nbytes), 8)) throw fail("truncated");
    Tensor t(shape);
    if (nbytes != static_cast<uint64_t>(t.numel()) * 4) throw fail("size mismatch for " + name);
    if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(nbytes)))
      throw fail("truncated data for " + name);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

inline const Tensor& find(const NamedTensors& ts, const std::string& name,
                          const std::filesystem::path& path) {
  for (const auto& [n, t] : ts)
    if (n == name) return t;
  throw RuntimeFailure("checkpoint blob " + path.string() + " is missing tensor " + name);
}

}  // namespace blob

namespace ckpt_detail {

inline blob::NamedTensors conv_tensors(const std::string& prefix, const ConvLayer& l) {
  return {{prefix + ".w", l.w->value}, {prefix + ".b", l.b->value}};
}

inline blob::NamedTensors block_tensors(const std::string& prefix, const ConvBlock& b) {
  auto out = conv_tensors(prefix + ".conv", b.conv);
  out.emplace_back(prefix + ".gamma", b.gamma->value);
  out.emplace_back(prefix + ".beta", b.beta->value);
  return out;
}

inline void load_conv(ConvLayer& l, const blob::NamedTensors& ts, const std::string& prefix,
                      const std::filesystem::path& path) {
  l.w = ad::leaf(blob::find(ts, prefix + ".w", path));
  l.b = ad::leaf(blob::find(ts, prefix + ".b", path));
}

inline void load_block(ConvBlock& b, const blob::NamedTensors& ts, const std::string& prefix,
                       const std::filesystem::path& path) {
  load_conv(b.conv, ts, prefix + ".conv", path);
  b.gamma = ad::leaf(blob::find(ts, prefix + ".gamma", path));
  b.beta = ad::leaf(blob::find(ts, prefix + ".beta", path));
}

inline blob::NamedTensors disc_tensors(const Discriminator& d) {
  blob::NamedTensors out;
  for (size_t c = 0; c < d.input_convs.size(); ++c) {
    auto t = conv_tensors("in." + std::to_string(c), d.input_convs[c]);
    out.insert(out.end(), t.begin(), t.end());
  }
  for (size_t i = 0; i < d.body.size(); ++i) {
    auto t = conv_tensors("body." + std::to_string(i), d.body[i]);
    out.insert(out.end(), t.begin(), t.end());
  }
  auto t = conv_tensors("tail", d.tail);
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

inline Discriminator load_disc(const std::filesystem::path& path, int channels, int filters,
                               int dilation) {
  const auto ts = blob::read_blob(path);
  Discriminator d;
  d.channels = channels;
  d.filters = filters;
  d.dilation = dilation;
  d.input_convs.resize(static_cast<size_t>(channels));
  for (int c = 0; c < channels; ++c)
    load_conv(d.input_convs[static_cast<size_t>(c)], ts, "in." + std::to_string(c), path);
  for (size_t i = 0; i < d.body.size(); ++i)
    load_conv(d.body[i], ts, "body." + std::to_string(i), path);
  load_conv(d.tail, ts, "tail", path);
  return d;
}

}  // namespace ckpt_detail

inline std::string gen_stage_blob_name(int stage) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "gen_stage_%03d.bin", stage);
  return buf;
}

inline void write_loss_history_csv(const std::vector<LossRow>& history,
                                   const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp.string());
    out << "iteration,stage,d_loss,g_adv,rec\n";
    out.precision(10);
    for (const auto& row : history)
      out << row.iteration << ',' << row.stage << ',' << row.d_loss << ',' << row.g_adv
          << ',' << row.rec << '\n';
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<LossRow> read_loss_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::vector<LossRow> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRow row;
    char comma;
    std::istringstream ss(line);
    ss >> row.iteration >> comma >> row.stage >> comma >> row.d_loss >> comma >> row.g_adv >>
        comma >> row.rec;
    out.push_back(row);
  }
  return out;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"num_stages", c.num_stages},
          {"iters_per_stage", c.iters_per_stage},
          {"filters", c.filters},
          {"d2_dilation", c.d2_dilation},
          {"min_size", c.min_size},
          {"lr", c.lr},
          {"lr_scale_lower", c.lr_scale_lower},
          {"concurrent_stages", c.concurrent_stages},
          {"rec_weight", c.rec_weight},
          {"gp_weight", c.gp_weight},
          {"d_steps", c.d_steps},
          {"g_steps", c.g_steps},
          {"d2_start_stage", c.d2_start_stage},
          {"seed", c.seed},
          {"feature_upsample_margin", c.feature_upsample_margin}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.num_stages = j.value("num_stages", c.num_stages);
  c.iters_per_stage = j.value("iters_per_stage", c.iters_per_stage);
  c.filters = j.value("filters", c.filters);
  c.d2_dilation = j.value("d2_dilation", c.d2_dilation);
  c.min_size = j.value("min_size", c.min_size);
  c.lr = j.value("lr", c.lr);
  c.lr_scale_lower = j.value("lr_scale_lower", c.lr_scale_lower);
  c.concurrent_stages = j.value("concurrent_stages", c.concurrent_stages);
  c.rec_weight = j.value("rec_weight", c.rec_weight);
  c.gp_weight = j.value("gp_weight", c.gp_weight);
  c.d_steps = j.value("d_steps", c.d_steps);
  c.g_steps = j.value("g_steps", c.g_steps);
  c.d2_start_stage = j.value("d2_start_stage", c.d2_start_stage);
  c.seed = j.value("seed", c.seed);
  c.feature_upsample_margin = j.value("feature_upsample_margin", c.feature_upsample_margin);
  return c;
}

/// Writes the checkpoint directory: manifest.json, per-stage generator blobs,
/// discriminator blobs, reconstruction noise, and the loss history CSV. Blob
/// files are published atomically (write-then-rename), the manifest last.
inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  nlohmann::json blobs;
  blobs["gen_stages"] = nlohmann::json::array();
  for (int s = 0; s < ck.gen.num_stages(); ++s) {
    blob::NamedTensors ts;
    if (s == 0) {
      auto h = ckpt_detail::block_tensors("head", ck.gen.head);
      ts.insert(ts.end(), h.begin(), h.end());
    }
    for (int i = 0; i < 3; ++i) {
      auto b = ckpt_detail::block_tensors(
          "body." + std::to_string(s) + "." + std::to_string(i),
          ck.gen.body[static_cast<size_t>(s)][static_cast<size_t>(i)]);
      ts.insert(ts.end(), b.begin(), b.end());
    }
    const std::string name = gen_stage_blob_name(s);
    blob::write_blob(dir / name, ts);
    blobs["gen_stages"].push_back(name);
  }
  blob::write_blob(dir / "gen_tail.bin", ckpt_detail::conv_tensors("tail", ck.gen.tail));
  blobs["gen_tail"] = "gen_tail.bin";

  if (ck.d1) {
    blob::write_blob(dir / "disc1.bin", ckpt_detail::disc_tensors(*ck.d1));
    blobs["disc1"] = "disc1.bin";
  }
  if (ck.d2) {
    blob::write_blob(dir / "disc2.bin", ckpt_detail::disc_tensors(*ck.d2));
    blobs["disc2"] = "disc2.bin";
  }

  blob::NamedTensors noise;
  for (size_t k = 0; k < ck.fixed_noise.size(); ++k)
    noise.emplace_back("z" + std::to_string(k), ck.fixed_noise[k]);
  blob::write_blob(dir / "fixed_noise.bin", noise);
  blobs["fixed_noise"] = "fixed_noise.bin";

  write_loss_history_csv(ck.history, dir / "loss_history.csv");

  nlohmann::json m;
  m["format_version"] = kCheckpointFormatVersion;
  m["train_config"] = train_config_to_json(ck.cfg);
  m["stft"] = {{"fft_size", ck.stft.fft_size},
               {"hop", ck.stft.hop},
               {"log_epsilon", ck.stft.log_epsilon},
               {"window", "hann"}};
  m["norm"] = {{"mean", ck.norm_mean}, {"std", ck.norm_std}};
  m["sample_rate"] = ck.sample_rate;
  m["pre_pad"] = ck.pre_pad;
  m["layer_names"] = ck.layer_names;
  m["channels"] = ck.channels();
  m["trained_stages"] = ck.trained_stages;
  m["noise_amps"] = ck.noise_amps;
  m["optimizer"] = {{"type", "adam"}, {"beta1", kAdamBeta1}, {"beta2", kAdamBeta2}};
  m["stage_shapes"] = nlohmann::json::array();
  for (const auto& s : ck.stage_shapes) m["stage_shapes"].push_back({s[0], s[1]});
  m["blobs"] = blobs;

  const std::filesystem::path tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp.string());
    out << m.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, dir / "manifest.json");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw RuntimeFailure("missing checkpoint manifest: " + manifest_path.string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure("corrupt checkpoint manifest " + manifest_path.string() + ": " +
                         e.what());
  }
  if (m.value("format_version", -1) != kCheckpointFormatVersion)
    throw RuntimeFailure("unsupported checkpoint format version in " + manifest_path.string());

  Checkpoint ck;
  ck.cfg = train_config_from_json(m.at("train_config"));
  ck.stft.fft_size = m.at("stft").at("fft_size").get<int>();
  ck.stft.hop = m.at("stft").at("hop").get<int>();
  ck.stft.log_epsilon = m.at("stft").at("log_epsilon").get<double>();
  ck.norm_mean = m.at("norm").at("mean").get<double>();
  ck.norm_std = m.at("norm").at("std").get<double>();
  ck.sample_rate = m.at("sample_rate").get<int>();
  ck.pre_pad = m.value("pre_pad", 0);
  ck.layer_names = m.at("layer_names").get<std::vector<std::string>>();
  ck.trained_stages = m.at("trained_stages").get<int>();
  ck.noise_amps = m.at("noise_amps").get<std::vector<double>>();
  for (const auto& s : m.at("stage_shapes"))
    ck.stage_shapes.push_back({s.at(0).get<int>(), s.at(1).get<int>()});

  const int channels = m.at("channels").get<int>();
  const auto& blobs = m.at("blobs");

  ck.gen.channels = channels;
  ck.gen.filters = ck.cfg.filters;
  ck.gen.margin = ck.cfg.feature_upsample_margin;
  const auto gen_stage_files = blobs.at("gen_stages").get<std::vector<std::string>>();
  for (size_t s = 0; s < gen_stage_files.size(); ++s) {
    const auto path = dir / gen_stage_files[s];
    const auto ts = blob::read_blob(path);
    if (s == 0) ckpt_detail::load_block(ck.gen.head, ts, "head", path);
    std::array<ConvBlock, 3> stage;
    for (int i = 0; i < 3; ++i)
      ckpt_detail::load_block(stage[static_cast<size_t>(i)], ts,
                              "body." + std::to_string(s) + "." + std::to_string(i), path);
    ck.gen.body.push_back(std::move(stage));
  }
  {
    const auto path = dir / blobs.at("gen_tail").get<std::string>();
    const auto ts = blob::read_blob(path);
    ckpt_detail::load_conv(ck.gen.tail, ts, "tail", path);
  }
  if (blobs.contains("disc1"))
    ck.d1 = ckpt_detail::load_disc(dir / blobs.at("disc1").get<std::string>(), channels,
                                   ck.cfg.filters, 1);
  if (blobs.contains("disc2"))
    ck.d2 = ckpt_detail::load_disc(dir / blobs.at("disc2").get<std::string>(), channels,
                                   ck.cfg.filters, ck.cfg.d2_dilation);
  {
    const auto path = dir / blobs.at("fixed_noise").get<std::string>();
    const auto ts = blob::read_blob(path);
    for (size_t k = 0; k < ts.size(); ++k)
      ck.fixed_noise.push_back(blob::find(ts, "z" + std::to_string(k), path));
  }
  ck.history = read_loss_history_csv(dir / "loss_history.csv");

  if (ck.gen.num_stages() != ck.trained_stages)
    throw RuntimeFailure("checkpoint " + dir.string() + " has " +
                         std::to_string(ck.gen.num_stages()) + " generator stages, expected " +
                         std::to_string(ck.trained_stages));
  return ck;
}

}  // namespace sfxgan
