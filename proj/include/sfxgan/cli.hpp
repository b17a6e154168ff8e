#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfxgan/audio_io.hpp"
#include "sfxgan/checkpoint.hpp"
#include "sfxgan/config.hpp"
#include "sfxgan/inference.hpp"
#include "sfxgan/training.hpp"

namespace sfxgan::cli {

inline constexpr int kManifestSchemaVersion = 1;

/// One training run: a category preset, the layer files, explicit overrides,
/// and the output directory.
struct ExperimentManifest {
  std::string preset = "custom";
  std::vector<std::filesystem::path> layers;
  double pre_pad_ms = 0.0;
  nlohmann::json train_overrides = nlohmann::json::object();
  nlohmann::json stft_overrides = nlohmann::json::object();
  nlohmann::json synth_overrides = nlohmann::json::object();
  std::filesystem::path out_dir;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"footsteps-concrete", "footsteps-metal",
                                              "gunshot", "character-jump", "custom"};
  return names;
}

/// Category presets; custom starts from library defaults but must be fully
/// specified via overrides.
inline TrainConfig preset_config(const std::string& preset) {
  TrainConfig c;
  if (preset == "footsteps-concrete" || preset == "footsteps-metal") {
    c.iters_per_stage = 2000;
    c.filters = 64;
    c.d2_dilation = 3;
    c.min_size = 50;
  } else if (preset == "gunshot") {
    c.iters_per_stage = 8000;
    c.filters = 128;
    c.d2_dilation = 2;
    c.min_size = 11;
  } else if (preset == "character-jump") {
    c.iters_per_stage = 8000;
    c.filters = 128;
    c.d2_dilation = 3;
    c.min_size = 25;
  } else if (preset != "custom") {
    throw ValidationError("unknown preset '" + preset + "'");
  }
  return c;
}

/// Applies overrides to the preset config. A custom run must state the four
/// category-defining knobs explicitly; silent defaults are rejected.
inline TrainConfig resolve_train_config(const ExperimentManifest& m) {
  TrainConfig base = preset_config(m.preset);
  if (m.preset == "custom") {
    for (const char* key : {"iters_per_stage", "filters", "d2_dilation", "min_size"})
      if (!m.train_overrides.contains(key))
        throw ValidationError(std::string("custom preset requires explicit '") + key + "'");
  }
  nlohmann::json j = train_config_to_json(base);
  for (const auto& [key, value] : m.train_overrides.items()) {
    if (!j.contains(key)) throw ValidationError("unknown train config field '" + key + "'");
    j[key] = value;
  }
  TrainConfig out = train_config_from_json(j);
  out.validate();
  return out;
}

inline SynthesisParams resolve_synthesis_params(const ExperimentManifest& m) {
  SynthesisParams p;
  for (const auto& [key, value] : m.synth_overrides.items()) {
    if (key == "num_variations")
      p.num_variations = value.get<int>();
    else if (key == "retarget_fraction")
      p.retarget_fraction = value.get<double>();
    else if (key == "shuffle_layers")
      p.shuffle_layers = value.get<bool>();
    else if (key == "delay_range_ms") {
      p.delay_ms_lo = value.at(0).get<double>();
      p.delay_ms_hi = value.at(1).get<double>();
    } else if (key == "gain_range_db") {
      p.gain_db_lo = value.at(0).get<double>();
      p.gain_db_hi = value.at(1).get<double>();
    } else if (key == "gl_iters")
      p.gl_iters = value.get<int>();
    else if (key == "seed")
      p.seed = value.get<uint64_t>();
    else if (key == "use_fixed_noise")
      p.use_fixed_noise = value.get<bool>();
    else
      throw ValidationError("unknown synthesis field '" + key + "'");
  }
  p.validate();
  return p;
}

inline StftParams resolve_stft_params(const ExperimentManifest& m) {
  StftParams p;
  for (const auto& [key, value] : m.stft_overrides.items()) {
    if (key == "fft_size")
      p.fft_size = value.get<int>();
    else if (key == "hop")
      p.hop = value.get<int>();
    else if (key == "log_epsilon")
      p.log_epsilon = value.get<double>();
    else
      throw ValidationError("unknown stft field '" + key + "'");
  }
  p.validate();
  return p;
}

inline nlohmann::json manifest_to_json(const ExperimentManifest& m) {
  nlohmann::json j;
  j["schema_version"] = kManifestSchemaVersion;
  j["preset"] = m.preset;
  j["layers"] = nlohmann::json::array();
  for (const auto& p : m.layers) j["layers"].push_back(p.string());
  j["pre_pad_ms"] = m.pre_pad_ms;
  j["train_overrides"] = m.train_overrides;
  j["stft_overrides"] = m.stft_overrides;
  j["synth_overrides"] = m.synth_overrides;
  j["out_dir"] = m.out_dir.string();
  return j;
}

inline ExperimentManifest manifest_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", -1) != kManifestSchemaVersion)
    throw ValidationError("manifest schema_version must be " +
                          std::to_string(kManifestSchemaVersion));
  ExperimentManifest m;
  m.preset = j.value("preset", std::string("custom"));
  for (const auto& p : j.value("layers", nlohmann::json::array()))
    m.layers.emplace_back(p.get<std::string>());
  m.pre_pad_ms = j.value("pre_pad_ms", 0.0);
  m.train_overrides = j.value("train_overrides", nlohmann::json::object());
  m.stft_overrides = j.value("stft_overrides", nlohmann::json::object());
  m.synth_overrides = j.value("synth_overrides", nlohmann::json::object());
  m.out_dir = j.value("out_dir", std::string());
  return m;
}

inline ExperimentManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

inline std::filesystem::path default_out_root() {
  if (const char* env = std::getenv("SFXGAN_OUT_ROOT")) return env;
  return "runs";
}

/// Runs training from a manifest. Returns the checkpoint directory.
inline std::filesystem::path run_train(const ExperimentManifest& manifest,
                                       const ProgressFn& progress = {}) {
  if (manifest.layers.empty()) throw ValidationError("manifest field 'layers' is empty");
  if (manifest.out_dir.empty()) throw ValidationError("manifest field 'out_dir' is empty");
  const TrainConfig cfg = resolve_train_config(manifest);
  const StftParams stft = resolve_stft_params(manifest);

  std::filesystem::create_directories(manifest.out_dir);
  {
    std::ofstream out(manifest.out_dir / "run_manifest.json", std::ios::trunc);
    if (!out)
      throw ValidationError("cannot write to out_dir " + manifest.out_dir.string());
    nlohmann::json j = manifest_to_json(manifest);
    j["resolved_train_config"] = train_config_to_json(cfg);
    out << j.dump(2) << '\n';
  }

  const AudioLayerSet layers = load_layers(manifest.layers, manifest.pre_pad_ms);
  const std::filesystem::path ckpt_dir = manifest.out_dir / "checkpoint";
  train(layers, cfg, stft, ckpt_dir, progress);
  return ckpt_dir;
}

struct SynthOutput {
  std::vector<std::filesystem::path> files;
  DiversityReport report;
};

/// Synthesizes a batch from a checkpoint and writes mixes (+ optional layer
/// stems) and a JSON manifest describing every variation.
inline SynthOutput run_synth(const std::filesystem::path& checkpoint_dir,
                             const SynthesisParams& params,
                             const std::filesystem::path& out_dir, bool write_layers = false,
                             WavFormat format = WavFormat::Float32,
                             const ProgressFn& progress = {}) {
  const Checkpoint ck = load_checkpoint(checkpoint_dir);
  std::filesystem::create_directories(out_dir);
  const auto batch = synthesize_batch(ck, params);

  SynthOutput out;
  nlohmann::json variations = nlohmann::json::array();
  std::vector<std::vector<float>> mixes;
  for (size_t i = 0; i < batch.size(); ++i) {
    const Variation& v = batch[i];
    char name[64];
    std::snprintf(name, sizeof(name), "var_%03zu_mix.wav", i);
    const auto mix_path = out_dir / name;
    const int64_t clipped = write_wav(v.mix, ck.sample_rate, mix_path, format);
    out.files.push_back(mix_path);
    nlohmann::json vj;
    vj["index"] = i;
    vj["file"] = mix_path.filename().string();
    vj["noise_seed"] = v.noise_seed;
    vj["retarget_multiplier"] = v.retarget_multiplier;
    vj["frames"] = v.frames;
    vj["samples"] = v.mix.size();
    vj["delays_ms"] = v.delays_ms;
    vj["gains_db"] = v.gains_db;
    vj["clipped_samples"] = v.clipped_samples;
    if (clipped > 0 && progress)
      progress("warning: " + std::to_string(clipped) + " samples clipped in " +
               mix_path.filename().string());
    if (write_layers) {
      vj["layer_files"] = nlohmann::json::array();
      for (size_t c = 0; c < v.layers.size(); ++c) {
        const std::string lname = ck.layer_names.size() == v.layers.size()
                                      ? ck.layer_names[c]
                                      : "layer_" + std::to_string(c);
        char lfile[128];
        std::snprintf(lfile, sizeof(lfile), "var_%03zu_layer_%zu_%s.wav", i, c, lname.c_str());
        const auto lpath = out_dir / lfile;
        write_wav(v.layers[c], ck.sample_rate, lpath, format);
        out.files.push_back(lpath);
        vj["layer_files"].push_back(lpath.filename().string());
      }
    }
    variations.push_back(vj);
    mixes.push_back(v.mix);
  }

  if (mixes.size() >= 2) out.report = diversity_report(mixes, ck.stft);
  for (const auto& d : out.report.durations) (void)d;

  nlohmann::json mj;
  mj["schema_version"] = kManifestSchemaVersion;
  mj["checkpoint"] = checkpoint_dir.string();
  mj["num_variations"] = params.num_variations;
  mj["retarget_fraction"] = params.retarget_fraction;
  mj["shuffle_layers"] = params.shuffle_layers;
  mj["delay_range_ms"] = {params.delay_ms_lo, params.delay_ms_hi};
  mj["gain_range_db"] = {params.gain_db_lo, params.gain_db_hi};
  mj["gl_iters"] = params.gl_iters;
  mj["seed"] = params.seed;
  mj["variations"] = variations;
  const auto manifest_path = out_dir / "synth_manifest.json";
  std::ofstream mo(manifest_path, std::ios::trunc);
  if (!mo) throw ValidationError("cannot write " + manifest_path.string());
  mo << mj.dump(2) << '\n';
  out.files.push_back(manifest_path);
  return out;
}

/// Human-readable checkpoint report: config, stage shapes, per-stage
/// parameter counts, norm stats, and a loss-history summary.
inline std::string inspect_text(const std::filesystem::path& checkpoint_dir) {
  const Checkpoint ck = load_checkpoint(checkpoint_dir);
  std::ostringstream os;
  os << "checkpoint: " << checkpoint_dir.string() << "\n";
  os << "trained stages: " << ck.trained_stages << " / " << ck.cfg.num_stages << "\n";
  os << "channels: " << ck.channels() << ", filters: " << ck.cfg.filters
     << ", d2_dilation: " << ck.cfg.d2_dilation << ", min_size: " << ck.cfg.min_size << "\n";
  os << "iters_per_stage: " << ck.cfg.iters_per_stage << ", lr: " << ck.cfg.lr
     << ", rec_weight: " << ck.cfg.rec_weight << ", gp_weight: " << ck.cfg.gp_weight << "\n";
  os << "seed: " << ck.cfg.seed << ", d2_start_stage: " << ck.cfg.resolved_d2_start() << "\n";
  os << "stft: fft_size " << ck.stft.fft_size << ", hop " << ck.stft.hop << ", log_epsilon "
     << ck.stft.log_epsilon << "\n";
  os << "normalization: mean " << ck.norm_mean << ", std " << ck.norm_std << "\n";
  os << "sample_rate: " << ck.sample_rate << "\n";
  os << "stages (F x T, generator params up to stage, noise amp):\n";
  for (int s = 0; s < ck.trained_stages; ++s) {
    os << "  stage " << s << ": " << ck.stage_shapes[static_cast<size_t>(s)][0] << " x "
       << ck.stage_shapes[static_cast<size_t>(s)][1] << ", params "
       << ck.gen.parameter_count(s) << ", amp "
       << ck.noise_amps[static_cast<size_t>(s)] << "\n";
  }
  if (ck.d1) os << "discriminator 1 params: " << ck.d1->parameter_count() << "\n";
  if (ck.d2)
    os << "discriminator 2 params: " << ck.d2->parameter_count() << " (dilation "
       << ck.d2->dilation << ")\n";
  if (!ck.history.empty()) {
    os << "loss history: " << ck.history.size() << " iterations\n";
    for (int s = 0; s < ck.trained_stages; ++s) {
      const LossRow* last = nullptr;
      for (const auto& row : ck.history)
        if (row.stage == s) last = &row;
      if (last)
        os << "  stage " << s << " final: d=" << last->d_loss << " g_adv=" << last->g_adv
           << " rec=" << last->rec << "\n";
    }
  }
  return os.str();
}

}  // namespace sfxgan::cli
