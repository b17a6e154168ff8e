#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "sfxgan/cli.hpp"

namespace fs = std::filesystem;
using namespace sfxgan;

namespace {

int run(int argc, char** argv) {
  CLI::App app{"sfxgan: single-example GAN for one-shot sound-effect variations"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train_cmd = app.add_subcommand(
      "train", "Train on one layered sound effect and write a checkpoint");
  cli::ExperimentManifest manifest;
  std::string preset = "custom";
  std::vector<std::string> layer_paths;
  std::string out_dir;
  std::string from_manifest;
  train_cmd->add_option("--preset", preset, "Category preset")
      ->check(CLI::IsMember(cli::preset_names()));
  train_cmd->add_option("--layer,layers", layer_paths, "Mono WAV layer files");
  train_cmd->add_option("--out", out_dir, "Output directory");
  train_cmd->add_option("--pre_pad_ms", manifest.pre_pad_ms,
                        "Leading silence added to every layer (ms)");
  train_cmd->add_option("--from_manifest", from_manifest,
                        "Load an experiment manifest JSON and run it");

  // Overrides mirror TrainConfig field names one-to-one. Only flags the user
  // actually passed become overrides, so presets stay authoritative.
  nlohmann::json& ov = manifest.train_overrides;
  auto add_override = [&](const std::string& name, const std::string& help) {
    train_cmd
        ->add_option_function<std::string>(
            "--" + name,
            [&ov, name](const std::string& v) { ov[name] = nlohmann::json::parse(v); }, help)
        ->type_name(name == "lr" || name == "lr_scale_lower" || name == "rec_weight" ||
                            name == "gp_weight" || name == "feature_upsample_margin"
                        ? "FLOAT"
                        : "INT");
  };
  for (const char* name :
       {"num_stages", "iters_per_stage", "filters", "d2_dilation", "min_size", "lr",
        "lr_scale_lower", "concurrent_stages", "rec_weight", "gp_weight", "d_steps",
        "g_steps", "d2_start_stage", "seed", "feature_upsample_margin"})
    add_override(name, std::string("TrainConfig.") + name);

  // ---- synth ----
  auto* synth_cmd =
      app.add_subcommand("synth", "Synthesize variations from a checkpoint");
  std::string ckpt_dir;
  std::string synth_out;
  SynthesisParams sp;
  bool write_layers = false;
  bool pcm16 = false;
  std::string synth_manifest;
  synth_cmd->add_option("--checkpoint", ckpt_dir, "Checkpoint directory");
  synth_cmd->add_option("--out", synth_out, "Output directory");
  synth_cmd->add_option("--from_manifest", synth_manifest,
                        "Take synthesis parameters from an experiment manifest");
  synth_cmd->add_option("--num_variations", sp.num_variations, "Batch size");
  synth_cmd->add_option("--retarget_fraction", sp.retarget_fraction,
                        "Time-axis randomization bound r: widths in [1-r, 1+r]");
  synth_cmd->add_flag("--shuffle_layers,!--no-shuffle_layers", sp.shuffle_layers,
                      "Shuffle layers across the batch per channel");
  std::vector<double> delay_range, gain_range;
  synth_cmd->add_option("--delay_range_ms", delay_range,
                        "Per-layer random delay range (lo hi)")
      ->expected(2);
  synth_cmd->add_option("--gain_range_db", gain_range,
                        "Per-layer random gain range in dB (lo hi)")
      ->expected(2);
  synth_cmd->add_option("--gl_iters", sp.gl_iters, "Griffin-Lim iterations");
  synth_cmd->add_option("--seed", sp.seed, "Batch seed");
  synth_cmd->add_flag("--write_layers", write_layers, "Also write per-layer stems");
  synth_cmd->add_flag("--pcm16", pcm16, "Write 16-bit PCM instead of float-32");

  // ---- inspect ----
  auto* inspect_cmd = app.add_subcommand("inspect", "Describe a checkpoint");
  std::string inspect_dir;
  inspect_cmd->add_option("--checkpoint", inspect_dir, "Checkpoint directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // command-line mistakes are validation errors
  }

  auto progress = [](const std::string& line) { std::cout << line << "\n"; };

  if (train_cmd->parsed()) {
    fs::path ckpt;
    try {
      if (!from_manifest.empty()) {
        manifest = cli::load_manifest(from_manifest);
        if (!out_dir.empty()) manifest.out_dir = out_dir;
      } else {
        manifest.preset = preset;
        for (const auto& p : layer_paths) manifest.layers.emplace_back(p);
        manifest.out_dir = out_dir.empty()
                               ? cli::default_out_root() / fs::path("train-" + preset)
                               : fs::path(out_dir);
      }
      ckpt = cli::run_train(manifest, progress);
    } catch (const RuntimeFailure& e) {
      std::cerr << "error: " << e.what() << "\n";
      std::cerr << "last good checkpoint (if any): "
                << (manifest.out_dir / "checkpoint").string() << "\n";
      return 2;
    }
    const Checkpoint ck = load_checkpoint(ckpt);
    if (!ck.history.empty()) {
      const auto& last = ck.history.back();
      std::cout << "final losses: d=" << last.d_loss << " g_adv=" << last.g_adv
                << " rec=" << last.rec << "\n";
    }
    std::cout << "checkpoint written to " << ckpt.string() << "\n";
    return 0;
  }

  if (synth_cmd->parsed()) {
    if (!synth_manifest.empty()) {
      const auto m = cli::load_manifest(synth_manifest);
      sp = cli::resolve_synthesis_params(m);
      if (ckpt_dir.empty()) ckpt_dir = (m.out_dir / "checkpoint").string();
    }
    if (ckpt_dir.empty())
      throw ValidationError("synth requires --checkpoint (or --from_manifest)");
    if (delay_range.size() == 2) {
      sp.delay_ms_lo = delay_range[0];
      sp.delay_ms_hi = delay_range[1];
    }
    if (gain_range.size() == 2) {
      sp.gain_db_lo = gain_range[0];
      sp.gain_db_hi = gain_range[1];
    }
    const fs::path out = synth_out.empty()
                             ? cli::default_out_root() / fs::path("synth")
                             : fs::path(synth_out);
    const auto result =
        cli::run_synth(ckpt_dir, sp, out, write_layers,
                       pcm16 ? WavFormat::Pcm16 : WavFormat::Float32, progress);
    std::cout << "wrote " << result.files.size() << " files to " << out.string() << "\n";
    if (result.report.durations.size() >= 2) {
      std::cout << "diversity: pairwise log-spectrogram distance mean "
                << result.report.mean_distance << ", min " << result.report.min_distance
                << ", max " << result.report.max_distance << "\n";
      std::cout << "durations (samples):";
      for (auto d : result.report.durations) std::cout << " " << d;
      std::cout << "\n";
    }
    return 0;
  }

  if (inspect_cmd->parsed()) {
    std::cout << cli::inspect_text(inspect_dir);
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
