// Acceptance suite: one test case per criterion, one [PASS]/[FAIL] line each.

#include <catch2/catch_amalgamated.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include "sfxgan/cli.hpp"
#include "sfxgan/inference.hpp"
#include "sfxgan/training.hpp"
#include "test_helpers.hpp"

using namespace sfxgan;
using test_helpers::one_shot_signal;
using test_helpers::TempDir;

namespace {

class AcceptanceReporter : public Catch::EventListenerBase {
 public:
  using EventListenerBase::EventListenerBase;
  void testCaseEnded(const Catch::TestCaseStats& stats) override {
    std::printf("[%s] %s\n", stats.totals.assertions.allPassed() ? "PASS" : "FAIL",
                stats.testInfo->name.c_str());
    std::fflush(stdout);
  }
};
CATCH_REGISTER_LISTENER(AcceptanceReporter)

// 0.2 s two-layer chime: decaying partials, like a clean synthesized one-shot.
AudioLayerSet toy_input() {
  AudioLayerSet set;
  auto make_layer = [](double hz, double decay_rate) {
    std::vector<float> x(8820);
    for (int i = 0; i < 8820; ++i) {
      const double t = i / 44100.0;
      const double env = std::exp(-decay_rate * t);
      x[static_cast<size_t>(i)] = static_cast<float>(
          env * (0.8 * std::sin(2.0 * std::numbers::pi * hz * t) +
                 0.3 * std::sin(2.0 * std::numbers::pi * 2.0 * hz * t) +
                 0.15 * std::sin(2.0 * std::numbers::pi * 3.37 * hz * t)));
    }
    return x;
  };
  set.layers.push_back(make_layer(350.0, 18.0));
  set.layers.push_back(make_layer(620.0, 28.0));
  set.names = {"toy_a", "toy_b"};
  return set;
}

TrainConfig smoke_config() {
  TrainConfig cfg;
  cfg.num_stages = 2;
  cfg.concurrent_stages = 2;
  cfg.iters_per_stage = 200;
  cfg.filters = 16;
  cfg.min_size = 16;
  cfg.d2_dilation = 2;
  cfg.seed = 7;
  return cfg;
}

struct SmokeRun {
  Checkpoint ckpt;
  double seconds = 0.0;
  TempDir dir{"acceptance_smoke"};
};

// Criterion 7 trains once; 8, 9, and 10 reuse the artifacts.
SmokeRun& smoke_run() {
  static SmokeRun run = [] {
    SmokeRun r;
    const auto t0 = std::chrono::steady_clock::now();
    r.ckpt = train(toy_input(), smoke_config(), StftParams{}, r.dir.path / "ck");
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }();
  return run;
}

std::vector<float> flatten_params(const std::vector<ad::Var>& params) {
  std::vector<float> out;
  for (const auto& p : params)
    out.insert(out.end(), p->value.data.begin(), p->value.data.end());
  return out;
}

}  // namespace

TEST_CASE("criterion 1: STFT shape law") {
  StftParams p;
  REQUIRE(p.frames_for(44100) == 341);
  REQUIRE(p.bins() == 257);
  REQUIRE(p.length_for(341) == 44032);

  Rng rng(1);
  AudioLayerSet set;
  set.layers.push_back(one_shot_signal(rng, 44100));
  set.names = {"x"};
  const auto spec = stft_log_magnitude(set, p);
  REQUIRE(spec.data.shape == std::vector<int>{1, 257, 341});
  const auto audio = denormalize_and_invert(spec, 0);
  REQUIRE(audio.layers[0].size() == 44032);
}

TEST_CASE("criterion 2: normalization is exact") {
  StftParams p;
  Rng rng(2);
  AudioLayerSet set;
  set.layers.push_back(one_shot_signal(rng, 12000, 500.0));
  set.layers.push_back(one_shot_signal(rng, 12000, 900.0));
  set.names = {"a", "b"};
  const auto spec = stft_log_magnitude(set, p);
  REQUIRE(std::abs(mean_of(spec.data)) <= 1e-5);
  REQUIRE(std::abs(stddev_of(spec.data) - 1.0) <= 1e-5);

  // denormalize(normalize(x)) = x within 1e-5 against an independent STFT.
  std::vector<double> buf(set.layers[0].begin(), set.layers[0].end());
  const auto raw = detail::stft(buf, p);
  for (int f = 0; f < spec.bins(); f += 7)
    for (int t = 0; t < spec.frames(); t += 11) {
      const double expect = std::log(std::abs(raw.at(f, t)) + p.log_epsilon);
      const double got = spec.data.at3(0, f, t) * spec.norm_std + spec.norm_mean;
      REQUIRE(got == Catch::Approx(expect).margin(1e-5));
    }
}

TEST_CASE("criterion 3: Griffin-Lim consistency and sine reconstruction") {
  StftParams p;
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    AudioLayerSet set;
    set.layers.push_back(
        one_shot_signal(rng, 5000 + 700 * trial, 150.0 + 130.0 * trial));
    set.names = {"x"};
    const auto spec = stft_log_magnitude(set, p);
    Tensor mag({spec.bins(), spec.frames()});
    for (int64_t i = 0; i < mag.numel(); ++i)
      mag.data[i] = static_cast<float>(std::max(
          0.0, std::exp(spec.data.data[i] * spec.norm_std + spec.norm_mean) - p.log_epsilon));
    double prev = -1.0;
    for (int iters : {0, 8, 32}) {
      const auto audio = denormalize_and_invert(spec, iters);
      const double err = spectral_consistency(mag, audio.layers[0], p);
      INFO("trial " << trial << " iters " << iters << " err " << err);
      if (prev >= 0.0) REQUIRE(err <= prev + 1e-9);
      prev = err;
    }
  }

  // Pure 1 kHz sine, 60 iterations, log-spectral relative error <= 0.05.
  AudioLayerSet sine_set;
  std::vector<float> sine(44100);
  for (int i = 0; i < 44100; ++i)
    sine[static_cast<size_t>(i)] =
        static_cast<float>(std::sin(2.0 * std::numbers::pi * 1000.0 * i / 44100.0));
  sine_set.layers.push_back(std::move(sine));
  sine_set.names = {"sine"};
  const auto spec = stft_log_magnitude(sine_set, StftParams{});
  const auto rec = denormalize_and_invert(spec, 60);
  AudioLayerSet rec_set;
  rec_set.layers.push_back(rec.layers[0]);
  rec_set.names = {"rec"};
  const auto rec_spec = stft_log_magnitude(rec_set, StftParams{});
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < spec.data.numel(); ++i) {
    const double a = spec.data.data[i] * spec.norm_std + spec.norm_mean;
    const double b = rec_spec.data.data[i] * rec_spec.norm_std + rec_spec.norm_mean;
    num += (a - b) * (a - b);
    den += a * a;
  }
  REQUIRE(std::sqrt(num / den) <= 0.05);
}

TEST_CASE("criterion 4: pyramid schedule matches the oracle; last stage bit-identical") {
  const auto shapes = pyramid_shapes(100, 257, PyramidSpec{10, 25});
  for (int n = 0; n < 10; ++n) {
    int expect;
    if (n == 9) {
      expect = 100;
    } else {
      expect = static_cast<int>(std::lround(25.0 * std::pow(100.0 / 25.0, n / 9.0)));
    }
    REQUIRE(shapes[static_cast<size_t>(n)][0] == expect);
  }
  Rng rng(4);
  MultiChannelSpectrogram spec;
  spec.data = rng.normal_tensor({3, 100, 257});
  spec.norm_std = 1.0;
  const auto pyr = build_pyramid(spec, PyramidSpec{10, 25});
  REQUIRE(pyr.size() == 10);
  REQUIRE(pyr.back().data == spec.data.data);
  for (size_t n = 0; n < pyr.size(); ++n) {
    REQUIRE(pyr[n].dim(0) == 3);
    REQUIRE(pyr[n].dim(1) == shapes[n][0]);
    REQUIRE(pyr[n].dim(2) == shapes[n][1]);
  }
}

TEST_CASE("criterion 5: architecture conformance") {
  Rng rng(5);

  // Generator block count: 4 + 3n hidden blocks plus one output conv.
  Generator gen(3, 8, 0.1, rng);
  for (int n = 0; n < 4; ++n) {
    if (n > 0) gen.add_stage(rng);
    const int hidden_blocks = 1 + 3 * gen.num_stages();
    REQUIRE(hidden_blocks == 4 + 3 * n);
  }
  const int64_t delta = gen.parameter_count(2) - gen.parameter_count(1);
  REQUIRE(delta == 3 * (int64_t(8) * 8 * 9 + 8 + 2 * 8));

  // D1/D2 parameter shapes identical.
  Discriminator d1(3, 8, 1, rng);
  Discriminator d2(3, 8, 3, rng);
  const auto p1 = d1.params(), p2 = d2.params();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) REQUIRE(p1[i]->value.shape == p2[i]->value.shape);

  // Internal batch = C x input batch.
  {
    ad::NoGradGuard ng;
    REQUIRE(d1.forward(ad::constant(rng.normal_tensor({2, 3, 40, 40})))->value.dim(0) == 6);
  }

  // Receptive fields by gradient-footprint probing.
  for (const auto& [dilation, expect] : std::vector<std::pair<int, int>>{{1, 11}, {3, 31}}) {
    Discriminator d(2, 4, dilation, rng);
    const int S = 2 * expect + 9;
    auto x = ad::leaf(rng.normal_tensor({1, 2, S, S}));
    ad::Var map = d.forward(x);
    const int W = map->value.dim(3);
    ad::Var probe = ad::pick(map, int64_t(S / 2) * W + S / 2);
    auto gmap = ad::backward(probe);
    const Tensor& g = gmap.at(x.get())->value;
    int h0 = S, h1 = -1, w0 = S, w1 = -1;
    for (int c = 0; c < 2; ++c)
      for (int h = 0; h < S; ++h)
        for (int w = 0; w < S; ++w)
          if (g.at4(0, c, h, w) != 0.0f) {
            h0 = std::min(h0, h);
            h1 = std::max(h1, h);
            w0 = std::min(w0, w);
            w1 = std::max(w1, w);
          }
    REQUIRE(h1 - h0 + 1 == expect);
    REQUIRE(w1 - w0 + 1 == expect);
  }
}

TEST_CASE("criterion 6: WGAN-GP analytic cases and linear gradient oracle") {
  Rng rng(6);
  Tensor map = rng.normal_tensor({1, 1, 6, 8});

  {  // identical maps, unit norms -> d_loss = 0 exactly (to 1e-6)
    auto norms = ad::constant(Tensor({2}, 1.0f));
    auto [d_loss, g_adv] = wgan_gp_losses(ad::constant(map), ad::constant(map), norms, 10.0);
    REQUIRE(std::abs(d_loss->value.data[0]) <= 1e-6);
  }
  {  // zero norms -> penalty = gp_weight
    auto norms = ad::constant(Tensor({5}, 0.0f));
    auto [d_loss, g_adv] = wgan_gp_losses(ad::constant(map), ad::constant(map), norms, 10.0);
    REQUIRE(d_loss->value.data[0] == Catch::Approx(10.0).margin(1e-6));
  }

  // Linear discriminator: autodiff interpolate gradient equals the exact
  // gradient of the linear map (recovered by basis probing), within 1e-5.
  auto w = ad::leaf(rng.normal_tensor({1, 2, 3, 3}, 0.6));
  const int H = 4, W = 5;
  auto score_of = [&](const Tensor& x) {
    ad::NoGradGuard ng;
    return double(ad::sum_all(ad::conv2d(ad::constant(x), w, nullptr, 1))->value.data[0]);
  };
  const double s0 = score_of(Tensor({1, 2, H, W}));
  Tensor oracle({1, 2, H, W});
  for (int64_t i = 0; i < oracle.numel(); ++i) {
    Tensor basis({1, 2, H, W});
    basis.data[i] = 1.0f;
    oracle.data[i] = static_cast<float>(score_of(basis) - s0);
  }
  double oracle_norm = 0.0;
  for (float v : oracle.data) oracle_norm += double(v) * v;
  oracle_norm = std::sqrt(oracle_norm);

  for (int trial = 0; trial < 3; ++trial) {
    auto xhat = ad::leaf(rng.normal_tensor({1, 2, H, W}));
    auto gmap = ad::backward(ad::sum_all(ad::conv2d(xhat, w, nullptr, 1)), true);
    const Tensor& g = gmap.at(xhat.get())->value;
    double norm = 0.0;
    for (int64_t i = 0; i < g.numel(); ++i) {
      REQUIRE(g.data[i] == Catch::Approx(oracle.data[i]).margin(1e-5));
      norm += double(g.data[i]) * g.data[i];
    }
    REQUIRE(std::sqrt(norm) == Catch::Approx(oracle_norm).margin(1e-5));
  }
}

TEST_CASE("criterion 7: overfit smoke training") {
  auto& run = smoke_run();
  const auto& history = run.ckpt.history;
  REQUIRE(history.size() == 400);

  // Final-stage reconstruction loss must fall below 25% of its iteration-10
  // value within the stage.
  double rec_iter10 = -1.0, rec_final = -1.0;
  for (const auto& row : history) {
    if (row.stage != 1) continue;
    if (row.iteration == 10) rec_iter10 = row.rec;
    rec_final = row.rec;
  }
  REQUIRE(rec_iter10 > 0.0);
  INFO("rec at iter 10: " << rec_iter10 << ", final: " << rec_final
                          << ", ratio: " << rec_final / rec_iter10);
  REQUIRE(rec_final < 0.25 * rec_iter10);
  INFO("smoke training took " << run.seconds << " s");
  REQUIRE(run.seconds <= 600.0);
}

TEST_CASE("criterion 8: retargeting contract") {
  const auto& ck = smoke_run().ckpt;
  const int T0 = ck.stage_shapes.back()[1];

  SynthesisParams p;
  p.num_variations = 100;
  p.retarget_fraction = 0.15;
  p.gl_iters = 0;
  p.delay_ms_lo = p.delay_ms_hi = 0.0;
  p.gain_db_lo = p.gain_db_hi = 0.0;
  p.seed = 8;
  const int lo = static_cast<int>(std::ceil(0.85 * T0));
  const int hi = static_cast<int>(std::floor(1.15 * T0));
  for (const auto& v : synthesize_batch(ck, p)) {
    REQUIRE(v.frames >= lo);
    REQUIRE(v.frames <= hi);
  }

  p.retarget_fraction = 0.0;
  p.num_variations = 20;
  for (const auto& v : synthesize_batch(ck, p)) REQUIRE(v.frames == T0);
}

TEST_CASE("criterion 9: determinism and checkpoint round-trip") {
  // Two identical short runs: identical loss history and weights.
  Rng rng(9);
  AudioLayerSet tiny;
  tiny.layers.push_back(one_shot_signal(rng, 2205, 400.0));
  tiny.layers.push_back(one_shot_signal(rng, 2205, 800.0));
  tiny.names = {"a", "b"};
  TrainConfig cfg;
  cfg.num_stages = 2;
  cfg.concurrent_stages = 2;
  cfg.iters_per_stage = 20;
  cfg.filters = 8;
  cfg.min_size = 8;
  cfg.d_steps = 1;
  cfg.g_steps = 1;
  cfg.seed = 99;
  const Checkpoint a = train(tiny, cfg);
  const Checkpoint b = train(tiny, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) {
    REQUIRE(a.history[i].d_loss == b.history[i].d_loss);
    REQUIRE(a.history[i].g_adv == b.history[i].g_adv);
    REQUIRE(a.history[i].rec == b.history[i].rec);
  }
  REQUIRE(flatten_params(a.gen.all_params()) == flatten_params(b.gen.all_params()));

  // Smoke checkpoint: save -> load -> bit-identical synthesis.
  auto& run = smoke_run();
  const Checkpoint loaded = load_checkpoint(run.dir.path / "ck");
  SynthesisParams p;
  p.num_variations = 3;
  p.gl_iters = 4;
  p.seed = 77;
  const auto s1 = synthesize_batch(run.ckpt, p);
  const auto s2 = synthesize_batch(loaded, p);
  for (size_t i = 0; i < s1.size(); ++i) REQUIRE(s1[i].mix == s2[i].mix);
}

TEST_CASE("criterion 10: diversity of the synthesized batch") {
  const auto& ck = smoke_run().ckpt;
  SynthesisParams p;
  p.num_variations = 10;
  p.retarget_fraction = 0.15;
  p.shuffle_layers = true;
  p.gl_iters = 4;
  p.seed = 10;
  const auto batch = synthesize_batch(ck, p);
  std::vector<std::vector<float>> mixes;
  std::set<size_t> durations;
  for (const auto& v : batch) {
    mixes.push_back(v.mix);
    durations.insert(v.mix.size());
  }
  const auto rep = diversity_report(mixes, ck.stft);
  INFO("min pairwise distance " << rep.min_distance);
  REQUIRE(rep.min_distance > 0.0);
  REQUIRE(durations.size() >= 3);
}

TEST_CASE("criterion 11: preset fidelity") {
  const struct {
    const char* name;
    int iters, filters, dilation, min_size;
  } rows[] = {
      {"footsteps-concrete", 2000, 64, 3, 50},
      {"footsteps-metal", 2000, 64, 3, 50},
      {"gunshot", 8000, 128, 2, 11},
      {"character-jump", 8000, 128, 3, 25},
  };
  for (const auto& row : rows) {
    cli::ExperimentManifest m;
    m.preset = row.name;
    const TrainConfig cfg = cli::resolve_train_config(m);
    INFO(row.name);
    REQUIRE(cfg.iters_per_stage == row.iters);
    REQUIRE(cfg.filters == row.filters);
    REQUIRE(cfg.d2_dilation == row.dilation);
    REQUIRE(cfg.min_size == row.min_size);
  }
}
