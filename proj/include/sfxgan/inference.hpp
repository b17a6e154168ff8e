#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sfxgan/autodiff.hpp"
#include "sfxgan/checkpoint.hpp"
#include "sfxgan/config.hpp"
#include "sfxgan/rng.hpp"
#include "sfxgan/spectral.hpp"

namespace sfxgan {

struct Variation {
  std::vector<float> mix;
  std::vector<std::vector<float>> layers;  // delayed + gained stems, mix-aligned
  double retarget_multiplier = 1.0;
  int frames = 0;  // final-stage T after retargeting
  std::vector<double> delays_ms;
  std::vector<double> gains_db;
  uint64_t noise_seed = 0;
  int64_t clipped_samples = 0;
};

namespace infer_detail {

/// Integer width after retargeting, clamped so the +/-r bound holds exactly.
inline int retarget_width(int width, double multiplier, double r) {
  const int lo = static_cast<int>(std::ceil((1.0 - r) * width));
  const int hi = static_cast<int>(std::floor((1.0 + r) * width));
  const int w = static_cast<int>(std::lround(multiplier * width));
  return std::clamp(w, lo, hi);
}

/// One generator pass at the final trained stage; returns per-layer audio.
inline std::vector<std::vector<float>> synthesize_layers(
    const Checkpoint& ck, std::span<const Tensor> noise, int gl_iters) {
  ad::NoGradGuard ng;
  const Tensor out = ck.gen.forward(noise, ck.noise_amps)->value;
  const int C = out.dim(1), F = out.dim(2), T = out.dim(3);
  MultiChannelSpectrogram spec;
  spec.stft = ck.stft;
  spec.norm_mean = ck.norm_mean;
  spec.norm_std = ck.norm_std;
  spec.sample_rate = ck.sample_rate;
  spec.layer_names = ck.layer_names;
  spec.data = Tensor({C, F, T});
  spec.data.data = out.data;
  return denormalize_and_invert(spec, gl_iters).layers;
}

}  // namespace infer_detail

/// Generates num_variations novel takes: per-variation retargeted noise maps
/// run through the generator, Griffin-Lim inversion per layer, then a
/// sequential post-pass that shuffles layers across the batch, applies random
/// per-layer delay/gain, and sums into a peak-limited mix.
inline std::vector<Variation> synthesize_batch(const Checkpoint& ck,
                                               const SynthesisParams& p) {
  p.validate();
  if (ck.trained_stages < 1 || ck.gen.num_stages() < 1)
    throw ValidationError("checkpoint has no trained stages");
  if (ck.stage_shapes.size() < static_cast<size_t>(ck.trained_stages))
    throw ValidationError("checkpoint is missing stage shapes");
  const int C = ck.channels();
  const int stages = ck.trained_stages;

  Rng master(p.seed);
  std::vector<Variation> out(static_cast<size_t>(p.num_variations));
  for (auto& v : out) v.noise_seed = master.raw();

  // Per-variation generation (independent given its seed).
  std::vector<std::vector<std::vector<float>>> takes(out.size());
  for (size_t i = 0; i < out.size(); ++i) {
    Rng rng(out[i].noise_seed);
    const double mult = rng.uniform(1.0 - p.retarget_fraction, 1.0 + p.retarget_fraction);
    std::vector<Tensor> noise;
    if (p.use_fixed_noise) {
      noise = ck.fixed_noise;
      out[i].retarget_multiplier = 1.0;
    } else {
      out[i].retarget_multiplier = mult;
      for (int k = 0; k < stages; ++k) {
        const int F = ck.stage_shapes[static_cast<size_t>(k)][0];
        const int W =
            infer_detail::retarget_width(ck.stage_shapes[static_cast<size_t>(k)][1], mult,
                                         p.retarget_fraction);
        noise.push_back(rng.normal_tensor({k == 0 ? C : 1, F, W}));
      }
    }
    out[i].frames = noise.back().dim(2);
    takes[i] = infer_detail::synthesize_layers(ck, noise, p.gl_iters);
  }

  // Shuffle: one permutation per channel across the batch; the multiset of
  // takes per channel is preserved, only their assignment changes.
  std::vector<std::vector<const std::vector<float>*>> assigned(out.size());
  for (size_t i = 0; i < out.size(); ++i) {
    assigned[i].resize(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) assigned[i][static_cast<size_t>(c)] = &takes[i][static_cast<size_t>(c)];
  }
  if (p.shuffle_layers) {
    for (int c = 0; c < C; ++c) {
      const auto perm = master.permutation(p.num_variations);
      for (size_t i = 0; i < out.size(); ++i)
        assigned[i][static_cast<size_t>(c)] =
            &takes[static_cast<size_t>(perm[i])][static_cast<size_t>(c)];
    }
  }

  // Mixdown: random per-layer delay and gain, sample-wise sum, hard peak
  // limit to [-1, 1] with the clip count recorded.
  for (size_t i = 0; i < out.size(); ++i) {
    Variation& v = out[i];
    v.delays_ms.resize(static_cast<size_t>(C));
    v.gains_db.resize(static_cast<size_t>(C));
    std::vector<int> delay_samples(static_cast<size_t>(C));
    size_t mix_len = 0;
    for (int c = 0; c < C; ++c) {
      v.delays_ms[static_cast<size_t>(c)] = master.uniform(p.delay_ms_lo, p.delay_ms_hi);
      v.gains_db[static_cast<size_t>(c)] = master.uniform(p.gain_db_lo, p.gain_db_hi);
      delay_samples[static_cast<size_t>(c)] = static_cast<int>(
          std::lround(v.delays_ms[static_cast<size_t>(c)] * ck.sample_rate / 1000.0));
      mix_len = std::max(mix_len, assigned[i][static_cast<size_t>(c)]->size() +
                                      static_cast<size_t>(delay_samples[static_cast<size_t>(c)]));
    }
    v.layers.assign(static_cast<size_t>(C), std::vector<float>(mix_len, 0.0f));
    v.mix.assign(mix_len, 0.0f);
    for (int c = 0; c < C; ++c) {
      const auto& take = *assigned[i][static_cast<size_t>(c)];
      const float gain =
          static_cast<float>(std::pow(10.0, v.gains_db[static_cast<size_t>(c)] / 20.0));
      float* stem = v.layers[static_cast<size_t>(c)].data();
      const int d = delay_samples[static_cast<size_t>(c)];
      for (size_t s = 0; s < take.size(); ++s) stem[s + static_cast<size_t>(d)] = gain * take[s];
      for (size_t s = 0; s < mix_len; ++s) v.mix[s] += stem[s];
    }
    for (auto& s : v.mix) {
      if (s > 1.0f || s < -1.0f) {
        ++v.clipped_samples;
        s = std::clamp(s, -1.0f, 1.0f);
      }
    }
  }
  return out;
}

struct DiversityReport {
  double mean_distance = 0.0;
  double min_distance = 0.0;
  double max_distance = 0.0;
  std::vector<int64_t> durations;  // samples per variation
};

/// Pairwise L2 distances between unnormalized log-magnitude spectrograms of
/// the mixes; shorter spectrograms are padded with silence frames
/// (log(log_epsilon)) so different durations compare meaningfully.
inline DiversityReport diversity_report(const std::vector<std::vector<float>>& mixes,
                                        const StftParams& p) {
  if (mixes.size() < 2) throw ValidationError("diversity report needs a batch of >= 2");
  const int F = p.bins();
  std::vector<Tensor> specs;
  int max_T = 0;
  for (const auto& mix : mixes) {
    std::vector<double> buf(mix.begin(), mix.end());
    const auto s = detail::stft(buf, p);
    Tensor logmag({F, s.T});
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < s.T; ++t)
        logmag.data[size_t(f) * s.T + t] =
            static_cast<float>(std::log(std::abs(s.at(f, t)) + p.log_epsilon));
    max_T = std::max(max_T, s.T);
    specs.push_back(std::move(logmag));
  }
  const float silence = static_cast<float>(std::log(p.log_epsilon));
  auto value_at = [&](const Tensor& s, int f, int t) {
    return t < s.dim(1) ? s.data[size_t(f) * s.dim(1) + t] : silence;
  };

  DiversityReport rep;
  rep.min_distance = std::numeric_limits<double>::infinity();
  double total = 0.0;
  int pairs = 0;
  for (size_t a = 0; a < specs.size(); ++a)
    for (size_t b = a + 1; b < specs.size(); ++b) {
      double acc = 0.0;
      for (int f = 0; f < F; ++f)
        for (int t = 0; t < max_T; ++t) {
          const double d = double(value_at(specs[a], f, t)) - value_at(specs[b], f, t);
          acc += d * d;
        }
      const double dist = std::sqrt(acc);
      total += dist;
      ++pairs;
      rep.min_distance = std::min(rep.min_distance, dist);
      rep.max_distance = std::max(rep.max_distance, dist);
    }
  rep.mean_distance = total / pairs;
  for (const auto& mix : mixes) rep.durations.push_back(static_cast<int64_t>(mix.size()));
  return rep;
}

}  // namespace sfxgan
