#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sfxgan/autodiff.hpp"
#include "sfxgan/checkpoint.hpp"
#include "sfxgan/config.hpp"
#include "sfxgan/model.hpp"
#include "sfxgan/pyramid.hpp"
#include "sfxgan/rng.hpp"
#include "sfxgan/spectral.hpp"

namespace sfxgan {

/// WGAN-GP losses from precomputed patch maps and per-sample interpolate
/// gradient norms:
///   d_loss = mean(d_fake) - mean(d_real) + gp_weight * mean((norms - 1)^2)
///   g_adv  = -mean(d_fake)
inline std::pair<ad::Var, ad::Var> wgan_gp_losses(const ad::Var& d_real,
                                                  const ad::Var& d_fake,
                                                  const ad::Var& grad_norms,
                                                  double gp_weight) {
  if (!d_real->value.all_finite() || !d_fake->value.all_finite() ||
      !grad_norms->value.all_finite())
    throw RuntimeFailure("wgan_gp_losses: non-finite inputs (training divergence)");
  ad::Var shifted = ad::add_scalar(grad_norms, -1.0);
  ad::Var penalty = ad::scale(ad::mean_all(ad::mul(shifted, shifted)), gp_weight);
  ad::Var d_loss =
      ad::add(ad::sub(ad::mean_all(d_fake), ad::mean_all(d_real)), penalty);
  ad::Var g_adv = ad::neg(ad::mean_all(d_fake));
  return {d_loss, g_adv};
}

/// Mean squared error between the fixed-noise generator output and the real
/// spectrogram at the current stage.
inline ad::Var reconstruction_loss(const ad::Var& generated, const ad::Var& real) {
  require_same_shape(generated->value, real->value, "reconstruction_loss");
  ad::Var d = ad::sub(generated, real);
  return ad::mean_all(ad::mul(d, d));
}

/// Gradient norm of the discriminator's total patch score at an interpolate,
/// built with create_graph so the penalty can be backpropagated into the
/// discriminator weights (double backprop). Single-example training always
/// interpolates one sample; the norm is taken over its full C x F x T grid.
inline ad::Var interpolate_gradient_norm(const Discriminator& d, const ad::Var& xhat) {
  if (xhat->value.dim(0) != 1)
    throw ValidationError("interpolate_gradient_norm expects a single sample");
  ad::Var score = ad::sum_all(d.forward(xhat));
  ad::GradMap gmap = ad::backward(score, /*create_graph=*/true);
  auto it = gmap.find(xhat.get());
  if (it == gmap.end()) throw RuntimeFailure("interpolate gradient not reachable");
  ad::Var g = it->second;
  return ad::sqrt_v(ad::add_scalar(ad::sum_all(ad::mul(g, g)), 1e-12));
}

/// Adam with per-parameter learning rates (fresh state per training stage).
class Adam {
 public:
  struct Group {
    ad::Var param;
    double lr;
  };

  explicit Adam(std::vector<Group> groups) : groups_(std::move(groups)) {}

  void step(const ad::GradMap& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, t_);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, t_);
    for (auto& g : groups_) {
      auto it = grads.find(g.param.get());
      if (it == grads.end()) continue;
      const Tensor& grad = it->second->value;
      auto& slot = slots_[g.param.get()];
      if (slot.m.numel() == 0) {
        slot.m = Tensor(grad.shape);
        slot.v = Tensor(grad.shape);
      }
      Tensor& p = g.param->value;
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double gi = grad.data[i];
        const double m = kAdamBeta1 * slot.m.data[i] + (1.0 - kAdamBeta1) * gi;
        const double v = kAdamBeta2 * slot.v.data[i] + (1.0 - kAdamBeta2) * gi * gi;
        slot.m.data[i] = static_cast<float>(m);
        slot.v.data[i] = static_cast<float>(v);
        p.data[i] -= static_cast<float>(g.lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps));
      }
    }
  }

 private:
  struct Slot {
    Tensor m, v;
  };
  std::vector<Group> groups_;
  std::unordered_map<ad::Node*, Slot> slots_;
  int64_t t_ = 0;
};

namespace train_detail {

inline void set_requires(std::span<const ad::Var> params, bool on) {
  for (const auto& p : params) p->requires_grad = on;
}

/// Freshly sampled noise maps for stages 0..upto at the given shapes.
inline std::vector<Tensor> sample_noise(Rng& rng,
                                        std::span<const std::array<int, 2>> shapes,
                                        int upto, int channels) {
  std::vector<Tensor> noise;
  noise.reserve(static_cast<size_t>(upto) + 1);
  noise.push_back(rng.normal_tensor({channels, shapes[0][0], shapes[0][1]}));
  for (int k = 1; k <= upto; ++k)
    noise.push_back(rng.normal_tensor({1, shapes[static_cast<size_t>(k)][0],
                                       shapes[static_cast<size_t>(k)][1]}));
  return noise;
}

inline double rmse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "rmse");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = double(a.data[i]) - b.data[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.numel()));
}

}  // namespace train_detail

using ProgressFn = std::function<void(const std::string&)>;

/// Progressive multi-stage adversarial training. Optimizes generator stages
/// {n, n-1, n-2} (current at full lr, the two below scaled) plus the shared
/// output conv; the dilated second discriminator joins at d2_start_stage and
/// its losses add to the first one's. A checkpoint is written after every
/// stage; on divergence the last completed stage's checkpoint survives.
inline Checkpoint train(const AudioLayerSet& layers, const TrainConfig& cfg,
                        const StftParams& stft_params = {},
                        const std::optional<std::filesystem::path>& checkpoint_dir = {},
                        const ProgressFn& progress = {}) {
  cfg.validate();
  stft_params.validate();

  Checkpoint ck;
  ck.cfg = cfg;
  ck.stft = stft_params;
  ck.sample_rate = layers.sample_rate;
  ck.pre_pad = layers.pre_pad;
  ck.layer_names = layers.names;

  const MultiChannelSpectrogram spec = stft_log_magnitude(layers, stft_params);
  ck.norm_mean = spec.norm_mean;
  ck.norm_std = spec.norm_std;
  const int C = spec.channels();

  PyramidSpec pspec{cfg.num_stages, cfg.min_size};
  const auto shapes = pyramid_shapes(spec.bins(), spec.frames(), pspec);
  const std::vector<Tensor> pyramid = build_pyramid(spec, pspec);
  ck.stage_shapes = shapes;

  Rng rng(cfg.seed);
  ck.gen = Generator(C, cfg.filters, cfg.feature_upsample_margin, rng);
  ck.d1 = Discriminator(C, cfg.filters, 1, rng);

  ck.fixed_noise.push_back(rng.normal_tensor({C, shapes[0][0], shapes[0][1]}));
  ck.noise_amps.push_back(1.0);

  auto emit = [&progress](const std::string& line) {
    if (progress) progress(line);
  };

  auto save_stage = [&](int completed_stages) {
    ck.trained_stages = completed_stages;
    if (checkpoint_dir) save_checkpoint(ck, *checkpoint_dir);
  };

  const int d2_start = cfg.resolved_d2_start();

  for (int stage = 0; stage < cfg.num_stages; ++stage) {
    if (stage > 0) {
      // Noise amplitude: RMSE between the upsampled previous-stage
      // reconstruction and this stage's real spectrogram.
      Tensor rec_prev;
      {
        ad::NoGradGuard ng;
        std::span<const Tensor> fixed(ck.fixed_noise.data(), static_cast<size_t>(stage));
        rec_prev = ck.gen.forward(fixed, ck.noise_amps)->value;
      }
      rec_prev.shape = {C, shapes[size_t(stage) - 1][0], shapes[size_t(stage) - 1][1]};
      Tensor up = kernels::bilinear_resize(rec_prev, shapes[size_t(stage)][0],
                                           shapes[size_t(stage)][1]);
      ck.noise_amps.push_back(train_detail::rmse(up, pyramid[size_t(stage)]));
      ck.gen.add_stage(rng);
      ck.fixed_noise.push_back(
          Tensor({1, shapes[size_t(stage)][0], shapes[size_t(stage)][1]}));
    }
    if (stage == d2_start && !ck.d2)
      ck.d2 = Discriminator(C, cfg.filters, cfg.d2_dilation, rng);

    // Trainable set for this stage: blocks of stages {n, n-1, n-2} plus the
    // shared tail; everything below stays frozen (bit-identical).
    const int lowest_active = std::max(0, stage - (cfg.concurrent_stages - 1));
    train_detail::set_requires(ck.gen.all_params(), false);
    std::vector<Adam::Group> g_groups;
    for (int s = lowest_active; s <= stage; ++s) {
      const double lr = s == stage ? cfg.lr : cfg.lr * cfg.lr_scale_lower;
      for (auto& p : ck.gen.stage_params(s)) {
        p->requires_grad = true;
        g_groups.push_back({p, lr});
      }
    }
    for (auto& p : ck.gen.tail_params()) {
      p->requires_grad = true;
      g_groups.push_back({p, cfg.lr});
    }
    Adam g_opt(std::move(g_groups));

    std::vector<Discriminator*> discs{&*ck.d1};
    if (ck.d2 && stage >= d2_start) discs.push_back(&*ck.d2);
    std::vector<Adam::Group> d_groups;
    for (Discriminator* d : discs)
      for (auto& p : d->params()) {
        p->requires_grad = true;
        d_groups.push_back({p, cfg.lr});
      }
    Adam d_opt(std::move(d_groups));

    Tensor real = pyramid[static_cast<size_t>(stage)];
    real.shape = {1, C, shapes[size_t(stage)][0], shapes[size_t(stage)][1]};
    const ad::Var real_var = ad::constant(real);
    std::span<const std::array<int, 2>> stage_shapes(shapes.data(),
                                                     static_cast<size_t>(stage) + 1);

    for (int iter = 0; iter < cfg.iters_per_stage; ++iter) {
      double d_loss_value = 0.0;
      for (int ds = 0; ds < cfg.d_steps; ++ds) {
        Tensor fake;
        {
          ad::NoGradGuard ng;
          auto noise = train_detail::sample_noise(rng, stage_shapes, stage, C);
          fake = ck.gen.forward(noise, ck.noise_amps)->value;
        }
        const ad::Var fake_var = ad::constant(fake);

        ad::Var d_total;
        for (Discriminator* d : discs) {
          const ad::Var d_real_map = d->forward(real_var);
          const ad::Var d_fake_map = d->forward(fake_var);
          const double eps = rng.uniform();
          Tensor mix = real;
          for (int64_t i = 0; i < mix.numel(); ++i)
            mix.data[i] = static_cast<float>(eps * mix.data[i] + (1.0 - eps) * fake.data[i]);
          const ad::Var xhat = ad::leaf(std::move(mix));
          const ad::Var norm = interpolate_gradient_norm(*d, xhat);
          auto [d_loss, g_adv] = wgan_gp_losses(d_real_map, d_fake_map, norm, cfg.gp_weight);
          d_total = d_total ? ad::add(d_total, d_loss) : d_loss;
        }
        d_loss_value = d_total->value.data[0];
        // The last completed stage's checkpoint is already on disk; do not
        // overwrite it with diverged weights.
        if (!std::isfinite(d_loss_value))
          throw RuntimeFailure("training diverged (non-finite discriminator loss) at stage " +
                               std::to_string(stage) + " iteration " + std::to_string(iter));
        d_opt.step(ad::backward(d_total));
      }

      for (Discriminator* d : discs) train_detail::set_requires(d->params(), false);

      double g_adv_value = 0.0, rec_value = 0.0;
      for (int gs = 0; gs < cfg.g_steps; ++gs) {
        auto noise = train_detail::sample_noise(rng, stage_shapes, stage, C);
        ad::Var fake = ck.gen.forward(noise, ck.noise_amps);
        ad::Var fake4 = ad::reshape(fake, {1, C, shapes[size_t(stage)][0],
                                           shapes[size_t(stage)][1]});
        ad::Var g_adv;
        for (Discriminator* d : discs) {
          ad::Var term = ad::neg(ad::mean_all(d->forward(fake4)));
          g_adv = g_adv ? ad::add(g_adv, term) : term;
        }
        ad::Var rec_out = ck.gen.forward(ck.fixed_noise, ck.noise_amps);
        ad::Var rec = reconstruction_loss(
            ad::reshape(rec_out, real_var->value.shape), real_var);
        ad::Var total = ad::add(g_adv, ad::scale(rec, cfg.rec_weight));
        g_adv_value = g_adv->value.data[0];
        rec_value = rec->value.data[0];
        if (!std::isfinite(g_adv_value) || !std::isfinite(rec_value))
          throw RuntimeFailure("training diverged (non-finite generator loss) at stage " +
                               std::to_string(stage) + " iteration " + std::to_string(iter));
        g_opt.step(ad::backward(total));
      }

      for (Discriminator* d : discs) train_detail::set_requires(d->params(), true);

      ck.history.push_back({iter, stage, d_loss_value, g_adv_value, rec_value});
      if ((iter + 1) % 50 == 0 || iter + 1 == cfg.iters_per_stage)
        emit("stage " + std::to_string(stage) + " iter " + std::to_string(iter + 1) + "/" +
             std::to_string(cfg.iters_per_stage) + "  d=" + std::to_string(d_loss_value) +
             "  g_adv=" + std::to_string(g_adv_value) + "  rec=" + std::to_string(rec_value));
    }

    save_stage(stage + 1);
    emit("stage " + std::to_string(stage) + " complete (" +
         std::to_string(shapes[size_t(stage)][0]) + "x" +
         std::to_string(shapes[size_t(stage)][1]) + ", discriminators: " +
         std::to_string(discs.size()) + ")");
  }

  train_detail::set_requires(ck.gen.all_params(), false);
  return ck;
}

}  // namespace sfxgan
