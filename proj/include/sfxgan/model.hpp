#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sfxgan/autodiff.hpp"
#include "sfxgan/rng.hpp"
#include "sfxgan/tensor.hpp"

namespace sfxgan {

inline constexpr int kKernel = 3;
inline constexpr double kLeakyAlpha = 0.05;
inline constexpr double kWeightInitStd = 0.02;

struct ConvLayer {
  ad::Var w;  // (Co, Ci, k, k)
  ad::Var b;  // (Co)
};

/// Hidden block: conv -> batch norm -> LeakyReLU(0.05).
struct ConvBlock {
  ConvLayer conv;
  ad::Var gamma, beta;
};

inline ConvLayer make_conv(int co, int ci, Rng& rng) {
  ConvLayer l;
  l.w = ad::leaf(rng.normal_tensor({co, ci, kKernel, kKernel}, kWeightInitStd));
  l.b = ad::leaf(Tensor({co}, 0.0f));
  return l;
}

inline ConvBlock make_block(int co, int ci, Rng& rng) {
  ConvBlock b;
  b.conv = make_conv(co, ci, rng);
  Tensor g = rng.normal_tensor({co}, kWeightInitStd);
  for (auto& v : g.data) v += 1.0f;
  b.gamma = ad::leaf(std::move(g));
  b.beta = ad::leaf(Tensor({co}, 0.0f));
  return b;
}

inline ad::Var apply_block(const ConvBlock& blk, const ad::Var& x, int dilation = 1) {
  ad::Var h = ad::conv2d(x, blk.conv.w, blk.conv.b, dilation);
  h = ad::batch_norm(h, blk.gamma, blk.beta);
  return ad::leaky_relu(h, kLeakyAlpha);
}

inline int64_t conv_param_count(const ConvLayer& l) {
  return l.w->value.numel() + l.b->value.numel();
}
inline int64_t block_param_count(const ConvBlock& b) {
  return conv_param_count(b.conv) + b.gamma->value.numel() + b.beta->value.numel();
}

/// Growing generator: a head block, three hidden blocks per stage, and a
/// plain output conv (no activation, the spectrogram range is unconstrained).
/// Between stages, features are bilinearly upsampled to the next stage's
/// shape, the stage noise map is added, and the new blocks refine with a
/// residual connection around them. After the head the features are inflated
/// by (1 + margin) and the stage-0 body output is center-cropped back, which
/// keeps edge pixels conditioned on noise context beyond the border.
class Generator {
 public:
  int channels = 1;
  int filters = 64;
  double margin = 0.1;
  ConvBlock head;                                 // channels -> filters
  std::vector<std::array<ConvBlock, 3>> body;     // filters -> filters
  ConvLayer tail;                                 // filters -> channels

  Generator() = default;
  Generator(int channels_, int filters_, double margin_, Rng& rng)
      : channels(channels_), filters(filters_), margin(margin_) {
    head = make_block(filters, channels, rng);
    add_stage(rng);
    tail = make_conv(channels, filters, rng);
  }

  int num_stages() const { return static_cast<int>(body.size()); }

  void add_stage(Rng& rng) {
    body.push_back({make_block(filters, filters, rng), make_block(filters, filters, rng),
                    make_block(filters, filters, rng)});
  }

  /// noise[0]: (C, F0, T0) full-channel map; noise[k>=1]: (1, Fk, Tk)
  /// single-channel maps broadcast across the feature channels, scaled by
  /// amps[k]. Stage shapes are taken from the noise maps themselves, which is
  /// what makes time-axis retargeting work.
  ad::Var forward(std::span<const Tensor> noise, std::span<const double> amps) const {
    const int upto = static_cast<int>(noise.size()) - 1;
    if (upto < 0 || upto >= num_stages())
      throw ValidationError("generator: need 1.." + std::to_string(num_stages()) +
                            " noise maps, got " + std::to_string(noise.size()));
    const Tensor& z0 = noise[0];
    if (z0.ndim() != 3 || z0.dim(0) != channels)
      throw ValidationError("stage-0 noise must be (C, F, T) with C = " +
                            std::to_string(channels));
    const int H0 = z0.dim(1), W0 = z0.dim(2);

    Tensor z0b;
    z0b.shape = {1, channels, H0, W0};
    z0b.data = z0.data;
    ad::Var x = apply_block(head, ad::constant(std::move(z0b)));
    if (margin > 0.0) {
      const int Hm = static_cast<int>(std::lround(H0 * (1.0 + margin)));
      const int Wm = static_cast<int>(std::lround(W0 * (1.0 + margin)));
      x = ad::bilinear_resize(x, Hm, Wm);
    }
    for (const auto& blk : body[0]) x = apply_block(blk, x);
    if (margin > 0.0) x = ad::center_crop(x, H0, W0);

    for (int k = 1; k <= upto; ++k) {
      const Tensor& zk = noise[static_cast<size_t>(k)];
      if (zk.ndim() != 3 || zk.dim(0) != 1)
        throw ValidationError("stage " + std::to_string(k) + " noise must be (1, F, T)");
      const int Hk = zk.dim(1), Wk = zk.dim(2);
      ad::Var up = ad::bilinear_resize(x, Hk, Wk);
      auto map = std::make_shared<const Tensor>(zk);
      ad::Var h = ad::add_map_broadcast(up, map, amps[static_cast<size_t>(k)]);
      for (const auto& blk : body[static_cast<size_t>(k)]) h = apply_block(blk, h);
      x = ad::add(h, up);
    }
    return ad::conv2d(x, tail.w, tail.b, 1);
  }

  /// Parameters of one stage group: stage 0 owns the head, later stages own
  /// their three blocks. The shared tail is reported separately.
  std::vector<ad::Var> stage_params(int stage) const {
    std::vector<ad::Var> out;
    auto push_block = [&out](const ConvBlock& b) {
      out.insert(out.end(), {b.conv.w, b.conv.b, b.gamma, b.beta});
    };
    if (stage == 0) push_block(head);
    for (const auto& b : body[static_cast<size_t>(stage)]) push_block(b);
    return out;
  }

  std::vector<ad::Var> tail_params() const { return {tail.w, tail.b}; }

  std::vector<ad::Var> all_params() const {
    std::vector<ad::Var> out;
    for (int s = 0; s < num_stages(); ++s) {
      auto sp = stage_params(s);
      out.insert(out.end(), sp.begin(), sp.end());
    }
    auto tp = tail_params();
    out.insert(out.end(), tp.begin(), tp.end());
    return out;
  }

  /// Parameter count of the generator grown up to `upto_stage` inclusive.
  int64_t parameter_count(int upto_stage) const {
    int64_t n = block_param_count(head) + conv_param_count(tail);
    for (int s = 0; s <= upto_stage; ++s)
      for (const auto& b : body[static_cast<size_t>(s)]) n += block_param_count(b);
    return n;
  }
};

/// Patch discriminator with one parallel input conv per spectrogram channel.
/// The per-channel feature maps are stacked along the batch axis, so the body
/// sees batch N*C; the tail emits one score per receptive-field patch.
class Discriminator {
 public:
  int channels = 1;
  int filters = 64;
  int dilation = 1;  // D2 uses dilation on all conv layers
  std::vector<ConvLayer> input_convs;  // each 1 -> filters
  std::array<ConvLayer, 3> body;
  ConvLayer tail;  // filters -> 1

  Discriminator() = default;
  Discriminator(int channels_, int filters_, int dilation_, Rng& rng)
      : channels(channels_), filters(filters_), dilation(dilation_) {
    for (int c = 0; c < channels; ++c) input_convs.push_back(make_conv(filters, 1, rng));
    for (auto& l : body) l = make_conv(filters, filters, rng);
    tail = make_conv(1, filters, rng);
  }

  ad::Var forward(const ad::Var& x) const {
    if (x->value.dim(1) != channels)
      throw ValidationError("discriminator expects " + std::to_string(channels) +
                            " channels, got " + std::to_string(x->value.dim(1)));
    std::vector<ad::Var> parts;
    parts.reserve(static_cast<size_t>(channels));
    for (int c = 0; c < channels; ++c) {
      ad::Var ch = ad::select_channel(x, c);
      parts.push_back(ad::conv2d(ch, input_convs[static_cast<size_t>(c)].w,
                                 input_convs[static_cast<size_t>(c)].b, dilation));
    }
    ad::Var h = parts.size() == 1 ? parts[0] : ad::batch_concat(parts);
    for (const auto& l : body) h = ad::leaky_relu(ad::conv2d(h, l.w, l.b, dilation), kLeakyAlpha);
    return ad::conv2d(h, tail.w, tail.b, dilation);
  }

  std::vector<ad::Var> params() const {
    std::vector<ad::Var> out;
    for (const auto& l : input_convs) out.insert(out.end(), {l.w, l.b});
    for (const auto& l : body) out.insert(out.end(), {l.w, l.b});
    out.insert(out.end(), {tail.w, tail.b});
    return out;
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& l : input_convs) n += conv_param_count(l);
    for (const auto& l : body) n += conv_param_count(l);
    return n + conv_param_count(tail);
  }

  /// Receptive field of one patch score: 1 + sum over convs of 2*dilation.
  int receptive_field() const { return 1 + 5 * 2 * dilation; }
};

}  // namespace sfxgan
