#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sfxgan/audio_io.hpp"
#include "sfxgan/rng.hpp"
#include "sfxgan/tensor.hpp"

namespace sfxgan {

struct StftParams {
  int fft_size = 512;
  int hop = 128;
  double log_epsilon = 1e-4;

  int bins() const { return fft_size / 2 + 1; }

  void validate() const {
    if (fft_size <= 0 || (fft_size & (fft_size - 1)) != 0)
      throw ValidationError("fft_size must be a power of two, got " +
                            std::to_string(fft_size));
    if (hop <= 0 || hop > fft_size)
      throw ValidationError("hop must be in (0, fft_size]");
    if (!(log_epsilon > 0.0)) throw ValidationError("log_epsilon must be > 0");
  }

  /// Frames fully inside the signal (no centering).
  int frames_for(int64_t length) const {
    if (length < fft_size)
      throw ValidationError("signal of " + std::to_string(length) +
                            " samples is shorter than fft_size " +
                            std::to_string(fft_size));
    return static_cast<int>(1 + (length - fft_size) / hop);
  }

  int64_t length_for(int frames) const {
    return int64_t(fft_size) + int64_t(frames - 1) * hop;
  }
};

/// Fixed seed for the Griffin-Lim initial phases: reconstruction is
/// deterministic for a given magnitude input.
inline constexpr uint64_t kGriffinLimPhaseSeed = 88;

namespace detail {

/// Periodic Hann window.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / n));
  return w;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    real_ = fftw_alloc_real(static_cast<size_t>(n));
    freq_ = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
    fwd_ = fftw_plan_dft_r2c_1d(n, real_, freq_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(n, freq_, real_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(freq_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void forward(const double* x, std::complex<double>* out) {
    std::copy(x, x + n_, real_);
    fftw_execute(fwd_);
    for (int k = 0; k <= n_ / 2; ++k)
      out[k] = {freq_[k][0], freq_[k][1]};
  }

  /// Unnormalized FFTW c2r scaled back by 1/n.
  void inverse(const std::complex<double>* in, double* out) {
    for (int k = 0; k <= n_ / 2; ++k) {
      freq_[k][0] = in[k].real();
      freq_[k][1] = in[k].imag();
    }
    fftw_execute(inv_);
    const double s = 1.0 / n_;
    for (int i = 0; i < n_; ++i) out[i] = real_[i] * s;
  }

 private:
  int n_;
  double* real_;
  fftw_complex* freq_;
  fftw_plan fwd_, inv_;
};

/// Complex spectrogram, (F, T) row-major.
struct ComplexSpec {
  int F = 0, T = 0;
  std::vector<std::complex<double>> data;
  std::complex<double>& at(int f, int t) { return data[size_t(f) * T + t]; }
  std::complex<double> at(int f, int t) const { return data[size_t(f) * T + t]; }
};

inline ComplexSpec stft(std::span<const double> x, const StftParams& p) {
  const int T = p.frames_for(static_cast<int64_t>(x.size()));
  const int F = p.bins();
  const auto win = hann_window(p.fft_size);
  ComplexSpec spec;
  spec.F = F;
  spec.T = T;
  spec.data.resize(size_t(F) * T);
  RealFft fft(p.fft_size);
  std::vector<double> frame(static_cast<size_t>(p.fft_size));
  std::vector<std::complex<double>> bins(static_cast<size_t>(F));
  for (int t = 0; t < T; ++t) {
    const double* src = x.data() + int64_t(t) * p.hop;
    for (int i = 0; i < p.fft_size; ++i)
      frame[static_cast<size_t>(i)] = src[i] * win[static_cast<size_t>(i)];
    fft.forward(frame.data(), bins.data());
    for (int f = 0; f < F; ++f) spec.at(f, t) = bins[static_cast<size_t>(f)];
  }
  return spec;
}

/// Least-squares inverse STFT: windowed overlap-add normalized by the summed
/// squared window. This is the projection the Griffin-Lim convergence result
/// assumes.
inline std::vector<double> istft(const ComplexSpec& spec, const StftParams& p) {
  const auto win = hann_window(p.fft_size);
  const int64_t length = p.length_for(spec.T);
  std::vector<double> acc(static_cast<size_t>(length), 0.0);
  std::vector<double> den(static_cast<size_t>(length), 0.0);
  RealFft fft(p.fft_size);
  std::vector<std::complex<double>> bins(static_cast<size_t>(spec.F));
  std::vector<double> frame(static_cast<size_t>(p.fft_size));
  for (int t = 0; t < spec.T; ++t) {
    for (int f = 0; f < spec.F; ++f) bins[static_cast<size_t>(f)] = spec.at(f, t);
    fft.inverse(bins.data(), frame.data());
    double* a = acc.data() + int64_t(t) * p.hop;
    double* d = den.data() + int64_t(t) * p.hop;
    for (int i = 0; i < p.fft_size; ++i) {
      a[i] += win[static_cast<size_t>(i)] * frame[static_cast<size_t>(i)];
      d[i] += win[static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
    }
  }
  for (int64_t i = 0; i < length; ++i)
    acc[static_cast<size_t>(i)] =
        den[static_cast<size_t>(i)] > 1e-12 ? acc[static_cast<size_t>(i)] / den[static_cast<size_t>(i)] : 0.0;
  return acc;
}

}  // namespace detail

/// Normalized multi-channel log-magnitude spectrogram plus everything needed
/// to invert it.
struct MultiChannelSpectrogram {
  Tensor data;  // (C, F, T)
  double norm_mean = 0.0;
  double norm_std = 1.0;
  StftParams stft;
  std::vector<std::string> layer_names;
  int sample_rate = 44100;

  int channels() const { return data.dim(0); }
  int bins() const { return data.dim(1); }
  int frames() const { return data.dim(2); }
};

/// log(|STFT| + eps) per layer, stacked along the channel axis, then globally
/// normalized to mean 0 / std 1 over all entries.
inline MultiChannelSpectrogram stft_log_magnitude(const AudioLayerSet& layers,
                                                  const StftParams& p) {
  p.validate();
  if (layers.layers.empty()) throw ValidationError("no layers");
  const int C = static_cast<int>(layers.layers.size());
  const int F = p.bins();
  const int T = p.frames_for(static_cast<int64_t>(layers.layers[0].size()));

  MultiChannelSpectrogram out;
  out.stft = p;
  out.layer_names = layers.names;
  out.sample_rate = layers.sample_rate;
  out.data = Tensor({C, F, T});

  std::vector<double> buf;
  for (int c = 0; c < C; ++c) {
    const auto& layer = layers.layers[static_cast<size_t>(c)];
    buf.assign(layer.begin(), layer.end());
    const auto spec = detail::stft(buf, p);
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < T; ++t)
        out.data.at3(c, f, t) =
            static_cast<float>(std::log(std::abs(spec.at(f, t)) + p.log_epsilon));
  }

  const double mu = mean_of(out.data);
  const double sd = stddev_of(out.data);
  if (!(sd > 0.0))
    throw ValidationError("spectrogram has zero variance; cannot normalize");
  out.norm_mean = mu;
  out.norm_std = sd;
  for (auto& v : out.data.data)
    v = static_cast<float>((v - mu) / sd);
  return out;
}

/// Classic (non-momentum) Griffin-Lim. The initial phase is drawn from a
/// fixed-seed generator: fully deterministic, but not all-zero. An all-zero
/// start is a degenerate point for tonal sounds (every column of a
/// constant-magnitude spectrogram stays phase-locked across frames, a
/// subspace the update cannot leave), which stalls convergence.
inline std::vector<float> griffin_lim(const std::vector<double>& magnitude, int F, int T,
                                      const StftParams& p, int iters) {
  detail::ComplexSpec spec;
  spec.F = F;
  spec.T = T;
  spec.data.resize(size_t(F) * T);
  Rng phase_rng(kGriffinLimPhaseSeed);
  for (size_t i = 0; i < spec.data.size(); ++i) {
    const double ph = phase_rng.uniform(-std::numbers::pi, std::numbers::pi);
    spec.data[i] = magnitude[i] * std::complex<double>(std::cos(ph), std::sin(ph));
  }

  std::vector<double> x;
  for (int it = 0; it < iters; ++it) {
    x = detail::istft(spec, p);
    const auto est = detail::stft(x, p);
    for (size_t i = 0; i < spec.data.size(); ++i) {
      const double m = std::abs(est.data[i]);
      const std::complex<double> phase =
          m > 1e-300 ? est.data[i] / m : std::complex<double>(1.0, 0.0);
      spec.data[i] = magnitude[i] * phase;
    }
  }
  x = detail::istft(spec, p);
  std::vector<float> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i]);
  return out;
}

/// Reverts normalization and the log, then runs Griffin-Lim per channel.
inline AudioLayerSet denormalize_and_invert(const MultiChannelSpectrogram& spec,
                                            int gl_iters) {
  if (!spec.data.all_finite())
    throw ValidationError("spectrogram contains non-finite values");
  if (!(spec.norm_std > 0.0)) throw ValidationError("invalid norm_std");
  const int C = spec.channels(), F = spec.bins(), T = spec.frames();
  AudioLayerSet out;
  out.sample_rate = spec.sample_rate;
  out.names = spec.layer_names;
  if (out.names.size() != static_cast<size_t>(C)) {
    out.names.resize(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) out.names[static_cast<size_t>(c)] = "layer_" + std::to_string(c);
  }
  std::vector<double> mag(size_t(F) * T);
  for (int c = 0; c < C; ++c) {
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < T; ++t) {
        const double logmag =
            spec.data.at3(c, f, t) * spec.norm_std + spec.norm_mean;
        mag[size_t(f) * T + t] = std::max(0.0, std::exp(logmag) - spec.stft.log_epsilon);
      }
    out.layers.push_back(griffin_lim(mag, F, T, spec.stft, gl_iters));
  }
  return out;
}

/// Relative spectral distance || |STFT(audio)| - magnitude ||_F / ||magnitude||_F.
inline double spectral_consistency(const Tensor& magnitude, std::span<const float> audio,
                                   const StftParams& p) {
  if (magnitude.ndim() != 2 || magnitude.dim(0) != p.bins())
    throw ValidationError("magnitude must be (F, T) with F = fft_size/2+1");
  const int F = magnitude.dim(0), T = magnitude.dim(1);
  std::vector<double> buf(audio.begin(), audio.end());
  const auto spec = detail::stft(buf, p);
  if (spec.T != T)
    throw ValidationError("audio yields " + std::to_string(spec.T) + " frames, magnitude has " +
                          std::to_string(T));
  double num = 0.0, den = 0.0;
  for (int f = 0; f < F; ++f)
    for (int t = 0; t < T; ++t) {
      const double m = magnitude.data[size_t(f) * T + t];
      const double d = std::abs(spec.at(f, t)) - m;
      num += d * d;
      den += m * m;
    }
  if (!(den > 0.0)) throw ValidationError("magnitude is all zeros");
  return std::sqrt(num) / std::sqrt(den);
}

}  // namespace sfxgan
