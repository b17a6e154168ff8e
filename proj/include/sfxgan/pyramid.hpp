#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "sfxgan/kernels.hpp"
#include "sfxgan/spectral.hpp"
#include "sfxgan/tensor.hpp"

namespace sfxgan {

struct PyramidSpec {
  int num_stages = 10;
  int min_size = 25;  // shorter spatial axis at stage 0
};

/// Per-stage (F, T) shapes: the shorter axis follows a geometric schedule
/// from min_size up to its original size, the longer axis scales by the same
/// factor, and the last stage is the original shape.
inline std::vector<std::array<int, 2>> pyramid_shapes(int F, int T, const PyramidSpec& p) {
  if (p.num_stages < 2) throw ValidationError("num_stages must be >= 2");
  const int shorter = std::min(F, T);
  const int longer = std::max(F, T);
  if (p.min_size > shorter)
    throw ValidationError("min_size " + std::to_string(p.min_size) +
                          " exceeds the shorter spectrogram axis " + std::to_string(shorter));
  if (p.min_size < 1) throw ValidationError("min_size must be >= 1");

  std::vector<std::array<int, 2>> shapes;
  const double ratio = static_cast<double>(shorter) / p.min_size;
  for (int n = 0; n < p.num_stages; ++n) {
    if (n == p.num_stages - 1) {
      shapes.push_back({F, T});
      continue;
    }
    const double e = static_cast<double>(n) / (p.num_stages - 1);
    const int s = static_cast<int>(std::lround(p.min_size * std::pow(ratio, e)));
    const int l = static_cast<int>(std::lround(double(longer) * s / shorter));
    if (F <= T)
      shapes.push_back({s, l});
    else
      shapes.push_back({l, s});
  }
  return shapes;
}

/// Coarse-to-fine bilinear stack of the training spectrogram; the final stage
/// is the untouched original tensor.
inline std::vector<Tensor> build_pyramid(const MultiChannelSpectrogram& spec,
                                         const PyramidSpec& p) {
  const auto shapes = pyramid_shapes(spec.bins(), spec.frames(), p);
  std::vector<Tensor> out;
  out.reserve(shapes.size());
  for (size_t n = 0; n < shapes.size(); ++n) {
    if (n + 1 == shapes.size()) {
      out.push_back(spec.data);
    } else {
      out.push_back(kernels::bilinear_resize(spec.data, shapes[n][0], shapes[n][1]));
    }
  }
  return out;
}

}  // namespace sfxgan
