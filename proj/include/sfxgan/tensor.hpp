#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfxgan {

/// Thrown for bad inputs / configuration (CLI maps this to exit code 1).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown for runtime failures such as training divergence or corrupt
/// checkpoints (CLI maps this to exit code 2).
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major float tensor. Shapes follow (N, C, H, W) for network
/// activations, (C, F, T) for spectrograms.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
  }
  Tensor(std::vector<int> s, float fill) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw ValidationError("negative tensor dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  // 4-D accessor for (N, C, H, W) tensors.
  float& at4(int n, int c, int h, int w) {
    const int C = shape[1], H = shape[2], W = shape[3];
    return data[static_cast<size_t>(((int64_t(n) * C + c) * H + h) * W + w)];
  }
  float at4(int n, int c, int h, int w) const {
    const int C = shape[1], H = shape[2], W = shape[3];
    return data[static_cast<size_t>(((int64_t(n) * C + c) * H + h) * W + w)];
  }
  // 3-D accessor for (C, F, T) tensors.
  float& at3(int c, int f, int t) {
    const int F = shape[1], T = shape[2];
    return data[static_cast<size_t>((int64_t(c) * F + f) * T + t)];
  }
  float at3(int c, int f, int t) const {
    const int F = shape[1], T = shape[2];
    return data[static_cast<size_t>((int64_t(c) * F + f) * T + t)];
  }

  bool all_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ", ";
  }
  return out + ")";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ValidationError(std::string(what) + ": shape mismatch " + shape_str(a.shape) +
                          " vs " + shape_str(b.shape));
}

// Reductions accumulate in double.
inline double sum_of(const Tensor& t) {
  double s = 0.0;
  for (float v : t.data) s += v;
  return s;
}

inline double mean_of(const Tensor& t) {
  return t.numel() ? sum_of(t) / static_cast<double>(t.numel()) : 0.0;
}

inline double stddev_of(const Tensor& t) {
  const double mu = mean_of(t);
  double acc = 0.0;
  for (float v : t.data) {
    const double d = v - mu;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(t.numel()));
}

}  // namespace sfxgan
