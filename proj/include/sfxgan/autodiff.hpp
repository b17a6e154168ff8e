#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sfxgan/kernels.hpp"
#include "sfxgan/tensor.hpp"

namespace sfxgan::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in the computation graph. Backward functions are expressed in
/// terms of graph ops themselves, so differentiating through a gradient
/// (as the WGAN gradient penalty requires) falls out of the same machinery.
struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<std::vector<Var>(const Var&)> backward;
};

inline bool& grad_mode() {
  thread_local bool on = true;
  return on;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

inline Var scalar(double v) { return constant(Tensor({1}, static_cast<float>(v))); }

/// A leaf that participates in differentiation (parameters, GP interpolates).
inline Var leaf(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return n;
}

inline Var make_op(Tensor out, std::vector<Var> parents,
                   std::function<std::vector<Var>(const Var&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  if (grad_mode()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        n->requires_grad = true;
        break;
      }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return n;
}

// ---- elementwise / structural ops ------------------------------------------

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += b->value.data[i];
  return make_op(std::move(out), {a, b}, [](const Var& g) {
    return std::vector<Var>{g, g};
  });
}

inline Var scale(const Var& a, double s);

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var sub(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "sub");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] -= b->value.data[i];
  return make_op(std::move(out), {a, b}, [](const Var& g) {
    return std::vector<Var>{g, neg(g)};
  });
}

inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] *= b->value.data[i];
  return make_op(std::move(out), {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{mul(g, b), mul(g, a)};
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a->value;
  const float fs = static_cast<float>(s);
  for (auto& v : out.data) v *= fs;
  return make_op(std::move(out), {a}, [s](const Var& g) {
    return std::vector<Var>{scale(g, s)};
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  const float fs = static_cast<float>(s);
  for (auto& v : out.data) v += fs;
  return make_op(std::move(out), {a}, [](const Var& g) {
    return std::vector<Var>{g};
  });
}

inline Var recip(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = 1.0f / v;
  return make_op(std::move(out), {a}, [a](const Var& g) {
    Var r = recip(a);
    return std::vector<Var>{neg(mul(g, mul(r, r)))};
  });
}

inline Var sqrt_v(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = std::sqrt(v);
  return make_op(std::move(out), {a}, [a](const Var& g) {
    return std::vector<Var>{mul(g, scale(recip(sqrt_v(a)), 0.5))};
  });
}

inline Var broadcast_to(const Var& s, std::vector<int> shape);

inline Var sum_all(const Var& a) {
  Tensor out({1}, static_cast<float>(sum_of(a->value)));
  auto shape = a->value.shape;
  return make_op(std::move(out), {a}, [shape](const Var& g) {
    return std::vector<Var>{broadcast_to(g, shape)};
  });
}

inline Var broadcast_to(const Var& s, std::vector<int> shape) {
  Tensor out(shape, s->value.data[0]);
  return make_op(std::move(out), {s}, [](const Var& g) {
    return std::vector<Var>{sum_all(g)};
  });
}

inline Var mean_all(const Var& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a->value.numel()));
}

/// Elementwise multiplication by a constant mask (no gradient through it).
inline Var apply_mask(const Var& a, std::shared_ptr<const Tensor> mask) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] *= mask->data[i];
  return make_op(std::move(out), {a}, [mask](const Var& g) {
    return std::vector<Var>{apply_mask(g, mask)};
  });
}

inline Var leaky_relu(const Var& a, double alpha) {
  auto mask = std::make_shared<Tensor>(a->value.shape);
  Tensor out = a->value;
  const float fa = static_cast<float>(alpha);
  for (int64_t i = 0; i < out.numel(); ++i) {
    const float m = out.data[i] > 0.0f ? 1.0f : fa;
    mask->data[i] = m;
    out.data[i] *= m;
  }
  return make_op(std::move(out), {a}, [mask](const Var& g) {
    return std::vector<Var>{apply_mask(g, mask)};
  });
}

// ---- channel ops on (N, C, H, W) --------------------------------------------

inline Var channel_broadcast(const Var& v, int N, int H, int W);

/// (N, C, H, W) -> (C): sum over batch and space.
inline Var channel_sum(const Var& a) {
  const int N = a->value.dim(0), C = a->value.dim(1), H = a->value.dim(2),
            W = a->value.dim(3);
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
      const float* p = a->value.ptr() + ((int64_t(n) * C + c) * H) * W;
      for (int64_t i = 0; i < int64_t(H) * W; ++i) acc += p[i];
    }
    out.data[static_cast<size_t>(c)] = static_cast<float>(acc);
  }
  return make_op(std::move(out), {a}, [N, H, W](const Var& g) {
    return std::vector<Var>{channel_broadcast(g, N, H, W)};
  });
}

/// (C) -> (N, C, H, W).
inline Var channel_broadcast(const Var& v, int N, int H, int W) {
  const int C = v->value.dim(0);
  Tensor out({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      float* p = out.ptr() + ((int64_t(n) * C + c) * H) * W;
      const float val = v->value.data[static_cast<size_t>(c)];
      for (int64_t i = 0; i < int64_t(H) * W; ++i) p[i] = val;
    }
  return make_op(std::move(out), {v}, [](const Var& g) {
    return std::vector<Var>{channel_sum(g)};
  });
}

/// x * v[c] per channel; x: (N, C, H, W), v: (C).
inline Var mul_channels(const Var& x, const Var& v) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
            W = x->value.dim(3);
  Tensor out = x->value;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      float* p = out.ptr() + ((int64_t(n) * C + c) * H) * W;
      const float s = v->value.data[static_cast<size_t>(c)];
      for (int64_t i = 0; i < int64_t(H) * W; ++i) p[i] *= s;
    }
  return make_op(std::move(out), {x, v}, [x, v](const Var& g) {
    return std::vector<Var>{mul_channels(g, v), channel_sum(mul(g, x))};
  });
}

/// x + v[c] per channel.
inline Var add_channels(const Var& x, const Var& v) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
            W = x->value.dim(3);
  Tensor out = x->value;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      float* p = out.ptr() + ((int64_t(n) * C + c) * H) * W;
      const float s = v->value.data[static_cast<size_t>(c)];
      for (int64_t i = 0; i < int64_t(H) * W; ++i) p[i] += s;
    }
  return make_op(std::move(out), {x, v}, [](const Var& g) {
    return std::vector<Var>{g, channel_sum(g)};
  });
}

/// Adds a single-channel constant map (scaled) to every channel of x.
inline Var add_map_broadcast(const Var& x, std::shared_ptr<const Tensor> map, double s) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
            W = x->value.dim(3);
  const int64_t HW = int64_t(H) * W;
  Tensor out = x->value;
  const float fs = static_cast<float>(s);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      float* p = out.ptr() + (int64_t(n) * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) p[i] += fs * map->data[static_cast<size_t>(i)];
    }
  return make_op(std::move(out), {x}, [](const Var& g) {
    return std::vector<Var>{g};
  });
}

inline Var select_channel(const Var& x, int c);

inline Var channel_embed(const Var& x, int c, int C) {
  const int N = x->value.dim(0), H = x->value.dim(2), W = x->value.dim(3);
  const int64_t HW = int64_t(H) * W;
  Tensor out({N, C, H, W});
  for (int n = 0; n < N; ++n)
    std::memcpy(out.ptr() + (int64_t(n) * C + c) * HW, x->value.ptr() + int64_t(n) * HW,
                sizeof(float) * static_cast<size_t>(HW));
  return make_op(std::move(out), {x}, [c](const Var& g) {
    return std::vector<Var>{select_channel(g, c)};
  });
}

/// (N, C, H, W) -> (N, 1, H, W).
inline Var select_channel(const Var& x, int c) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
            W = x->value.dim(3);
  const int64_t HW = int64_t(H) * W;
  Tensor out({N, 1, H, W});
  for (int n = 0; n < N; ++n)
    std::memcpy(out.ptr() + int64_t(n) * HW, x->value.ptr() + (int64_t(n) * C + c) * HW,
                sizeof(float) * static_cast<size_t>(HW));
  return make_op(std::move(out), {x}, [c, C](const Var& g) {
    return std::vector<Var>{channel_embed(g, c, C)};
  });
}

inline Var batch_slice(const Var& x, int n0, int n);

inline Var batch_concat(const std::vector<Var>& parts) {
  const int C = parts[0]->value.dim(1), H = parts[0]->value.dim(2),
            W = parts[0]->value.dim(3);
  int N = 0;
  for (const auto& p : parts) N += p->value.dim(0);
  Tensor out({N, C, H, W});
  const int64_t item = int64_t(C) * H * W;
  int64_t off = 0;
  std::vector<int> starts;
  std::vector<int> lens;
  for (const auto& p : parts) {
    const int pn = p->value.dim(0);
    starts.push_back(static_cast<int>(off));
    lens.push_back(pn);
    std::memcpy(out.ptr() + off * item, p->value.ptr(),
                sizeof(float) * static_cast<size_t>(pn * item));
    off += pn;
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_op(std::move(out), parents, [starts, lens](const Var& g) {
    std::vector<Var> grads;
    for (size_t i = 0; i < starts.size(); ++i)
      grads.push_back(batch_slice(g, starts[i], lens[i]));
    return grads;
  });
}

inline Var batch_embed(const Var& x, int n0, int N) {
  const int C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int64_t item = int64_t(C) * H * W;
  Tensor out({N, C, H, W});
  std::memcpy(out.ptr() + int64_t(n0) * item, x->value.ptr(),
              sizeof(float) * static_cast<size_t>(x->value.numel()));
  const int n = x->value.dim(0);
  return make_op(std::move(out), {x}, [n0, n](const Var& g) {
    return std::vector<Var>{batch_slice(g, n0, n)};
  });
}

inline Var batch_slice(const Var& x, int n0, int n) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
            W = x->value.dim(3);
  const int64_t item = int64_t(C) * H * W;
  Tensor out({n, C, H, W});
  std::memcpy(out.ptr(), x->value.ptr() + int64_t(n0) * item,
              sizeof(float) * static_cast<size_t>(out.numel()));
  return make_op(std::move(out), {x}, [n0, N](const Var& g) {
    return std::vector<Var>{batch_embed(g, n0, N)};
  });
}

inline Var pick(const Var& x, int64_t flat_index);

inline Var scatter_at(const Var& s, int64_t flat_index, std::vector<int> shape) {
  Tensor out(shape);
  out.data[static_cast<size_t>(flat_index)] = s->value.data[0];
  return make_op(std::move(out), {s}, [flat_index](const Var& g) {
    return std::vector<Var>{pick(g, flat_index)};
  });
}

/// Extracts one element as a scalar var.
inline Var pick(const Var& x, int64_t flat_index) {
  Tensor out({1}, x->value.data[static_cast<size_t>(flat_index)]);
  auto shape = x->value.shape;
  return make_op(std::move(out), {x}, [flat_index, shape](const Var& g) {
    return std::vector<Var>{scatter_at(g, flat_index, shape)};
  });
}

inline Var reshape(const Var& x, std::vector<int> shape) {
  if (Tensor::numel_of(shape) != x->value.numel())
    throw ValidationError("reshape: element count mismatch");
  Tensor out;
  out.shape = shape;
  out.data = x->value.data;
  auto old_shape = x->value.shape;
  return make_op(std::move(out), {x}, [old_shape](const Var& g) {
    return std::vector<Var>{reshape(g, old_shape)};
  });
}

// ---- spatial ops -------------------------------------------------------------

inline Var bilinear_resize(const Var& x, int H2, int W2);

inline Var bilinear_adjoint_op(const Var& g, int H, int W) {
  const int nd = g->value.ndim();
  const int H2 = g->value.dim(nd - 2), W2 = g->value.dim(nd - 1);
  Tensor out = kernels::bilinear_adjoint(g->value, H, W);
  return make_op(std::move(out), {g}, [H2, W2](const Var& gg) {
    return std::vector<Var>{bilinear_resize(gg, H2, W2)};
  });
}

inline Var bilinear_resize(const Var& x, int H2, int W2) {
  const int nd = x->value.ndim();
  const int H = x->value.dim(nd - 2), W = x->value.dim(nd - 1);
  Tensor out = kernels::bilinear_resize(x->value, H2, W2);
  return make_op(std::move(out), {x}, [H, W](const Var& g) {
    return std::vector<Var>{bilinear_adjoint_op(g, H, W)};
  });
}

inline Var center_crop(const Var& x, int H2, int W2);

inline Var center_pad_op(const Var& g, int H, int W) {
  const int nd = g->value.ndim();
  const int H2 = g->value.dim(nd - 2), W2 = g->value.dim(nd - 1);
  Tensor out = kernels::center_pad(g->value, H, W);
  return make_op(std::move(out), {g}, [H2, W2](const Var& gg) {
    return std::vector<Var>{center_crop(gg, H2, W2)};
  });
}

inline Var center_crop(const Var& x, int H2, int W2) {
  const int nd = x->value.ndim();
  const int H = x->value.dim(nd - 2), W = x->value.dim(nd - 1);
  Tensor out = kernels::center_crop(x->value, H2, W2);
  return make_op(std::move(out), {x}, [H, W](const Var& g) {
    return std::vector<Var>{center_pad_op(g, H, W)};
  });
}

// ---- convolution --------------------------------------------------------------

inline Var conv2d(const Var& x, const Var& w, const Var& b, int dilation);

inline Var flip_swap(const Var& w) {
  Tensor out = kernels::flip_swap(w->value);
  return make_op(std::move(out), {w}, [](const Var& g) {
    return std::vector<Var>{flip_swap(g)};
  });
}

/// Adjoint of conv2d w.r.t. its input (a.k.a. transposed convolution for
/// stride 1 / same padding).
inline Var conv_transpose(const Var& g, const Var& w, int dilation) {
  return conv2d(g, flip_swap(w), nullptr, dilation);
}

inline Var conv2d_weight_grad(const Var& x, const Var& g, int kh, int kw, int dilation) {
  Tensor out = kernels::conv2d_weight_grad(x->value, g->value, kh, kw, dilation);
  return make_op(std::move(out), {x, g}, [x, g, dilation](const Var& u) {
    return std::vector<Var>{conv_transpose(g, u, dilation), conv2d(x, u, nullptr, dilation)};
  });
}

inline Var conv2d(const Var& x, const Var& w, const Var& b, int dilation) {
  Tensor out = kernels::conv2d(x->value, w->value, b ? b->value.ptr() : nullptr, dilation);
  const int kh = w->value.dim(2), kw = w->value.dim(3);
  // Each input gradient is only materialized if that parent wants it; this
  // skips the weight-grad GEMMs when the discriminator is held fixed.
  return make_op(std::move(out), {x, w, b},
                 [x, w, b, kh, kw, dilation](const Var& g) {
                   std::vector<Var> grads(3);
                   if (x->requires_grad) grads[0] = conv_transpose(g, w, dilation);
                   if (w->requires_grad) grads[1] = conv2d_weight_grad(x, g, kh, kw, dilation);
                   if (b && b->requires_grad) grads[2] = channel_sum(g);
                   return grads;
                 });
}

// ---- batch norm (training statistics, composed from primitives) ---------------

inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const int N = x->value.dim(0), H = x->value.dim(2), W = x->value.dim(3);
  const double inv_count = 1.0 / (static_cast<double>(N) * H * W);
  Var mu = scale(channel_sum(x), inv_count);
  Var xc = sub(x, channel_broadcast(mu, N, H, W));
  Var var = scale(channel_sum(mul(xc, xc)), inv_count);
  Var inv_std = recip(sqrt_v(add_scalar(var, eps)));
  return add_channels(mul_channels(xc, mul(inv_std, gamma)), beta);
}

// ---- backward ------------------------------------------------------------------

using GradMap = std::unordered_map<Node*, Var>;

/// Reverse-mode sweep from a scalar root. Returns gradients for every
/// reachable node that requires grad. With create_graph the returned
/// gradients are themselves differentiable.
inline GradMap backward(const Var& root, bool create_graph = false) {
  if (root->value.numel() != 1)
    throw ValidationError("backward: root must be a scalar");
  // Iterative post-order DFS over the requires_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> done;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  std::unordered_set<Node*> on_stack{root.get()};
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p && p->requires_grad && !done.count(p) && !on_stack.count(p)) {
        stack.emplace_back(p, 0);
        on_stack.insert(p);
      }
    } else {
      done.insert(node);
      on_stack.erase(node);
      order.push_back(node);
      stack.pop_back();
    }
  }

  GradMap gmap;
  gmap[root.get()] = constant(Tensor({1}, 1.0f));
  const bool prev_mode = grad_mode();
  grad_mode() = create_graph;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    auto git = gmap.find(n);
    if (git == gmap.end()) continue;
    std::vector<Var> grads = n->backward(git->second);
    for (size_t i = 0; i < n->parents.size(); ++i) {
      const Var& p = n->parents[i];
      if (!p || !p->requires_grad || !grads[i]) continue;
      auto& slot = gmap[p.get()];
      slot = slot ? add(slot, grads[i]) : grads[i];
    }
  }
  grad_mode() = prev_mode;
  return gmap;
}

}  // namespace sfxgan::ad
