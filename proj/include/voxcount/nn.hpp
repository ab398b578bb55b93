#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "voxcount/autodiff.hpp"
#include "voxcount/rng.hpp"

namespace voxcount {

inline void xavier_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
}

struct Linear {
  Parameter w, b;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng, bool zero_init = false,
         double bias_init = 0.0)
      : w(name + ".w", Tensor({out, in})), b(name + ".b", Tensor::full({out}, bias_init)) {
    if (!zero_init) xavier_uniform(w.value, in, out, rng);
  }

  NodePtr apply(NodePtr x) { return linear(std::move(x), leaf(w), leaf(b)); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// Fully connected stack, rectifier between layers, identity at the output.
struct Mlp {
  std::vector<int> widths;
  std::vector<Linear> layers;

  Mlp() = default;
  // final_zero zero-initializes the last layer's weights; final_bias sets its
  // bias (1.0 gives the multiplicative neutral element for Hadamard mode).
  Mlp(const std::string& name, std::vector<int> w, Rng& rng, bool final_zero = false,
      double final_bias = 0.0)
      : widths(std::move(w)) {
    if (widths.size() < 2) throw shape_error("mlp: need at least input and output widths");
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
      const bool last = i + 2 == widths.size();
      layers.emplace_back(name + ".fc" + std::to_string(i), widths[i], widths[i + 1], rng,
                          last && final_zero, last ? final_bias : 0.0);
    }
  }

  int in_width() const { return widths.front(); }
  int out_width() const { return widths.back(); }

  NodePtr apply(NodePtr x) {
    for (size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].apply(std::move(x));
      if (i + 1 < layers.size()) x = relu(std::move(x));
    }
    return x;
  }

  // Plain-tensor evaluation over leading dims (no graph).
  Tensor apply(const Tensor& x) {
    NoGrad ng;
    return apply(constant(x))->value;
  }

  void collect(std::vector<Parameter*>& out) {
    for (auto& l : layers) l.collect(out);
  }
};

inline NodePtr mlp_apply(Mlp& mlp, NodePtr x) { return mlp.apply(std::move(x)); }
inline Tensor mlp_apply(Mlp& mlp, const Tensor& x) { return mlp.apply(x); }

struct LayerNorm {
  Parameter gain, bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int c)
      : gain(name + ".gain", Tensor::full({c}, 1.0)), bias(name + ".bias", Tensor({c})) {}

  NodePtr apply(NodePtr x) { return layer_norm_rows(std::move(x), leaf(gain), leaf(bias)); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

struct Conv2d {
  Parameter k, b;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(const std::string& name, int ci, int co, int ksize, int stride_, int pad_, Rng& rng,
         bool zero_init = false)
      : k(name + ".k", Tensor({co, ci, ksize, ksize})), b(name + ".b", Tensor({co})),
        stride(stride_), pad(pad_) {
    if (!zero_init) xavier_uniform(k.value, ci * ksize * ksize, co * ksize * ksize, rng);
  }

  NodePtr apply(NodePtr x) { return conv2d(std::move(x), leaf(k), leaf(b), stride, pad); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&k);
    out.push_back(&b);
  }
};

struct Conv3d {
  Parameter k, b;
  int stride = 1, pad = 0;

  Conv3d() = default;
  Conv3d(const std::string& name, int ci, int co, int ksize, int stride_, int pad_, Rng& rng,
         bool zero_init = false)
      : k(name + ".k", Tensor({co, ci, ksize, ksize, ksize})), b(name + ".b", Tensor({co})),
        stride(stride_), pad(pad_) {
    if (!zero_init) xavier_uniform(k.value, ci * ksize * ksize * ksize,
                                   co * ksize * ksize * ksize, rng);
  }

  NodePtr apply(NodePtr x) { return conv3d(std::move(x), leaf(k), leaf(b), stride, pad); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&k);
    out.push_back(&b);
  }
};

// Stride-2 learnable upsampler (kernel 4, pad 1: exact doubling).
struct Deconv3d {
  Parameter k, b;

  Deconv3d() = default;
  Deconv3d(const std::string& name, int ci, int co, Rng& rng)
      : k(name + ".k", Tensor({ci, co, 4, 4, 4})), b(name + ".b", Tensor({co})) {
    xavier_uniform(k.value, ci * 64, co * 64, rng);
  }

  NodePtr apply(NodePtr x) { return deconv3d(std::move(x), leaf(k), leaf(b), 2, 1); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&k);
    out.push_back(&b);
  }
};

}  // namespace voxcount
