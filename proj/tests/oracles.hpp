#pragma once

// Brute-force reference implementations used as independent oracles. These
// stay deliberately naive (nested loops, no shared code with the library
// kernels) so they can vouch for the optimized paths.

#include <utility>
#include <vector>

#include "voxcount/rng.hpp"
#include "voxcount/tensor.hpp"

namespace oracle {

using voxcount::Rng;
using voxcount::Tensor;

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (voxcount::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// y[m,n] = sum_k x[m,k] * w[n,k] + b[n]
inline Tensor matmul_bias(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int m = x.dim(0), k = x.dim(1), n = w.dim(0);
  Tensor y({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = b[j];
      for (int t = 0; t < k; ++t) acc += x.at({i, t}) * w.at({j, t});
      y.at({i, j}) = acc;
    }
  return y;
}

// Six-nested-loop cross-correlation, zero padding.
inline Tensor conv3d_ref(const Tensor& x, const Tensor& k, const Tensor& b, int stride,
                         int pad) {
  const int ci = x.dim(0), z = x.dim(1), y = x.dim(2), xx = x.dim(3);
  const int co = k.dim(0), kz = k.dim(2), ky = k.dim(3), kx = k.dim(4);
  const int zo = (z + 2 * pad - kz) / stride + 1;
  const int yo = (y + 2 * pad - ky) / stride + 1;
  const int xo = (xx + 2 * pad - kx) / stride + 1;
  Tensor out({co, zo, yo, xo});
  for (int c = 0; c < co; ++c)
    for (int oz = 0; oz < zo; ++oz)
      for (int oy = 0; oy < yo; ++oy)
        for (int ox = 0; ox < xo; ++ox) {
          double acc = b[c];
          for (int ic = 0; ic < ci; ++ic)
            for (int dz = 0; dz < kz; ++dz)
              for (int dy = 0; dy < ky; ++dy)
                for (int dx = 0; dx < kx; ++dx) {
                  const int iz = oz * stride - pad + dz;
                  const int iy = oy * stride - pad + dy;
                  const int ix = ox * stride - pad + dx;
                  if (iz < 0 || iz >= z || iy < 0 || iy >= y || ix < 0 || ix >= xx) continue;
                  acc += x.at({ic, iz, iy, ix}) * k.at({c, ic, dz, dy, dx});
                }
          out.at({c, oz, oy, ox}) = acc;
        }
  return out;
}

inline Tensor conv2d_ref(const Tensor& x, const Tensor& k, const Tensor& b, int stride,
                         int pad) {
  const int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
  Tensor out({co, ho, wo});
  for (int c = 0; c < co; ++c)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = b[c];
        for (int ic = 0; ic < ci; ++ic)
          for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
              const int iy = oy * stride - pad + dy;
              const int ix = ox * stride - pad + dx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x.at({ic, iy, ix}) * k.at({c, ic, dy, dx});
            }
        out.at({c, oy, ox}) = acc;
      }
  return out;
}

inline double inner(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (voxcount::int64_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (voxcount::int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] > b[i] ? a[i] - b[i] : b[i] - a[i];
    if (d > m) m = d;
  }
  return m;
}

}  // namespace oracle
