#include "kernels.hpp"

#include <algorithm>
#include <vector>

#include "voxcount/parallel.hpp"

namespace voxcount::kern {

namespace {

inline int64_t idx3(int c, int a, int b, int A, int B) {
  return (static_cast<int64_t>(c) * A + a) * B + b;
}

}  // namespace

// ---------------------------------------------------------------- linear

void linear_fwd(const double* x, const double* w, const double* b, double* out,
                int64_t m, int k, int n) {
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const double* xr = x + r * k;
      double* yr = out + r * n;
      int j = 0;
      for (; j + 4 <= n; j += 4) {
        const double* w0 = w + static_cast<int64_t>(j) * k;
        const double* w1 = w0 + k;
        const double* w2 = w1 + k;
        const double* w3 = w2 + k;
        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
        for (int i = 0; i < k; ++i) {
          const double xv = xr[i];
          a0 += xv * w0[i];
          a1 += xv * w1[i];
          a2 += xv * w2[i];
          a3 += xv * w3[i];
        }
        yr[j] = a0 + (b ? b[j] : 0.0);
        yr[j + 1] = a1 + (b ? b[j + 1] : 0.0);
        yr[j + 2] = a2 + (b ? b[j + 2] : 0.0);
        yr[j + 3] = a3 + (b ? b[j + 3] : 0.0);
      }
      for (; j < n; ++j) {
        const double* wr = w + static_cast<int64_t>(j) * k;
        double acc = b ? b[j] : 0.0;
        for (int i = 0; i < k; ++i) acc += xr[i] * wr[i];
        yr[j] = acc;
      }
    }
  });
}

void linear_bwd_x(const double* gy, const double* w, double* gx, int64_t m, int k, int n) {
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const double* gyr = gy + r * n;
      double* gxr = gx + r * k;
      int j = 0;
      for (; j + 4 <= n; j += 4) {
        const double g0 = gyr[j], g1 = gyr[j + 1], g2 = gyr[j + 2], g3 = gyr[j + 3];
        if (g0 == 0.0 && g1 == 0.0 && g2 == 0.0 && g3 == 0.0) continue;
        const double* w0 = w + static_cast<int64_t>(j) * k;
        const double* w1 = w0 + k;
        const double* w2 = w1 + k;
        const double* w3 = w2 + k;
        for (int i = 0; i < k; ++i)
          gxr[i] += g0 * w0[i] + g1 * w1[i] + g2 * w2[i] + g3 * w3[i];
      }
      for (; j < n; ++j) {
        const double g = gyr[j];
        if (g == 0.0) continue;
        const double* wr = w + static_cast<int64_t>(j) * k;
        for (int i = 0; i < k; ++i) gxr[i] += g * wr[i];
      }
    }
  });
}

void linear_bwd_w(const double* gy, const double* x, double* gw, int64_t m, int k, int n) {
  // Each output row j owns gw[j*k .. j*k+k); deterministic under any split.
  parallel_for((n + 3) / 4, [&](int64_t b0, int64_t b1) {
    for (int64_t blk = b0; blk < b1; ++blk) {
      const int j0 = static_cast<int>(blk * 4);
      const int jn = std::min(4, n - j0);
      double* gw0 = gw + static_cast<int64_t>(j0) * k;
      for (int64_t r = 0; r < m; ++r) {
        const double* gyr = gy + r * n + j0;
        const double* xr = x + r * k;
        if (jn == 4) {
          const double g0 = gyr[0], g1 = gyr[1], g2 = gyr[2], g3 = gyr[3];
          if (g0 == 0.0 && g1 == 0.0 && g2 == 0.0 && g3 == 0.0) continue;
          double* w0 = gw0;
          double* w1 = w0 + k;
          double* w2 = w1 + k;
          double* w3 = w2 + k;
          for (int i = 0; i < k; ++i) {
            const double xv = xr[i];
            w0[i] += g0 * xv;
            w1[i] += g1 * xv;
            w2[i] += g2 * xv;
            w3[i] += g3 * xv;
          }
        } else {
          for (int j = 0; j < jn; ++j) {
            const double g = gyr[j];
            if (g == 0.0) continue;
            double* wj = gw0 + static_cast<int64_t>(j) * k;
            for (int i = 0; i < k; ++i) wj[i] += g * xr[i];
          }
        }
      }
    }
  });
}

void linear_bwd_b(const double* gy, double* gb, int64_t m, int n) {
  for (int64_t r = 0; r < m; ++r)
    for (int j = 0; j < n; ++j) gb[j] += gy[r * n + j];
}

// ---------------------------------------------------------------- conv2d

void conv2d_fwd(const double* x, const double* k, const double* b, double* y,
                const Conv2dDims& d) {
  parallel_for(static_cast<int64_t>(d.co) * d.ho, [&](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      const int co = static_cast<int>(t / d.ho);
      const int oy = static_cast<int>(t % d.ho);
      double* yrow = y + idx3(co, oy, 0, d.ho, d.wo);
      const double bias = b ? b[co] : 0.0;
      for (int ox = 0; ox < d.wo; ++ox) yrow[ox] = bias;
      for (int ci = 0; ci < d.ci; ++ci) {
        for (int dy = 0; dy < d.kh; ++dy) {
          const int iy = oy * d.stride - d.pad + dy;
          if (iy < 0 || iy >= d.h) continue;
          const double* xrow = x + idx3(ci, iy, 0, d.h, d.w);
          const double* krow = k + ((static_cast<int64_t>(co) * d.ci + ci) * d.kh + dy) * d.kw;
          for (int dx = 0; dx < d.kw; ++dx) {
            const double wv = krow[dx];
            if (wv == 0.0) continue;
            const int shift = dx - d.pad;
            for (int ox = 0; ox < d.wo; ++ox) {
              const int ix = ox * d.stride + shift;
              if (ix < 0 || ix >= d.w) continue;
              yrow[ox] += wv * xrow[ix];
            }
          }
        }
      }
    }
  });
}

void conv2d_bwd_x(const double* gy, const double* k, double* gx, const Conv2dDims& d) {
  parallel_for(static_cast<int64_t>(d.ci) * d.h, [&](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      const int ci = static_cast<int>(t / d.h);
      const int iy = static_cast<int>(t % d.h);
      double* gxrow = gx + idx3(ci, iy, 0, d.h, d.w);
      for (int co = 0; co < d.co; ++co) {
        for (int dy = 0; dy < d.kh; ++dy) {
          const int num = iy + d.pad - dy;
          if (num < 0 || num % d.stride) continue;
          const int oy = num / d.stride;
          if (oy >= d.ho) continue;
          const double* gyrow = gy + idx3(co, oy, 0, d.ho, d.wo);
          const double* krow = k + ((static_cast<int64_t>(co) * d.ci + ci) * d.kh + dy) * d.kw;
          for (int dx = 0; dx < d.kw; ++dx) {
            const double wv = krow[dx];
            if (wv == 0.0) continue;
            for (int ix = 0; ix < d.w; ++ix) {
              const int numx = ix + d.pad - dx;
              if (numx < 0 || numx % d.stride) continue;
              const int ox = numx / d.stride;
              if (ox >= d.wo) continue;
              gxrow[ix] += wv * gyrow[ox];
            }
          }
        }
      }
    }
  });
}

void conv2d_bwd_k(const double* gy, const double* x, double* gk, const Conv2dDims& d) {
  parallel_for(d.co, [&](int64_t c0, int64_t c1) {
    for (int64_t co = c0; co < c1; ++co) {
      for (int ci = 0; ci < d.ci; ++ci)
        for (int dy = 0; dy < d.kh; ++dy)
          for (int dx = 0; dx < d.kw; ++dx) {
            double acc = 0.0;
            for (int oy = 0; oy < d.ho; ++oy) {
              const int iy = oy * d.stride - d.pad + dy;
              if (iy < 0 || iy >= d.h) continue;
              const double* gyrow = gy + idx3(static_cast<int>(co), oy, 0, d.ho, d.wo);
              const double* xrow = x + idx3(ci, iy, 0, d.h, d.w);
              for (int ox = 0; ox < d.wo; ++ox) {
                const int ix = ox * d.stride - d.pad + dx;
                if (ix < 0 || ix >= d.w) continue;
                acc += gyrow[ox] * xrow[ix];
              }
            }
            gk[((co * d.ci + ci) * d.kh + dy) * d.kw + dx] += acc;
          }
    }
  });
}

// ---------------------------------------------------------------- conv3d
//
// The 3x3x3 / stride 1 / pad 1 case carries nearly all of the training cost,
// so it gets dedicated register-blocked paths (4 output channels x 3 taps per
// input-row pass). The generic path covers everything else.

namespace {

bool is_k3s1p1(const Conv3dDims& d) {
  return d.stride == 1 && d.pad == 1 && d.kz == 3 && d.ky == 3 && d.kx == 3 &&
         d.zo == d.z && d.yo == d.y && d.xo == d.x;
}

// y[cb][ox] += sum_dx w[cb][dx] * xrow[ox + dx - 1] for cb < 4, one input row.
template <int CB>
inline void row_pass_fwd(const double* xrow, const double* const kw[4], double* const yr[4],
                         int xo) {
  const double w00 = kw[0][0], w01 = kw[0][1], w02 = kw[0][2];
  const double w10 = CB > 1 ? kw[1][0] : 0, w11 = CB > 1 ? kw[1][1] : 0,
               w12 = CB > 1 ? kw[1][2] : 0;
  const double w20 = CB > 2 ? kw[2][0] : 0, w21 = CB > 2 ? kw[2][1] : 0,
               w22 = CB > 2 ? kw[2][2] : 0;
  const double w30 = CB > 3 ? kw[3][0] : 0, w31 = CB > 3 ? kw[3][1] : 0,
               w32 = CB > 3 ? kw[3][2] : 0;
  // Left border (ox = 0): taps dx = 1, 2 only (dx = 2 needs width > 1).
  {
    const double x1 = xrow[0], x2 = xo > 1 ? xrow[1] : 0.0;
    yr[0][0] += w01 * x1 + w02 * x2;
    if (CB > 1) yr[1][0] += w11 * x1 + w12 * x2;
    if (CB > 2) yr[2][0] += w21 * x1 + w22 * x2;
    if (CB > 3) yr[3][0] += w31 * x1 + w32 * x2;
  }
  for (int ox = 1; ox < xo - 1; ++ox) {
    const double x0 = xrow[ox - 1], x1 = xrow[ox], x2 = xrow[ox + 1];
    yr[0][ox] += w00 * x0 + w01 * x1 + w02 * x2;
    if (CB > 1) yr[1][ox] += w10 * x0 + w11 * x1 + w12 * x2;
    if (CB > 2) yr[2][ox] += w20 * x0 + w21 * x1 + w22 * x2;
    if (CB > 3) yr[3][ox] += w30 * x0 + w31 * x1 + w32 * x2;
  }
  if (xo > 1) {  // right border: taps dx = 0, 1.
    const int ox = xo - 1;
    const double x0 = xrow[ox - 1], x1 = xrow[ox];
    yr[0][ox] += w00 * x0 + w01 * x1;
    if (CB > 1) yr[1][ox] += w10 * x0 + w11 * x1;
    if (CB > 2) yr[2][ox] += w20 * x0 + w21 * x1;
    if (CB > 3) yr[3][ox] += w30 * x0 + w31 * x1;
  }
}

void conv3d_fwd_k3(const double* x, const double* k, const double* b, double* y,
                   const Conv3dDims& d) {
  const int64_t plane = static_cast<int64_t>(d.y) * d.x;
  const int co_blocks = (d.co + 3) / 4;
  parallel_for(static_cast<int64_t>(co_blocks) * d.z, [&](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      const int cb = static_cast<int>(t / d.z);
      const int oz = static_cast<int>(t % d.z);
      const int co0 = cb * 4;
      const int ncb = std::min(4, d.co - co0);
      double* ychan[4];
      for (int i = 0; i < ncb; ++i)
        ychan[i] = y + (static_cast<int64_t>(co0 + i) * d.z + oz) * plane;
      for (int i = 0; i < ncb; ++i) {
        const double bias = b ? b[co0 + i] : 0.0;
        for (int64_t p = 0; p < plane; ++p) ychan[i][p] = bias;
      }
      for (int ci = 0; ci < d.ci; ++ci) {
        const double* xch = x + static_cast<int64_t>(ci) * d.z * plane;
        const double* kch[4];
        for (int i = 0; i < ncb; ++i)
          kch[i] = k + (static_cast<int64_t>(co0 + i) * d.ci + ci) * 27;
        for (int dz = 0; dz < 3; ++dz) {
          const int iz = oz - 1 + dz;
          if (iz < 0 || iz >= d.z) continue;
          const double* xslab = xch + static_cast<int64_t>(iz) * plane;
          for (int oy = 0; oy < d.y; ++oy) {
            double* yr[4];
            for (int i = 0; i < ncb; ++i) yr[i] = ychan[i] + static_cast<int64_t>(oy) * d.x;
            for (int dy = 0; dy < 3; ++dy) {
              const int iy = oy - 1 + dy;
              if (iy < 0 || iy >= d.y) continue;
              const double* xrow = xslab + static_cast<int64_t>(iy) * d.x;
              const double* kw[4];
              for (int i = 0; i < ncb; ++i) kw[i] = kch[i] + (dz * 3 + dy) * 3;
              switch (ncb) {
                case 4: row_pass_fwd<4>(xrow, kw, yr, d.x); break;
                case 3: row_pass_fwd<3>(xrow, kw, yr, d.x); break;
                case 2: row_pass_fwd<2>(xrow, kw, yr, d.x); break;
                default: row_pass_fwd<1>(xrow, kw, yr, d.x); break;
              }
            }
          }
        }
      }
    }
  });
}

// gx[cb][ix] += sum_dx w[cb][dx] * gyrow[ix + 1 - dx]: the flipped-tap pass.
template <int CB>
inline void row_pass_bwd(const double* gyrow, const double* const kw[4], double* const gxr[4],
                         int xn) {
  const double w00 = kw[0][0], w01 = kw[0][1], w02 = kw[0][2];
  const double w10 = CB > 1 ? kw[1][0] : 0, w11 = CB > 1 ? kw[1][1] : 0,
               w12 = CB > 1 ? kw[1][2] : 0;
  const double w20 = CB > 2 ? kw[2][0] : 0, w21 = CB > 2 ? kw[2][1] : 0,
               w22 = CB > 2 ? kw[2][2] : 0;
  const double w30 = CB > 3 ? kw[3][0] : 0, w31 = CB > 3 ? kw[3][1] : 0,
               w32 = CB > 3 ? kw[3][2] : 0;
  {
    // ix = 0: ox = 1 - dx valid for dx <= 1 (dx = 0 needs width > 1).
    const double g1 = gyrow[0], g2 = xn > 1 ? gyrow[1] : 0.0;
    gxr[0][0] += w01 * g1 + w00 * g2;
    if (CB > 1) gxr[1][0] += w11 * g1 + w10 * g2;
    if (CB > 2) gxr[2][0] += w21 * g1 + w20 * g2;
    if (CB > 3) gxr[3][0] += w31 * g1 + w30 * g2;
  }
  for (int ix = 1; ix < xn - 1; ++ix) {
    const double g0 = gyrow[ix - 1], g1 = gyrow[ix], g2 = gyrow[ix + 1];
    gxr[0][ix] += w02 * g0 + w01 * g1 + w00 * g2;
    if (CB > 1) gxr[1][ix] += w12 * g0 + w11 * g1 + w10 * g2;
    if (CB > 2) gxr[2][ix] += w22 * g0 + w21 * g1 + w20 * g2;
    if (CB > 3) gxr[3][ix] += w32 * g0 + w31 * g1 + w30 * g2;
  }
  if (xn > 1) {
    const int ix = xn - 1;
    const double g0 = gyrow[ix - 1], g1 = gyrow[ix];
    gxr[0][ix] += w02 * g0 + w01 * g1;
    if (CB > 1) gxr[1][ix] += w12 * g0 + w11 * g1;
    if (CB > 2) gxr[2][ix] += w22 * g0 + w21 * g1;
    if (CB > 3) gxr[3][ix] += w32 * g0 + w31 * g1;
  }
}

void conv3d_bwd_x_k3(const double* gy, const double* k, double* gx, const Conv3dDims& d) {
  const int64_t plane = static_cast<int64_t>(d.y) * d.x;
  const int ci_blocks = (d.ci + 3) / 4;
  parallel_for(static_cast<int64_t>(ci_blocks) * d.z, [&](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      const int cb = static_cast<int>(t / d.z);
      const int iz = static_cast<int>(t % d.z);
      const int ci0 = cb * 4;
      const int ncb = std::min(4, d.ci - ci0);
      double* gxchan[4];
      for (int i = 0; i < ncb; ++i)
        gxchan[i] = gx + (static_cast<int64_t>(ci0 + i) * d.z + iz) * plane;
      for (int co = 0; co < d.co; ++co) {
        const double* gych = gy + static_cast<int64_t>(co) * d.z * plane;
        const double* kch[4];
        for (int i = 0; i < ncb; ++i)
          kch[i] = k + (static_cast<int64_t>(co) * d.ci + ci0 + i) * 27;
        for (int dz = 0; dz < 3; ++dz) {
          const int oz = iz + 1 - dz;
          if (oz < 0 || oz >= d.z) continue;
          const double* gyslab = gych + static_cast<int64_t>(oz) * plane;
          for (int iy = 0; iy < d.y; ++iy) {
            double* gxr[4];
            for (int i = 0; i < ncb; ++i) gxr[i] = gxchan[i] + static_cast<int64_t>(iy) * d.x;
            for (int dy = 0; dy < 3; ++dy) {
              const int oy = iy + 1 - dy;
              if (oy < 0 || oy >= d.y) continue;
              const double* gyrow = gyslab + static_cast<int64_t>(oy) * d.x;
              const double* kw[4];
              for (int i = 0; i < ncb; ++i) kw[i] = kch[i] + (dz * 3 + dy) * 3;
              switch (ncb) {
                case 4: row_pass_bwd<4>(gyrow, kw, gxr, d.x); break;
                case 3: row_pass_bwd<3>(gyrow, kw, gxr, d.x); break;
                case 2: row_pass_bwd<2>(gyrow, kw, gxr, d.x); break;
                default: row_pass_bwd<1>(gyrow, kw, gxr, d.x); break;
              }
            }
          }
        }
      }
    }
  });
}

// Accumulates the 3 x-taps of one row pair into acc[3].
inline void row_dots3(const double* gyrow, const double* xrow, int xn, double* acc) {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0;
  // dx = 0 tap misses ox = 0; dx = 2 misses ox = xn-1.
  a1 += gyrow[0] * xrow[0];
  if (xn > 1) a2 += gyrow[0] * xrow[1];
  for (int ox = 1; ox < xn - 1; ++ox) {
    const double g = gyrow[ox];
    a0 += g * xrow[ox - 1];
    a1 += g * xrow[ox];
    a2 += g * xrow[ox + 1];
  }
  if (xn > 1) {
    const double g = gyrow[xn - 1];
    a0 += g * xrow[xn - 2];
    a1 += g * xrow[xn - 1];
  }
  acc[0] += a0;
  acc[1] += a1;
  acc[2] += a2;
}

void conv3d_bwd_k_k3(const double* gy, const double* x, double* gk, const Conv3dDims& d) {
  const int64_t plane = static_cast<int64_t>(d.y) * d.x;
  const int X = d.x, Y = d.y;
  if (X < 2) {  // degenerate widths take the row-pass path
    parallel_for(d.co, [&](int64_t c0, int64_t c1) {
      for (int64_t co = c0; co < c1; ++co) {
        const double* gych = gy + co * d.z * plane;
        for (int ci = 0; ci < d.ci; ++ci) {
          const double* xch = x + static_cast<int64_t>(ci) * d.z * plane;
          double acc[27] = {0};
          for (int oz = 0; oz < d.z; ++oz)
            for (int dz = 0; dz < 3; ++dz) {
              const int iz = oz - 1 + dz;
              if (iz < 0 || iz >= d.z) continue;
              for (int oy = 0; oy < Y; ++oy)
                for (int dy = 0; dy < 3; ++dy) {
                  const int iy = oy - 1 + dy;
                  if (iy < 0 || iy >= Y) continue;
                  row_dots3(gych + (static_cast<int64_t>(oz) * Y + oy) * X,
                            xch + (static_cast<int64_t>(iz) * Y + iy) * X, X,
                            acc + (dz * 3 + dy) * 3);
                }
            }
          double* gkch = gk + (co * d.ci + ci) * 27;
          for (int i = 0; i < 27; ++i) gkch[i] += acc[i];
        }
      }
    });
    return;
  }
  // Each (dy, dx) tap over a plane pair is one long dot with flat shift
  // s = (dy-1)*X + (dx-1); pairs that cross a row boundary (the first or last
  // column, depending on dx) are subtracted afterwards.
  parallel_for(d.co, [&](int64_t c0, int64_t c1) {
    for (int64_t co = c0; co < c1; ++co) {
      const double* gych = gy + co * d.z * plane;
      for (int ci = 0; ci < d.ci; ++ci) {
        const double* xch = x + static_cast<int64_t>(ci) * d.z * plane;
        double acc[27] = {0};
        for (int oz = 0; oz < d.z; ++oz) {
          const double* gyplane = gych + static_cast<int64_t>(oz) * plane;
          for (int dz = 0; dz < 3; ++dz) {
            const int iz = oz - 1 + dz;
            if (iz < 0 || iz >= d.z) continue;
            const double* xplane = xch + static_cast<int64_t>(iz) * plane;
            for (int dy = 0; dy < 3; ++dy) {
              const int r0 = std::max(0, 1 - dy);
              const int r1 = std::min(Y, Y + 1 - dy);
              if (r0 >= r1) continue;
              for (int dx = 0; dx < 3; ++dx) {
                const int64_t s = static_cast<int64_t>(dy - 1) * X + (dx - 1);
                const int64_t p_lo = static_cast<int64_t>(r0) * X + (dx == 0 ? 1 : 0);
                const int64_t p_hi = static_cast<int64_t>(r1) * X - (dx == 2 ? 1 : 0);
                const double* gp = gyplane + p_lo;
                const double* xp = xplane + p_lo + s;
                const int64_t n = p_hi - p_lo;
                // Eight independent chains so the reduction is not bound by
                // FMA latency; order is fixed, results stay deterministic.
                double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0;
                int64_t i = 0;
                for (; i + 8 <= n; i += 8) {
                  a0 += gp[i] * xp[i];
                  a1 += gp[i + 1] * xp[i + 1];
                  a2 += gp[i + 2] * xp[i + 2];
                  a3 += gp[i + 3] * xp[i + 3];
                  a4 += gp[i + 4] * xp[i + 4];
                  a5 += gp[i + 5] * xp[i + 5];
                  a6 += gp[i + 6] * xp[i + 6];
                  a7 += gp[i + 7] * xp[i + 7];
                }
                double a = ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7));
                for (; i < n; ++i) a += gp[i] * xp[i];
                if (dx == 0) {
                  for (int row = r0 + 1; row < r1; ++row) {
                    const int64_t p = static_cast<int64_t>(row) * X;
                    a -= gyplane[p] * xplane[p + s];
                  }
                } else if (dx == 2) {
                  for (int row = r0 + 1; row < r1; ++row) {
                    const int64_t p = static_cast<int64_t>(row) * X - 1;
                    a -= gyplane[p] * xplane[p + s];
                  }
                }
                acc[(dz * 3 + dy) * 3 + dx] += a;
              }
            }
          }
        }
        double* gkch = gk + (co * d.ci + ci) * 27;
        for (int i = 0; i < 27; ++i) gkch[i] += acc[i];
      }
    }
  });
}

}  // namespace

void conv3d_fwd(const double* x, const double* k, const double* b, double* y,
                const Conv3dDims& d) {
  if (is_k3s1p1(d)) {
    conv3d_fwd_k3(x, k, b, y, d);
    return;
  }
  const int64_t plane_in = static_cast<int64_t>(d.y) * d.x;
  const int64_t plane_out = static_cast<int64_t>(d.yo) * d.xo;
  parallel_for(static_cast<int64_t>(d.co) * d.zo, [&](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      const int co = static_cast<int>(t / d.zo);
      const int oz = static_cast<int>(t % d.zo);
      double* yplane = y + (static_cast<int64_t>(co) * d.zo + oz) * plane_out;
      const double bias = b ? b[co] : 0.0;
      for (int64_t i = 0; i < plane_out; ++i) yplane[i] = bias;
      for (int ci = 0; ci < d.ci; ++ci) {
        const double* xch = x + static_cast<int64_t>(ci) * d.z * plane_in;
        const double* kch =
            k + (static_cast<int64_t>(co) * d.ci + ci) * d.kz * d.ky * d.kx;
        for (int dz = 0; dz < d.kz; ++dz) {
          const int iz = oz * d.stride - d.pad + dz;
          if (iz < 0 || iz >= d.z) continue;
          const double* xslab = xch + static_cast<int64_t>(iz) * plane_in;
          for (int oy = 0; oy < d.yo; ++oy) {
            double* yrow = yplane + static_cast<int64_t>(oy) * d.xo;
            for (int dy = 0; dy < d.ky; ++dy) {
              const int iy = oy * d.stride - d.pad + dy;
              if (iy < 0 || iy >= d.y) continue;
              const double* xrow = xslab + static_cast<int64_t>(iy) * d.x;
              const double* krow = kch + (static_cast<int64_t>(dz) * d.ky + dy) * d.kx;
              for (int dx = 0; dx < d.kx; ++dx) {
                const double wv = krow[dx];
                if (wv == 0.0) continue;
                const int shift = dx - d.pad;
                if (d.stride == 1) {
                  const int lo = std::max(0, -shift);
                  const int hi = std::min(d.xo, d.x - shift);
                  const double* xs = xrow + shift;
                  for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xs[ox];
                } else {
                  for (int ox = 0; ox < d.xo; ++ox) {
                    const int ix = ox * d.stride + shift;
                    if (ix < 0 || ix >= d.x) continue;
                    yrow[ox] += wv * xrow[ix];
                  }
                }
              }
            }
          }
        }
      }
    }
  });
}

void conv3d_bwd_x(const double* gy, const double* k, double* gx, const Conv3dDims& d) {
  if (is_k3s1p1(d)) {
    conv3d_bwd_x_k3(gy, k, gx, d);
    return;
  }
  const int64_t plane_in = static_cast<int64_t>(d.y) * d.x;
  const int64_t plane_out = static_cast<int64_t>(d.yo) * d.xo;
  parallel_for(static_cast<int64_t>(d.ci) * d.z, [&](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      const int ci = static_cast<int>(t / d.z);
      const int iz = static_cast<int>(t % d.z);
      double* gxplane = gx + (static_cast<int64_t>(ci) * d.z + iz) * plane_in;
      for (int co = 0; co < d.co; ++co) {
        const double* gych = gy + static_cast<int64_t>(co) * d.zo * plane_out;
        const double* kch =
            k + (static_cast<int64_t>(co) * d.ci + ci) * d.kz * d.ky * d.kx;
        for (int dz = 0; dz < d.kz; ++dz) {
          const int numz = iz + d.pad - dz;
          if (numz < 0 || numz % d.stride) continue;
          const int oz = numz / d.stride;
          if (oz >= d.zo) continue;
          const double* gyslab = gych + static_cast<int64_t>(oz) * plane_out;
          for (int iy = 0; iy < d.y; ++iy) {
            double* gxrow = gxplane + static_cast<int64_t>(iy) * d.x;
            for (int dy = 0; dy < d.ky; ++dy) {
              const int numy = iy + d.pad - dy;
              if (numy < 0 || numy % d.stride) continue;
              const int oy = numy / d.stride;
              if (oy >= d.yo) continue;
              const double* gyrow = gyslab + static_cast<int64_t>(oy) * d.xo;
              const double* krow = kch + (static_cast<int64_t>(dz) * d.ky + dy) * d.kx;
              for (int dx = 0; dx < d.kx; ++dx) {
                const double wv = krow[dx];
                if (wv == 0.0) continue;
                if (d.stride == 1) {
                  const int shift = d.pad - dx;  // ox = ix + shift
                  const int lo = std::max(0, -shift);
                  const int hi = std::min(d.x, d.xo - shift);
                  const double* gys = gyrow + shift;
                  for (int ix = lo; ix < hi; ++ix) gxrow[ix] += wv * gys[ix];
                } else {
                  for (int ix = 0; ix < d.x; ++ix) {
                    const int numx = ix + d.pad - dx;
                    if (numx < 0 || numx % d.stride) continue;
                    const int ox = numx / d.stride;
                    if (ox >= d.xo) continue;
                    gxrow[ix] += wv * gyrow[ox];
                  }
                }
              }
            }
          }
        }
      }
    }
  });
}

void conv3d_bwd_k(const double* gy, const double* x, double* gk, const Conv3dDims& d) {
  if (is_k3s1p1(d)) {
    conv3d_bwd_k_k3(gy, x, gk, d);
    return;
  }
  const int64_t plane_in = static_cast<int64_t>(d.y) * d.x;
  const int64_t plane_out = static_cast<int64_t>(d.yo) * d.xo;
  parallel_for(d.co, [&](int64_t c0, int64_t c1) {
    for (int64_t co = c0; co < c1; ++co) {
      const double* gych = gy + co * d.zo * plane_out;
      for (int ci = 0; ci < d.ci; ++ci) {
        const double* xch = x + static_cast<int64_t>(ci) * d.z * plane_in;
        double* gkch = gk + (co * d.ci + ci) * d.kz * d.ky * d.kx;
        for (int dz = 0; dz < d.kz; ++dz)
          for (int dy = 0; dy < d.ky; ++dy)
            for (int dx = 0; dx < d.kx; ++dx) {
              double acc = 0.0;
              for (int oz = 0; oz < d.zo; ++oz) {
                const int iz = oz * d.stride - d.pad + dz;
                if (iz < 0 || iz >= d.z) continue;
                for (int oy = 0; oy < d.yo; ++oy) {
                  const int iy = oy * d.stride - d.pad + dy;
                  if (iy < 0 || iy >= d.y) continue;
                  const double* gyrow =
                      gych + (static_cast<int64_t>(oz) * d.yo + oy) * d.xo;
                  const double* xrow =
                      xch + (static_cast<int64_t>(iz) * d.y + iy) * d.x;
                  if (d.stride == 1) {
                    const int shift = dx - d.pad;  // ix = ox + shift
                    const int lo = std::max(0, -shift);
                    const int hi = std::min(d.xo, d.x - shift);
                    const double* xs = xrow + shift;
                    for (int ox = lo; ox < hi; ++ox) acc += gyrow[ox] * xs[ox];
                  } else {
                    for (int ox = 0; ox < d.xo; ++ox) {
                      const int ix = ox * d.stride - d.pad + dx;
                      if (ix < 0 || ix >= d.x) continue;
                      acc += gyrow[ox] * xrow[ix];
                    }
                  }
                }
              }
              gkch[(static_cast<int64_t>(dz) * d.ky + dy) * d.kx + dx] += acc;
            }
      }
    }
  });
}

// -------------------------------------------------------------- deconv3d
// Dims describe the adjoint conv: deconv input x is [d.co, d.zo, d.yo, d.xo],
// output y is [d.ci, d.z, d.y, d.x], kernel [d.co, d.ci, kz, ky, kx].

void deconv3d_fwd(const double* x, const double* k, const double* b, double* y,
                  const Conv3dDims& d) {
  const int64_t plane_in = static_cast<int64_t>(d.yo) * d.xo;
  const int64_t plane_out = static_cast<int64_t>(d.y) * d.x;
  const bool fast = d.stride == 2 && d.pad == 1 && d.kz == 4 && d.ky == 4 && d.kx == 4 &&
                    d.z == 2 * d.zo && d.y == 2 * d.yo && d.x == 2 * d.xo;
  if (fast) {
    // Per output row, exactly two kernel taps contribute per parity lane.
    // Even ox = 2t reads x[t] (dx=1) and x[t-1] (dx=3); odd ox = 2t+1 reads
    // x[t+1] (dx=0) and x[t] (dx=2). Same decomposition along y and z.
    parallel_for(static_cast<int64_t>(d.ci) * d.z, [&](int64_t t0, int64_t t1) {
      std::vector<double> even(static_cast<size_t>(d.xo) + 1), odd(static_cast<size_t>(d.xo) + 1);
      for (int64_t t = t0; t < t1; ++t) {
        const int ca = static_cast<int>(t / d.z);
        const int oz = static_cast<int>(t % d.z);
        double* yplane = y + (static_cast<int64_t>(ca) * d.z + oz) * plane_out;
        const double bias = b ? b[ca] : 0.0;
        for (int oy = 0; oy < d.y; ++oy) {
          double* yrow = yplane + static_cast<int64_t>(oy) * d.x;
          const int nh = d.xo;
          for (int i = 0; i <= nh; ++i) even[static_cast<size_t>(i)] = 0.0;
          for (int i = 0; i <= nh; ++i) odd[static_cast<size_t>(i)] = 0.0;
          for (int cb = 0; cb < d.co; ++cb) {
            const double* xch = x + static_cast<int64_t>(cb) * d.zo * plane_in;
            const double* kch = k + (static_cast<int64_t>(cb) * d.ci + ca) * 64;
            for (int dz = 0; dz < 4; ++dz) {
              const int numz = oz + 1 - dz;
              if (numz < 0 || numz & 1) continue;
              const int izin = numz >> 1;
              if (izin >= d.zo) continue;
              for (int dy = 0; dy < 4; ++dy) {
                const int numy = oy + 1 - dy;
                if (numy < 0 || numy & 1) continue;
                const int iyin = numy >> 1;
                if (iyin >= d.yo) continue;
                const double* xrow =
                    xch + (static_cast<int64_t>(izin) * d.yo + iyin) * d.xo;
                const double* kr = kch + (dz * 4 + dy) * 4;
                const double k0 = kr[0], k1 = kr[1], k2 = kr[2], k3 = kr[3];
                // even lane: acc_e[t] += k1*x[t] + k3*x[t-1]  (t = 0..xo-1)
                even[0] += k1 * xrow[0];
                for (int i = 1; i < nh; ++i) even[static_cast<size_t>(i)] +=
                    k1 * xrow[i] + k3 * xrow[i - 1];
                // odd lane: acc_o[t] += k2*x[t] + k0*x[t+1]
                for (int i = 0; i < nh - 1; ++i) odd[static_cast<size_t>(i)] +=
                    k2 * xrow[i] + k0 * xrow[i + 1];
                odd[static_cast<size_t>(nh - 1)] += k2 * xrow[nh - 1];
              }
            }
          }
          for (int i = 0; i < nh; ++i) {
            yrow[2 * i] = even[static_cast<size_t>(i)] + bias;
            yrow[2 * i + 1] = odd[static_cast<size_t>(i)] + bias;
          }
        }
      }
    });
    return;
  }
  parallel_for(static_cast<int64_t>(d.ci) * d.z, [&](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      const int ca = static_cast<int>(t / d.z);
      const int oz = static_cast<int>(t % d.z);
      double* yplane = y + (static_cast<int64_t>(ca) * d.z + oz) * plane_out;
      const double bias = b ? b[ca] : 0.0;
      for (int64_t i = 0; i < plane_out; ++i) yplane[i] = bias;
      for (int cb = 0; cb < d.co; ++cb) {
        const double* xch = x + static_cast<int64_t>(cb) * d.zo * plane_in;
        const double* kch =
            k + (static_cast<int64_t>(cb) * d.ci + ca) * d.kz * d.ky * d.kx;
        for (int dz = 0; dz < d.kz; ++dz) {
          const int numz = oz + d.pad - dz;
          if (numz < 0 || numz % d.stride) continue;
          const int izin = numz / d.stride;
          if (izin >= d.zo) continue;
          const double* xslab = xch + static_cast<int64_t>(izin) * plane_in;
          for (int oy = 0; oy < d.y; ++oy) {
            double* yrow = yplane + static_cast<int64_t>(oy) * d.x;
            for (int dy = 0; dy < d.ky; ++dy) {
              const int numy = oy + d.pad - dy;
              if (numy < 0 || numy % d.stride) continue;
              const int iyin = numy / d.stride;
              if (iyin >= d.yo) continue;
              const double* xrow = xslab + static_cast<int64_t>(iyin) * d.xo;
              const double* krow = kch + (static_cast<int64_t>(dz) * d.ky + dy) * d.kx;
              for (int dx = 0; dx < d.kx; ++dx) {
                const double wv = krow[dx];
                if (wv == 0.0) continue;
                for (int ox = 0; ox < d.x; ++ox) {
                  const int numx = ox + d.pad - dx;
                  if (numx < 0 || numx % d.stride) continue;
                  const int ixin = numx / d.stride;
                  if (ixin >= d.xo) continue;
                  yrow[ox] += wv * xrow[ixin];
                }
              }
            }
          }
        }
      }
    }
  });
}

void deconv3d_bwd_k(const double* gy, const double* x, double* gk, const Conv3dDims& d) {
  const int64_t plane_in = static_cast<int64_t>(d.yo) * d.xo;
  const int64_t plane_out = static_cast<int64_t>(d.y) * d.x;
  parallel_for(d.co, [&](int64_t c0, int64_t c1) {
    for (int64_t cb = c0; cb < c1; ++cb) {
      const double* xch = x + cb * d.zo * plane_in;
      for (int ca = 0; ca < d.ci; ++ca) {
        const double* gych = gy + static_cast<int64_t>(ca) * d.z * plane_out;
        double* gkch = gk + (cb * d.ci + ca) * d.kz * d.ky * d.kx;
        for (int dz = 0; dz < d.kz; ++dz)
          for (int dy = 0; dy < d.ky; ++dy) {
            double acc[16] = {0};  // kx <= 2*pad + stride stays small
            for (int iz = 0; iz < d.zo; ++iz) {
              const int oz = iz * d.stride - d.pad + dz;
              if (oz < 0 || oz >= d.z) continue;
              for (int iy = 0; iy < d.yo; ++iy) {
                const int oy = iy * d.stride - d.pad + dy;
                if (oy < 0 || oy >= d.y) continue;
                const double* xrow = xch + (static_cast<int64_t>(iz) * d.yo + iy) * d.xo;
                const double* gyrow =
                    gych + (static_cast<int64_t>(oz) * d.y + oy) * d.x;
                for (int dx = 0; dx < d.kx; ++dx) {
                  // ox = ix*stride - pad + dx stays in range for a contiguous
                  // ix window; resolve the bounds once.
                  int lo = 0, hi = d.xo;
                  while (lo < hi && lo * d.stride - d.pad + dx < 0) ++lo;
                  while (hi > lo && (hi - 1) * d.stride - d.pad + dx >= d.x) --hi;
                  const double* gys = gyrow + (static_cast<int64_t>(lo) * d.stride - d.pad + dx);
                  double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
                  int64_t i = 0;
                  const int64_t n = hi - lo;
                  for (; i + 4 <= n; i += 4) {
                    a0 += xrow[lo + i] * gys[i * d.stride];
                    a1 += xrow[lo + i + 1] * gys[(i + 1) * d.stride];
                    a2 += xrow[lo + i + 2] * gys[(i + 2) * d.stride];
                    a3 += xrow[lo + i + 3] * gys[(i + 3) * d.stride];
                  }
                  double a = (a0 + a1) + (a2 + a3);
                  for (; i < n; ++i) a += xrow[lo + i] * gys[i * d.stride];
                  acc[dx] += a;
                }
              }
            }
            for (int dx = 0; dx < d.kx; ++dx)
              gkch[(static_cast<int64_t>(dz) * d.ky + dy) * d.kx + dx] += acc[dx];
          }
      }
    }
  });
}

}  // namespace voxcount::kern
