#pragma once

#include <cstdint>

// Raw compute kernels behind the autodiff ops. All loops accumulate in a
// fixed order per output element, so results are bit-identical regardless of
// thread count.
namespace voxcount::kern {

using std::int64_t;

struct Conv3dDims {
  int ci, z, y, x;
  int co, kz, ky, kx;
  int stride, pad;
  int zo, yo, xo;
};

struct Conv2dDims {
  int ci, h, w;
  int co, kh, kw;
  int stride, pad;
  int ho, wo;
};

void linear_fwd(const double* x, const double* w, const double* b, double* out,
                int64_t m, int k, int n);
void linear_bwd_x(const double* gy, const double* w, double* gx, int64_t m, int k, int n);
void linear_bwd_w(const double* gy, const double* x, double* gw, int64_t m, int k, int n);
void linear_bwd_b(const double* gy, double* gb, int64_t m, int n);

void conv2d_fwd(const double* x, const double* k, const double* b, double* y,
                const Conv2dDims& d);
void conv2d_bwd_x(const double* gy, const double* k, double* gx, const Conv2dDims& d);
void conv2d_bwd_k(const double* gy, const double* x, double* gk, const Conv2dDims& d);

void conv3d_fwd(const double* x, const double* k, const double* b, double* y,
                const Conv3dDims& d);
void conv3d_bwd_x(const double* gy, const double* k, double* gx, const Conv3dDims& d);
void conv3d_bwd_k(const double* gy, const double* x, double* gk, const Conv3dDims& d);

// Transposed conv; dims describe the *adjoint* conv (x here has d.co channels
// and spatial dims d.zo/d.yo/d.xo; output has d.ci channels, d.z/d.y/d.x).
void deconv3d_fwd(const double* x, const double* k, const double* b, double* y,
                  const Conv3dDims& d);
void deconv3d_bwd_k(const double* gy, const double* x, double* gk, const Conv3dDims& d);

}  // namespace voxcount::kern
