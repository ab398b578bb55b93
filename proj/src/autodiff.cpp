#include "voxcount/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "kernels.hpp"
#include "voxcount/parallel.hpp"

namespace voxcount {

namespace {

thread_local bool g_grad_enabled = true;

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> bwd) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg && g_grad_enabled) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(bwd);
  }
  return n;
}

void check_same_shape(const NodePtr& a, const NodePtr& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw shape_error(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                      " vs " + b->value.shape_str());
}

struct Corner {
  int64_t off;   // offset within one channel plane, -1 if outside
  double w;      // bilinear weight
  double du;     // d w / d u
  double dv;     // d w / d v
};

// Corner decomposition of a bilinear lookup at (u, v) with zero padding.
inline void bilinear_corners(double u, double v, int h, int w, Corner c[4]) {
  const double uf = std::floor(u);
  const double vf = std::floor(v);
  const int u0 = static_cast<int>(uf);
  const int v0 = static_cast<int>(vf);
  const double fu = u - uf;
  const double fv = v - vf;
  const int us[2] = {u0, u0 + 1};
  const int vs[2] = {v0, v0 + 1};
  const double wu[2] = {1.0 - fu, fu};
  const double wv[2] = {1.0 - fv, fv};
  const double du[2] = {-1.0, 1.0};
  int i = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      Corner& cc = c[i++];
      if (us[b] < 0 || us[b] >= w || vs[a] < 0 || vs[a] >= h) {
        cc.off = -1;
        cc.w = cc.du = cc.dv = 0.0;
      } else {
        cc.off = static_cast<int64_t>(vs[a]) * w + us[b];
        cc.w = wu[b] * wv[a];
        cc.du = du[b] * wv[a];
        cc.dv = wu[b] * du[a];
      }
    }
}

}  // namespace

NoGrad::NoGrad() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGrad::~NoGrad() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

NodePtr constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

NodePtr leaf(Parameter& p) {
  auto n = std::make_shared<Node>();
  n->value = p.value;
  if (g_grad_enabled) {
    n->requires_grad = true;
    n->param = &p;
    n->backward_fn = [](Node& self) { accumulate(self.param->grad, self.grad); };
  }
  return n;
}

void backward(const NodePtr& root) {
  if (root->value.numel() != 1) throw domain_error("backward: root must be scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->has_grad() && n->backward_fn) n->backward_fn(*n);
  }
}

// ------------------------------------------------------------ elementwise

NodePtr add(NodePtr a, NodePtr b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  accumulate(out, b->value);
  return make_node(std::move(out), {std::move(a), std::move(b)}, [](Node& self) {
    for (int i = 0; i < 2; ++i)
      if (self.parents[i]->requires_grad) accumulate(self.parents[i]->ensure_grad(), self.grad);
  });
}

NodePtr sub(NodePtr a, NodePtr b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  {
    double* o = out.data();
    const double* bv = b->value.data();
    for (int64_t i = 0; i < out.numel(); ++i) o[i] -= bv[i];
  }
  return make_node(std::move(out), {std::move(a), std::move(b)}, [](Node& self) {
    if (self.parents[0]->requires_grad) accumulate(self.parents[0]->ensure_grad(), self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor& g = self.parents[1]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

NodePtr mul(NodePtr a, NodePtr b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->value.shape());
  {
    const double* av = a->value.data();
    const double* bv = b->value.data();
    double* o = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) o[i] = av[i] * bv[i];
  }
  return make_node(std::move(out), {std::move(a), std::move(b)}, [](Node& self) {
    const double* av = self.parents[0]->value.data();
    const double* bv = self.parents[1]->value.data();
    const double* g = self.grad.data();
    const int64_t n = self.grad.numel();
    if (self.parents[0]->requires_grad) {
      double* ga = self.parents[0]->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
    }
    if (self.parents[1]->requires_grad) {
      double* gb = self.parents[1]->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
    }
  });
}

NodePtr scale(NodePtr a, double c) {
  Tensor out(a->value.shape());
  {
    const double* av = a->value.data();
    double* o = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) o[i] = c * av[i];
  }
  return make_node(std::move(out), {std::move(a)}, [c](Node& self) {
    double* ga = self.parents[0]->ensure_grad().data();
    const double* g = self.grad.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) ga[i] += c * g[i];
  });
}

NodePtr relu(NodePtr a) {
  Tensor out(a->value.shape());
  {
    const double* av = a->value.data();
    double* o = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) o[i] = av[i] > 0.0 ? av[i] : 0.0;
  }
  return make_node(std::move(out), {std::move(a)}, [](Node& self) {
    const double* av = self.parents[0]->value.data();
    double* ga = self.parents[0]->ensure_grad().data();
    const double* g = self.grad.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (av[i] > 0.0) ga[i] += g[i];
  });
}

NodePtr reshape(NodePtr a, std::vector<int> shape) {
  Tensor out = a->value.reshaped(std::move(shape));
  return make_node(std::move(out), {std::move(a)}, [](Node& self) {
    Tensor& ga = self.parents[0]->ensure_grad();
    const double* g = self.grad.data();
    double* gp = ga.data();
    for (int64_t i = 0; i < ga.numel(); ++i) gp[i] += g[i];
  });
}

NodePtr transpose2d(NodePtr a) {
  if (a->value.ndim() != 2) throw shape_error("transpose2d: want 2-d tensor");
  const int m = a->value.dim(0), n = a->value.dim(1);
  Tensor out({n, m});
  {
    const double* av = a->value.data();
    double* o = out.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) o[static_cast<int64_t>(j) * m + i] = av[static_cast<int64_t>(i) * n + j];
  }
  return make_node(std::move(out), {std::move(a)}, [m, n](Node& self) {
    double* ga = self.parents[0]->ensure_grad().data();
    const double* g = self.grad.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ga[static_cast<int64_t>(i) * n + j] += g[static_cast<int64_t>(j) * m + i];
  });
}

NodePtr mul_bcast(NodePtr x, NodePtr w) {
  const int64_t d = w->value.numel();
  if (x->value.numel() % d != 0)
    throw shape_error("mul_bcast: trailing size mismatch");
  const int64_t c = x->value.numel() / d;
  Tensor out(x->value.shape());
  {
    const double* xv = x->value.data();
    const double* wv = w->value.data();
    double* o = out.data();
    for (int64_t i = 0; i < c; ++i)
      for (int64_t j = 0; j < d; ++j) o[i * d + j] = xv[i * d + j] * wv[j];
  }
  return make_node(std::move(out), {std::move(x), std::move(w)}, [c, d](Node& self) {
    const double* xv = self.parents[0]->value.data();
    const double* wv = self.parents[1]->value.data();
    const double* g = self.grad.data();
    if (self.parents[0]->requires_grad) {
      double* gx = self.parents[0]->ensure_grad().data();
      for (int64_t i = 0; i < c; ++i)
        for (int64_t j = 0; j < d; ++j) gx[i * d + j] += g[i * d + j] * wv[j];
    }
    if (self.parents[1]->requires_grad) {
      double* gw = self.parents[1]->ensure_grad().data();
      for (int64_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < c; ++i) acc += g[i * d + j] * xv[i * d + j];
        gw[j] += acc;
      }
    }
  });
}

// ------------------------------------------------------------------ dense

NodePtr linear(NodePtr x, NodePtr w, NodePtr b) {
  if (w->value.ndim() != 2 || b->value.ndim() != 1)
    throw shape_error("linear: weight must be [N,K], bias [N]");
  const int k = w->value.dim(1);
  const int n = w->value.dim(0);
  if (b->value.dim(0) != n) throw shape_error("linear: bias size mismatch");
  if (x->value.ndim() < 1 || x->value.dim(x->value.ndim() - 1) != k)
    throw shape_error("linear: input trailing dim " + x->value.shape_str() +
                      " does not match weight K=" + std::to_string(k));
  const int64_t m = x->value.numel() / k;
  std::vector<int> out_shape = x->value.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  kern::linear_fwd(x->value.data(), w->value.data(), b->value.data(), out.data(), m, k, n);
  return make_node(std::move(out), {std::move(x), std::move(w), std::move(b)},
                   [m, k, n](Node& self) {
                     const double* g = self.grad.data();
                     if (self.parents[0]->requires_grad)
                       kern::linear_bwd_x(g, self.parents[1]->value.data(),
                                          self.parents[0]->ensure_grad().data(), m, k, n);
                     if (self.parents[1]->requires_grad)
                       kern::linear_bwd_w(g, self.parents[0]->value.data(),
                                          self.parents[1]->ensure_grad().data(), m, k, n);
                     if (self.parents[2]->requires_grad)
                       kern::linear_bwd_b(g, self.parents[2]->ensure_grad().data(), m, n);
                   });
}

NodePtr layer_norm_rows(NodePtr x, NodePtr gain, NodePtr bias, double eps) {
  const int c = x->value.dim(x->value.ndim() - 1);
  if (gain->value.numel() != c || bias->value.numel() != c)
    throw shape_error("layer_norm: gain/bias size mismatch");
  const int64_t m = x->value.numel() / c;
  Tensor out(x->value.shape());
  auto stats = std::make_shared<std::vector<double>>(2 * m);  // mu, inv per row
  {
    const double* xv = x->value.data();
    const double* gv = gain->value.data();
    const double* bv = bias->value.data();
    double* o = out.data();
    double* st = stats->data();
    for (int64_t r = 0; r < m; ++r) {
      const double* xr = xv + r * c;
      double mu = 0.0;
      for (int i = 0; i < c; ++i) mu += xr[i];
      mu /= c;
      double var = 0.0;
      for (int i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
      var /= c;
      const double inv = 1.0 / std::sqrt(var + eps);
      st[2 * r] = mu;
      st[2 * r + 1] = inv;
      double* orow = o + r * c;
      for (int i = 0; i < c; ++i) orow[i] = gv[i] * (xr[i] - mu) * inv + bv[i];
    }
  }
  return make_node(std::move(out), {std::move(x), std::move(gain), std::move(bias)},
                   [m, c, stats](Node& self) {
                     const double* xv = self.parents[0]->value.data();
                     const double* gv = self.parents[1]->value.data();
                     const double* g = self.grad.data();
                     const double* st = stats->data();
                     double* gx = self.parents[0]->requires_grad
                                      ? self.parents[0]->ensure_grad().data()
                                      : nullptr;
                     double* gg = self.parents[1]->requires_grad
                                      ? self.parents[1]->ensure_grad().data()
                                      : nullptr;
                     double* gb = self.parents[2]->requires_grad
                                      ? self.parents[2]->ensure_grad().data()
                                      : nullptr;
                     for (int64_t r = 0; r < m; ++r) {
                       const double mu = st[2 * r];
                       const double inv = st[2 * r + 1];
                       const double* xr = xv + r * c;
                       const double* gr = g + r * c;
                       double sum1 = 0.0, sum2 = 0.0;
                       for (int i = 0; i < c; ++i) {
                         const double xh = (xr[i] - mu) * inv;
                         const double dxh = gr[i] * gv[i];
                         sum1 += dxh;
                         sum2 += dxh * xh;
                         if (gg) gg[i] += gr[i] * xh;
                         if (gb) gb[i] += gr[i];
                       }
                       if (gx) {
                         double* gxr = gx + r * c;
                         for (int i = 0; i < c; ++i) {
                           const double xh = (xr[i] - mu) * inv;
                           const double dxh = gr[i] * gv[i];
                           gxr[i] += inv * (dxh - sum1 / c - xh * sum2 / c);
                         }
                       }
                     }
                   });
}

NodePtr softmax_rows(NodePtr x) {
  const int k = x->value.dim(x->value.ndim() - 1);
  const int64_t m = x->value.numel() / k;
  Tensor out(x->value.shape());
  {
    const double* xv = x->value.data();
    double* o = out.data();
    for (int64_t r = 0; r < m; ++r) {
      const double* xr = xv + r * k;
      double* orow = o + r * k;
      double mx = xr[0];
      for (int i = 1; i < k; ++i) mx = std::max(mx, xr[i]);
      double sum = 0.0;
      for (int i = 0; i < k; ++i) {
        orow[i] = std::exp(xr[i] - mx);
        sum += orow[i];
      }
      for (int i = 0; i < k; ++i) orow[i] /= sum;
    }
  }
  return make_node(std::move(out), {std::move(x)}, [m, k](Node& self) {
    const double* y = self.value.data();
    const double* g = self.grad.data();
    double* gx = self.parents[0]->ensure_grad().data();
    for (int64_t r = 0; r < m; ++r) {
      const double* yr = y + r * k;
      const double* gr = g + r * k;
      double dot = 0.0;
      for (int i = 0; i < k; ++i) dot += yr[i] * gr[i];
      double* gxr = gx + r * k;
      for (int i = 0; i < k; ++i) gxr[i] += yr[i] * (gr[i] - dot);
    }
  });
}

NodePtr masked_softmax_cols(NodePtr x, const Tensor& mask) {
  if (!x->value.same_shape(mask)) throw shape_error("masked_softmax: mask shape mismatch");
  if (x->value.ndim() != 2) throw shape_error("masked_softmax: want [N,P]");
  const int n = x->value.dim(0);
  const int64_t p = x->value.dim(1);
  Tensor out(x->value.shape());
  {
    const double* xv = x->value.data();
    const double* mv = mask.data();
    double* o = out.data();
    for (int64_t j = 0; j < p; ++j) {
      double mx = -1e300;
      int cnt = 0;
      for (int i = 0; i < n; ++i)
        if (mv[i * p + j] != 0.0) {
          mx = std::max(mx, xv[i * p + j]);
          ++cnt;
        }
      if (cnt == 0) {
        for (int i = 0; i < n; ++i) o[i * p + j] = 0.0;
        continue;
      }
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const int64_t at = i * p + j;
        if (mv[at] != 0.0) {
          o[at] = std::exp(xv[at] - mx);
          sum += o[at];
        } else {
          o[at] = 0.0;
        }
      }
      for (int i = 0; i < n; ++i) o[i * p + j] /= sum;
    }
  }
  Tensor mask_copy = mask;
  return make_node(std::move(out), {std::move(x)}, [n, p, mask_copy](Node& self) {
    const double* y = self.value.data();
    const double* g = self.grad.data();
    const double* mv = mask_copy.data();
    double* gx = self.parents[0]->ensure_grad().data();
    for (int64_t j = 0; j < p; ++j) {
      double dot = 0.0;
      for (int i = 0; i < n; ++i) dot += y[i * p + j] * g[i * p + j];
      for (int i = 0; i < n; ++i) {
        const int64_t at = i * p + j;
        if (mv[at] != 0.0) gx[at] += y[at] * (g[at] - dot);
      }
    }
  });
}

NodePtr stack_rows(const std::vector<NodePtr>& rows) {
  if (rows.empty()) throw domain_error("stack_rows: empty");
  const int64_t p = rows[0]->value.numel();
  const int n = static_cast<int>(rows.size());
  Tensor out({n, static_cast<int>(p)});
  for (int i = 0; i < n; ++i) {
    if (rows[static_cast<size_t>(i)]->value.numel() != p)
      throw shape_error("stack_rows: ragged rows");
    const double* src = rows[static_cast<size_t>(i)]->value.data();
    std::copy(src, src + p, out.data() + i * p);
  }
  return make_node(std::move(out), rows, [p](Node& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      if (!self.parents[i]->requires_grad) continue;
      double* ga = self.parents[i]->ensure_grad().data();
      const double* g = self.grad.data() + static_cast<int64_t>(i) * p;
      for (int64_t j = 0; j < p; ++j) ga[j] += g[j];
    }
  });
}

NodePtr slice_row(NodePtr x, int row) {
  if (x->value.ndim() != 2) throw shape_error("slice_row: want 2-d");
  const int n = x->value.dim(0);
  const int64_t p = x->value.dim(1);
  if (row < 0 || row >= n) throw domain_error("slice_row: row out of range");
  Tensor out({static_cast<int>(p)});
  std::copy(x->value.data() + row * p, x->value.data() + (row + 1) * p, out.data());
  return make_node(std::move(out), {std::move(x)}, [row, p](Node& self) {
    double* gx = self.parents[0]->ensure_grad().data() + static_cast<int64_t>(row) * p;
    const double* g = self.grad.data();
    for (int64_t j = 0; j < p; ++j) gx[j] += g[j];
  });
}

// ------------------------------------------------------------ convolution

namespace {

kern::Conv2dDims conv2d_dims(const Tensor& x, const Tensor& k, int stride, int pad) {
  if (x.ndim() != 3 || k.ndim() != 4) throw shape_error("conv2d: want x[C,H,W], k[Co,Ci,kh,kw]");
  if (k.dim(1) != x.dim(0)) throw shape_error("conv2d: channel mismatch");
  if (stride < 1 || pad < 0) throw shape_error("conv2d: bad stride/pad");
  kern::Conv2dDims d;
  d.ci = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.co = k.dim(0);
  d.kh = k.dim(2);
  d.kw = k.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw)
    throw shape_error("conv2d: kernel larger than padded input");
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

kern::Conv3dDims conv3d_dims(const Tensor& x, const Tensor& k, int stride, int pad) {
  if (x.ndim() != 4 || k.ndim() != 5)
    throw shape_error("conv3d: want x[C,Z,Y,X], k[Co,Ci,kz,ky,kx]");
  if (k.dim(1) != x.dim(0)) throw shape_error("conv3d: channel mismatch");
  if (stride < 1 || pad < 0) throw shape_error("conv3d: bad stride/pad");
  kern::Conv3dDims d;
  d.ci = x.dim(0);
  d.z = x.dim(1);
  d.y = x.dim(2);
  d.x = x.dim(3);
  d.co = k.dim(0);
  d.kz = k.dim(2);
  d.ky = k.dim(3);
  d.kx = k.dim(4);
  d.stride = stride;
  d.pad = pad;
  if (d.z + 2 * pad < d.kz || d.y + 2 * pad < d.ky || d.x + 2 * pad < d.kx)
    throw shape_error("conv3d: kernel larger than padded input");
  d.zo = (d.z + 2 * pad - d.kz) / stride + 1;
  d.yo = (d.y + 2 * pad - d.ky) / stride + 1;
  d.xo = (d.x + 2 * pad - d.kx) / stride + 1;
  return d;
}

}  // namespace

NodePtr conv2d(NodePtr x, NodePtr k, NodePtr b, int stride, int pad) {
  const kern::Conv2dDims d = conv2d_dims(x->value, k->value, stride, pad);
  if (b->value.numel() != d.co) throw shape_error("conv2d: bias size mismatch");
  Tensor out({d.co, d.ho, d.wo});
  kern::conv2d_fwd(x->value.data(), k->value.data(), b->value.data(), out.data(), d);
  return make_node(std::move(out), {std::move(x), std::move(k), std::move(b)},
                   [d](Node& self) {
                     const double* g = self.grad.data();
                     if (self.parents[0]->requires_grad)
                       kern::conv2d_bwd_x(g, self.parents[1]->value.data(),
                                          self.parents[0]->ensure_grad().data(), d);
                     if (self.parents[1]->requires_grad)
                       kern::conv2d_bwd_k(g, self.parents[0]->value.data(),
                                          self.parents[1]->ensure_grad().data(), d);
                     if (self.parents[2]->requires_grad) {
                       double* gb = self.parents[2]->ensure_grad().data();
                       const int64_t plane = static_cast<int64_t>(d.ho) * d.wo;
                       for (int co = 0; co < d.co; ++co) {
                         double acc = 0.0;
                         for (int64_t i = 0; i < plane; ++i) acc += g[co * plane + i];
                         gb[co] += acc;
                       }
                     }
                   });
}

NodePtr conv3d(NodePtr x, NodePtr k, NodePtr b, int stride, int pad) {
  const kern::Conv3dDims d = conv3d_dims(x->value, k->value, stride, pad);
  if (b->value.numel() != d.co) throw shape_error("conv3d: bias size mismatch");
  Tensor out({d.co, d.zo, d.yo, d.xo});
  kern::conv3d_fwd(x->value.data(), k->value.data(), b->value.data(), out.data(), d);
  return make_node(std::move(out), {std::move(x), std::move(k), std::move(b)},
                   [d](Node& self) {
                     const double* g = self.grad.data();
                     if (self.parents[0]->requires_grad)
                       kern::conv3d_bwd_x(g, self.parents[1]->value.data(),
                                          self.parents[0]->ensure_grad().data(), d);
                     if (self.parents[1]->requires_grad)
                       kern::conv3d_bwd_k(g, self.parents[0]->value.data(),
                                          self.parents[1]->ensure_grad().data(), d);
                     if (self.parents[2]->requires_grad) {
                       double* gb = self.parents[2]->ensure_grad().data();
                       const int64_t vol = static_cast<int64_t>(d.zo) * d.yo * d.xo;
                       for (int co = 0; co < d.co; ++co) {
                         double acc = 0.0;
                         for (int64_t i = 0; i < vol; ++i) acc += g[co * vol + i];
                         gb[co] += acc;
                       }
                     }
                   });
}

NodePtr deconv3d(NodePtr x, NodePtr k, NodePtr b, int stride, int pad) {
  if (x->value.ndim() != 4 || k->value.ndim() != 5)
    throw shape_error("deconv3d: want x[C,Z,Y,X], k[Cin,Cout,kz,ky,kx]");
  if (k->value.dim(0) != x->value.dim(0)) throw shape_error("deconv3d: channel mismatch");
  // Exact stride-fold upsampling requires k = 2*pad + stride.
  if (k->value.dim(2) != 2 * pad + stride || k->value.dim(3) != 2 * pad + stride ||
      k->value.dim(4) != 2 * pad + stride)
    throw shape_error("deconv3d: kernel/stride incompatible with exact upsampling");
  kern::Conv3dDims d;
  d.co = x->value.dim(0);
  d.zo = x->value.dim(1);
  d.yo = x->value.dim(2);
  d.xo = x->value.dim(3);
  d.ci = k->value.dim(1);
  d.kz = k->value.dim(2);
  d.ky = k->value.dim(3);
  d.kx = k->value.dim(4);
  d.stride = stride;
  d.pad = pad;
  d.z = d.zo * stride;
  d.y = d.yo * stride;
  d.x = d.xo * stride;
  if (b->value.numel() != d.ci) throw shape_error("deconv3d: bias size mismatch");
  Tensor out({d.ci, d.z, d.y, d.x});
  kern::deconv3d_fwd(x->value.data(), k->value.data(), b->value.data(), out.data(), d);
  return make_node(std::move(out), {std::move(x), std::move(k), std::move(b)},
                   [d](Node& self) {
                     const double* g = self.grad.data();
                     if (self.parents[0]->requires_grad) {
                       // Adjoint: d/dx of deconv is the matching conv of the
                       // incoming gradient.
                       Tensor scratch({d.co, d.zo, d.yo, d.xo});
                       kern::conv3d_fwd(g, self.parents[1]->value.data(), nullptr,
                                        scratch.data(), d);
                       accumulate(self.parents[0]->ensure_grad(), scratch);
                     }
                     if (self.parents[1]->requires_grad)
                       kern::deconv3d_bwd_k(g, self.parents[0]->value.data(),
                                            self.parents[1]->ensure_grad().data(), d);
                     if (self.parents[2]->requires_grad) {
                       double* gb = self.parents[2]->ensure_grad().data();
                       const int64_t vol = static_cast<int64_t>(d.z) * d.y * d.x;
                       for (int ca = 0; ca < d.ci; ++ca) {
                         double acc = 0.0;
                         for (int64_t i = 0; i < vol; ++i) acc += g[ca * vol + i];
                         gb[ca] += acc;
                       }
                     }
                   });
}

NodePtr upsample2d_nearest(NodePtr x) {
  if (x->value.ndim() != 3) throw shape_error("upsample2d: want [C,H,W]");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  {
    const double* xv = x->value.data();
    double* o = out.data();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y) {
        const double* xrow = xv + (static_cast<int64_t>(ch) * h + y / 2) * w;
        double* orow = o + (static_cast<int64_t>(ch) * 2 * h + y) * 2 * w;
        for (int xx = 0; xx < 2 * w; ++xx) orow[xx] = xrow[xx / 2];
      }
  }
  return make_node(std::move(out), {std::move(x)}, [c, h, w](Node& self) {
    double* gx = self.parents[0]->ensure_grad().data();
    const double* g = self.grad.data();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y) {
        const double* grow = g + (static_cast<int64_t>(ch) * 2 * h + y) * 2 * w;
        double* gxrow = gx + (static_cast<int64_t>(ch) * h + y / 2) * w;
        for (int xx = 0; xx < 2 * w; ++xx) gxrow[xx / 2] += grow[xx];
      }
  });
}

// --------------------------------------------------------------- sampling

NodePtr sample_rows(NodePtr value, const std::vector<std::pair<double, double>>& coords) {
  if (value->value.ndim() != 3) throw shape_error("sample_rows: want [C,H,W]");
  const int c = value->value.dim(0), h = value->value.dim(1), w = value->value.dim(2);
  const int64_t plane = static_cast<int64_t>(h) * w;
  const int v = static_cast<int>(coords.size());
  Tensor out({v, c});
  {
    const double* f = value->value.data();
    double* o = out.data();
    for (int i = 0; i < v; ++i) {
      Corner cr[4];
      bilinear_corners(coords[static_cast<size_t>(i)].first,
                       coords[static_cast<size_t>(i)].second, h, w, cr);
      for (int ch = 0; ch < c; ++ch) {
        const double* plane_ptr = f + ch * plane;
        double acc = 0.0;
        for (const Corner& corner : cr)
          if (corner.off >= 0) acc += corner.w * plane_ptr[corner.off];
        o[static_cast<int64_t>(i) * c + ch] = acc;
      }
    }
  }
  auto coords_copy = coords;
  return make_node(std::move(out), {std::move(value)},
                   [c, h, w, plane, coords_copy](Node& self) {
                     double* gf = self.parents[0]->ensure_grad().data();
                     const double* g = self.grad.data();
                     for (size_t i = 0; i < coords_copy.size(); ++i) {
                       Corner cr[4];
                       bilinear_corners(coords_copy[i].first, coords_copy[i].second, h, w, cr);
                       for (int ch = 0; ch < c; ++ch) {
                         const double gv = g[static_cast<int64_t>(i) * c + ch];
                         if (gv == 0.0) continue;
                         double* plane_ptr = gf + ch * plane;
                         for (const Corner& corner : cr)
                           if (corner.off >= 0) plane_ptr[corner.off] += gv * corner.w;
                       }
                     }
                   });
}

NodePtr deform_sample(NodePtr value, const std::vector<std::pair<double, double>>& ref,
                      NodePtr offsets, NodePtr weights, int n_heads) {
  if (value->value.ndim() != 3) throw shape_error("deform_sample: want value [C,H,W]");
  const int c = value->value.dim(0), h = value->value.dim(1), w = value->value.dim(2);
  if (c % n_heads != 0) throw shape_error("deform_sample: C not divisible by heads");
  const int v = static_cast<int>(ref.size());
  if (offsets->value.ndim() != 2 || offsets->value.dim(0) != v)
    throw shape_error("deform_sample: offsets rows mismatch");
  if (weights->value.ndim() != 2 || weights->value.dim(0) != v)
    throw shape_error("deform_sample: weights rows mismatch");
  const int hp = weights->value.dim(1);  // n_heads * n_points
  if (offsets->value.dim(1) != 2 * hp || hp % n_heads != 0)
    throw shape_error("deform_sample: offsets/weights width mismatch");
  const int np = hp / n_heads;
  const int cb = c / n_heads;  // channels per head
  const int64_t plane = static_cast<int64_t>(h) * w;

  Tensor out({v, c});
  const double* f = value->value.data();
  const double* offv = offsets->value.data();
  const double* wtv = weights->value.data();
  auto ref_copy = std::make_shared<std::vector<std::pair<double, double>>>(ref);
  {
    double* o = out.data();
    parallel_for(v, [&](int64_t v0, int64_t v1) {
      for (int64_t i = v0; i < v1; ++i) {
        double* orow = o + i * c;
        for (int64_t j = 0; j < c; ++j) orow[j] = 0.0;
        const double* offr = offv + i * 2 * hp;
        const double* wtr = wtv + i * hp;
        for (int hd = 0; hd < n_heads; ++hd) {
          for (int p = 0; p < np; ++p) {
            const int s = hd * np + p;
            const double wt = wtr[s];
            Corner cr[4];
            bilinear_corners((*ref_copy)[static_cast<size_t>(i)].first + offr[2 * s],
                             (*ref_copy)[static_cast<size_t>(i)].second + offr[2 * s + 1],
                             h, w, cr);
            for (int ch = 0; ch < cb; ++ch) {
              const double* plane_ptr = f + (static_cast<int64_t>(hd) * cb + ch) * plane;
              double acc = 0.0;
              for (const Corner& corner : cr)
                if (corner.off >= 0) acc += corner.w * plane_ptr[corner.off];
              orow[hd * cb + ch] += wt * acc;
            }
          }
        }
      }
    });
  }
  return make_node(
      std::move(out), {std::move(value), std::move(offsets), std::move(weights)},
      [c, h, w, v, hp, np, cb, plane, n_heads, ref_copy](Node& self) {
        const double* f = self.parents[0]->value.data();
        const double* offv = self.parents[1]->value.data();
        const double* wtv = self.parents[2]->value.data();
        const double* g = self.grad.data();
        double* goff = self.parents[1]->requires_grad
                           ? self.parents[1]->ensure_grad().data()
                           : nullptr;
        double* gwt = self.parents[2]->requires_grad
                          ? self.parents[2]->ensure_grad().data()
                          : nullptr;
        if (goff || gwt) {
          parallel_for(v, [&](int64_t v0, int64_t v1) {
            for (int64_t i = v0; i < v1; ++i) {
              const double* grow = g + i * c;
              const double* offr = offv + i * 2 * hp;
              for (int hd = 0; hd < n_heads; ++hd)
                for (int p = 0; p < np; ++p) {
                  const int s = hd * np + p;
                  Corner cr[4];
                  bilinear_corners((*ref_copy)[static_cast<size_t>(i)].first + offr[2 * s],
                                   (*ref_copy)[static_cast<size_t>(i)].second +
                                       offr[2 * s + 1],
                                   h, w, cr);
                  double dw = 0.0, du = 0.0, dv = 0.0;
                  for (int ch = 0; ch < cb; ++ch) {
                    const double gv = grow[hd * cb + ch];
                    if (gv == 0.0) continue;
                    const double* plane_ptr =
                        f + (static_cast<int64_t>(hd) * cb + ch) * plane;
                    double sample = 0.0, su = 0.0, sv = 0.0;
                    for (const Corner& corner : cr)
                      if (corner.off >= 0) {
                        const double pv = plane_ptr[corner.off];
                        sample += corner.w * pv;
                        su += corner.du * pv;
                        sv += corner.dv * pv;
                      }
                    dw += gv * sample;
                    du += gv * su;
                    dv += gv * sv;
                  }
                  const double wt = wtv[i * hp + s];
                  if (gwt) gwt[i * hp + s] += dw;
                  if (goff) {
                    goff[i * 2 * hp + 2 * s] += wt * du;
                    goff[i * 2 * hp + 2 * s + 1] += wt * dv;
                  }
                }
            }
          });
        }
        if (self.parents[0]->requires_grad) {
          // Corners collide across voxels, so the scatter works into a fixed
          // number of partial maps (independent of thread count) that are
          // reduced in index order: deterministic and parallel.
          const int64_t map_sz = static_cast<int64_t>(c) * plane;
          constexpr int kChunks = 8;
          std::vector<Tensor> partial(kChunks);
          const int64_t span = (v + kChunks - 1) / kChunks;
          parallel_for(kChunks, [&](int64_t b0, int64_t b1) {
            for (int64_t blk = b0; blk < b1; ++blk) {
              const int64_t lo = blk * span;
              const int64_t hi = std::min<int64_t>(v, lo + span);
              if (lo >= hi) continue;
              partial[static_cast<size_t>(blk)] =
                  Tensor({c, static_cast<int>(plane)});
              double* gf = partial[static_cast<size_t>(blk)].data();
              for (int64_t i = lo; i < hi; ++i) {
                const double* grow = g + i * c;
                const double* offr = offv + i * 2 * hp;
                const double* wtr = wtv + i * hp;
                for (int hd = 0; hd < n_heads; ++hd)
                  for (int p = 0; p < np; ++p) {
                    const int s = hd * np + p;
                    const double wt = wtr[s];
                    if (wt == 0.0) continue;
                    Corner cr[4];
                    bilinear_corners(
                        (*ref_copy)[static_cast<size_t>(i)].first + offr[2 * s],
                        (*ref_copy)[static_cast<size_t>(i)].second + offr[2 * s + 1], h, w,
                        cr);
                    for (int ch = 0; ch < cb; ++ch) {
                      const double gv = grow[hd * cb + ch] * wt;
                      if (gv == 0.0) continue;
                      double* plane_ptr = gf + (static_cast<int64_t>(hd) * cb + ch) * plane;
                      for (const Corner& corner : cr)
                        if (corner.off >= 0) plane_ptr[corner.off] += gv * corner.w;
                    }
                  }
              }
            }
          });
          double* gf = self.parents[0]->ensure_grad().data();
          for (int blk = 0; blk < kChunks; ++blk) {
            if (partial[static_cast<size_t>(blk)].numel() == 0) continue;
            const double* src = partial[static_cast<size_t>(blk)].data();
            for (int64_t i = 0; i < map_sz; ++i) gf[i] += src[i];
          }
        }
      });
}

// --------------------------------------------------------- gather/scatter

NodePtr gather_voxels(NodePtr x, const std::vector<int>& idx) {
  if (x->value.ndim() < 2) throw shape_error("gather_voxels: want [C, ...]");
  const int c = x->value.dim(0);
  const int64_t d = x->value.numel() / c;
  const int v = static_cast<int>(idx.size());
  Tensor out({v, c});
  {
    const double* xv = x->value.data();
    double* o = out.data();
    for (int i = 0; i < v; ++i)
      for (int ch = 0; ch < c; ++ch)
        o[static_cast<int64_t>(i) * c + ch] = xv[ch * d + idx[static_cast<size_t>(i)]];
  }
  auto idx_copy = std::make_shared<std::vector<int>>(idx);
  return make_node(std::move(out), {std::move(x)}, [c, d, idx_copy](Node& self) {
    double* gx = self.parents[0]->ensure_grad().data();
    const double* g = self.grad.data();
    for (size_t i = 0; i < idx_copy->size(); ++i)
      for (int ch = 0; ch < c; ++ch)
        gx[ch * d + (*idx_copy)[i]] += g[static_cast<int64_t>(i) * c + ch];
  });
}

NodePtr scatter_voxels(NodePtr rows, const std::vector<int>& idx, int d) {
  if (rows->value.ndim() != 2) throw shape_error("scatter_voxels: want [V,C]");
  const int v = rows->value.dim(0);
  const int c = rows->value.dim(1);
  if (static_cast<int>(idx.size()) != v) throw shape_error("scatter_voxels: index count");
  Tensor out({c, d});
  {
    const double* rv = rows->value.data();
    double* o = out.data();
    for (int i = 0; i < v; ++i)
      for (int ch = 0; ch < c; ++ch)
        o[static_cast<int64_t>(ch) * d + idx[static_cast<size_t>(i)]] =
            rv[static_cast<int64_t>(i) * c + ch];
  }
  auto idx_copy = std::make_shared<std::vector<int>>(idx);
  return make_node(std::move(out), {std::move(rows)}, [c, d, idx_copy](Node& self) {
    double* gr = self.parents[0]->ensure_grad().data();
    const double* g = self.grad.data();
    for (size_t i = 0; i < idx_copy->size(); ++i)
      for (int ch = 0; ch < c; ++ch)
        gr[static_cast<int64_t>(i) * c + ch] += g[static_cast<int64_t>(ch) * d + (*idx_copy)[i]];
  });
}

// ------------------------------------------------------------- reductions

NodePtr sum_all(NodePtr x) {
  Tensor out = Tensor::scalar(x->value.sum());
  return make_node(std::move(out), {std::move(x)}, [](Node& self) {
    const double g = self.grad[0];
    double* gx = self.parents[0]->ensure_grad().data();
    for (int64_t i = 0; i < self.parents[0]->value.numel(); ++i) gx[i] += g;
  });
}

NodePtr l2norm(NodePtr x) {
  double ss = 0.0;
  {
    const double* xv = x->value.data();
    for (int64_t i = 0; i < x->value.numel(); ++i) ss += xv[i] * xv[i];
  }
  const double norm = std::sqrt(ss);
  Tensor out = Tensor::scalar(norm);
  return make_node(std::move(out), {std::move(x)}, [norm](Node& self) {
    if (norm <= 1e-300) return;  // subgradient 0 at the origin
    const double g = self.grad[0] / norm;
    const double* xv = self.parents[0]->value.data();
    double* gx = self.parents[0]->ensure_grad().data();
    for (int64_t i = 0; i < self.parents[0]->value.numel(); ++i) gx[i] += g * xv[i];
  });
}

NodePtr sumsq(NodePtr x) {
  double ss = 0.0;
  {
    const double* xv = x->value.data();
    for (int64_t i = 0; i < x->value.numel(); ++i) ss += xv[i] * xv[i];
  }
  Tensor out = Tensor::scalar(ss);
  return make_node(std::move(out), {std::move(x)}, [](Node& self) {
    const double g = 2.0 * self.grad[0];
    const double* xv = self.parents[0]->value.data();
    double* gx = self.parents[0]->ensure_grad().data();
    for (int64_t i = 0; i < self.parents[0]->value.numel(); ++i) gx[i] += g * xv[i];
  });
}

// ----------------------------------------------------- plain-tensor utils

Tensor softmax(const Tensor& x) {
  if (x.ndim() != 1) throw domain_error("softmax: want 1-d input");
  const int k = x.dim(0);
  Tensor out({k});
  double mx = x[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (int i = 0; i < k; ++i) out[i] /= sum;
  return out;
}

std::vector<double> softmax(const std::vector<double>& x) {
  if (x.empty()) throw domain_error("softmax: empty input");
  Tensor t({static_cast<int>(x.size())}, x);
  const Tensor out = softmax(t);
  return std::vector<double>(out.data(), out.data() + out.numel());
}

Tensor bilinear_sample2d(const Tensor& f, double u, double v) {
  if (f.ndim() != 3) throw shape_error("bilinear_sample2d: want [C,H,W]");
  const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
  const int64_t plane = static_cast<int64_t>(h) * w;
  Corner cr[4];
  bilinear_corners(u, v, h, w, cr);
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    const double* plane_ptr = f.data() + ch * plane;
    double acc = 0.0;
    for (const Corner& corner : cr)
      if (corner.off >= 0) acc += corner.w * plane_ptr[corner.off];
    out[ch] = acc;
  }
  return out;
}

}  // namespace voxcount
