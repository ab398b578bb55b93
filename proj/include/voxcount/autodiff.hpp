#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "voxcount/tensor.hpp"

namespace voxcount {

// Learnable value. Gradients accumulate across backward passes until zeroed
// by the optimizer step.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

  void zero_grad() { grad.fill(0.0); }
};

class Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the dynamically recorded operation graph. The graph is
// rebuilt on every forward pass; backward() walks it once in reverse
// topological order.
class Node {
 public:
  Tensor value;
  Tensor grad;  // empty until a child contributes
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  Parameter* param = nullptr;
  bool requires_grad = false;

  Tensor& ensure_grad() {
    if (grad.numel() == 0) grad = Tensor::zeros(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.numel() != 0; }
};

// Disables gradient recording in scope (evaluation mode).
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

NodePtr constant(Tensor v);
NodePtr leaf(Parameter& p);

// Seeds d(root)/d(root) = 1 (root must be scalar) and propagates through the
// recorded graph; parameter leaves accumulate into Parameter::grad.
void backward(const NodePtr& root);

// ---- elementwise / shape ----
NodePtr add(NodePtr a, NodePtr b);
NodePtr sub(NodePtr a, NodePtr b);
NodePtr mul(NodePtr a, NodePtr b);
NodePtr scale(NodePtr a, double c);
NodePtr relu(NodePtr a);
NodePtr reshape(NodePtr a, std::vector<int> shape);
NodePtr transpose2d(NodePtr a);  // [M,N] -> [N,M]

// Multiplies x[C, D] by w broadcast over the leading dim (w.numel == D).
NodePtr mul_bcast(NodePtr x, NodePtr w);

// ---- dense / normalization ----
// x[..., K] * W[N, K]^T + b[N] -> [..., N]
NodePtr linear(NodePtr x, NodePtr w, NodePtr b);
NodePtr layer_norm_rows(NodePtr x, NodePtr gain, NodePtr bias, double eps = 1e-5);
NodePtr softmax_rows(NodePtr x);  // over last dim of [M, K]

// Per-column masked softmax over rows of x[N, P]; rows with mask 0 get weight
// 0, empty columns stay all-zero. mask holds 0/1.
NodePtr masked_softmax_cols(NodePtr x, const Tensor& mask);

NodePtr stack_rows(const std::vector<NodePtr>& rows);  // N x [P] -> [N, P]
NodePtr slice_row(NodePtr x, int row);                 // [N, P] -> [P]

// ---- convolution ----
NodePtr conv2d(NodePtr x, NodePtr k, NodePtr b, int stride, int pad);
NodePtr conv3d(NodePtr x, NodePtr k, NodePtr b, int stride, int pad);
// Transposed convolution, adjoint of conv3d with the same kernel tensor.
// Kernel layout [C_in, C_out, kz, ky, kx]; stride 2, pad 1, k = 4 doubles the
// spatial dims exactly.
NodePtr deconv3d(NodePtr x, NodePtr k, NodePtr b, int stride = 2, int pad = 1);
NodePtr upsample2d_nearest(NodePtr x);  // [C,H,W] -> [C,2H,2W]

// ---- sampling ----
// IPM-style lookup: bilinear-samples value[C,H,W] at fixed coords (u,v) per
// row; gradients flow into the value map only.
NodePtr sample_rows(NodePtr value, const std::vector<std::pair<double, double>>& coords);

// Deformable-attention sampling. For voxel row v and head h covering channel
// block [h*C/nh, (h+1)*C/nh): out = sum_p weights[v,h*np+p] *
// bilinear(value, ref[v] + offsets[v,(h*np+p)*2 + {0,1}]). Zero-padding
// outside the map; gradients flow into value, offsets and weights.
NodePtr deform_sample(NodePtr value, const std::vector<std::pair<double, double>>& ref,
                      NodePtr offsets, NodePtr weights, int n_heads);

// ---- gather / scatter between volume [C, D] and row [V, C] layouts ----
NodePtr gather_voxels(NodePtr x, const std::vector<int>& idx);
NodePtr scatter_voxels(NodePtr rows, const std::vector<int>& idx, int d);

// ---- reductions ----
NodePtr sum_all(NodePtr x);
NodePtr l2norm(NodePtr x);  // sqrt(sum x^2)
NodePtr sumsq(NodePtr x);   // sum x^2

// ---- plain-tensor conveniences (no graph) ----
Tensor softmax(const Tensor& x);                                  // 1-d, stable
std::vector<double> softmax(const std::vector<double>& x);        // empty -> domain_error
Tensor bilinear_sample2d(const Tensor& f, double u, double v);    // [C,H,W] -> [C]

}  // namespace voxcount
