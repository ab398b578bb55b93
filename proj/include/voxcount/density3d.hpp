#pragma once

#include <string>

#include "voxcount/nn.hpp"

namespace voxcount {

// Two rectified 3D convolutions (C -> C -> 1); densities are non-negative.
// The rectified pre-activation is scaled by a fixed output gain, so the
// learnable part works at O(0.1-1) instead of the raw persons-per-voxel scale
// (~1e-3), which keeps first-order steps from driving the whole map into the
// dead half of the rectifier.
struct DensityHead3d {
  static constexpr double kOutputGain = 0.01;
  Conv3d c1;  // C -> C, k3 p1
  Conv3d c2;  // C -> 1, k1

  DensityHead3d() = default;
  DensityHead3d(const std::string& name, int channels, Rng& rng);

  NodePtr apply(NodePtr x);

  void collect(std::vector<Parameter*>& out) {
    c1.collect(out);
    c2.collect(out);
  }
};

inline NodePtr predict_density3d(DensityHead3d& head, NodePtr x) {
  return head.apply(std::move(x));
}

// X_l = V_l + DeConv(X_prev); pass a null x_prev at the coarsest level.
NodePtr fpn_fuse_3d(NodePtr v_l, NodePtr x_prev, Deconv3d* upsampler);

// Count = integral of the density map.
double count_from_density(const Tensor& g);

enum class LossNorm { L2, L2Squared };

// lambda weighs the 2D term; alpha[l] weighs level l (alpha[0] is the finest
// and must be the maximum).
struct LossWeights {
  double lambda_2d = 1.0;
  std::vector<double> alpha;
  void validate() const;
};

// Predictions (graph nodes) paired with their ground-truth maps.
struct DensityBundle {
  std::vector<NodePtr> density2d;  // per view, [1, H/4, W/4]
  std::vector<NodePtr> density3d;  // per level, [1, Z_l, Y_l, X_l]
  std::vector<Tensor> gt2d;        // matching shapes
  std::vector<Tensor> gt3d;
};

// lambda * mean_n |H_n - H̄_n| + sum_l alpha_l * |G_l - Ḡ_l|, where |.| is
// the L2 norm over the whole map (or its square when configured).
NodePtr total_loss(const DensityBundle& bundle, const LossWeights& weights,
                   LossNorm norm = LossNorm::L2);

// Raw dump format: one text header line `dims=Z,Y,X scale=s level=l` followed
// by little-endian 64-bit floats. Tensors with a leading unit dim are written
// with that dim squeezed.
void dump_density(const std::string& path, const Tensor& t, double scale, int level);

struct DensityDump {
  Tensor data;  // [Z, Y, X]
  double scale = 0.0;
  int level = 0;
};
DensityDump load_density(const std::string& path);

}  // namespace voxcount
