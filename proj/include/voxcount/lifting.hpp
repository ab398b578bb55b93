#pragma once

#include <cstdint>
#include <utility>

#include "voxcount/embedding.hpp"
#include "voxcount/geometry.hpp"
#include "voxcount/nn.hpp"

namespace voxcount {

// Projection of every voxel center of a grid into one view. Coordinates are
// stored in full-resolution pixels and rescaled by the pyramid stride at
// sampling time.
struct ReferencePoints {
  std::vector<std::pair<double, double>> uv;  // per voxel, row-major (d,h,w); 0 for misses
  std::vector<uint8_t> hit;                   // per voxel
  std::vector<int> hit_idx;                   // indices of hit voxels
  Tensor hit_mask;                            // [Z*Y*X] of 0/1

  int64_t voxels() const { return static_cast<int64_t>(hit.size()); }
};

ReferencePoints reference_points(const VoxelGrid& grid, const CameraRig& rig);

// Multi-head deformable attention over one feature map. Offset and weight
// predictors are zero-initialized, so training starts from plain lookup at
// the reference point with uniform point weights.
struct DeformAttn {
  int n_heads = 0, n_points = 0;
  Linear offset_pred;  // C -> 2*nh*np
  Linear weight_pred;  // C -> nh*np (softmax over points per head)
  Linear value_proj;   // C -> C
  Linear out_proj;     // C -> C

  DeformAttn() = default;
  DeformAttn(const std::string& name, int channels, int heads, int points, Rng& rng);

  // Value-projects the feature map once per (view, level, layer).
  NodePtr project_values(NodePtr feature_map);

  // queries: [V, C]; refs_local: level-local pixel coordinates per query row.
  NodePtr attend(NodePtr queries, NodePtr value_map,
                 const std::vector<std::pair<double, double>>& refs_local);

  void collect(std::vector<Parameter*>& out);
};

// Single-voxel convenience matching the per-voxel contract; the caller must
// only pass reference points of voxels that hit the view.
Tensor deform_attend(DeformAttn& attn, const Tensor& query, const Tensor& feature_map,
                     std::pair<double, double> ref);

// One encoder layer: residual 3x3x3 convolution over the full volume (the
// self-attention replacement, run before per-voxel attention), deformable
// cross-view attention on hit voxels, then a feed-forward block; layer norms
// in front of the attention and feed-forward sublayers.
struct LiftingLayer {
  Conv3d conv;       // C -> C, k3 p1
  LayerNorm ln_attn;
  DeformAttn attn;
  LayerNorm ln_ffn;
  Linear ffn1, ffn2;  // C -> 2C -> C

  LiftingLayer() = default;
  LiftingLayer(const std::string& name, int channels, int heads, int points, Rng& rng);

  NodePtr apply(NodePtr volume, NodePtr value_map, const ReferencePoints& refs, int stride_exp);

  void collect(std::vector<Parameter*>& out);
};

// The per-level stack lifting one view's features into a volume.
struct LiftingStack {
  std::vector<LiftingLayer> layers;

  LiftingStack() = default;
  LiftingStack(const std::string& name, int channels, int heads, int points, int n_layers,
               Rng& rng);

  // q_embedded: [C,Z,Y,X] view-dependent query; feature_map: [C,Hf,Wf]
  // embedded level features. Miss voxels are exactly zero in the result.
  NodePtr lift(NodePtr q_embedded, NodePtr feature_map, const ReferencePoints& refs,
               int stride_exp);

  void collect(std::vector<Parameter*>& out);
};

inline NodePtr lift_view(LiftingStack& stack, NodePtr q_embedded, NodePtr feature_map,
                         const ReferencePoints& refs, int stride_exp) {
  return stack.lift(std::move(q_embedded), std::move(feature_map), refs, stride_exp);
}

}  // namespace voxcount
