#pragma once

#include "voxcount/aggregation.hpp"
#include "voxcount/density3d.hpp"
#include "voxcount/embedding.hpp"
#include "voxcount/encoder.hpp"
#include "voxcount/lifting.hpp"
#include "voxcount/scenegen.hpp"

namespace voxcount {

struct ModelConfig {
  // Finest-level voxel grid (X x Y x Z voxels of edge voxel_size meters).
  int grid_x = 32, grid_y = 32, grid_z = 8;
  double voxel_size = 0.25;
  int image_w = 64, image_h = 64;
  int channels = 32, levels = 2;
  int attn_heads = 4, attn_points = 4, lift_layers = 2;
  CombineMode combine = CombineMode::Add;
  // Component toggles: attention lifting (off = IPM baseline), volume-level
  // embedding, learned aggregation (off = uniform average), image-level
  // embedding.
  bool toggle_lift = true;
  bool toggle_volume_embed = true;
  bool toggle_agg = true;
  bool toggle_image_embed = true;
  double lambda_2d = 1.0;
  double alpha_decay = 0.5;
  LossNorm loss_norm = LossNorm::L2;
  double sigma_vox = 1.0;
  double sigma_px = 2.0;

  void validate() const;
  VoxelGrid base_grid() const { return VoxelGrid(grid_z, grid_y, grid_x, voxel_size); }
  LossWeights loss_weights() const;
};

struct GroundTruth {
  std::vector<Tensor> g3d;  // per level [1, Z_l, Y_l, X_l]
  std::vector<Tensor> h2d;  // per view [1, H/4, W/4]
  double scene_count = 0.0;
  std::vector<double> visible_counts;  // per view
};

GroundTruth make_ground_truth(const Scene& scene, const std::vector<CameraRig>& rigs,
                              const ModelConfig& cfg);

// The assembled pipeline: encoder -> camera embeddings -> per-view lifting ->
// hit-masked aggregation -> 3D FPN density prediction, plus the 2D heads used
// for intermediate supervision.
class CountingModel {
 public:
  CountingModel(const ModelConfig& cfg, uint64_t seed);

  struct ViewInput {
    CameraRig rig;
    Tensor image;  // [3, H, W]
  };

  struct ForwardResult {
    std::vector<NodePtr> density3d;               // per level
    std::vector<NodePtr> density2d;               // per view
    std::vector<Tensor> agg_weights;              // per level, [N, Z_l*Y_l*X_l]
    std::vector<std::vector<uint8_t>> hits_finest;  // per view
  };

  ForwardResult forward(const std::vector<ViewInput>& views);

  NodePtr loss(const ForwardResult& fwd, const GroundTruth& gt) const;

  double predicted_count(const ForwardResult& fwd) const {
    return count_from_density(fwd.density3d[0]->value);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<Parameter*>& parameters() { return params_; }
  Parameter* find_parameter(const std::string& name);

  // The rectified heads have an absorbing failure mode: once every
  // pre-activation is negative the output and all its gradients are
  // identically zero. When training observes a fully dead finest map it calls
  // this to push the head biases back across the kink (bounded, deterministic).
  void revive_density_heads(double bias_bump = 0.05);

 private:
  ModelConfig cfg_;
  ImageEncoder encoder_;
  Density2dHead head2d_;
  ImageCameraEmbedder img_embed_;
  VolumeCameraEmbedder vol_embed_;
  std::vector<Parameter> queries_;          // per level
  std::vector<LiftingStack> stacks_;        // per level
  std::vector<ImportanceScorer> scorers_;   // per level
  std::vector<Deconv3d> upsamplers_;        // transition into level l (size levels-1)
  std::vector<DensityHead3d> heads3d_;      // per level
  std::vector<Parameter*> params_;
};

}  // namespace voxcount
