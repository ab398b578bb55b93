#include "voxcount/model.hpp"

#include <cmath>

namespace voxcount {

void ModelConfig::validate() const {
  if (grid_x <= 0 || grid_y <= 0 || grid_z <= 0 || voxel_size <= 0.0)
    throw config_error("config: bad grid");
  if (channels <= 0 || levels < 1 || levels > 3) throw config_error("config: bad channels/levels");
  if (channels % attn_heads != 0)
    throw config_error("config: channels must be divisible by attention heads");
  if (attn_points < 1 || lift_layers < 1) throw config_error("config: bad attention params");
  const int div = 1 << (levels - 1);
  if (grid_x % div || grid_y % div || grid_z % div)
    throw config_error("config: grid dims must divide by 2^(levels-1)");
  const int img_div = 1 << (levels + 1);
  if (image_w % img_div || image_h % img_div)
    throw config_error("config: image size must divide by the coarsest stride");
  if (lambda_2d < 0.0 || alpha_decay <= 0.0 || alpha_decay > 1.0)
    throw config_error("config: bad loss weights");
  if (sigma_vox <= 0.0 || sigma_px <= 0.0) throw config_error("config: bad GT sigmas");
}

LossWeights ModelConfig::loss_weights() const {
  LossWeights w;
  w.lambda_2d = lambda_2d;
  double a = 1.0;
  for (int l = 0; l < levels; ++l) {
    w.alpha.push_back(a);
    a *= alpha_decay;
  }
  return w;
}

GroundTruth make_ground_truth(const Scene& scene, const std::vector<CameraRig>& rigs,
                              const ModelConfig& cfg) {
  GroundTruth gt;
  const VoxelGrid base = cfg.base_grid();
  for (int l = 0; l < cfg.levels; ++l)
    gt.g3d.push_back(render_gt_density3d(scene, base.level(l), cfg.sigma_vox));
  for (const CameraRig& rig : rigs) {
    gt.h2d.push_back(render_gt_density2d(scene, rig, cfg.sigma_px, 4));
    gt.visible_counts.push_back(static_cast<double>(visible_head_count(scene, rig)));
  }
  gt.scene_count = static_cast<double>(scene.heads.size());
  return gt;
}

CountingModel::CountingModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng root(seed);
  Rng enc_rng = root.fork(1);
  encoder_ = ImageEncoder("encoder", cfg.channels, cfg.levels, enc_rng);
  Rng head2d_rng = root.fork(2);
  head2d_ = Density2dHead("head2d", cfg.channels, head2d_rng);
  Rng ie_rng = root.fork(3);
  img_embed_ = ImageCameraEmbedder("img_embed", cfg.channels, cfg.combine, ie_rng);
  Rng ve_rng = root.fork(4);
  vol_embed_ = VolumeCameraEmbedder("vol_embed", cfg.channels, cfg.combine, ve_rng);

  const VoxelGrid base = cfg.base_grid();
  queries_.reserve(static_cast<size_t>(cfg.levels));
  for (int l = 0; l < cfg.levels; ++l) {
    const VoxelGrid g = base.level(l);
    Rng q_rng = root.fork(10 + static_cast<uint64_t>(l));
    Parameter q("query.l" + std::to_string(l), Tensor({cfg.channels, g.z, g.y, g.x}));
    const double limit = std::sqrt(6.0 / (2.0 * cfg.channels));
    for (int64_t i = 0; i < q.value.numel(); ++i) q.value[i] = q_rng.uniform(-limit, limit);
    queries_.push_back(std::move(q));

    Rng s_rng = root.fork(20 + static_cast<uint64_t>(l));
    stacks_.emplace_back("lift.l" + std::to_string(l), cfg.channels, cfg.attn_heads,
                         cfg.attn_points, cfg.lift_layers, s_rng);
    Rng sc_rng = root.fork(30 + static_cast<uint64_t>(l));
    scorers_.emplace_back("agg.l" + std::to_string(l), cfg.channels, sc_rng);
    Rng h_rng = root.fork(40 + static_cast<uint64_t>(l));
    heads3d_.emplace_back("head3d.l" + std::to_string(l), cfg.channels, h_rng);
    if (l + 1 < cfg.levels) {
      Rng u_rng = root.fork(50 + static_cast<uint64_t>(l));
      upsamplers_.emplace_back("fpn3d.up" + std::to_string(l), cfg.channels, cfg.channels,
                               u_rng);
    }
  }

  encoder_.collect(params_);
  head2d_.collect(params_);
  img_embed_.collect(params_);
  vol_embed_.collect(params_);
  for (auto& q : queries_) params_.push_back(&q);
  for (auto& s : stacks_) s.collect(params_);
  for (auto& s : scorers_) s.collect(params_);
  for (auto& u : upsamplers_) u.collect(params_);
  for (auto& h : heads3d_) h.collect(params_);
}

Parameter* CountingModel::find_parameter(const std::string& name) {
  for (Parameter* p : params_)
    if (p->name == name) return p;
  return nullptr;
}

void CountingModel::revive_density_heads(double bias_bump) {
  for (auto& head : heads3d_)
    for (int64_t i = 0; i < head.c2.b.value.numel(); ++i) head.c2.b.value[i] += bias_bump;
}

CountingModel::ForwardResult CountingModel::forward(const std::vector<ViewInput>& views) {
  if (views.empty()) throw domain_error("forward: need at least one view");
  const int n = static_cast<int>(views.size());
  const VoxelGrid base = cfg_.base_grid();

  std::vector<FeaturePyramid> pyramids;
  pyramids.reserve(static_cast<size_t>(n));
  for (const ViewInput& view : views) {
    if (view.image.ndim() != 3 || view.image.dim(0) != 3 ||
        view.image.dim(1) != cfg_.image_h || view.image.dim(2) != cfg_.image_w)
      throw shape_error("forward: image shape does not match the configured size");
    pyramids.push_back(encoder_.extract(constant(view.image)));
  }

  ForwardResult out;
  for (int v = 0; v < n; ++v) out.density2d.push_back(head2d_.apply(pyramids[v].levels[0]));

  std::vector<NodePtr> fused_per_level(static_cast<size_t>(cfg_.levels));
  for (int l = 0; l < cfg_.levels; ++l) {
    const VoxelGrid grid = base.level(l);
    const int stride_exp = pyramids[0].stride_exp[static_cast<size_t>(l)];
    std::vector<ReferencePoints> refs;
    refs.reserve(static_cast<size_t>(n));
    for (int v = 0; v < n; ++v) refs.push_back(reference_points(grid, views[v].rig));

    std::vector<NodePtr> queries, volumes;
    std::vector<const ReferencePoints*> ref_ptrs;
    NodePtr q_leaf = leaf(queries_[static_cast<size_t>(l)]);  // shared across views
    for (int v = 0; v < n; ++v) {
      NodePtr feat = pyramids[v].levels[static_cast<size_t>(l)];
      if (cfg_.toggle_image_embed) feat = img_embed_.apply(std::move(feat), views[v].rig);
      NodePtr q = q_leaf;
      if (cfg_.toggle_volume_embed) q = vol_embed_.apply(std::move(q), views[v].rig);
      NodePtr vol = cfg_.toggle_lift
                        ? stacks_[static_cast<size_t>(l)].lift(q, std::move(feat),
                                                               refs[static_cast<size_t>(v)],
                                                               stride_exp)
                        : ipm_lift_baseline(std::move(feat), views[v].rig, grid, stride_exp);
      queries.push_back(std::move(q));
      volumes.push_back(std::move(vol));
      ref_ptrs.push_back(&refs[static_cast<size_t>(v)]);
    }

    NodePtr weights = cfg_.toggle_agg
                          ? aggregation_weights(scorers_[static_cast<size_t>(l)], queries,
                                                ref_ptrs)
                          : constant(uniform_aggregation_weights(ref_ptrs));
    out.agg_weights.push_back(weights->value);
    fused_per_level[static_cast<size_t>(l)] = fuse_volumes(volumes, std::move(weights));

    if (l == 0) {
      out.hits_finest.reserve(static_cast<size_t>(n));
      for (int v = 0; v < n; ++v) out.hits_finest.push_back(refs[static_cast<size_t>(v)].hit);
    }
  }

  // Coarse-to-fine 3D FPN (Eq.-style: X_l = V_l + DeConv(X_{l+1})).
  out.density3d.resize(static_cast<size_t>(cfg_.levels));
  NodePtr x_prev;
  for (int l = cfg_.levels - 1; l >= 0; --l) {
    NodePtr x = fpn_fuse_3d(fused_per_level[static_cast<size_t>(l)], x_prev,
                            l < cfg_.levels - 1 ? &upsamplers_[static_cast<size_t>(l)]
                                                : nullptr);
    out.density3d[static_cast<size_t>(l)] = heads3d_[static_cast<size_t>(l)].apply(x);
    x_prev = x;
  }
  return out;
}

NodePtr CountingModel::loss(const ForwardResult& fwd, const GroundTruth& gt) const {
  DensityBundle bundle;
  bundle.density2d = fwd.density2d;
  bundle.density3d = fwd.density3d;
  bundle.gt2d = gt.h2d;
  bundle.gt3d = gt.g3d;
  return total_loss(bundle, cfg_.loss_weights(), cfg_.loss_norm);
}

}  // namespace voxcount
