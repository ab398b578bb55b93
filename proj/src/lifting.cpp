#include "voxcount/lifting.hpp"

namespace voxcount {

ReferencePoints reference_points(const VoxelGrid& grid, const CameraRig& rig) {
  ReferencePoints out;
  const int64_t n = grid.voxel_count();
  out.uv.resize(static_cast<size_t>(n));
  out.hit.resize(static_cast<size_t>(n));
  out.hit_mask = Tensor({static_cast<int>(n)});
  int64_t at = 0;
  for (int d = 0; d < grid.z; ++d)
    for (int h = 0; h < grid.y; ++h)
      for (int w = 0; w < grid.x; ++w, ++at) {
        const Vec3 p = voxel_to_world(d, h, w, grid);
        const Projection pr = project_point(rig, p);
        const bool hit = pr.in_front && pr.u >= 0.0 && pr.u <= rig.image_w - 1.0 &&
                         pr.v >= 0.0 && pr.v <= rig.image_h - 1.0;
        out.hit[static_cast<size_t>(at)] = hit ? 1 : 0;
        out.uv[static_cast<size_t>(at)] = hit ? std::make_pair(pr.u, pr.v)
                                              : std::make_pair(0.0, 0.0);
        if (hit) {
          out.hit_idx.push_back(static_cast<int>(at));
          out.hit_mask[at] = 1.0;
        }
      }
  return out;
}

DeformAttn::DeformAttn(const std::string& name, int channels, int heads, int points, Rng& rng)
    : n_heads(heads),
      n_points(points),
      offset_pred(name + ".off", channels, 2 * heads * points, rng, /*zero_init=*/true),
      weight_pred(name + ".wt", channels, heads * points, rng, /*zero_init=*/true),
      value_proj(name + ".val", channels, channels, rng),
      out_proj(name + ".out", channels, channels, rng) {
  if (channels % heads != 0) throw config_error("deform attention: C must divide by heads");
}

NodePtr DeformAttn::project_values(NodePtr feature_map) {
  const int c = feature_map->value.dim(0);
  const int hf = feature_map->value.dim(1);
  const int wf = feature_map->value.dim(2);
  NodePtr rows = transpose2d(reshape(std::move(feature_map), {c, hf * wf}));  // [HW, C]
  rows = value_proj.apply(std::move(rows));
  return reshape(transpose2d(std::move(rows)), {c, hf, wf});
}

NodePtr DeformAttn::attend(NodePtr queries, NodePtr value_map,
                           const std::vector<std::pair<double, double>>& refs_local) {
  const int v = queries->value.dim(0);
  if (static_cast<size_t>(v) != refs_local.size())
    throw shape_error("deform attention: query/reference count mismatch");
  NodePtr offsets = offset_pred.apply(queries);
  NodePtr logits = weight_pred.apply(queries);  // [V, nh*np]
  NodePtr weights = reshape(softmax_rows(reshape(std::move(logits), {v * n_heads, n_points})),
                            {v, n_heads * n_points});
  NodePtr sampled = deform_sample(std::move(value_map), refs_local, std::move(offsets),
                                  std::move(weights), n_heads);
  return out_proj.apply(std::move(sampled));
}

void DeformAttn::collect(std::vector<Parameter*>& out) {
  offset_pred.collect(out);
  weight_pred.collect(out);
  value_proj.collect(out);
  out_proj.collect(out);
}

Tensor deform_attend(DeformAttn& attn, const Tensor& query, const Tensor& feature_map,
                     std::pair<double, double> ref) {
  NoGrad ng;
  NodePtr q = constant(query.reshaped({1, static_cast<int>(query.numel())}));
  NodePtr vm = attn.project_values(constant(feature_map));
  NodePtr out = attn.attend(std::move(q), std::move(vm), {ref});
  return out->value.reshaped({static_cast<int>(out->value.numel())});
}

LiftingLayer::LiftingLayer(const std::string& name, int channels, int heads, int points,
                           Rng& rng)
    : conv(name + ".conv", channels, channels, 3, 1, 1, rng),
      ln_attn(name + ".ln_attn", channels),
      attn(name + ".attn", channels, heads, points, rng),
      ln_ffn(name + ".ln_ffn", channels),
      ffn1(name + ".ffn1", channels, 2 * channels, rng),
      ffn2(name + ".ffn2", 2 * channels, channels, rng) {}

NodePtr LiftingLayer::apply(NodePtr volume, NodePtr value_map, const ReferencePoints& refs,
                            int stride_exp) {
  const int c = volume->value.dim(0);
  const int z = volume->value.dim(1), y = volume->value.dim(2), x = volume->value.dim(3);
  const int vox = z * y * x;
  if (refs.voxels() != vox) throw shape_error("lifting layer: reference point count mismatch");

  NodePtr u = add(volume, conv.apply(volume));
  NodePtr flat = reshape(u, {c, vox});

  if (!refs.hit_idx.empty()) {
    NodePtr rows = gather_voxels(flat, refs.hit_idx);  // [V, C]
    rows = ln_attn.apply(std::move(rows));
    const double inv_stride = 1.0 / static_cast<double>(1 << stride_exp);
    std::vector<std::pair<double, double>> local(refs.hit_idx.size());
    for (size_t i = 0; i < refs.hit_idx.size(); ++i) {
      const auto& uv = refs.uv[static_cast<size_t>(refs.hit_idx[i])];
      local[i] = {uv.first * inv_stride, uv.second * inv_stride};
    }
    NodePtr att = attn.attend(std::move(rows), std::move(value_map), local);
    flat = add(std::move(flat), scatter_voxels(std::move(att), refs.hit_idx, vox));
  }

  NodePtr rows = transpose2d(flat);  // [ZYX, C]
  rows = ln_ffn.apply(std::move(rows));
  rows = ffn2.apply(relu(ffn1.apply(std::move(rows))));
  NodePtr out = add(std::move(flat), transpose2d(std::move(rows)));
  return reshape(std::move(out), {c, z, y, x});
}

void LiftingLayer::collect(std::vector<Parameter*>& out) {
  conv.collect(out);
  ln_attn.collect(out);
  attn.collect(out);
  ln_ffn.collect(out);
  ffn1.collect(out);
  ffn2.collect(out);
}

LiftingStack::LiftingStack(const std::string& name, int channels, int heads, int points,
                           int n_layers, Rng& rng) {
  for (int i = 0; i < n_layers; ++i)
    layers.emplace_back(name + ".layer" + std::to_string(i), channels, heads, points, rng);
}

NodePtr LiftingStack::lift(NodePtr q_embedded, NodePtr feature_map, const ReferencePoints& refs,
                           int stride_exp) {
  const int c = q_embedded->value.dim(0);
  const int z = q_embedded->value.dim(1);
  const int y = q_embedded->value.dim(2);
  const int x = q_embedded->value.dim(3);
  NodePtr u = std::move(q_embedded);
  for (auto& layer : layers) {
    NodePtr vm = layer.attn.project_values(feature_map);
    u = layer.apply(std::move(u), std::move(vm), refs, stride_exp);
  }
  // Voxels this view never sees carry no feature.
  return reshape(mul_bcast(reshape(std::move(u), {c, z * y * x}), constant(refs.hit_mask)),
                 {c, z, y, x});
}

void LiftingStack::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers) l.collect(out);
}

}  // namespace voxcount
