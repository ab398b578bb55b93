#pragma once

#include "voxcount/lifting.hpp"
#include "voxcount/nn.hpp"

namespace voxcount {

// Per-voxel, per-view importance score; the exponential lives inside the
// masked softmax.
struct ImportanceScorer {
  Linear phi;  // C -> 1

  ImportanceScorer() = default;
  ImportanceScorer(const std::string& name, int channels, Rng& rng)
      : phi(name + ".phi", channels, 1, rng) {}

  void collect(std::vector<Parameter*>& out) { phi.collect(out); }
};

// Hit-masked softmax over views of phi(Q_n^p). Returns [N, P]; rows are views,
// columns voxels. Weights are zero off the hit set and all-zero for voxels no
// view sees.
NodePtr aggregation_weights(ImportanceScorer& scorer, const std::vector<NodePtr>& queries,
                            const std::vector<const ReferencePoints*>& refs);

// Uniform average over the hit set (the learned-aggregation ablation).
Tensor uniform_aggregation_weights(const std::vector<const ReferencePoints*>& refs);

// V = sum_n W_n ⊙ V_n with W broadcast over channels. volumes: [C,Z,Y,X]
// each; weights: [N, Z*Y*X].
NodePtr fuse_volumes(const std::vector<NodePtr>& volumes, NodePtr weights);

}  // namespace voxcount
