#include "voxcount/aggregation.hpp"

namespace voxcount {

NodePtr aggregation_weights(ImportanceScorer& scorer, const std::vector<NodePtr>& queries,
                            const std::vector<const ReferencePoints*>& refs) {
  if (queries.empty()) throw domain_error("aggregation: no views");
  if (queries.size() != refs.size())
    throw shape_error("aggregation: view count mismatch between queries and masks");
  const int c = queries[0]->value.dim(0);
  const int64_t vox = queries[0]->value.numel() / c;
  std::vector<NodePtr> scores;
  scores.reserve(queries.size());
  for (size_t n = 0; n < queries.size(); ++n) {
    if (!queries[n]->value.same_shape(queries[0]->value))
      throw shape_error("aggregation: query shapes differ across views");
    if (refs[n]->voxels() != vox)
      throw shape_error("aggregation: mask size does not match query volume");
    NodePtr rows = transpose2d(reshape(queries[n], {c, static_cast<int>(vox)}));  // [P, C]
    NodePtr s = scorer.phi.apply(std::move(rows));                                // [P, 1]
    scores.push_back(reshape(std::move(s), {static_cast<int>(vox)}));
  }
  NodePtr stacked = stack_rows(scores);  // [N, P]
  Tensor mask({static_cast<int>(queries.size()), static_cast<int>(vox)});
  for (size_t n = 0; n < refs.size(); ++n)
    for (int64_t p = 0; p < vox; ++p)
      mask.at({static_cast<int>(n), static_cast<int>(p)}) = refs[n]->hit[static_cast<size_t>(p)];
  return masked_softmax_cols(std::move(stacked), mask);
}

Tensor uniform_aggregation_weights(const std::vector<const ReferencePoints*>& refs) {
  if (refs.empty()) throw domain_error("aggregation: no views");
  const int64_t vox = refs[0]->voxels();
  Tensor w({static_cast<int>(refs.size()), static_cast<int>(vox)});
  for (int64_t p = 0; p < vox; ++p) {
    int hits = 0;
    for (const ReferencePoints* r : refs) hits += r->hit[static_cast<size_t>(p)];
    if (hits == 0) continue;
    for (size_t n = 0; n < refs.size(); ++n)
      if (refs[n]->hit[static_cast<size_t>(p)])
        w.at({static_cast<int>(n), static_cast<int>(p)}) = 1.0 / hits;
  }
  return w;
}

NodePtr fuse_volumes(const std::vector<NodePtr>& volumes, NodePtr weights) {
  if (volumes.empty()) throw domain_error("fuse: no views");
  if (weights->value.ndim() != 2 ||
      weights->value.dim(0) != static_cast<int>(volumes.size()))
    throw shape_error("fuse: weights must be [N, P]");
  const int c = volumes[0]->value.dim(0);
  const int64_t vox = volumes[0]->value.numel() / c;
  if (weights->value.dim(1) != vox) throw shape_error("fuse: weight/volume size mismatch");
  NodePtr acc;
  for (size_t n = 0; n < volumes.size(); ++n) {
    if (!volumes[n]->value.same_shape(volumes[0]->value))
      throw shape_error("fuse: volume shapes differ across views");
    NodePtr flat = reshape(volumes[n], {c, static_cast<int>(vox)});
    NodePtr term = mul_bcast(std::move(flat), slice_row(weights, static_cast<int>(n)));
    acc = acc ? add(std::move(acc), std::move(term)) : std::move(term);
  }
  return reshape(std::move(acc), volumes[0]->value.shape());
}

}  // namespace voxcount
