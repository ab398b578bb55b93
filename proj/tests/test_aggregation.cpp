#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "voxcount/aggregation.hpp"

using namespace voxcount;

namespace {

// Hand-built reference points with a prescribed hit pattern.
ReferencePoints fake_refs(const std::vector<uint8_t>& hits) {
  ReferencePoints r;
  r.hit = hits;
  r.uv.assign(hits.size(), {0.0, 0.0});
  r.hit_mask = Tensor({static_cast<int>(hits.size())});
  for (size_t i = 0; i < hits.size(); ++i)
    if (hits[i]) {
      r.hit_idx.push_back(static_cast<int>(i));
      r.hit_mask[static_cast<int64_t>(i)] = 1.0;
    }
  return r;
}

}  // namespace

TEST_CASE("aggregation_weights: singleton, symmetric and multi-view cases") {
  Rng rng(1);
  ImportanceScorer scorer("phi", 4, rng);
  const int vox = 6;

  // Voxel 0: only view 0 hits. Voxel 1: views 0,1 hit with identical queries.
  // Voxel 2: all three views hit. Voxel 3: empty hit set.
  std::vector<ReferencePoints> refs = {
      fake_refs({1, 1, 1, 0, 1, 1}),
      fake_refs({0, 1, 1, 0, 1, 0}),
      fake_refs({0, 0, 1, 0, 1, 1}),
  };
  std::vector<const ReferencePoints*> ref_ptrs;
  for (auto& r : refs) ref_ptrs.push_back(&r);

  std::vector<Tensor> q(3);
  for (int n = 0; n < 3; ++n) q[static_cast<size_t>(n)] = Tensor({4, 1, 2, 3});
  Rng data(2);
  for (int n = 0; n < 3; ++n)
    for (int64_t i = 0; i < q[static_cast<size_t>(n)].numel(); ++i)
      q[static_cast<size_t>(n)][i] = data.uniform(-1.0, 1.0);
  // Make views 0 and 1 agree exactly at voxel 1.
  for (int c = 0; c < 4; ++c) q[1][c * vox + 1] = q[0][c * vox + 1];

  NoGrad ng;
  std::vector<NodePtr> qn;
  for (int n = 0; n < 3; ++n) qn.push_back(constant(q[static_cast<size_t>(n)]));
  const Tensor w = aggregation_weights(scorer, qn, ref_ptrs)->value;
  REQUIRE(w.shape() == std::vector<int>{3, 6});

  CHECK(w.at({0, 0}) == 1.0);  // singleton softmax
  CHECK(w.at({1, 0}) == 0.0);
  CHECK(w.at({2, 0}) == 0.0);

  CHECK(w.at({0, 1}) == doctest::Approx(0.5));  // equal scores
  CHECK(w.at({1, 1}) == doctest::Approx(0.5));
  CHECK(w.at({2, 1}) == 0.0);

  double sum2 = 0.0;
  for (int n = 0; n < 3; ++n) {
    CHECK(w.at({n, 2}) > 0.0);
    sum2 += w.at({n, 2});
  }
  CHECK(std::abs(sum2 - 1.0) <= 1e-6);

  for (int n = 0; n < 3; ++n) CHECK(w.at({n, 3}) == 0.0);  // empty hit set
}

TEST_CASE("aggregation_weights: view-count mismatch is a shape error") {
  Rng rng(3);
  ImportanceScorer scorer("phi", 4, rng);
  ReferencePoints r = fake_refs({1, 1});
  NoGrad ng;
  std::vector<NodePtr> qn = {constant(Tensor({4, 1, 1, 2})), constant(Tensor({4, 1, 1, 2}))};
  std::vector<const ReferencePoints*> refs = {&r};
  CHECK_THROWS_AS(aggregation_weights(scorer, qn, refs), shape_error);
}

TEST_CASE("uniform aggregation weights: average over the hit set") {
  std::vector<ReferencePoints> refs = {fake_refs({1, 1, 0}), fake_refs({1, 0, 0}),
                                       fake_refs({1, 1, 0})};
  std::vector<const ReferencePoints*> ptrs;
  for (auto& r : refs) ptrs.push_back(&r);
  const Tensor w = uniform_aggregation_weights(ptrs);
  CHECK(w.at({0, 0}) == doctest::Approx(1.0 / 3));
  CHECK(w.at({0, 1}) == doctest::Approx(0.5));
  CHECK(w.at({1, 1}) == 0.0);
  CHECK(w.at({2, 1}) == doctest::Approx(0.5));
  for (int n = 0; n < 3; ++n) CHECK(w.at({n, 2}) == 0.0);
}

TEST_CASE("fuse_volumes: trivial cases and the nested-loop oracle") {
  Rng rng(4);
  const int c = 3, vox = 8;
  NoGrad ng;

  // Single view with weight 1 on its hit set.
  ReferencePoints r0 = fake_refs({1, 0, 1, 1, 0, 1, 1, 0});
  const Tensor v0 = oracle::random_tensor({c, 2, 2, 2}, rng);
  {
    Tensor w({1, vox});
    for (int p = 0; p < vox; ++p) w.at({0, p}) = r0.hit[static_cast<size_t>(p)];
    const Tensor fused = fuse_volumes({constant(v0)}, constant(w))->value;
    for (int p = 0; p < vox; ++p)
      for (int ch = 0; ch < c; ++ch)
        CHECK(fused[ch * vox + p] ==
              (r0.hit[static_cast<size_t>(p)] ? v0[ch * vox + p] : 0.0));
  }

  // Two identical volumes under any valid weights reproduce the volume.
  {
    Tensor w({2, vox});
    Rng wr(5);
    for (int p = 0; p < vox; ++p) {
      const double a = wr.uniform(0.0, 1.0);
      w.at({0, p}) = a;
      w.at({1, p}) = 1.0 - a;
    }
    const Tensor fused = fuse_volumes({constant(v0), constant(v0)}, constant(w))->value;
    CHECK(oracle::max_abs_diff(fused, v0) < 1e-12);
  }

  // Random two-view case against an explicit per-voxel loop.
  {
    const Tensor v1 = oracle::random_tensor({c, 2, 2, 2}, rng);
    Tensor w({2, vox});
    Rng wr(6);
    for (int p = 0; p < vox; ++p) {
      const double a = wr.uniform(0.0, 1.0);
      w.at({0, p}) = a;
      w.at({1, p}) = 1.0 - a;
    }
    const Tensor fused = fuse_volumes({constant(v0), constant(v1)}, constant(w))->value;
    for (int p = 0; p < vox; ++p)
      for (int ch = 0; ch < c; ++ch) {
        const double want =
            w.at({0, p}) * v0[ch * vox + p] + w.at({1, p}) * v1[ch * vox + p];
        CHECK(fused[ch * vox + p] == doctest::Approx(want).epsilon(1e-12));
      }
  }
}

TEST_CASE("aggregation invariants: permutation, convexity, zero coverage, shift") {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const int n_views = rng.uniform_int(2, 6);
    const int z = rng.uniform_int(1, 3), y = rng.uniform_int(1, 4), x = rng.uniform_int(1, 4);
    const int vox = z * y * x;
    const int c = rng.uniform_int(1, 4);
    ImportanceScorer scorer("phi", c, rng);

    std::vector<ReferencePoints> refs;
    std::vector<Tensor> q, vols;
    for (int n = 0; n < n_views; ++n) {
      std::vector<uint8_t> hits(static_cast<size_t>(vox));
      for (auto& h : hits) h = rng.uniform() < 0.7 ? 1 : 0;
      refs.push_back(fake_refs(hits));
      q.push_back(oracle::random_tensor({c, z, y, x}, rng));
      vols.push_back(oracle::random_tensor({c, z, y, x}, rng));
    }
    std::vector<const ReferencePoints*> ptrs;
    for (auto& r : refs) ptrs.push_back(&r);

    NoGrad ng;
    std::vector<NodePtr> qn, vn;
    for (int n = 0; n < n_views; ++n) {
      qn.push_back(constant(q[static_cast<size_t>(n)]));
      vn.push_back(constant(vols[static_cast<size_t>(n)]));
    }
    const NodePtr weights = aggregation_weights(scorer, qn, ptrs);
    const Tensor w = weights->value;

    // Weights: zero off the hit set, sum to 1 on non-empty hit sets.
    for (int p = 0; p < vox; ++p) {
      double sum = 0.0;
      int hits = 0;
      for (int n = 0; n < n_views; ++n) {
        const double wv = w.at({n, p});
        CHECK(wv >= 0.0);
        if (!refs[static_cast<size_t>(n)].hit[static_cast<size_t>(p)])
          CHECK(wv == 0.0);
        hits += refs[static_cast<size_t>(n)].hit[static_cast<size_t>(p)];
        sum += wv;
      }
      if (hits > 0)
        CHECK(std::abs(sum - 1.0) <= 1e-6);
      else
        CHECK(sum == 0.0);
    }

    const Tensor fused = fuse_volumes(vn, weights)->value;

    // Convexity: every fused component lies inside the hull of hit views.
    for (int p = 0; p < vox; ++p) {
      int hits = 0;
      for (int n = 0; n < n_views; ++n)
        hits += refs[static_cast<size_t>(n)].hit[static_cast<size_t>(p)];
      for (int ch = 0; ch < c; ++ch) {
        if (hits == 0) {
          CHECK(fused[ch * vox + p] == 0.0);
          continue;
        }
        double lo = 1e300, hi = -1e300;
        for (int n = 0; n < n_views; ++n) {
          if (!refs[static_cast<size_t>(n)].hit[static_cast<size_t>(p)]) continue;
          lo = std::min(lo, vols[static_cast<size_t>(n)][ch * vox + p]);
          hi = std::max(hi, vols[static_cast<size_t>(n)][ch * vox + p]);
        }
        CHECK(fused[ch * vox + p] >= lo - 1e-9);
        CHECK(fused[ch * vox + p] <= hi + 1e-9);
      }
    }

    // Permutation invariance.
    std::vector<int> perm(static_cast<size_t>(n_views));
    for (int n = 0; n < n_views; ++n) perm[static_cast<size_t>(n)] = n;
    for (int n = n_views - 1; n > 0; --n)
      std::swap(perm[static_cast<size_t>(n)], perm[static_cast<size_t>(rng.uniform_int(0, n))]);
    std::vector<NodePtr> qp, vp;
    std::vector<const ReferencePoints*> rp;
    for (int n = 0; n < n_views; ++n) {
      qp.push_back(qn[static_cast<size_t>(perm[static_cast<size_t>(n)])]);
      vp.push_back(vn[static_cast<size_t>(perm[static_cast<size_t>(n)])]);
      rp.push_back(ptrs[static_cast<size_t>(perm[static_cast<size_t>(n)])]);
    }
    const Tensor fused_perm = fuse_volumes(vp, aggregation_weights(scorer, qp, rp))->value;
    CHECK(oracle::max_abs_diff(fused, fused_perm) <= 1e-9);

    // Appending an all-miss view (weights identically zero) changes nothing.
    ReferencePoints none = fake_refs(std::vector<uint8_t>(static_cast<size_t>(vox), 0));
    std::vector<NodePtr> q_ext = qn, v_ext = vn;
    std::vector<const ReferencePoints*> r_ext = ptrs;
    q_ext.push_back(constant(oracle::random_tensor({c, z, y, x}, rng)));
    v_ext.push_back(constant(oracle::random_tensor({c, z, y, x}, rng)));
    r_ext.push_back(&none);
    const Tensor fused_ext = fuse_volumes(v_ext, aggregation_weights(scorer, q_ext, r_ext))->value;
    CHECK(oracle::max_abs_diff(fused, fused_ext) <= 1e-12);
  }
}

TEST_CASE("masked softmax: invariant to per-voxel constant score shifts") {
  Rng rng(8);
  const int n = 4, vox = 10;
  Tensor scores = oracle::random_tensor({n, vox}, rng, -2.0, 2.0);
  Tensor mask({n, vox});
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
  Tensor shifted = scores;
  for (int p = 0; p < vox; ++p) {
    const double c = rng.uniform(-5.0, 5.0);
    for (int v = 0; v < n; ++v) shifted.at({v, p}) += c;
  }
  NoGrad ng;
  const Tensor a = masked_softmax_cols(constant(scores), mask)->value;
  const Tensor b = masked_softmax_cols(constant(shifted), mask)->value;
  CHECK(oracle::max_abs_diff(a, b) <= 1e-9);
}
