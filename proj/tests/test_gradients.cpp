#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "voxcount/autodiff.hpp"
#include "voxcount/nn.hpp"
#include "voxcount/optim.hpp"

using namespace voxcount;

namespace {

// Compares reverse-mode gradients against central differences for every
// entry of every parameter. The graph builder must be a pure function of the
// parameter values.
void check_grads(const std::vector<Parameter*>& params,
                 const std::function<NodePtr()>& build, double tol = 2e-6,
                 double eps = 1e-6) {
  for (Parameter* p : params) p->zero_grad();
  backward(build());
  const auto fd = finite_diff_gradient([&] { return build()->value[0]; }, params, eps);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& analytic = params[pi]->grad;
    const Tensor& numeric = fd[pi];
    for (int64_t i = 0; i < analytic.numel(); ++i) {
      const double a = analytic[i], n = numeric[i];
      const double denom = std::max({std::abs(a), std::abs(n), 1e-4});
      const double rel = std::abs(a - n) / denom;
      if (rel > tol) {
        CAPTURE(params[pi]->name);
        CAPTURE(i);
        CAPTURE(a);
        CAPTURE(n);
        CHECK(rel <= tol);
        return;
      }
    }
  }
  CHECK(true);
}

// Linear probe turning a tensor output into a scalar.
NodePtr probe(NodePtr out, uint64_t seed) {
  Rng rng(seed);
  Tensor r(out->value.shape());
  for (int64_t i = 0; i < r.numel(); ++i) r[i] = rng.uniform(-1.0, 1.0);
  return sum_all(mul(std::move(out), constant(r)));
}

}  // namespace

TEST_CASE("grad: linear + relu") {
  Rng rng(31);
  Parameter x("x", oracle::random_tensor({5, 4}, rng));
  Parameter w("w", oracle::random_tensor({3, 4}, rng));
  Parameter b("b", oracle::random_tensor({3}, rng));
  check_grads({&x, &w, &b},
              [&] { return probe(relu(linear(leaf(x), leaf(w), leaf(b))), 1); });
}

TEST_CASE("grad: layer norm") {
  Rng rng(32);
  Parameter x("x", oracle::random_tensor({6, 5}, rng));
  Parameter g("g", oracle::random_tensor({5}, rng, 0.5, 1.5));
  Parameter b("b", oracle::random_tensor({5}, rng));
  check_grads({&x, &g, &b},
              [&] { return probe(layer_norm_rows(leaf(x), leaf(g), leaf(b)), 2); });
}

TEST_CASE("grad: softmax rows") {
  Rng rng(33);
  Parameter x("x", oracle::random_tensor({4, 6}, rng, -2.0, 2.0));
  check_grads({&x}, [&] { return probe(softmax_rows(leaf(x)), 3); });
}

TEST_CASE("grad: masked softmax over views") {
  Rng rng(34);
  Parameter x("x", oracle::random_tensor({3, 7}, rng, -2.0, 2.0));
  Tensor mask({3, 7});
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;
  for (int n = 0; n < 3; ++n) mask.at({n, 0}) = 0.0;  // an empty column
  check_grads({&x}, [&] { return probe(masked_softmax_cols(leaf(x), mask), 4); });
}

TEST_CASE("grad: conv2d stride 1 and 2") {
  Rng rng(35);
  Parameter x("x", oracle::random_tensor({2, 6, 5}, rng));
  Parameter k("k", oracle::random_tensor({3, 2, 3, 3}, rng));
  Parameter b("b", oracle::random_tensor({3}, rng));
  for (int stride = 1; stride <= 2; ++stride)
    check_grads({&x, &k, &b}, [&] {
      return probe(conv2d(leaf(x), leaf(k), leaf(b), stride, 1), 5);
    });
}

TEST_CASE("grad: conv3d") {
  Rng rng(36);
  Parameter x("x", oracle::random_tensor({2, 3, 4, 3}, rng));
  Parameter k("k", oracle::random_tensor({2, 2, 3, 3, 3}, rng));
  Parameter b("b", oracle::random_tensor({2}, rng));
  check_grads({&x, &k, &b},
              [&] { return probe(conv3d(leaf(x), leaf(k), leaf(b), 1, 1), 6); });
}

TEST_CASE("grad: deconv3d") {
  Rng rng(37);
  Parameter x("x", oracle::random_tensor({2, 2, 3, 2}, rng));
  Parameter k("k", oracle::random_tensor({2, 3, 4, 4, 4}, rng));
  Parameter b("b", oracle::random_tensor({3}, rng));
  check_grads({&x, &k, &b},
              [&] { return probe(deconv3d(leaf(x), leaf(k), leaf(b), 2, 1), 7); });
}

TEST_CASE("grad: elementwise, broadcast, reshape, transpose") {
  Rng rng(38);
  Parameter a("a", oracle::random_tensor({3, 4}, rng));
  Parameter b("b", oracle::random_tensor({3, 4}, rng));
  Parameter w("w", oracle::random_tensor({4}, rng));
  check_grads({&a, &b, &w}, [&] {
    NodePtr t = mul(add(leaf(a), leaf(b)), sub(leaf(a), scale(leaf(b), 0.3)));
    t = mul_bcast(t, leaf(w));
    t = transpose2d(reshape(t, {4, 3}));
    return probe(t, 8);
  });
}

TEST_CASE("grad: upsample2d nearest") {
  Rng rng(39);
  Parameter x("x", oracle::random_tensor({2, 3, 4}, rng));
  check_grads({&x}, [&] { return probe(upsample2d_nearest(leaf(x)), 9); });
}

TEST_CASE("grad: sample_rows into the value map") {
  Rng rng(40);
  Parameter f("f", oracle::random_tensor({3, 5, 6}, rng));
  const std::vector<std::pair<double, double>> coords = {
      {1.3, 2.7}, {-0.4, 0.2}, {4.6, 3.9}, {7.0, 1.0}};
  check_grads({&f}, [&] { return probe(sample_rows(leaf(f), coords), 10); });
}

TEST_CASE("grad: deform_sample wrt value, offsets, weights") {
  Rng rng(41);
  Parameter f("f", oracle::random_tensor({4, 5, 6}, rng));
  Parameter off("off", oracle::random_tensor({3, 8}, rng, -0.8, 0.8));  // 2 heads * 2 pts * 2
  Parameter wt("wt", oracle::random_tensor({3, 4}, rng, 0.1, 0.9));
  const std::vector<std::pair<double, double>> ref = {{1.4, 2.6}, {3.2, 1.1}, {0.6, 3.7}};
  check_grads({&f, &off, &wt}, [&] {
    return probe(deform_sample(leaf(f), ref, leaf(off), leaf(wt), 2), 11);
  });
}

TEST_CASE("grad: gather/scatter voxels, stack/slice rows") {
  Rng rng(42);
  Parameter vol("vol", oracle::random_tensor({3, 10}, rng));
  Parameter rows("rows", oracle::random_tensor({4, 3}, rng));
  const std::vector<int> idx = {7, 2, 5, 0};
  check_grads({&vol, &rows}, [&] {
    NodePtr g = gather_voxels(leaf(vol), idx);
    NodePtr s = scatter_voxels(add(g, leaf(rows)), idx, 10);
    NodePtr st = stack_rows({slice_row(reshape(s, {3, 10}), 1), slice_row(reshape(s, {3, 10}), 2)});
    return probe(st, 12);
  });
}

TEST_CASE("grad: reductions") {
  Rng rng(43);
  Parameter x("x", oracle::random_tensor({7}, rng, 0.2, 1.0));
  check_grads({&x}, [&] { return l2norm(leaf(x)); });
  check_grads({&x}, [&] { return sumsq(leaf(x)); });
  check_grads({&x}, [&] { return sum_all(leaf(x)); });
}

TEST_CASE("grad: composed mini network against finite differences") {
  Rng rng(44);
  Mlp mlp("mlp", {6, 8, 4}, rng);
  Parameter x("x", oracle::random_tensor({5, 6}, rng));
  LayerNorm ln("ln", 4);
  std::vector<Parameter*> params{&x};
  mlp.collect(params);
  ln.collect(params);
  check_grads(params, [&] {
    NodePtr h = mlp.apply(leaf(x));
    h = ln.apply(h);
    h = softmax_rows(h);
    return sumsq(h);
  });
}

TEST_CASE("grad: shared subexpression accumulates both paths") {
  Parameter x("x", Tensor({1}, {0.7}));
  for (int i = 0; i < 1; ++i) {
    x.zero_grad();
    NodePtr v = leaf(x);
    NodePtr y = add(mul(v, v), scale(v, 3.0));  // x^2 + 3x
    backward(y);
    CHECK(x.grad[0] == doctest::Approx(2.0 * 0.7 + 3.0));
  }
}
