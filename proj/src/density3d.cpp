#include "voxcount/density3d.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "voxcount/geometry.hpp"

namespace voxcount {

DensityHead3d::DensityHead3d(const std::string& name, int channels, Rng& rng)
    : c1(name + ".c1", channels, channels, 3, 1, 1, rng),
      c2(name + ".c2", channels, 1, 1, 1, 0, rng, /*zero_init=*/true) {
  // Small random weights plus a bias near the typical per-voxel density (in
  // pre-gain units) start the head at a plausible count with every voxel on
  // the live side of the rectifier.
  for (int64_t i = 0; i < c2.k.value.numel(); ++i) c2.k.value[i] = rng.uniform(-0.05, 0.05);
  c2.b.value.fill(0.25);
}

NodePtr DensityHead3d::apply(NodePtr x) {
  return scale(relu(c2.apply(relu(c1.apply(std::move(x))))), kOutputGain);
}

NodePtr fpn_fuse_3d(NodePtr v_l, NodePtr x_prev, Deconv3d* upsampler) {
  if (!x_prev) return v_l;
  if (!upsampler) throw shape_error("fpn_fuse_3d: missing upsampler for non-coarsest level");
  NodePtr up = upsampler->apply(std::move(x_prev));
  if (!up->value.same_shape(v_l->value))
    throw shape_error("fpn_fuse_3d: upsampled shape " + up->value.shape_str() +
                      " does not match " + v_l->value.shape_str());
  return add(std::move(v_l), std::move(up));
}

double count_from_density(const Tensor& g) { return g.sum(); }

void LossWeights::validate() const {
  if (lambda_2d < 0.0) throw config_error("loss: lambda must be >= 0");
  if (alpha.empty()) throw config_error("loss: need at least one alpha");
  for (double a : alpha) {
    if (a < 0.0) throw config_error("loss: alpha must be >= 0");
    if (a > alpha[0]) throw config_error("loss: finest-level alpha must be the maximum");
  }
}

NodePtr total_loss(const DensityBundle& bundle, const LossWeights& weights, LossNorm norm) {
  weights.validate();
  if (bundle.density2d.size() != bundle.gt2d.size() ||
      bundle.density3d.size() != bundle.gt3d.size())
    throw shape_error("loss: prediction/GT count mismatch");
  if (bundle.density3d.size() != weights.alpha.size())
    throw shape_error("loss: alpha count does not match level count");
  if (bundle.density2d.empty()) throw shape_error("loss: need at least one view");

  auto map_norm = [norm](NodePtr diff) {
    return norm == LossNorm::L2 ? l2norm(std::move(diff)) : sumsq(std::move(diff));
  };

  NodePtr acc;
  const double view_scale = weights.lambda_2d / static_cast<double>(bundle.density2d.size());
  if (view_scale > 0.0) {
    for (size_t n = 0; n < bundle.density2d.size(); ++n) {
      if (!bundle.density2d[n]->value.same_shape(bundle.gt2d[n]))
        throw shape_error("loss: 2D prediction/GT shape mismatch");
      NodePtr term =
          scale(map_norm(sub(bundle.density2d[n], constant(bundle.gt2d[n]))), view_scale);
      acc = acc ? add(std::move(acc), std::move(term)) : std::move(term);
    }
  }
  for (size_t l = 0; l < bundle.density3d.size(); ++l) {
    if (!bundle.density3d[l]->value.same_shape(bundle.gt3d[l]))
      throw shape_error("loss: 3D prediction/GT shape mismatch at level " + std::to_string(l));
    if (weights.alpha[l] == 0.0) continue;
    NodePtr term =
        scale(map_norm(sub(bundle.density3d[l], constant(bundle.gt3d[l]))), weights.alpha[l]);
    acc = acc ? add(std::move(acc), std::move(term)) : std::move(term);
  }
  if (!acc) acc = constant(Tensor::scalar(0.0));
  return acc;
}

void dump_density(const std::string& path, const Tensor& t, double scale, int level) {
  Tensor squeezed = t;
  if (t.ndim() == 4 && t.dim(0) == 1) squeezed = t.reshaped({t.dim(1), t.dim(2), t.dim(3)});
  if (squeezed.ndim() != 3) throw shape_error("dump_density: want a 3-d tensor");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw domain_error("dump_density: cannot open " + path);
  os << "dims=" << squeezed.dim(0) << "," << squeezed.dim(1) << "," << squeezed.dim(2)
     << " scale=" << format_double(scale) << " level=" << level << "\n";
  os.write(reinterpret_cast<const char*>(squeezed.data()),
           static_cast<std::streamsize>(squeezed.numel() * sizeof(double)));
}

DensityDump load_density(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw domain_error("load_density: cannot open " + path);
  std::string header;
  std::getline(is, header);
  int z = 0, y = 0, x = 0, level = 0;
  double scale = 0.0;
  if (std::sscanf(header.c_str(), "dims=%d,%d,%d scale=%lf level=%d", &z, &y, &x, &scale,
                  &level) != 5)
    throw domain_error("load_density: bad header '" + header + "'");
  DensityDump out;
  out.data = Tensor({z, y, x});
  out.scale = scale;
  out.level = level;
  is.read(reinterpret_cast<char*>(out.data.data()),
          static_cast<std::streamsize>(out.data.numel() * sizeof(double)));
  if (!is) throw domain_error("load_density: truncated payload in " + path);
  return out;
}

}  // namespace voxcount
