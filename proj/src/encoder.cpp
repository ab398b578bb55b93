#include "voxcount/encoder.hpp"

#include <algorithm>

namespace voxcount {

ImageEncoder::ImageEncoder(const std::string& name, int channels, int levels, Rng& rng)
    : channels_(channels), levels_(levels) {
  if (levels < 1 || levels > 3) throw config_error("encoder: levels must be in 1..3");
  // levels+1 stride-2 stages put level 0 at stride 4.
  const int n_stages = levels + 1;
  int in_ch = 3;
  for (int i = 0; i < n_stages; ++i) {
    const int out_ch = i == 0 ? std::max(4, channels / 2) : channels;
    stages_.emplace_back(name + ".stage" + std::to_string(i), in_ch, out_ch, 3, 2, 1, rng);
    in_ch = out_ch;
  }
  for (int l = 0; l < levels; ++l)
    laterals_.emplace_back(name + ".lateral" + std::to_string(l), channels, channels_, 1, 1, 0,
                           rng);
}

FeaturePyramid ImageEncoder::extract(NodePtr image) {
  if (image->value.ndim() != 3 || image->value.dim(0) != 3)
    throw shape_error("encoder: want image [3,H,W]");
  const int h = image->value.dim(1), w = image->value.dim(2);
  const int coarsest = 1 << (levels_ + 1);
  if (h % coarsest || w % coarsest)
    throw shape_error("encoder: image size must be divisible by " + std::to_string(coarsest));

  std::vector<NodePtr> stems;
  NodePtr x = std::move(image);
  for (auto& stage : stages_) {
    x = relu(stage.apply(std::move(x)));
    stems.push_back(x);
  }
  // stem index for level l is l+1 (stride 4 * 2^l).
  FeaturePyramid pyr;
  pyr.levels.resize(static_cast<size_t>(levels_));
  pyr.stride_exp.resize(static_cast<size_t>(levels_));
  NodePtr top;
  for (int l = levels_ - 1; l >= 0; --l) {
    NodePtr lat = laterals_[static_cast<size_t>(l)].apply(stems[static_cast<size_t>(l + 1)]);
    if (top) lat = add(std::move(lat), upsample2d_nearest(std::move(top)));
    top = lat;
    pyr.levels[static_cast<size_t>(l)] = lat;
    pyr.stride_exp[static_cast<size_t>(l)] = l + 2;
  }
  return pyr;
}

void ImageEncoder::collect(std::vector<Parameter*>& out) {
  for (auto& s : stages_) s.collect(out);
  for (auto& l : laterals_) l.collect(out);
}

Density2dHead::Density2dHead(const std::string& name, int channels, Rng& rng)
    : c1(name + ".c1", channels, channels, 3, 1, 1, rng),
      c2(name + ".c2", channels, 1, 1, 1, 0, rng, /*zero_init=*/true) {
  // Small-scale start on the live side of the rectifier (see DensityHead3d).
  for (int64_t i = 0; i < c2.k.value.numel(); ++i) c2.k.value[i] = rng.uniform(-0.05, 0.05);
  c2.b.value.fill(0.75);
}

NodePtr Density2dHead::apply(NodePtr level0) {
  return scale(relu(c2.apply(relu(c1.apply(std::move(level0))))), kOutputGain);
}

}  // namespace voxcount
