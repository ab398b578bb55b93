#pragma once

#include "voxcount/nn.hpp"

namespace voxcount {

// Multi-level image features. Level l has stride 2^stride_exp[l]; strides
// strictly increase with level and all levels share the channel count.
struct FeaturePyramid {
  std::vector<NodePtr> levels;
  std::vector<int> stride_exp;
};

// Small convolutional multi-level extractor with a top-down pathway that adds
// upsampled coarser features into finer ones. Level 0 sits at stride 4.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const std::string& name, int channels, int levels, Rng& rng);

  // image: [3, H, W]; H and W must be divisible by the coarsest stride.
  FeaturePyramid extract(NodePtr image);

  int channels() const { return channels_; }
  int levels() const { return levels_; }

  void collect(std::vector<Parameter*>& out);

 private:
  int channels_ = 0, levels_ = 0;
  std::vector<Conv2d> stages_;    // stride-2 stem stages
  std::vector<Conv2d> laterals_;  // 1x1 projections per level
};

inline FeaturePyramid extract_features(ImageEncoder& enc, NodePtr image) {
  return enc.extract(std::move(image));
}

// 2D density head over level-0 features: rectified, so densities stay
// non-negative. As in the 3D head, a fixed output gain keeps the learnable
// pre-activation at a step-friendly scale.
struct Density2dHead {
  static constexpr double kOutputGain = 0.1;
  Conv2d c1;  // C -> C, k3 p1
  Conv2d c2;  // C -> 1, k1

  Density2dHead() = default;
  Density2dHead(const std::string& name, int channels, Rng& rng);

  NodePtr apply(NodePtr level0);

  void collect(std::vector<Parameter*>& out) {
    c1.collect(out);
    c2.collect(out);
  }
};

inline NodePtr predict_density2d(Density2dHead& head, NodePtr level0) {
  return head.apply(std::move(level0));
}

}  // namespace voxcount
