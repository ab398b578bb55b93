#pragma once

#include "voxcount/geometry.hpp"
#include "voxcount/nn.hpp"

namespace voxcount {

// The binary combine operator fusing features with the camera embedding:
// element-wise addition (default) or Hadamard product.
enum class CombineMode { Add, Hadamard };

// Fuses the raw camera-parameter vector and per-pixel positional encoding
// into image-level features: F' = F (+|*) phi_c([xi, P_c]).
struct ImageCameraEmbedder {
  Mlp phi_c;  // 29 -> C -> C, final layer zero-initialized
  CombineMode mode = CombineMode::Add;

  ImageCameraEmbedder() = default;
  ImageCameraEmbedder(const std::string& name, int channels, CombineMode m, Rng& rng);

  // f: [C, H, W]
  NodePtr apply(NodePtr f, const CameraRig& rig);

  void collect(std::vector<Parameter*>& out) { phi_c.collect(out); }
};

// Same scheme over the volume query: Q_n = Q (+|*) phi_v([xi, P_v]).
struct VolumeCameraEmbedder {
  Mlp phi_v;  // 30 -> C -> C, final layer zero-initialized
  CombineMode mode = CombineMode::Add;

  VolumeCameraEmbedder() = default;
  VolumeCameraEmbedder(const std::string& name, int channels, CombineMode m, Rng& rng);

  // q: [C, Z, Y, X]
  NodePtr apply(NodePtr q, const CameraRig& rig);

  void collect(std::vector<Parameter*>& out) { phi_v.collect(out); }
};

NodePtr embed_image_features(ImageCameraEmbedder& e, NodePtr f, const CameraRig& rig);
NodePtr embed_volume_query(VolumeCameraEmbedder& e, NodePtr q, const CameraRig& rig);

}  // namespace voxcount
