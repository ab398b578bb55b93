#include "voxcount/embedding.hpp"

namespace voxcount {

namespace {

// The Hadamard neutral element needs an all-ones start, so the zero-initialized
// final layer gets bias 1 in that mode.
double neutral_bias(CombineMode m) { return m == CombineMode::Hadamard ? 1.0 : 0.0; }

NodePtr combine(CombineMode m, NodePtr f, NodePtr e) {
  return m == CombineMode::Add ? add(std::move(f), std::move(e))
                               : mul(std::move(f), std::move(e));
}

}  // namespace

ImageCameraEmbedder::ImageCameraEmbedder(const std::string& name, int channels, CombineMode m,
                                         Rng& rng)
    : phi_c(name + ".phi_c", {29, channels, channels}, rng, /*final_zero=*/true,
            neutral_bias(m)),
      mode(m) {}

NodePtr ImageCameraEmbedder::apply(NodePtr f, const CameraRig& rig) {
  if (f->value.ndim() != 3) throw shape_error("image embedding: want F[C,H,W]");
  const int c = f->value.dim(0), h = f->value.dim(1), w = f->value.dim(2);
  if (c != phi_c.out_width())
    throw shape_error("image embedding: channel count " + std::to_string(c) +
                      " does not match embedder width " + std::to_string(phi_c.out_width()));
  const Tensor xi = camera_vector(rig, CameraVectorMode::Image);
  const Tensor pos = positional_encoding_image(h, w);
  Tensor in({h * w, 29});
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      double* row = in.data() + (static_cast<int64_t>(v) * w + u) * 29;
      for (int i = 0; i < 27; ++i) row[i] = xi[i];
      row[27] = pos.at({0, v, u});
      row[28] = pos.at({1, v, u});
    }
  NodePtr e = phi_c.apply(constant(in));           // [HW, C]
  e = reshape(transpose2d(e), {c, h, w});          // [C, H, W]
  return combine(mode, std::move(f), std::move(e));
}

VolumeCameraEmbedder::VolumeCameraEmbedder(const std::string& name, int channels,
                                           CombineMode m, Rng& rng)
    : phi_v(name + ".phi_v", {30, channels, channels}, rng, /*final_zero=*/true,
            neutral_bias(m)),
      mode(m) {}

NodePtr VolumeCameraEmbedder::apply(NodePtr q, const CameraRig& rig) {
  if (q->value.ndim() != 4) throw shape_error("volume embedding: want Q[C,Z,Y,X]");
  const int c = q->value.dim(0), z = q->value.dim(1), y = q->value.dim(2), x = q->value.dim(3);
  if (c != phi_v.out_width())
    throw shape_error("volume embedding: channel count mismatch");
  const Tensor xi = camera_vector(rig, CameraVectorMode::Volume);
  const int64_t vox = static_cast<int64_t>(z) * y * x;
  Tensor in({static_cast<int>(vox), 30});
  int64_t at = 0;
  for (int d = 0; d < z; ++d)
    for (int hh = 0; hh < y; ++hh)
      for (int ww = 0; ww < x; ++ww) {
        double* row = in.data() + at * 30;
        for (int i = 0; i < 27; ++i) row[i] = xi[i];
        row[27] = static_cast<double>(d) / z;
        row[28] = static_cast<double>(hh) / y;
        row[29] = static_cast<double>(ww) / x;
        ++at;
      }
  NodePtr e = phi_v.apply(constant(in));               // [ZYX, C]
  e = reshape(transpose2d(e), {c, z, y, x});           // [C, Z, Y, X]
  return combine(mode, std::move(q), std::move(e));
}

NodePtr embed_image_features(ImageCameraEmbedder& e, NodePtr f, const CameraRig& rig) {
  return e.apply(std::move(f), rig);
}

NodePtr embed_volume_query(VolumeCameraEmbedder& e, NodePtr q, const CameraRig& rig) {
  return e.apply(std::move(q), rig);
}

}  // namespace voxcount
