#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxcount/autodiff.hpp"
#include "voxcount/geometry.hpp"
#include "voxcount/rng.hpp"

namespace voxcount {

enum class TerrainKind { Flat, Inclined, Bumps };

TerrainKind terrain_from_string(const std::string& s);
std::string terrain_to_string(TerrainKind k);

// Ground height z = t(x, y).
struct Terrain {
  TerrainKind kind = TerrainKind::Flat;
  double base = 0.0;
  double gx = 0.0, gy = 0.0;                       // inclined plane gradient
  double amp = 0.0, kx = 0.0, ky = 0.0;            // bump field
  double phase1 = 0.0, phase2 = 0.0;

  double height(double x, double y) const;
};

// Axis-aligned opaque box.
struct Occluder {
  Vec3 center;
  Vec3 half;
};

struct Scene {
  std::vector<Vec3> heads;  // head points (x, y, z) in meters
  Terrain terrain;
  std::vector<Occluder> occluders;
  uint64_t seed = 0;
};

struct SceneSpec {
  VoxelGrid grid;
  int n_people = 20;
  TerrainKind terrain = TerrainKind::Flat;
  int n_occluders = 0;
  bool congested = false;
  double person_height_min = 1.4;
  double person_height_max = 1.9;
  // When non-empty these boxes are used verbatim instead of sampling
  // n_occluders fresh ones (heads still avoid them).
  std::vector<Occluder> preset_occluders;
};

// Deterministic per seed. Head (x, y) rejection-sampled inside the grid
// extent; head z = terrain + person height must land inside the grid.
Scene generate_scene(uint64_t seed, const SceneSpec& spec);

struct LayoutSpec {
  int n_views_min = 3, n_views_max = 3;  // equal = fixed count, else U(a, b)
  double cam_dist_min = 7.0, cam_dist_max = 10.0;
  double cam_height_min = 2.0, cam_height_max = 4.5;
  double lookat_jitter = 1.0;
  double focal_min = 44.0, focal_max = 64.0;
  int image_w = 64, image_h = 64;
  int min_views_per_head = 2;  // overlap constraint (when N >= 2)
  int max_retries = 60;
};

// N cameras on a jittered ring looking near the scene center. Every head must
// project in-frame in at least min(min_views_per_head, N) views or the draw is
// retried; exceeding max_retries raises generation_error.
std::vector<CameraRig> generate_layout(uint64_t seed, const LayoutSpec& spec,
                                       const Scene& scene);

// Single source of truth for head visibility: in front, center inside the
// frame, and the camera-to-head segment clear of every occluder.
bool head_visible(const Scene& scene, const CameraRig& rig, Vec3 head);

// Camera center c with M = [R | t] (R c + t = 0).
Vec3 camera_center(const CameraRig& rig);

// Segment p0 -> p1 against an axis-aligned box (slab test, open interval).
bool segment_hits_box(Vec3 p0, Vec3 p1, const Occluder& box);

// Heads as depth-scaled filled disks, occluders as opaque gray hulls, drawn
// in painter's order over a noisy constant background.
std::vector<Tensor> render_images(const Scene& scene, const std::vector<CameraRig>& rigs);

// Unit-mass truncated Gaussians per head; truncation window renormalized over
// in-grid voxels, so the integral equals the head count exactly.
Tensor render_gt_density3d(const Scene& scene, const VoxelGrid& grid, double sigma_vox = 1.0);

// Per-view 2D density at stride 4; only visible heads contribute, each with
// unit in-grid mass.
Tensor render_gt_density2d(const Scene& scene, const CameraRig& rig, double sigma_px = 2.0,
                           int stride = 4);

int visible_head_count(const Scene& scene, const CameraRig& rig);

// Composes a random small rotation (axis uniform on the sphere, angle up to
// rot_noise_deg) and a translation with entries in [-trans_noise_m,
// trans_noise_m] onto the extrinsics.
CameraRig perturb_extrinsics(const CameraRig& rig, double rot_noise_deg, double trans_noise_m,
                             uint64_t seed);

struct ReferencePoints;  // lifting.hpp

// Flat-plane lifting baseline: each voxel column samples the feature map at
// the projection of its z = 0 ground point; the sample is copied to every
// voxel of the column the view hits, everything else is zero.
NodePtr ipm_lift_baseline(NodePtr feature_map, const CameraRig& rig, const VoxelGrid& grid,
                          int stride_exp);

// ---- dataset export / import ----

struct SceneDataset {
  Scene scene;
  std::vector<CameraRig> rigs;
  std::vector<Tensor> images;   // [3,H,W] per view
  std::vector<Tensor> gt2d;     // [1,H/4,W/4] per view
  std::vector<Tensor> gt3d;     // [1,Z,Y,X] per level
  std::vector<double> gt3d_scale;
};

// Writes calibration.txt, heads.csv, per-view image/gt2d dumps and per-level
// gt3d dumps into dir (created if needed). load round-trips bit-exactly.
void export_scene(const std::string& dir, const SceneDataset& data);
SceneDataset import_scene(const std::string& dir);

}  // namespace voxcount
