#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "voxcount/tensor.hpp"

namespace voxcount {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b);
Vec3 cross(Vec3 a, Vec3 b);
double norm(Vec3 a);
Vec3 normalized(Vec3 a);

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mat3_identity();
Mat3 mat3_mul(const Mat3& a, const Mat3& b);
// Rodrigues rotation about a unit axis.
Mat3 rotation_about_axis(Vec3 axis, double angle_rad);

// K: focal lengths on the diagonal, principal point in the last column,
// arbitrary skew supported; K[2][2] must be 1 and focals positive.
struct CameraIntrinsics {
  Mat3 k = mat3_identity();
  void validate() const;
};

// M = [R | t] mapping homogeneous scene coordinates to camera coordinates;
// R must be a rotation (orthonormal, det +1) within 1e-9.
struct CameraExtrinsics {
  std::array<std::array<double, 4>, 3> m{{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
  void validate() const;
};

// Camera convention: x right, y down, z forward (depth).
CameraExtrinsics look_at_extrinsics(Vec3 position, Vec3 target, Vec3 up = {0, 0, 1});

struct AugmentMatrix {
  std::array<std::array<double, 3>, 2> a{{{1, 0, 0}, {0, 1, 0}}};
  static AugmentMatrix identity() { return {}; }
  void validate() const;
};

struct CameraRig {
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics;
  AugmentMatrix a_c, a_v;
  int image_w = 0, image_h = 0;
  void validate() const;
};

// Z x Y x X voxels of edge length s meters, centered on the scene origin.
struct VoxelGrid {
  int z = 0, y = 0, x = 0;
  double s = 0.0;

  VoxelGrid() = default;
  VoxelGrid(int z_, int y_, int x_, double s_);

  int64_t voxel_count() const { return static_cast<int64_t>(z) * y * x; }
  double extent_x() const { return s * x; }
  double extent_y() const { return s * y; }
  double extent_z() const { return s * z; }

  // Grid for pyramid level l: dims halved l times, edge doubled (same metric
  // extent). Dims must stay divisible.
  VoxelGrid level(int l) const;
};

// x' = s*(w - X/2), y' = s*(h - Y/2), z' = s*(d - Z/2); center_offset shifts
// indices by a fraction of a voxel (0 reproduces the corner-anchored form).
Vec3 voxel_to_world(int d, int h, int w, const VoxelGrid& grid, double center_offset = 0.0);

// Continuous inverse of voxel_to_world (fractional voxel indices d,h,w).
Vec3 world_to_voxel(Vec3 p, const VoxelGrid& grid, double center_offset = 0.0);

struct Projection {
  bool in_front = false;  // z_cam > eps_depth
  double u = 0.0, v = 0.0;
  double z_cam = 0.0;
};

inline constexpr double kDefaultEpsDepth = 1e-3;

// Pinhole projection [a,b,c]^T = K*M*[x,y,z,1]^T with homogeneous division
// (u,v) = (a/c, b/c); points at or behind the camera plane report
// in_front = false.
Projection project_point(const CameraRig& rig, Vec3 p, double eps_depth = kDefaultEpsDepth);

// True iff p projects in front of the camera and inside
// [0, W-1] x [0, H-1] (inclusive of the last valid pixel index).
bool voxel_hits_view(const CameraRig& rig, Vec3 p, double eps_depth = kDefaultEpsDepth);

enum class CameraVectorMode { Image, Volume };

// Raw camera-parameter vector: row-major M (12), K (9), then A_c or A_v (6).
Tensor camera_vector(const CameraRig& rig, CameraVectorMode mode);

Tensor positional_encoding_image(int h, int w);          // [2,H,W]: (u/W, v/H)
Tensor positional_encoding_volume(int z, int y, int x);  // [3,Z,Y,X]: (d/Z, h/Y, w/X)

// Calibration interchange: one camera per line, whitespace-separated
// K (9) M (12) W H A_c (6) A_v (6); '#' starts a comment. Doubles are written
// in shortest round-trip form, so write/read is bit-exact.
void write_calibration(std::ostream& os, const std::vector<CameraRig>& rigs);
std::vector<CameraRig> read_calibration(std::istream& is);
void save_calibration(const std::string& path, const std::vector<CameraRig>& rigs);
std::vector<CameraRig> load_calibration(const std::string& path);

// Shortest-representation double formatting (std::to_chars).
std::string format_double(double v);

}  // namespace voxcount
