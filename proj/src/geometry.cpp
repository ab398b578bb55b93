#include "voxcount/geometry.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "voxcount/common.hpp"

namespace voxcount {

double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

Vec3 normalized(Vec3 a) {
  const double n = norm(a);
  if (n < 1e-300) throw domain_error("normalized: zero vector");
  return {a.x / n, a.y / n, a.z / n};
}

Mat3 mat3_identity() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a[i][k] * b[k][j];
      out[i][j] = acc;
    }
  return out;
}

Mat3 rotation_about_axis(Vec3 axis, double angle_rad) {
  const Vec3 u = normalized(axis);
  const double c = std::cos(angle_rad), s = std::sin(angle_rad), t = 1.0 - c;
  return {{{c + u.x * u.x * t, u.x * u.y * t - u.z * s, u.x * u.z * t + u.y * s},
           {u.y * u.x * t + u.z * s, c + u.y * u.y * t, u.y * u.z * t - u.x * s},
           {u.z * u.x * t - u.y * s, u.z * u.y * t + u.x * s, c + u.z * u.z * t}}};
}

void CameraIntrinsics::validate() const {
  if (std::abs(k[2][2] - 1.0) > 1e-12) throw domain_error("intrinsics: K[2][2] must be 1");
  if (!(k[0][0] > 0.0) || !(k[1][1] > 0.0))
    throw domain_error("intrinsics: focal entries must be positive");
  for (const auto& row : k)
    for (double v : row)
      if (!std::isfinite(v)) throw domain_error("intrinsics: non-finite entry");
}

void CameraExtrinsics::validate() const {
  for (const auto& row : m)
    for (double v : row)
      if (!std::isfinite(v)) throw domain_error("extrinsics: non-finite entry");
  // Orthonormality and det +1 of the rotation block, within 1e-9.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += m[i][k] * m[j][k];
      const double want = i == j ? 1.0 : 0.0;
      if (std::abs(acc - want) > 1e-9)
        throw domain_error("extrinsics: rotation block not orthonormal");
    }
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  if (std::abs(det - 1.0) > 1e-9) throw domain_error("extrinsics: rotation determinant != +1");
}

CameraExtrinsics look_at_extrinsics(Vec3 position, Vec3 target, Vec3 up) {
  const Vec3 fwd = normalized(target - position);
  Vec3 right_raw = cross(fwd, up);
  if (norm(right_raw) < 1e-9) right_raw = cross(fwd, Vec3{0, 1, 0});
  const Vec3 right = normalized(right_raw);
  const Vec3 down = cross(fwd, right);
  CameraExtrinsics e;
  const Vec3 rows[3] = {right, down, fwd};
  for (int i = 0; i < 3; ++i) {
    e.m[i][0] = rows[i].x;
    e.m[i][1] = rows[i].y;
    e.m[i][2] = rows[i].z;
    e.m[i][3] = -dot(rows[i], position);
  }
  e.validate();
  return e;
}

void AugmentMatrix::validate() const {
  for (const auto& row : a)
    for (double v : row)
      if (!std::isfinite(v)) throw domain_error("augment matrix: non-finite entry");
}

void CameraRig::validate() const {
  intrinsics.validate();
  extrinsics.validate();
  a_c.validate();
  a_v.validate();
  if (image_w <= 0 || image_h <= 0) throw domain_error("rig: image size must be positive");
}

VoxelGrid::VoxelGrid(int z_, int y_, int x_, double s_) : z(z_), y(y_), x(x_), s(s_) {
  if (z <= 0 || y <= 0 || x <= 0) throw domain_error("voxel grid: non-positive shape");
  if (!(s > 0.0)) throw domain_error("voxel grid: voxel size must be positive");
}

VoxelGrid VoxelGrid::level(int l) const {
  int zz = z, yy = y, xx = x;
  double ss = s;
  for (int i = 0; i < l; ++i) {
    if (zz % 2 || yy % 2 || xx % 2)
      throw shape_error("voxel grid: dims not divisible for level " + std::to_string(l));
    zz /= 2;
    yy /= 2;
    xx /= 2;
    ss *= 2.0;
  }
  return VoxelGrid(zz, yy, xx, ss);
}

Vec3 voxel_to_world(int d, int h, int w, const VoxelGrid& grid, double center_offset) {
  if (d < 0 || d >= grid.z || h < 0 || h >= grid.y || w < 0 || w >= grid.x)
    throw domain_error("voxel_to_world: index outside grid");
  return {grid.s * (w + center_offset - grid.x / 2.0),
          grid.s * (h + center_offset - grid.y / 2.0),
          grid.s * (d + center_offset - grid.z / 2.0)};
}

Vec3 world_to_voxel(Vec3 p, const VoxelGrid& grid, double center_offset) {
  return {p.z / grid.s + grid.z / 2.0 - center_offset,   // d
          p.y / grid.s + grid.y / 2.0 - center_offset,   // h
          p.x / grid.s + grid.x / 2.0 - center_offset};  // w
}

Projection project_point(const CameraRig& rig, Vec3 p, double eps_depth) {
  const auto& m = rig.extrinsics.m;
  const double cam[3] = {m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z + m[0][3],
                         m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z + m[1][3],
                         m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z + m[2][3]};
  Projection out;
  out.z_cam = cam[2];
  if (!(cam[2] > eps_depth)) return out;
  const auto& k = rig.intrinsics.k;
  const double a = k[0][0] * cam[0] + k[0][1] * cam[1] + k[0][2] * cam[2];
  const double b = k[1][0] * cam[0] + k[1][1] * cam[1] + k[1][2] * cam[2];
  const double c = k[2][0] * cam[0] + k[2][1] * cam[1] + k[2][2] * cam[2];
  out.in_front = true;
  out.u = a / c;
  out.v = b / c;
  return out;
}

bool voxel_hits_view(const CameraRig& rig, Vec3 p, double eps_depth) {
  const Projection pr = project_point(rig, p, eps_depth);
  return pr.in_front && pr.u >= 0.0 && pr.u <= rig.image_w - 1.0 && pr.v >= 0.0 &&
         pr.v <= rig.image_h - 1.0;
}

Tensor camera_vector(const CameraRig& rig, CameraVectorMode mode) {
  Tensor out({27});
  int at = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) out[at++] = rig.extrinsics.m[i][j];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[at++] = rig.intrinsics.k[i][j];
  const AugmentMatrix& aug = mode == CameraVectorMode::Image ? rig.a_c : rig.a_v;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) out[at++] = aug.a[i][j];
  return out;
}

Tensor positional_encoding_image(int h, int w) {
  Tensor out({2, h, w});
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      out.at({0, v, u}) = static_cast<double>(u) / w;
      out.at({1, v, u}) = static_cast<double>(v) / h;
    }
  return out;
}

Tensor positional_encoding_volume(int z, int y, int x) {
  Tensor out({3, z, y, x});
  for (int d = 0; d < z; ++d)
    for (int h = 0; h < y; ++h)
      for (int w = 0; w < x; ++w) {
        out.at({0, d, h, w}) = static_cast<double>(d) / z;
        out.at({1, d, h, w}) = static_cast<double>(h) / y;
        out.at({2, d, h, w}) = static_cast<double>(w) / x;
      }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_calibration(std::ostream& os, const std::vector<CameraRig>& rigs) {
  os << "# K(9) M(12) W H A_c(6) A_v(6)\n";
  for (const CameraRig& rig : rigs) {
    std::string line;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) line += format_double(rig.intrinsics.k[i][j]) + " ";
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) line += format_double(rig.extrinsics.m[i][j]) + " ";
    line += std::to_string(rig.image_w) + " " + std::to_string(rig.image_h) + " ";
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) line += format_double(rig.a_c.a[i][j]) + " ";
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) {
        line += format_double(rig.a_v.a[i][j]);
        if (i != 1 || j != 2) line += " ";
      }
    os << line << "\n";
  }
}

std::vector<CameraRig> read_calibration(std::istream& is) {
  std::vector<CameraRig> rigs;
  std::string line;
  while (std::getline(is, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::vector<std::string> tok;
    std::string t;
    while (ss >> t) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 35)
      throw domain_error("calibration: expected 35 fields per camera, got " +
                         std::to_string(tok.size()));
    auto num = [&](size_t i) { return std::strtod(tok[i].c_str(), nullptr); };
    CameraRig rig;
    size_t at = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) rig.intrinsics.k[i][j] = num(at++);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) rig.extrinsics.m[i][j] = num(at++);
    rig.image_w = static_cast<int>(num(at++));
    rig.image_h = static_cast<int>(num(at++));
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) rig.a_c.a[i][j] = num(at++);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) rig.a_v.a[i][j] = num(at++);
    rig.validate();
    rigs.push_back(rig);
  }
  return rigs;
}

void save_calibration(const std::string& path, const std::vector<CameraRig>& rigs) {
  std::ofstream os(path);
  if (!os) throw domain_error("cannot open for write: " + path);
  write_calibration(os, rigs);
}

std::vector<CameraRig> load_calibration(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw domain_error("cannot open for read: " + path);
  return read_calibration(is);
}

}  // namespace voxcount
