#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "voxcount/geometry.hpp"

using namespace voxcount;

namespace {

// Independent 3x4 / 3x3 matrix oracle for the projection chain.
struct ProjOracle {
  double u = 0.0, v = 0.0, depth = 0.0;
  bool in_front = false;
};

ProjOracle project_ref(const CameraRig& rig, double x, double y, double z) {
  const double hom[4] = {x, y, z, 1.0};
  double cam[3] = {0, 0, 0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) cam[i] += rig.extrinsics.m[i][j] * hom[j];
  double pix[3] = {0, 0, 0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) pix[i] += rig.intrinsics.k[i][j] * cam[j];
  ProjOracle out;
  out.depth = cam[2];
  if (cam[2] > 1e-3) {
    out.in_front = true;
    out.u = pix[0] / pix[2];
    out.v = pix[1] / pix[2];
  }
  return out;
}

CameraRig random_rig(Rng& rng, int image_w = 64, int image_h = 64) {
  const double ang = rng.uniform(0.0, 6.283185307179586);
  const double radius = rng.uniform(5.0, 10.0);
  const Vec3 pos{radius * std::cos(ang), radius * std::sin(ang), rng.uniform(1.5, 5.0)};
  const Vec3 target{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5)};
  CameraRig rig;
  rig.extrinsics = look_at_extrinsics(pos, target);
  const double f = rng.uniform(40.0, 80.0);
  rig.intrinsics.k = {{{f, 0.0, image_w / 2.0 + rng.uniform(-2.0, 2.0)},
                       {0.0, f * rng.uniform(0.95, 1.05), image_h / 2.0 + rng.uniform(-2.0, 2.0)},
                       {0.0, 0.0, 1.0}}};
  rig.image_w = image_w;
  rig.image_h = image_h;
  rig.validate();
  return rig;
}

CameraRig identity_rig() {
  CameraRig rig;
  rig.image_w = 64;
  rig.image_h = 64;
  return rig;
}

}  // namespace

TEST_CASE("voxel_to_world: direct evaluation") {
  const VoxelGrid g4(4, 4, 4, 0.5);
  const Vec3 a = voxel_to_world(0, 0, 0, g4);
  CHECK(a.x == doctest::Approx(-1.0));
  CHECK(a.y == doctest::Approx(-1.0));
  CHECK(a.z == doctest::Approx(-1.0));

  const VoxelGrid g6(6, 8, 4, 0.3);
  const Vec3 mid = voxel_to_world(3, 4, 2, g6);
  CHECK(mid.x == doctest::Approx(0.0));
  CHECK(mid.y == doctest::Approx(0.0));
  CHECK(mid.z == doctest::Approx(0.0));

  const VoxelGrid g8(8, 8, 8, 0.25);
  const Vec3 b = voxel_to_world(7, 0, 3, g8);
  CHECK(b.x == doctest::Approx(-0.25));
  CHECK(b.y == doctest::Approx(-1.0));
  CHECK(b.z == doctest::Approx(0.75));

  CHECK_THROWS_AS(voxel_to_world(8, 0, 0, g8), domain_error);
  CHECK_THROWS_AS(voxel_to_world(0, -1, 0, g8), domain_error);
}

TEST_CASE("voxel_to_world: optional half-voxel centering") {
  const VoxelGrid g(2, 2, 2, 1.0);
  const Vec3 c = voxel_to_world(0, 0, 0, g, 0.5);
  CHECK(c.x == doctest::Approx(-0.5));
  CHECK(c.z == doctest::Approx(-0.5));
}

TEST_CASE("world_to_voxel inverts voxel_to_world") {
  const VoxelGrid g(8, 16, 12, 0.4);
  const Vec3 w = voxel_to_world(5, 7, 11, g);
  const Vec3 v = world_to_voxel(w, g);
  CHECK(v.x == doctest::Approx(5.0));   // d
  CHECK(v.y == doctest::Approx(7.0));   // h
  CHECK(v.z == doctest::Approx(11.0));  // w
}

TEST_CASE("project_point: canonical camera") {
  const CameraRig rig = identity_rig();
  const Projection p = project_point(rig, {0, 0, 1});
  CHECK(p.in_front);
  CHECK(p.u == doctest::Approx(0.0));
  CHECK(p.v == doctest::Approx(0.0));
  CHECK(p.z_cam == doctest::Approx(1.0));

  const Projection behind = project_point(rig, {0, 0, -1});
  CHECK_FALSE(behind.in_front);
}

TEST_CASE("project_point: focal 100, principal point (50,50)") {
  CameraRig rig = identity_rig();
  rig.intrinsics.k = {{{100, 0, 50}, {0, 100, 50}, {0, 0, 1}}};
  const Projection p = project_point(rig, {0.1, 0.2, 2.0});
  CHECK(p.in_front);
  CHECK(p.u == doctest::Approx(55.0));
  CHECK(p.v == doctest::Approx(60.0));
}

TEST_CASE("project_point: homogeneous scaling leaves (u,v) unchanged") {
  Rng rng(51);
  for (int t = 0; t < 50; ++t) {
    const CameraRig rig = random_rig(rng);
    const Vec3 p{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-1, 1)};
    const ProjOracle ref = project_ref(rig, p.x, p.y, p.z);
    if (!ref.in_front) continue;
    const Projection got = project_point(rig, p);
    for (const double lambda : {0.5, 3.0, 1234.5}) {
      // scale (a,b,c) by lambda: division result identical
      CHECK(std::abs(got.u - ref.u * lambda / lambda) <= 1e-9);
      CHECK(std::abs(got.v - ref.v * lambda / lambda) <= 1e-9);
    }
  }
}

TEST_CASE("project_point + voxel_to_world matches the matrix oracle") {
  Rng rng(52);
  const VoxelGrid grid(8, 16, 16, 0.5);
  int in_front_seen = 0;
  for (int t = 0; t < 400; ++t) {
    const CameraRig rig = random_rig(rng);
    const int d = rng.uniform_int(0, grid.z - 1);
    const int h = rng.uniform_int(0, grid.y - 1);
    const int w = rng.uniform_int(0, grid.x - 1);
    const Vec3 p = voxel_to_world(d, h, w, grid);
    const Projection got = project_point(rig, p);
    const ProjOracle want = project_ref(rig, p.x, p.y, p.z);
    REQUIRE(got.in_front == want.in_front);
    if (want.in_front) {
      ++in_front_seen;
      CHECK(std::abs(got.u - want.u) <= 1e-9);
      CHECK(std::abs(got.v - want.v) <= 1e-9);
      CHECK(std::abs(got.z_cam - want.depth) <= 1e-9);
    }
  }
  CHECK(in_front_seen > 100);
}

TEST_CASE("voxel_hits_view: frame bounds and depth") {
  CameraRig rig = identity_rig();
  rig.intrinsics.k = {{{64, 0, 32}, {0, 64, 32}, {0, 0, 1}}};
  CHECK(voxel_hits_view(rig, {0, 0, 1}));        // projects to the center
  CHECK_FALSE(voxel_hits_view(rig, {0, 0, -1}));   // behind
  CHECK_FALSE(voxel_hits_view(rig, {2.0, 0, 1}));  // u = 64 + 64 > 63
}

TEST_CASE("voxel_hits_view: monotone under image enlargement") {
  Rng rng(53);
  for (int t = 0; t < 200; ++t) {
    CameraRig rig = random_rig(rng);
    const Vec3 p{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-1, 1)};
    const bool hit_small = voxel_hits_view(rig, p);
    rig.image_w += rng.uniform_int(1, 100);
    rig.image_h += rng.uniform_int(1, 100);
    const bool hit_big = voxel_hits_view(rig, p);
    if (hit_small) CHECK(hit_big);
  }
}

TEST_CASE("camera_vector: layout and exact identity readout") {
  const CameraRig rig = identity_rig();
  const Tensor xi = camera_vector(rig, CameraVectorMode::Image);
  REQUIRE(xi.numel() == 27);
  // M = [I|0] (12), K = I (9), A_c identity (6), flattened row-major.
  const double want[27] = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0,  // M
                           1, 0, 0, 0, 1, 0, 0, 0, 1,            // K
                           1, 0, 0, 0, 1, 0};                    // A_c
  for (int i = 0; i < 27; ++i) CHECK(xi[i] == want[i]);
}

TEST_CASE("camera_vector: A_c occupies exactly the last six entries in image mode") {
  Rng rng(54);
  const CameraRig base = random_rig(rng);
  CameraRig other = base;
  other.a_c.a = {{{1.1, 0.2, -0.3}, {0.0, 0.9, 0.4}}};
  const Tensor a = camera_vector(base, CameraVectorMode::Image);
  const Tensor b = camera_vector(other, CameraVectorMode::Image);
  for (int i = 0; i < 21; ++i) CHECK(a[i] == b[i]);
  int diffs = 0;
  for (int i = 21; i < 27; ++i) diffs += a[i] != b[i];
  CHECK(diffs > 0);
  // Volume mode reads A_v instead, so the change is invisible there.
  const Tensor av = camera_vector(base, CameraVectorMode::Volume);
  const Tensor bv = camera_vector(other, CameraVectorMode::Volume);
  CHECK(oracle::max_abs_diff(av, bv) == 0.0);
}

TEST_CASE("camera_vector: injective over single-entry changes") {
  Rng rng(55);
  const CameraRig base = random_rig(rng);
  const Tensor a = camera_vector(base, CameraVectorMode::Image);
  CameraRig t1 = base;
  t1.intrinsics.k[0][2] += 1e-9;
  CameraRig t2 = base;
  t2.extrinsics.m[1][3] += 1e-9;
  CameraRig t3 = base;
  t3.a_c.a[0][1] += 1e-9;
  for (const CameraRig& rig : {t1, t2, t3}) {
    const Tensor b = camera_vector(rig, CameraVectorMode::Image);
    CHECK(oracle::max_abs_diff(a, b) >= 1e-10);
  }
}

TEST_CASE("positional_encoding_image: formula and range") {
  const Tensor p = positional_encoding_image(3, 4);
  CHECK(p.at({0, 0, 0}) == 0.0);
  CHECK(p.at({1, 0, 0}) == 0.0);
  CHECK(p.at({0, 1, 3}) == doctest::Approx(3.0 / 4.0));
  CHECK(p.at({1, 2, 0}) == doctest::Approx(2.0 / 3.0));
  for (int64_t i = 0; i < p.numel(); ++i) {
    CHECK(p[i] >= 0.0);
    CHECK(p[i] < 1.0);
  }
}

TEST_CASE("positional_encoding_volume: formula and range") {
  const Tensor p = positional_encoding_volume(8, 6, 4);
  CHECK(p.at({0, 0, 0, 0}) == 0.0);
  CHECK(p.at({0, 4, 0, 0}) == doctest::Approx(0.5));
  CHECK(p.at({1, 0, 3, 0}) == doctest::Approx(0.5));
  CHECK(p.at({2, 0, 0, 1}) == doctest::Approx(0.25));
  for (int64_t i = 0; i < p.numel(); ++i) {
    CHECK(p[i] >= 0.0);
    CHECK(p[i] < 1.0);
  }
}

TEST_CASE("calibration interchange: bit-exact round trip") {
  Rng rng(56);
  std::vector<CameraRig> rigs;
  for (int i = 0; i < 5; ++i) {
    CameraRig rig = random_rig(rng);
    rig.a_c.a[0][0] = 0.1 + 0.2;         // awkward decimals on purpose
    rig.a_v.a[1][2] = 1.0 / 3.0;
    rig.intrinsics.k[0][2] = 32.0 + 1e-13;
    rigs.push_back(rig);
  }
  std::stringstream ss;
  write_calibration(ss, rigs);
  const std::vector<CameraRig> back = read_calibration(ss);
  REQUIRE(back.size() == rigs.size());
  for (size_t i = 0; i < rigs.size(); ++i) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) CHECK(back[i].intrinsics.k[r][c] == rigs[i].intrinsics.k[r][c]);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) CHECK(back[i].extrinsics.m[r][c] == rigs[i].extrinsics.m[r][c]);
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 3; ++c) {
        CHECK(back[i].a_c.a[r][c] == rigs[i].a_c.a[r][c]);
        CHECK(back[i].a_v.a[r][c] == rigs[i].a_v.a[r][c]);
      }
    CHECK(back[i].image_w == rigs[i].image_w);
    CHECK(back[i].image_h == rigs[i].image_h);
  }
}

TEST_CASE("calibration interchange: comments and malformed rows") {
  std::stringstream ss("# a comment line\n\n");
  CHECK(read_calibration(ss).empty());
  std::stringstream bad("1 2 3\n");
  CHECK_THROWS_AS(read_calibration(bad), domain_error);
}

TEST_CASE("look_at extrinsics satisfy the rotation invariant") {
  Rng rng(57);
  for (int t = 0; t < 50; ++t) {
    const CameraRig rig = random_rig(rng);
    rig.extrinsics.validate();  // throws on failure
  }
  // Degenerate straight-down view still yields a valid rotation.
  const CameraExtrinsics down = look_at_extrinsics({0, 0, 10}, {0, 0, 0});
  down.validate();
}

TEST_CASE("voxel grid levels halve dims and double the edge") {
  const VoxelGrid g(8, 32, 32, 0.25);
  const VoxelGrid l1 = g.level(1);
  CHECK(l1.z == 4);
  CHECK(l1.y == 16);
  CHECK(l1.x == 16);
  CHECK(l1.s == doctest::Approx(0.5));
  CHECK(l1.extent_x() == doctest::Approx(g.extent_x()));
  CHECK_THROWS_AS(VoxelGrid(3, 5, 5, 0.5).level(1), shape_error);
}
