#include "voxcount/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "voxcount/common.hpp"
#include "voxcount/density3d.hpp"
#include "voxcount/lifting.hpp"

namespace voxcount {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kHeadRadiusM = 0.16;
}  // namespace

TerrainKind terrain_from_string(const std::string& s) {
  if (s == "flat") return TerrainKind::Flat;
  if (s == "inclined") return TerrainKind::Inclined;
  if (s == "bumps") return TerrainKind::Bumps;
  throw config_error("unknown terrain kind: " + s);
}

std::string terrain_to_string(TerrainKind k) {
  switch (k) {
    case TerrainKind::Flat: return "flat";
    case TerrainKind::Inclined: return "inclined";
    case TerrainKind::Bumps: return "bumps";
  }
  return "flat";
}

double Terrain::height(double x, double y) const {
  switch (kind) {
    case TerrainKind::Flat: return base;
    case TerrainKind::Inclined: return base + gx * x + gy * y;
    case TerrainKind::Bumps:
      return base + amp * std::sin(kx * x + phase1) * std::sin(ky * y + phase2);
  }
  return base;
}

namespace {

bool point_in_box(Vec3 p, const Occluder& b) {
  return std::abs(p.x - b.center.x) <= b.half.x && std::abs(p.y - b.center.y) <= b.half.y &&
         std::abs(p.z - b.center.z) <= b.half.z;
}

}  // namespace

Scene generate_scene(uint64_t seed, const SceneSpec& spec) {
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;

  const double hx = spec.grid.extent_x() / 2.0;
  const double hy = spec.grid.extent_y() / 2.0;
  const double hz = spec.grid.extent_z() / 2.0;
  const double mid_height = 0.5 * (spec.person_height_min + spec.person_height_max);
  const double half_span = 0.5 * (spec.person_height_max - spec.person_height_min);
  // Vertical budget left for terrain variation once heads are centered.
  const double budget = std::max(0.0, hz - half_span - 0.02);

  scene.terrain.base = -mid_height;
  scene.terrain.kind = spec.terrain;
  if (spec.terrain == TerrainKind::Inclined) {
    const double cap = budget / std::max(1e-9, hx + hy);
    const double mag = cap * rng.uniform(0.5, 1.0);
    const double dir = rng.uniform(0.0, 2.0 * kPi);
    scene.terrain.gx = mag * std::cos(dir);
    scene.terrain.gy = mag * std::sin(dir);
  } else if (spec.terrain == TerrainKind::Bumps) {
    scene.terrain.amp = budget * rng.uniform(0.4, 0.9);
    scene.terrain.kx = rng.uniform(0.6, 1.4);
    scene.terrain.ky = rng.uniform(0.6, 1.4);
    scene.terrain.phase1 = rng.uniform(0.0, 2.0 * kPi);
    scene.terrain.phase2 = rng.uniform(0.0, 2.0 * kPi);
  }

  if (!spec.preset_occluders.empty()) {
    scene.occluders = spec.preset_occluders;
  } else {
    for (int i = 0; i < spec.n_occluders; ++i) {
      Occluder box;
      const double bx = rng.uniform(-hx * 0.5, hx * 0.5);
      const double by = rng.uniform(-hy * 0.5, hy * 0.5);
      const double h = rng.uniform(1.9, 2.4);
      box.half = {rng.uniform(0.35, 0.7), rng.uniform(0.35, 0.7), h / 2.0};
      box.center = {bx, by, scene.terrain.height(bx, by) + h / 2.0};
      scene.occluders.push_back(box);
    }
  }

  // Congested mode packs the first 60% of heads at >= 2 per square meter.
  int congested_n = spec.congested ? (spec.n_people * 3) / 5 : 0;
  double cw = 0.0, ch = 0.0, cx0 = 0.0, cy0 = 0.0;
  if (congested_n > 1) {
    const double area = congested_n / 2.5;
    cw = std::min(2.0 * hx - 0.4, std::sqrt(area));
    ch = std::min(2.0 * hy - 0.4, area / cw);
    cx0 = rng.uniform(-hx + 0.2, hx - 0.2 - cw);
    cy0 = rng.uniform(-hy + 0.2, hy - 0.2 - ch);
  } else {
    congested_n = 0;
  }

  const double margin = std::min(0.2, 0.1 * hx);
  const int max_tries = 200 * std::max(1, spec.n_people) + 200;
  int tries = 0;
  while (static_cast<int>(scene.heads.size()) < spec.n_people) {
    if (++tries > max_tries)
      throw generation_error("generate_scene: cannot place " + std::to_string(spec.n_people) +
                             " people inside the grid extent");
    Vec3 p;
    if (static_cast<int>(scene.heads.size()) < congested_n) {
      p.x = cx0 + rng.uniform(0.0, cw);
      p.y = cy0 + rng.uniform(0.0, ch);
    } else {
      p.x = rng.uniform(-hx + margin, hx - margin);
      p.y = rng.uniform(-hy + margin, hy - margin);
    }
    p.z = scene.terrain.height(p.x, p.y) +
          rng.uniform(spec.person_height_min, spec.person_height_max);
    if (std::abs(p.z) > hz) continue;
    bool inside_box = false;
    for (const Occluder& b : scene.occluders) inside_box = inside_box || point_in_box(p, b);
    if (inside_box) continue;
    scene.heads.push_back(p);
  }
  return scene;
}

std::vector<CameraRig> generate_layout(uint64_t seed, const LayoutSpec& spec,
                                       const Scene& scene) {
  if (spec.n_views_min < 1 || spec.n_views_max < spec.n_views_min)
    throw config_error("layout: bad view-count range");
  Rng rng(seed);
  const int n = spec.n_views_min == spec.n_views_max
                    ? spec.n_views_min
                    : rng.uniform_int(spec.n_views_min, spec.n_views_max);

  for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
    std::vector<CameraRig> rigs;
    const double rot0 = rng.uniform(0.0, 2.0 * kPi);
    for (int i = 0; i < n; ++i) {
      const double ang = rot0 + 2.0 * kPi * (i + rng.uniform(-0.25, 0.25)) / n;
      const double dist = rng.uniform(spec.cam_dist_min, spec.cam_dist_max);
      const Vec3 pos{dist * std::cos(ang), dist * std::sin(ang),
                     rng.uniform(spec.cam_height_min, spec.cam_height_max)};
      const Vec3 target{rng.uniform(-spec.lookat_jitter, spec.lookat_jitter),
                        rng.uniform(-spec.lookat_jitter, spec.lookat_jitter),
                        rng.uniform(-0.3, 0.3)};
      CameraRig rig;
      rig.extrinsics = look_at_extrinsics(pos, target);
      const double f = rng.uniform(spec.focal_min, spec.focal_max);
      rig.intrinsics.k = {{{f, 0.0, spec.image_w / 2.0 + rng.uniform(-1.5, 1.5)},
                           {0.0, f, spec.image_h / 2.0 + rng.uniform(-1.5, 1.5)},
                           {0.0, 0.0, 1.0}}};
      rig.image_w = spec.image_w;
      rig.image_h = spec.image_h;
      rig.validate();
      rigs.push_back(rig);
    }
    // Overlap constraint: every head in frame for enough views.
    const int need = std::min(spec.min_views_per_head, n);
    bool ok = true;
    for (const Vec3& head : scene.heads) {
      int seen = 0;
      for (const CameraRig& rig : rigs) seen += voxel_hits_view(rig, head) ? 1 : 0;
      if (seen < need) {
        ok = false;
        break;
      }
    }
    if (ok) return rigs;
  }
  throw generation_error("generate_layout: overlap constraint unmet after " +
                         std::to_string(spec.max_retries) + " retries");
}

Vec3 camera_center(const CameraRig& rig) {
  const auto& m = rig.extrinsics.m;
  // c = -R^T t
  return {-(m[0][0] * m[0][3] + m[1][0] * m[1][3] + m[2][0] * m[2][3]),
          -(m[0][1] * m[0][3] + m[1][1] * m[1][3] + m[2][1] * m[2][3]),
          -(m[0][2] * m[0][3] + m[1][2] * m[1][3] + m[2][2] * m[2][3])};
}

bool segment_hits_box(Vec3 p0, Vec3 p1, const Occluder& box) {
  const double d[3] = {p1.x - p0.x, p1.y - p0.y, p1.z - p0.z};
  const double o[3] = {p0.x - box.center.x, p0.y - box.center.y, p0.z - box.center.z};
  const double h[3] = {box.half.x, box.half.y, box.half.z};
  double tmin = 1e-6, tmax = 1.0 - 1e-6;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-12) {
      if (std::abs(o[i]) > h[i]) return false;
      continue;
    }
    double t0 = (-h[i] - o[i]) / d[i];
    double t1 = (h[i] - o[i]) / d[i];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  return true;
}

bool head_visible(const Scene& scene, const CameraRig& rig, Vec3 head) {
  if (!voxel_hits_view(rig, head)) return false;
  const Vec3 cam = camera_center(rig);
  for (const Occluder& box : scene.occluders)
    if (segment_hits_box(cam, head, box)) return false;
  return true;
}

int visible_head_count(const Scene& scene, const CameraRig& rig) {
  int n = 0;
  for (const Vec3& head : scene.heads) n += head_visible(scene, rig, head) ? 1 : 0;
  return n;
}

namespace {

void fill_disk(Tensor& img, double u, double v, double r, const double rgb[3]) {
  const int h = img.dim(1), w = img.dim(2);
  const int x0 = std::max(0, static_cast<int>(std::floor(u - r)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(u + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(v - r)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(v + r)));
  const double r2 = r * r;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - u, dy = y - v;
      if (dx * dx + dy * dy > r2) continue;
      for (int c = 0; c < 3; ++c) img.at({c, y, x}) = rgb[c];
    }
}

// Convex hull (monotone chain) of projected points.
std::vector<std::pair<double, double>> convex_hull(std::vector<std::pair<double, double>> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const size_t n = pts.size();
  if (n < 3) return pts;
  auto cross2 = [](const std::pair<double, double>& o, const std::pair<double, double>& a,
                   const std::pair<double, double>& b) {
    return (a.first - o.first) * (b.second - o.second) -
           (a.second - o.second) * (b.first - o.first);
  };
  std::vector<std::pair<double, double>> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const size_t lower = k + 1;
  for (size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_hull(const std::vector<std::pair<double, double>>& hull, double x, double y) {
  if (hull.size() < 3) return false;
  for (size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    const double c =
        (b.first - a.first) * (y - a.second) - (b.second - a.second) * (x - a.first);
    if (c < 0) return false;
  }
  return true;
}

void fill_box(Tensor& img, const CameraRig& rig, const Occluder& box, const double rgb[3]) {
  std::vector<std::pair<double, double>> pts;
  for (int sx = -1; sx <= 1; sx += 2)
    for (int sy = -1; sy <= 1; sy += 2)
      for (int sz = -1; sz <= 1; sz += 2) {
        const Vec3 corner{box.center.x + sx * box.half.x, box.center.y + sy * box.half.y,
                          box.center.z + sz * box.half.z};
        const Projection pr = project_point(rig, corner);
        if (!pr.in_front) return;  // partially behind the camera: skip drawing
        pts.emplace_back(pr.u, pr.v);
      }
  const auto hull = convex_hull(std::move(pts));
  double minx = 1e300, maxx = -1e300, miny = 1e300, maxy = -1e300;
  for (const auto& p : hull) {
    minx = std::min(minx, p.first);
    maxx = std::max(maxx, p.first);
    miny = std::min(miny, p.second);
    maxy = std::max(maxy, p.second);
  }
  const int h = img.dim(1), w = img.dim(2);
  const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(maxx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(maxy)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside_hull(hull, x, y))
        for (int c = 0; c < 3; ++c) img.at({c, y, x}) = rgb[c];
}

}  // namespace

std::vector<Tensor> render_images(const Scene& scene, const std::vector<CameraRig>& rigs) {
  std::vector<Tensor> out;
  out.reserve(rigs.size());
  for (size_t view = 0; view < rigs.size(); ++view) {
    const CameraRig& rig = rigs[view];
    Tensor img({3, rig.image_h, rig.image_w});
    Rng noise(scene.seed ^ (0x9e3779b97f4a7c15ull * (view + 1)));
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = 0.12 + noise.uniform(-0.02, 0.02);

    struct Item {
      double depth;
      int kind;  // 0 head, 1 box
      size_t idx;
    };
    std::vector<Item> items;
    for (size_t i = 0; i < scene.heads.size(); ++i) {
      if (!head_visible(scene, rig, scene.heads[i])) continue;
      items.push_back({project_point(rig, scene.heads[i]).z_cam, 0, i});
    }
    for (size_t i = 0; i < scene.occluders.size(); ++i) {
      const Projection pr = project_point(rig, scene.occluders[i].center);
      items.push_back({pr.z_cam, 1, i});
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
      if (a.depth != b.depth) return a.depth > b.depth;  // far first
      if (a.kind != b.kind) return a.kind < b.kind;
      return a.idx < b.idx;
    });

    for (const Item& item : items) {
      if (item.kind == 0) {
        const Vec3& head = scene.heads[item.idx];
        const Projection pr = project_point(rig, head);
        const double focal = rig.intrinsics.k[1][1];
        const double r = std::clamp(focal * kHeadRadiusM / pr.z_cam, 0.8, 12.0);
        Rng tint(scene.seed ^ (0x517cc1b727220a95ull * (item.idx + 1)));
        const double base = 0.8 + tint.uniform(0.0, 0.15);
        const double rgb[3] = {base, base - tint.uniform(0.0, 0.08),
                               base - tint.uniform(0.0, 0.12)};
        fill_disk(img, pr.u, pr.v, r, rgb);
      } else {
        const double rgb[3] = {0.42, 0.44, 0.46};
        fill_box(img, rig, scene.occluders[item.idx], rgb);
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

Tensor render_gt_density3d(const Scene& scene, const VoxelGrid& grid, double sigma_vox) {
  Tensor g({1, grid.z, grid.y, grid.x});
  const double cut = 3.0 * sigma_vox;
  const int rad = static_cast<int>(std::ceil(cut));
  const double inv2s2 = 1.0 / (2.0 * sigma_vox * sigma_vox);
  std::vector<int64_t> idx;
  std::vector<double> wgt;
  for (const Vec3& head : scene.heads) {
    const Vec3 voxf = world_to_voxel(head, grid);  // (d, h, w) fractional
    const double d0 = voxf.x, h0 = voxf.y, w0 = voxf.z;
    if (d0 < -cut || d0 > grid.z - 1 + cut || h0 < -cut || h0 > grid.y - 1 + cut ||
        w0 < -cut || w0 > grid.x - 1 + cut)
      throw domain_error("render_gt_density3d: head outside the grid");
    idx.clear();
    wgt.clear();
    double total = 0.0;
    for (int d = std::max(0, static_cast<int>(std::floor(d0 - rad)));
         d <= std::min(grid.z - 1, static_cast<int>(std::ceil(d0 + rad))); ++d)
      for (int h = std::max(0, static_cast<int>(std::floor(h0 - rad)));
           h <= std::min(grid.y - 1, static_cast<int>(std::ceil(h0 + rad))); ++h)
        for (int w = std::max(0, static_cast<int>(std::floor(w0 - rad)));
             w <= std::min(grid.x - 1, static_cast<int>(std::ceil(w0 + rad))); ++w) {
          const double r2 = (d - d0) * (d - d0) + (h - h0) * (h - h0) + (w - w0) * (w - w0);
          if (r2 > cut * cut) continue;
          const double e = std::exp(-r2 * inv2s2);
          idx.push_back((static_cast<int64_t>(d) * grid.y + h) * grid.x + w);
          wgt.push_back(e);
          total += e;
        }
    if (idx.empty())
      throw domain_error("render_gt_density3d: truncation window left no in-grid voxel");
    for (size_t i = 0; i < idx.size(); ++i) g[idx[i]] += wgt[i] / total;
  }
  return g;
}

Tensor render_gt_density2d(const Scene& scene, const CameraRig& rig, double sigma_px,
                           int stride) {
  if (rig.image_h % stride || rig.image_w % stride)
    throw shape_error("render_gt_density2d: image size not divisible by stride");
  const int gh = rig.image_h / stride, gw = rig.image_w / stride;
  Tensor out({1, gh, gw});
  const double cut = 3.0 * sigma_px;
  const int rad = static_cast<int>(std::ceil(cut));
  const double inv2s2 = 1.0 / (2.0 * sigma_px * sigma_px);
  std::vector<int64_t> idx;
  std::vector<double> wgt;
  for (const Vec3& head : scene.heads) {
    if (!head_visible(scene, rig, head)) continue;
    const Projection pr = project_point(rig, head);
    const double cx = pr.u / stride, cy = pr.v / stride;
    idx.clear();
    wgt.clear();
    double total = 0.0;
    for (int y = std::max(0, static_cast<int>(std::floor(cy - rad)));
         y <= std::min(gh - 1, static_cast<int>(std::ceil(cy + rad))); ++y)
      for (int x = std::max(0, static_cast<int>(std::floor(cx - rad)));
           x <= std::min(gw - 1, static_cast<int>(std::ceil(cx + rad))); ++x) {
        const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        if (r2 > cut * cut) continue;
        const double e = std::exp(-r2 * inv2s2);
        idx.push_back(static_cast<int64_t>(y) * gw + x);
        wgt.push_back(e);
        total += e;
      }
    if (idx.empty()) continue;  // visible implies in-frame, so the window is never empty
    for (size_t i = 0; i < idx.size(); ++i) out[idx[i]] += wgt[i] / total;
  }
  return out;
}

CameraRig perturb_extrinsics(const CameraRig& rig, double rot_noise_deg, double trans_noise_m,
                             uint64_t seed) {
  Rng rng(seed);
  Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
  if (norm(axis) < 1e-9) axis = {0, 0, 1};
  const double angle = rng.uniform(0.0, rot_noise_deg) * kPi / 180.0;
  const Mat3 rd = rotation_about_axis(axis, angle);
  CameraRig out = rig;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += rd[i][k] * rig.extrinsics.m[k][j];
      out.extrinsics.m[i][j] = acc;
    }
  for (int i = 0; i < 3; ++i) {
    double acc = 0.0;
    for (int k = 0; k < 3; ++k) acc += rd[i][k] * rig.extrinsics.m[k][3];
    out.extrinsics.m[i][3] = acc + rng.uniform(-trans_noise_m, trans_noise_m);
  }
  out.validate();
  return out;
}

NodePtr ipm_lift_baseline(NodePtr feature_map, const CameraRig& rig, const VoxelGrid& grid,
                          int stride_exp) {
  const int c = feature_map->value.dim(0);
  const ReferencePoints refs = reference_points(grid, rig);
  const double inv_stride = 1.0 / static_cast<double>(1 << stride_exp);

  // One sample per (h, w) column at the projection of its z = 0 ground point.
  const int ncol = grid.y * grid.x;
  std::vector<std::pair<double, double>> col_uv;
  std::vector<int> col_slot(static_cast<size_t>(ncol), -1);
  for (int h = 0; h < grid.y; ++h)
    for (int w = 0; w < grid.x; ++w) {
      const Vec3 ground{grid.s * (w - grid.x / 2.0), grid.s * (h - grid.y / 2.0), 0.0};
      const Projection pr = project_point(rig, ground);
      if (!pr.in_front) continue;
      col_slot[static_cast<size_t>(h * grid.x + w)] = static_cast<int>(col_uv.size());
      col_uv.emplace_back(pr.u * inv_stride, pr.v * inv_stride);
    }

  const int64_t vox = grid.voxel_count();
  std::vector<int> voxel_idx;
  std::vector<int> voxel_col;
  for (int64_t p = 0; p < vox; ++p) {
    if (!refs.hit[static_cast<size_t>(p)]) continue;
    const int slot = col_slot[static_cast<size_t>(p % ncol)];
    if (slot < 0) continue;
    voxel_idx.push_back(static_cast<int>(p));
    voxel_col.push_back(slot);
  }
  if (voxel_idx.empty())
    return constant(Tensor({c, grid.z, grid.y, grid.x}));

  NodePtr samples = sample_rows(std::move(feature_map), col_uv);          // [ncolv, C]
  NodePtr per_voxel = gather_voxels(transpose2d(std::move(samples)), voxel_col);  // [V, C]
  NodePtr volume = scatter_voxels(std::move(per_voxel), voxel_idx, static_cast<int>(vox));
  return reshape(std::move(volume), {c, grid.z, grid.y, grid.x});
}

// ------------------------------------------------------------------ export

void export_scene(const std::string& dir, const SceneDataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_calibration(dir + "/calibration.txt", data.rigs);
  {
    std::ofstream os(dir + "/heads.csv");
    if (!os) throw domain_error("export_scene: cannot write heads.csv");
    os << "# x y z\n";
    for (const Vec3& h : data.scene.heads)
      os << format_double(h.x) << " " << format_double(h.y) << " " << format_double(h.z)
         << "\n";
  }
  char name[64];
  for (size_t v = 0; v < data.images.size(); ++v) {
    std::snprintf(name, sizeof(name), "/view_%03zu.img", v);
    dump_density(dir + name, data.images[v], 1.0, static_cast<int>(v));
  }
  for (size_t v = 0; v < data.gt2d.size(); ++v) {
    std::snprintf(name, sizeof(name), "/gt2d_view_%03zu.den", v);
    dump_density(dir + name, data.gt2d[v], 4.0, static_cast<int>(v));
  }
  for (size_t l = 0; l < data.gt3d.size(); ++l) {
    std::snprintf(name, sizeof(name), "/gt3d_level_%zu.den", l);
    dump_density(dir + name, data.gt3d[l],
                 l < data.gt3d_scale.size() ? data.gt3d_scale[l] : 0.0, static_cast<int>(l));
  }
}

SceneDataset import_scene(const std::string& dir) {
  namespace fs = std::filesystem;
  SceneDataset out;
  out.rigs = load_calibration(dir + "/calibration.txt");
  {
    std::ifstream is(dir + "/heads.csv");
    if (!is) throw domain_error("import_scene: missing heads.csv");
    std::string line;
    while (std::getline(is, line)) {
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      std::istringstream ss(line);
      Vec3 p;
      if (ss >> p.x >> p.y >> p.z) out.scene.heads.push_back(p);
    }
  }
  char name[64];
  for (size_t v = 0;; ++v) {
    std::snprintf(name, sizeof(name), "/view_%03zu.img", v);
    if (!fs::exists(dir + name)) break;
    out.images.push_back(load_density(dir + name).data);
    std::snprintf(name, sizeof(name), "/gt2d_view_%03zu.den", v);
    if (fs::exists(dir + name)) {
      const Tensor t = load_density(dir + name).data;
      out.gt2d.push_back(t.reshaped({1, t.dim(1), t.dim(2)}));
    }
  }
  for (size_t l = 0;; ++l) {
    std::snprintf(name, sizeof(name), "/gt3d_level_%zu.den", l);
    if (!fs::exists(dir + name)) break;
    const DensityDump dump = load_density(dir + name);
    out.gt3d.push_back(dump.data.reshaped({1, dump.data.dim(0), dump.data.dim(1),
                                           dump.data.dim(2)}));
    out.gt3d_scale.push_back(dump.scale);
  }
  return out;
}

}  // namespace voxcount
