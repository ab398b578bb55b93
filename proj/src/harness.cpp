#include "voxcount/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "voxcount/geometry.hpp"

namespace voxcount {

// ------------------------------------------------------------------ metrics

double mae(const std::vector<double>& preds, const std::vector<double>& gts) {
  if (preds.empty() || preds.size() != gts.size())
    throw domain_error("mae: need equal-length non-empty lists");
  double acc = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) acc += std::abs(preds[i] - gts[i]);
  return acc / static_cast<double>(preds.size());
}

double nae(const std::vector<double>& preds, const std::vector<double>& gts) {
  if (preds.empty() || preds.size() != gts.size())
    throw domain_error("nae: need equal-length non-empty lists");
  double acc = 0.0;
  for (size_t i = 0; i < gts.size(); ++i) {
    if (!(gts[i] > 0.0)) throw domain_error("nae: ground-truth counts must be positive");
    acc += std::abs(preds[i] - gts[i]) / gts[i];
  }
  return acc / static_cast<double>(preds.size());
}

// ------------------------------------------------------------ configuration

void TrainConfig::validate() const {
  model.validate();
  if (optimizer != "adam" && optimizer != "sgd") throw config_error("config: bad optimizer");
  if (lr_schedule != "cosine" && lr_schedule != "constant" && lr_schedule != "flatcos")
    throw config_error("config: bad lr schedule");
  if (lr <= 0.0 || steps < 0) throw config_error("config: bad lr/steps");
  if (train_scenes < 1 || people_min < 0 || people_max < people_min)
    throw config_error("config: bad scene distribution");
  if (views_min < 1 || views_max < views_min) throw config_error("config: bad view counts");
  if (occluders < 0) throw config_error("config: bad occluder count");
}

namespace {

std::string views_to_string(const TrainConfig& c) {
  if (c.views_min == c.views_max) return std::to_string(c.views_min);
  return "U(" + std::to_string(c.views_min) + "," + std::to_string(c.views_max) + ")";
}

void parse_views(const std::string& v, TrainConfig& c) {
  if (v.size() > 2 && (v[0] == 'U' || v[0] == 'u')) {
    int a = 0, b = 0;
    if (std::sscanf(v.c_str() + 1, "(%d,%d)", &a, &b) != 2)
      throw config_error("config: bad views spec '" + v + "'");
    c.views_min = a;
    c.views_max = b;
  } else {
    c.views_min = c.views_max = std::stoi(v);
  }
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw config_error("config: bad boolean '" + v + "'");
}

}  // namespace

std::string serialize_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "adam_beta2 = " << format_double(c.adam_beta2) << "\n";
  os << "grad_clip = " << format_double(c.grad_clip) << "\n";
  os << "alpha_decay = " << format_double(c.model.alpha_decay) << "\n";
  os << "attn_heads = " << c.model.attn_heads << "\n";
  os << "attn_points = " << c.model.attn_points << "\n";
  os << "channels = " << c.model.channels << "\n";
  os << "combine = " << (c.model.combine == CombineMode::Add ? "add" : "hadamard") << "\n";
  os << "congested = " << (c.congested ? 1 : 0) << "\n";
  os << "fixed_occluders = " << (c.fixed_occluders ? 1 : 0) << "\n";
  os << "grid_x = " << c.model.grid_x << "\n";
  os << "grid_y = " << c.model.grid_y << "\n";
  os << "grid_z = " << c.model.grid_z << "\n";
  os << "image_h = " << c.model.image_h << "\n";
  os << "image_w = " << c.model.image_w << "\n";
  os << "lambda_2d = " << format_double(c.model.lambda_2d) << "\n";
  os << "levels = " << c.model.levels << "\n";
  os << "lift_layers = " << c.model.lift_layers << "\n";
  os << "loss_norm = " << (c.model.loss_norm == LossNorm::L2 ? "l2" : "l2sq") << "\n";
  os << "lr = " << format_double(c.lr) << "\n";
  os << "lr_schedule = " << c.lr_schedule << "\n";
  os << "occluders = " << c.occluders << "\n";
  os << "optimizer = " << c.optimizer << "\n";
  os << "people_max = " << c.people_max << "\n";
  os << "people_min = " << c.people_min << "\n";
  os << "seed = " << c.seed << "\n";
  os << "shared_layout = " << (c.shared_layout ? 1 : 0) << "\n";
  os << "sigma_px = " << format_double(c.model.sigma_px) << "\n";
  os << "sigma_vox = " << format_double(c.model.sigma_vox) << "\n";
  os << "steps = " << c.steps << "\n";
  os << "terrain = " << terrain_to_string(c.terrain) << "\n";
  os << "toggle_agg = " << (c.model.toggle_agg ? 1 : 0) << "\n";
  os << "toggle_image_embed = " << (c.model.toggle_image_embed ? 1 : 0) << "\n";
  os << "toggle_lift = " << (c.model.toggle_lift ? 1 : 0) << "\n";
  os << "toggle_volume_embed = " << (c.model.toggle_volume_embed ? 1 : 0) << "\n";
  os << "train_scenes = " << c.train_scenes << "\n";
  os << "views = " << views_to_string(c) << "\n";
  os << "warmup_steps = " << c.warmup_steps << "\n";
  os << "voxel_size = " << format_double(c.model.voxel_size) << "\n";
  return os.str();
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = true;
      for (char ch : line) blank = blank && std::isspace(static_cast<unsigned char>(ch));
      if (blank) continue;
      throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw config_error("config line " + std::to_string(lineno) + ": empty key or value");

    if (key == "adam_beta2") c.adam_beta2 = std::stod(val);
    else if (key == "grad_clip") c.grad_clip = std::stod(val);
    else if (key == "warmup_steps") c.warmup_steps = std::stoi(val);
    else if (key == "alpha_decay") c.model.alpha_decay = std::stod(val);
    else if (key == "attn_heads") c.model.attn_heads = std::stoi(val);
    else if (key == "attn_points") c.model.attn_points = std::stoi(val);
    else if (key == "channels") c.model.channels = std::stoi(val);
    else if (key == "combine") {
      if (val == "add") c.model.combine = CombineMode::Add;
      else if (val == "hadamard") c.model.combine = CombineMode::Hadamard;
      else throw config_error("config: bad combine mode '" + val + "'");
    } else if (key == "congested") c.congested = parse_bool(val);
    else if (key == "fixed_occluders") c.fixed_occluders = parse_bool(val);
    else if (key == "grid_x") c.model.grid_x = std::stoi(val);
    else if (key == "grid_y") c.model.grid_y = std::stoi(val);
    else if (key == "grid_z") c.model.grid_z = std::stoi(val);
    else if (key == "image_h") c.model.image_h = std::stoi(val);
    else if (key == "image_w") c.model.image_w = std::stoi(val);
    else if (key == "lambda_2d") c.model.lambda_2d = std::stod(val);
    else if (key == "levels") c.model.levels = std::stoi(val);
    else if (key == "lift_layers") c.model.lift_layers = std::stoi(val);
    else if (key == "loss_norm") {
      if (val == "l2") c.model.loss_norm = LossNorm::L2;
      else if (val == "l2sq") c.model.loss_norm = LossNorm::L2Squared;
      else throw config_error("config: bad loss norm '" + val + "'");
    } else if (key == "lr") c.lr = std::stod(val);
    else if (key == "lr_schedule") c.lr_schedule = val;
    else if (key == "occluders") c.occluders = std::stoi(val);
    else if (key == "optimizer") c.optimizer = val;
    else if (key == "people_max") c.people_max = std::stoi(val);
    else if (key == "people_min") c.people_min = std::stoi(val);
    else if (key == "seed") c.seed = std::stoull(val);
    else if (key == "shared_layout") c.shared_layout = parse_bool(val);
    else if (key == "sigma_px") c.model.sigma_px = std::stod(val);
    else if (key == "sigma_vox") c.model.sigma_vox = std::stod(val);
    else if (key == "steps") c.steps = std::stoi(val);
    else if (key == "terrain") c.terrain = terrain_from_string(val);
    else if (key == "toggle_agg") c.model.toggle_agg = parse_bool(val);
    else if (key == "toggle_image_embed") c.model.toggle_image_embed = parse_bool(val);
    else if (key == "toggle_lift") c.model.toggle_lift = parse_bool(val);
    else if (key == "toggle_volume_embed") c.model.toggle_volume_embed = parse_bool(val);
    else if (key == "train_scenes") c.train_scenes = std::stoi(val);
    else if (key == "views") parse_views(val, c);
    else if (key == "voxel_size") c.model.voxel_size = std::stod(val);
    else throw config_error("config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string config_hash(const TrainConfig& cfg) {
  const std::string text = serialize_config(cfg);
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --------------------------------------------------------------- scene sets

SceneSetSpec train_scene_spec(const TrainConfig& cfg) {
  SceneSetSpec s;
  s.n_scenes = cfg.train_scenes;
  s.seed = cfg.seed;
  s.n_views = cfg.views_max;
  s.people_min = cfg.people_min;
  s.people_max = cfg.people_max;
  s.terrain = cfg.terrain;
  s.occluders = cfg.occluders;
  s.fixed_occluders = cfg.fixed_occluders;
  s.congested = cfg.congested;
  s.shared_layout = cfg.shared_layout;
  return s;
}

std::vector<TrainScene> build_scene_set(const ModelConfig& model, const SceneSetSpec& spec) {
  Rng root(spec.seed);
  LayoutSpec layout = spec.layout_override.value_or(LayoutSpec{});
  layout.n_views_min = layout.n_views_max = spec.n_views;
  layout.image_w = model.image_w;
  layout.image_h = model.image_h;

  std::vector<TrainScene> out;
  out.reserve(static_cast<size_t>(spec.n_scenes));
  std::vector<Occluder> shared_boxes;
  for (int i = 0; i < spec.n_scenes; ++i) {
    Rng srng = root.fork(static_cast<uint64_t>(i) + 1);
    SceneSpec ss;
    ss.grid = model.base_grid();
    ss.n_people = srng.uniform_int(spec.people_min, spec.people_max);
    ss.terrain = spec.terrain;
    ss.n_occluders = spec.occluders;
    ss.congested = spec.congested;
    if (!spec.preset_occluders.empty())
      ss.preset_occluders = spec.preset_occluders;
    else if (spec.fixed_occluders)
      ss.preset_occluders = shared_boxes;
    TrainScene ts;
    ts.scene = generate_scene(srng.next_u64(), ss);
    if (spec.fixed_occluders && i == 0) shared_boxes = ts.scene.occluders;
    if (!spec.shared_layout) ts.rigs = generate_layout(srng.next_u64(), layout, ts.scene);
    out.push_back(std::move(ts));
  }

  if (spec.shared_layout) {
    // One camera set that satisfies the overlap constraint for every scene.
    Scene all;
    all.seed = spec.seed;
    for (const TrainScene& ts : out)
      all.heads.insert(all.heads.end(), ts.scene.heads.begin(), ts.scene.heads.end());
    Rng lrng = root.fork(0x1a1011full);
    const auto rigs = generate_layout(lrng.next_u64(), layout, all);
    for (TrainScene& ts : out) ts.rigs = rigs;
  }

  for (int i = 0; i < spec.n_scenes; ++i) {
    TrainScene& ts = out[static_cast<size_t>(i)];
    // Images and GT use the true geometry; perturbation (when requested)
    // corrupts only the rigs handed to the model.
    ts.images = render_images(ts.scene, ts.rigs);
    ts.gt = make_ground_truth(ts.scene, ts.rigs, model);
    if (spec.perturb_rot_deg > 0.0 || spec.perturb_trans_m > 0.0) {
      Rng prng = root.fork(0xbadca11ull + static_cast<uint64_t>(i));
      for (CameraRig& rig : ts.rigs)
        rig = perturb_extrinsics(rig, spec.perturb_rot_deg, spec.perturb_trans_m,
                                 prng.next_u64());
    }
  }
  return out;
}

// ----------------------------------------------------------------- training

namespace {

GroundTruth subset_gt(const GroundTruth& full, const std::vector<int>& view_idx) {
  GroundTruth gt;
  gt.g3d = full.g3d;
  gt.scene_count = full.scene_count;
  for (int v : view_idx) {
    gt.h2d.push_back(full.h2d[static_cast<size_t>(v)]);
    gt.visible_counts.push_back(full.visible_counts[static_cast<size_t>(v)]);
  }
  return gt;
}

std::vector<CountingModel::ViewInput> subset_views(const TrainScene& ts,
                                                   const std::vector<int>& view_idx) {
  std::vector<CountingModel::ViewInput> views;
  views.reserve(view_idx.size());
  for (int v : view_idx)
    views.push_back({ts.rigs[static_cast<size_t>(v)], ts.images[static_cast<size_t>(v)]});
  return views;
}

}  // namespace

TrainResult train_model(CountingModel& model, const TrainConfig& cfg,
                        const std::vector<TrainScene>& scenes, std::ostream* progress) {
  cfg.validate();
  if (scenes.empty()) throw config_error("train: empty scene set");
  OptimizerConfig ocfg;
  ocfg.kind = cfg.optimizer == "adam" ? OptKind::Adam : OptKind::Sgd;
  ocfg.beta2 = cfg.adam_beta2;
  ocfg.clip_norm = cfg.grad_clip;
  Optimizer opt(model.parameters(), ocfg);

  Rng rng(cfg.seed ^ 0x7e57a11ull);
  TrainResult result;
  const double pi = 3.14159265358979323846;
  for (int step = 0; step < cfg.steps; ++step) {
    const TrainScene& ts =
        scenes[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(scenes.size()) - 1))];
    const int avail = static_cast<int>(ts.rigs.size());
    int n = cfg.views_min == cfg.views_max ? cfg.views_min
                                           : rng.uniform_int(cfg.views_min, cfg.views_max);
    n = std::min(n, avail);
    std::vector<int> idx(static_cast<size_t>(avail));
    for (int i = 0; i < avail; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = 0; i < n; ++i)
      std::swap(idx[static_cast<size_t>(i)],
                idx[static_cast<size_t>(i + rng.uniform_int(0, avail - 1 - i))]);
    idx.resize(static_cast<size_t>(n));

    const auto views = subset_views(ts, idx);
    const GroundTruth gt = subset_gt(ts.gt, idx);
    const auto fwd = model.forward(views);
    NodePtr loss = model.loss(fwd, gt);
    const double loss_value = loss->value[0];
    if (!std::isfinite(loss_value))
      throw numeric_error("train: non-finite loss at step " + std::to_string(step) +
                          " (scene seed " + std::to_string(ts.scene.seed) + ", " +
                          std::to_string(n) + " views)");
    backward(loss);
    // A fully dead rectified head produces an identically zero map with zero
    // gradient; kick it back across the kink rather than absorbing there.
    if (fwd.density3d[0]->value.sum() == 0.0) model.revive_density_heads();

    double lr = cfg.lr;
    const int warmup_cfg =
        cfg.warmup_steps > 0 ? cfg.warmup_steps : std::max(1, cfg.steps / 20);
    if (cfg.lr_schedule == "cosine") {
      // Linear warmup, then cosine decay to zero.
      const int warmup = warmup_cfg;
      lr = step < warmup
               ? cfg.lr * (step + 1) / warmup
               : cfg.lr * 0.5 *
                     (1.0 + std::cos(pi * (step - warmup) / std::max(1, cfg.steps - warmup)));
    } else if (cfg.lr_schedule == "flatcos") {
      // Warmup, hold the peak until 60% of the run, then cosine to zero.
      const int warmup = warmup_cfg;
      const int flat_end = (6 * cfg.steps) / 10;
      if (step < warmup)
        lr = cfg.lr * (step + 1) / warmup;
      else if (step >= flat_end)
        lr = cfg.lr * 0.5 *
             (1.0 + std::cos(pi * (step - flat_end) / std::max(1, cfg.steps - flat_end)));
    }
    opt.step(lr);
    result.loss_curve.push_back(loss_value);
    result.lr_curve.push_back(lr);
    if (progress && (step % 25 == 0 || step + 1 == cfg.steps))
      (*progress) << "step " << step << " loss " << loss_value << " lr " << lr << "\n";
  }
  return result;
}

// --------------------------------------------------------------- evaluation

EvalReport evaluate_model(CountingModel& model, const std::vector<TrainScene>& scenes,
                          int n_views, const std::string& cfg_hash) {
  if (scenes.empty()) throw domain_error("evaluate: empty scene set");
  const auto t0 = std::chrono::steady_clock::now();
  NoGrad ng;
  EvalReport report;
  report.config_hash = cfg_hash;
  std::vector<double> scene_preds, scene_gts;
  std::vector<double> img_preds, img_gts, img_preds_pos, img_gts_pos;
  for (size_t i = 0; i < scenes.size(); ++i) {
    const TrainScene& ts = scenes[i];
    const int n = std::min(n_views, static_cast<int>(ts.rigs.size()));
    std::vector<int> idx(static_cast<size_t>(n));
    for (int v = 0; v < n; ++v) idx[static_cast<size_t>(v)] = v;
    const auto fwd = model.forward(subset_views(ts, idx));
    const double pred = model.predicted_count(fwd);
    report.rows.push_back({static_cast<int>(i), ts.gt.scene_count, pred});
    scene_preds.push_back(pred);
    scene_gts.push_back(ts.gt.scene_count);
    for (int v = 0; v < n; ++v) {
      const double ip = fwd.density2d[static_cast<size_t>(v)]->value.sum();
      const double ig = ts.gt.visible_counts[static_cast<size_t>(v)];
      img_preds.push_back(ip);
      img_gts.push_back(ig);
      if (ig > 0.0) {
        img_preds_pos.push_back(ip);
        img_gts_pos.push_back(ig);
      }
    }
  }
  report.scene_mae = mae(scene_preds, scene_gts);
  report.scene_nae = nae(scene_preds, scene_gts);
  report.image_mae = mae(img_preds, img_gts);
  report.image_nae = img_gts_pos.empty() ? 0.0 : nae(img_preds_pos, img_gts_pos);
  report.runtime_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

void write_eval_report(const std::string& path, const EvalReport& report, int n_views,
                       double perturb_deg) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw domain_error("cannot open report for append: " + path);
  os << "# config_hash=" << report.config_hash << " n_views=" << n_views
     << " perturb_deg=" << format_double(perturb_deg)
     << " runtime_s=" << format_double(report.runtime_s) << "\n";
  os << "scene_idx,gt_count,pred_count\n";
  for (const EvalRow& row : report.rows)
    os << row.scene_idx << "," << format_double(row.gt) << "," << format_double(row.pred)
       << "\n";
  os << "summary,scene_mae=" << format_double(report.scene_mae)
     << ",scene_nae=" << format_double(report.scene_nae)
     << ",image_mae=" << format_double(report.image_mae)
     << ",image_nae=" << format_double(report.image_nae) << "\n";
}

// -------------------------------------------------------------- checkpoints

namespace {

constexpr char kCkptMagic[] = "VOXCKPT1\n";

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw domain_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, CountingModel& model, const TrainConfig& cfg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw domain_error("cannot write checkpoint: " + path);
  os.write(kCkptMagic, sizeof(kCkptMagic) - 1);
  const std::string cfg_text = serialize_config(cfg);
  write_pod<uint64_t>(os, cfg_text.size());
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  const auto& params = model.parameters();
  write_pod<uint64_t>(os, params.size());
  for (const Parameter* p : params) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(p->value.ndim()));
    for (int d = 0; d < p->value.ndim(); ++d) write_pod<int32_t>(os, p->value.dim(d));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
  }
}

std::unique_ptr<CountingModel> make_model(const TrainConfig& cfg) {
  return std::make_unique<CountingModel>(cfg.model, cfg.seed ^ 0x0dd5eedull);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw domain_error("cannot open checkpoint: " + path);
  char magic[sizeof(kCkptMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw config_error("checkpoint: bad magic in " + path);
  const uint64_t cfg_len = read_pod<uint64_t>(is);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw domain_error("checkpoint: truncated config");
  LoadedCheckpoint out;
  out.config = parse_config(cfg_text);
  out.model = make_model(out.config);
  const uint64_t n_params = read_pod<uint64_t>(is);
  if (n_params != out.model->parameters().size())
    throw config_error("checkpoint: parameter count does not match the config");
  for (uint64_t i = 0; i < n_params; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t ndim = read_pod<uint32_t>(is);
    std::vector<int> dims(ndim);
    for (uint32_t d = 0; d < ndim; ++d) dims[d] = read_pod<int32_t>(is);
    Parameter* p = out.model->find_parameter(name);
    if (!p) throw config_error("checkpoint: unknown parameter '" + name + "'");
    if (p->value.shape() != dims)
      throw config_error("checkpoint: shape mismatch for '" + name + "'");
    is.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
    if (!is) throw domain_error("checkpoint: truncated tensor data");
  }
  return out;
}

// ---------------------------------------------------------------- protocols

ModelConfig apply_toggles(const ModelConfig& base, const std::string& combo) {
  if (combo.size() != 4) throw config_error("toggles: want 4 characters over LVAI, e.g. LV-I");
  auto want = [&](size_t i, char on) {
    if (combo[i] == on) return true;
    if (combo[i] == '-') return false;
    throw config_error("toggles: position " + std::to_string(i) + " must be '" +
                       std::string(1, on) + "' or '-'");
  };
  ModelConfig cfg = base;
  cfg.toggle_lift = want(0, 'L');
  cfg.toggle_volume_embed = want(1, 'V');
  cfg.toggle_agg = want(2, 'A');
  cfg.toggle_image_embed = want(3, 'I');
  return cfg;
}

std::vector<AblationRow> ablate(const TrainConfig& cfg, const std::vector<std::string>& combos,
                                const std::vector<TrainScene>& train_set,
                                const std::vector<TrainScene>& eval_set, int eval_views,
                                std::ostream* progress) {
  std::vector<AblationRow> rows;
  for (const std::string& combo : combos) {
    TrainConfig variant = cfg;
    variant.model = apply_toggles(cfg.model, combo);
    if (progress) (*progress) << "ablation " << combo << ": training\n";
    auto model = make_model(variant);
    train_model(*model, variant, train_set, progress);
    const EvalReport report =
        evaluate_model(*model, eval_set, eval_views, config_hash(variant));
    rows.push_back({combo, report.scene_mae, report.scene_nae});
    if (progress)
      (*progress) << "ablation " << combo << ": mae " << report.scene_mae << " nae "
                  << report.scene_nae << "\n";
  }
  return rows;
}

GradCheckReport gradient_check(CountingModel& model, const std::vector<TrainScene>& scenes,
                               double eps, double fd_floor) {
  if (scenes.empty()) throw domain_error("grad check: empty scene set");
  const TrainScene& ts = scenes[0];
  const int n = std::min(2, static_cast<int>(ts.rigs.size()));
  std::vector<int> idx(static_cast<size_t>(n));
  for (int v = 0; v < n; ++v) idx[static_cast<size_t>(v)] = v;
  const auto views = subset_views(ts, idx);
  const GroundTruth gt = subset_gt(ts.gt, idx);

  // Generic point: the zero-initialized offset/weight predictors have
  // identically zero gradients exactly at their init, so nudge everything.
  Rng noise(0x6e4d6eull);
  for (Parameter* p : model.parameters())
    for (int64_t i = 0; i < p->value.numel(); ++i) p->value[i] += noise.uniform(-0.05, 0.05);

  for (Parameter* p : model.parameters()) p->zero_grad();
  backward(model.loss(model.forward(views), gt));

  auto loss_value = [&] {
    NoGrad ng;
    const auto fwd = model.forward(views);
    return model.loss(fwd, gt)->value[0];
  };

  GradCheckReport report;
  for (Parameter* p : model.parameters()) {
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = loss_value();
      p->value[i] = saved - eps;
      const double down = loss_value();
      p->value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw numeric_error("grad check: non-finite loss at '" + p->name + "'");
      const double fd = (up - down) / (2.0 * eps);
      if (std::abs(fd) <= fd_floor) continue;
      const double an = p->grad[i];
      const double rel = std::abs(an - fd) / std::max(std::abs(fd), std::abs(an));
      ++report.entries_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

std::vector<WeightInspectionRow> inspect_weights(CountingModel& model, const TrainScene& scene,
                                                 int n_views, const std::vector<Vec3>& points) {
  NoGrad ng;
  const int n = std::min(n_views, static_cast<int>(scene.rigs.size()));
  std::vector<int> idx(static_cast<size_t>(n));
  for (int v = 0; v < n; ++v) idx[static_cast<size_t>(v)] = v;
  const auto fwd = model.forward(subset_views(scene, idx));
  const VoxelGrid grid = model.config().base_grid();
  const Tensor& w = fwd.agg_weights[0];

  std::vector<WeightInspectionRow> rows;
  for (const Vec3& point : points) {
    const Vec3 frac = world_to_voxel(point, grid);
    const int d = static_cast<int>(std::floor(frac.x));
    const int h = static_cast<int>(std::floor(frac.y));
    const int ww = static_cast<int>(std::floor(frac.z));
    const bool in_grid =
        d >= 0 && d < grid.z && h >= 0 && h < grid.y && ww >= 0 && ww < grid.x;
    const int64_t p = in_grid ? (static_cast<int64_t>(d) * grid.y + h) * grid.x + ww : -1;
    for (int v = 0; v < n; ++v) {
      WeightInspectionRow row;
      row.point = point;
      row.view_id = v;
      row.weight = in_grid ? w.at({v, static_cast<int>(p)}) : 0.0;
      row.hit = in_grid && fwd.hits_finest[static_cast<size_t>(v)][static_cast<size_t>(p)];
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace voxcount
