// voxcount command-line driver: training, evaluation, ablations, gradient
// checking, aggregation-weight inspection and dataset export.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "voxcount/density3d.hpp"
#include "voxcount/harness.hpp"

namespace fs = std::filesystem;
using namespace voxcount;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw domain_error("cannot write " + path);
  os << text;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, int steps_override) {
  TrainConfig cfg = load_config(config_path);
  if (steps_override >= 0) cfg.steps = steps_override;
  fs::create_directories(out_dir);
  write_text(out_dir + "/config.resolved", serialize_config(cfg));

  const auto scenes = build_scene_set(cfg.model, train_scene_spec(cfg));
  auto model = make_model(cfg);
  std::cerr << "training " << cfg.steps << " steps on " << scenes.size() << " scenes ("
            << config_hash(cfg) << ")\n";
  const TrainResult result = train_model(*model, cfg, scenes, &std::cerr);

  std::ofstream curve(out_dir + "/loss_curve.csv");
  curve << "step,loss,lr\n";
  for (size_t i = 0; i < result.loss_curve.size(); ++i)
    curve << i << "," << format_double(result.loss_curve[i]) << ","
          << format_double(result.lr_curve[i]) << "\n";

  save_checkpoint(out_dir + "/checkpoint.bin", *model, cfg);
  std::cout << "checkpoint written to " << out_dir << "/checkpoint.bin\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, int views, double perturb_deg, double perturb_trans,
             int n_scenes, uint64_t seed, const std::string& out_dir) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  SceneSetSpec spec = train_scene_spec(ckpt.config);
  spec.n_scenes = n_scenes;
  spec.seed = seed;
  spec.n_views = views;
  spec.shared_layout = false;
  spec.perturb_rot_deg = perturb_deg;
  spec.perturb_trans_m = perturb_trans;
  const auto scenes = build_scene_set(ckpt.config.model, spec);
  const EvalReport report =
      evaluate_model(*ckpt.model, scenes, views, config_hash(ckpt.config));
  fs::create_directories(out_dir);
  write_eval_report(out_dir + "/report.csv", report, views, perturb_deg);
  std::cout << "scene MAE " << report.scene_mae << " NAE " << report.scene_nae
            << " | image MAE " << report.image_mae << " NAE " << report.image_nae << " ("
            << report.rows.size() << " scenes, " << report.runtime_s << " s)\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& toggles,
               const std::string& out_dir, int eval_scenes, uint64_t eval_seed) {
  const TrainConfig cfg = load_config(config_path);
  std::vector<std::string> combos;
  std::string cur;
  for (char c : toggles + ",") {
    if (c == ',') {
      if (!cur.empty()) combos.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (combos.empty()) throw config_error("ablate: no toggle combinations given");

  const auto train_set = build_scene_set(cfg.model, train_scene_spec(cfg));
  SceneSetSpec espec = train_scene_spec(cfg);
  espec.n_scenes = eval_scenes;
  espec.seed = eval_seed;
  espec.shared_layout = false;
  const auto eval_set = build_scene_set(cfg.model, espec);

  const auto rows = ablate(cfg, combos, train_set, eval_set, cfg.views_max, &std::cerr);
  fs::create_directories(out_dir);
  std::ofstream os(out_dir + "/ablation.csv");
  os << "toggles,scene_mae,scene_nae\n";
  for (const AblationRow& row : rows) {
    os << row.toggles << "," << format_double(row.mae) << "," << format_double(row.nae)
       << "\n";
    std::cout << row.toggles << " mae " << row.mae << " nae " << row.nae << "\n";
  }
  return 0;
}

int cmd_grad_check(const std::string& config_path) {
  const TrainConfig cfg = load_config(config_path);
  SceneSetSpec spec = train_scene_spec(cfg);
  spec.n_scenes = 1;
  const auto scenes = build_scene_set(cfg.model, spec);
  auto model = make_model(cfg);
  const GradCheckReport report = gradient_check(*model, scenes);
  std::cout << "checked " << report.entries_checked << " entries, max relative error "
            << report.max_rel_err << " at " << report.worst_param << "\n";
  if (report.max_rel_err > 1e-4) {
    std::cerr << "error: gradient check failed (max rel err " << report.max_rel_err << ")\n";
    return 2;
  }
  return 0;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& points_path,
                uint64_t scene_seed, int views, const std::string& out_path) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  SceneSetSpec spec = train_scene_spec(ckpt.config);
  spec.n_scenes = 1;
  spec.seed = scene_seed;
  spec.n_views = views > 0 ? views : ckpt.config.views_max;
  const auto scenes = build_scene_set(ckpt.config.model, spec);

  std::vector<Vec3> points;
  std::ifstream is(points_path);
  if (!is) throw domain_error("cannot open points file: " + points_path);
  std::string line;
  while (std::getline(is, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    Vec3 p;
    if (ss >> p.x >> p.y >> p.z) points.push_back(p);
  }
  if (points.empty()) throw domain_error("points file has no points");

  const auto rows = inspect_weights(*ckpt.model, scenes[0], spec.n_views, points);
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw domain_error("cannot write " + out_path);
    os = &file;
  }
  (*os) << "x,y,z,view_id,weight,hit\n";
  for (const WeightInspectionRow& row : rows)
    (*os) << format_double(row.point.x) << "," << format_double(row.point.y) << ","
          << format_double(row.point.z) << "," << row.view_id << ","
          << format_double(row.weight) << "," << (row.hit ? 1 : 0) << "\n";
  return 0;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  const TrainConfig cfg = load_config(config_path);
  const auto scenes = build_scene_set(cfg.model, train_scene_spec(cfg));
  const VoxelGrid grid = cfg.model.base_grid();
  fs::create_directories(out_dir);
  write_text(out_dir + "/config.resolved", serialize_config(cfg));
  char name[64];
  for (size_t i = 0; i < scenes.size(); ++i) {
    SceneDataset data;
    data.scene = scenes[i].scene;
    data.rigs = scenes[i].rigs;
    data.images = scenes[i].images;
    data.gt2d = scenes[i].gt.h2d;
    data.gt3d = scenes[i].gt.g3d;
    for (int l = 0; l < cfg.model.levels; ++l) data.gt3d_scale.push_back(grid.level(l).s);
    std::snprintf(name, sizeof(name), "/scene_%03zu", i);
    export_scene(out_dir + name, data);
  }
  std::cout << "exported " << scenes.size() << " scenes to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxcount: multi-view crowd counting on a voxel grid"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", ckpt_path, points_path, toggles;
  int views = 3, n_scenes = 10, steps_override = -1, eval_scenes = 10;
  double perturb_deg = 0.0, perturb_trans = 0.0;
  uint64_t seed = 9000, scene_seed = 9000, eval_seed = 9000;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "experiment config")->required();
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--steps", steps_override, "override step count");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on fresh scenes");
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval->add_option("--views", views, "number of test views");
  eval->add_option("--perturb-deg", perturb_deg, "extrinsic rotation noise bound (degrees)");
  eval->add_option("--perturb-trans", perturb_trans, "extrinsic translation noise bound (m)");
  eval->add_option("--scenes", n_scenes, "number of evaluation scenes");
  eval->add_option("--seed", seed, "evaluation scene seed");
  eval->add_option("--out", out_dir, "output directory");

  auto* ab = app.add_subcommand("ablate", "train/evaluate toggle combinations");
  ab->add_option("--config", config_path, "experiment config")->required();
  ab->add_option("--toggles", toggles, "comma list over {L,V,A,I}/'-', e.g. LVAI,-VAI")
      ->required();
  ab->add_option("--out", out_dir, "output directory");
  ab->add_option("--eval-scenes", eval_scenes, "number of evaluation scenes");
  ab->add_option("--eval-seed", eval_seed, "evaluation scene seed");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient check");
  gc->add_option("--config", config_path, "experiment config")->required();

  auto* iw = app.add_subcommand("inspect-weights", "dump aggregation weights at 3D points");
  iw->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  iw->add_option("--points", points_path, "text file with one 'x y z' per line")->required();
  iw->add_option("--scene-seed", scene_seed, "scene seed to rebuild");
  iw->add_option("--views", views, "number of views");
  std::string inspect_out;
  iw->add_option("--out", inspect_out, "CSV output path (default stdout)");

  auto* gd = app.add_subcommand("gen-data", "export the training scene set");
  gd->add_option("--config", config_path, "experiment config")->required();
  gd->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, out_dir, steps_override);
    if (eval->parsed())
      return cmd_eval(ckpt_path, views, perturb_deg, perturb_trans, n_scenes, seed, out_dir);
    if (ab->parsed()) return cmd_ablate(config_path, toggles, out_dir, eval_scenes, eval_seed);
    if (gc->parsed()) return cmd_grad_check(config_path);
    if (iw->parsed())
      return cmd_inspect(ckpt_path, points_path, scene_seed, views, inspect_out);
    if (gd->parsed()) return cmd_gen_data(config_path, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
