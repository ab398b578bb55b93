#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include "voxcount/model.hpp"
#include "voxcount/optim.hpp"

namespace voxcount {

// ---- metrics ----

double mae(const std::vector<double>& preds, const std::vector<double>& gts);
double nae(const std::vector<double>& preds, const std::vector<double>& gts);

// ---- experiment configuration ----

// Full experiment description: architecture, loss, optimizer, and the scene
// distribution. Serializes to a flat key=value text format.
struct TrainConfig {
  ModelConfig model;

  std::string optimizer = "adam";      // adam | sgd
  double lr = 4e-3;
  double adam_beta2 = 0.999;
  double grad_clip = 0.0;   // global gradient-norm clip; 0 disables
  int warmup_steps = 0;     // 0 = steps/20
  std::string lr_schedule = "cosine";  // cosine | constant
  int steps = 400;

  int train_scenes = 8;
  int people_min = 16, people_max = 24;
  TerrainKind terrain = TerrainKind::Flat;
  int occluders = 1;
  bool fixed_occluders = false;  // share one sampled occluder set across scenes
  bool congested = false;
  bool shared_layout = true;  // one camera set shared across training scenes

  int views_min = 3, views_max = 3;  // equal = fixed; else U(a,b) per step

  uint64_t seed = 1234;

  void validate() const;
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
std::string serialize_config(const TrainConfig& cfg);  // canonical ordering
std::string config_hash(const TrainConfig& cfg);       // FNV-1a over the text

// ---- scene sets ----

struct TrainScene {
  Scene scene;
  std::vector<CameraRig> rigs;  // layout with the maximum view count
  std::vector<Tensor> images;   // rendered once per scene
  GroundTruth gt;               // 3D per level; 2D/visible counts per rig
};

struct SceneSetSpec {
  int n_scenes = 8;
  uint64_t seed = 1;
  int n_views = 3;
  int people_min = 16, people_max = 24;
  TerrainKind terrain = TerrainKind::Flat;
  int occluders = 0;
  bool fixed_occluders = false;
  bool congested = false;
  bool shared_layout = false;
  double perturb_rot_deg = 0.0, perturb_trans_m = 0.0;
  std::optional<LayoutSpec> layout_override;
  // Used verbatim in every scene when non-empty (overrides occluder count
  // and the fixed_occluders sampling).
  std::vector<Occluder> preset_occluders;
};

std::vector<TrainScene> build_scene_set(const ModelConfig& model, const SceneSetSpec& spec);
SceneSetSpec train_scene_spec(const TrainConfig& cfg);

// ---- training ----

struct TrainResult {
  std::vector<double> loss_curve;
  std::vector<double> lr_curve;
};

// Deterministic given (config, scene set, model state). Aborts with
// numeric_error diagnostics if the loss turns non-finite.
TrainResult train_model(CountingModel& model, const TrainConfig& cfg,
                        const std::vector<TrainScene>& scenes, std::ostream* progress = nullptr);

// ---- evaluation ----

struct EvalRow {
  int scene_idx = 0;
  double gt = 0.0;
  double pred = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double scene_mae = 0.0, scene_nae = 0.0;
  double image_mae = 0.0, image_nae = 0.0;
  double runtime_s = 0.0;
  std::string config_hash;
};

// Inference over a scene set using the first n_views rigs of each scene.
// Never mutates model parameters.
EvalReport evaluate_model(CountingModel& model, const std::vector<TrainScene>& scenes,
                          int n_views, const std::string& cfg_hash);

void write_eval_report(const std::string& path, const EvalReport& report, int n_views,
                       double perturb_deg);  // append-only CSV

// ---- checkpoints ----

void save_checkpoint(const std::string& path, CountingModel& model, const TrainConfig& cfg);

struct LoadedCheckpoint {
  TrainConfig config;
  std::unique_ptr<CountingModel> model;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

// Fresh model built deterministically from the config.
std::unique_ptr<CountingModel> make_model(const TrainConfig& cfg);

// ---- protocols ----

// Applies a 4-character toggle combo over {L, V, A, I} ('-' = off) to the
// model config, e.g. "LVAI" (full model) or "-VAI" (IPM lifting).
ModelConfig apply_toggles(const ModelConfig& base, const std::string& combo);

struct AblationRow {
  std::string toggles;
  double mae = 0.0, nae = 0.0;
};

// Trains and evaluates one model per toggle combination.
std::vector<AblationRow> ablate(const TrainConfig& cfg, const std::vector<std::string>& combos,
                                const std::vector<TrainScene>& train_set,
                                const std::vector<TrainScene>& eval_set, int eval_views,
                                std::ostream* progress = nullptr);

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t entries_checked = 0;
  std::string worst_param;
};

// Backprop vs central differences over every parameter entry of a model on
// one scene. Parameters are nudged to a generic point first so the
// zero-initialized attention predictors have nonzero gradients.
GradCheckReport gradient_check(CountingModel& model, const std::vector<TrainScene>& scenes,
                               double eps = 1e-6, double fd_floor = 1e-6);

struct WeightInspectionRow {
  Vec3 point;
  int view_id = 0;
  double weight = 0.0;
  bool hit = false;
};

// Reads the finest-level aggregation weights at the voxels containing the
// query points (one row per point per view).
std::vector<WeightInspectionRow> inspect_weights(CountingModel& model, const TrainScene& scene,
                                                 int n_views, const std::vector<Vec3>& points);

}  // namespace voxcount
