#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "voxrec/core.hpp"
#include "voxrec/grid.hpp"
#include "voxrec/radiance.hpp"
#include "voxrec/renderer.hpp"
#include "voxrec/scene.hpp"

namespace voxrec {

struct LossResult {
  double total = 0;
  double rgb = 0;
  double mask = 0;
  std::vector<Vec3> d_color;
  std::vector<double> d_sum_w;
};

// Per-ray L1 color error averaged over the batch, plus w_mask times a
// binary cross-entropy between the accumulated blend weight (clamped to
// [1e-6, 1-1e-6]) and the target mask. w_mask == 0 ignores the masks
// entirely. Gradients flow back per ray; the clamp zeroes them outside
// its range.
LossResult loss(const std::vector<Vec3>& pred, const std::vector<Vec3>& target,
                const std::vector<double>& sum_w,
                const std::vector<double>& mask, double w_mask);

// negative gradients of ln s are scaled by k, positive ones pass through
double amplify_s_gradient(double g, double k);

// Adam that visits only the entries with nonzero gradient this step and
// bias-corrects each entry by its own touch count.
struct SparseAdam {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;

  std::vector<double> m, v;
  std::vector<uint32_t> n;  // per-entry touch count

  void resize(int64_t count);
  int64_t size() const { return static_cast<int64_t>(m.size()); }
  void step(float* params, const GradAccum& grad);
  void step_one(int64_t i, double grad, double* param);
};

struct Schedules {
  int total_steps = 3000;
  std::vector<std::pair<int, int>> milestones;  // step -> grid resolution

  double w_eik_hi = 1e-2;
  double w_eik_lo = 1e-3;
  double w_curv_lo = 1e-8;
  double w_curv_hi = 5e-6;
  double w_curv_end = 5e-7;
  double k_s = 5.0;
  double w_mask = 0.1;

  double lr_grid = 1e-2;
  double lr_tables = 1e-2;
  double lr_decoder = 1e-3;
  double lr_lns = 1e-3;

  // phase boundaries: flat until 11/40 of the run, linear until 21/40,
  // then w_eik holds and w_curv decays geometrically to w_curv_end
  int flat_end() const;
  int linear_end() const;
};

// desk ladder: 32^3 at step 0, 64^3 at a third, 96^3 at two thirds
Schedules make_schedules(int total_steps = 3000);

struct ScheduleTick {
  double w_eik = 0;
  double w_curv = 0;
  int resolution = 0;  // nonzero when a milestone fires at this step
};
ScheduleTick schedule_tick(const Schedules& sched, int step);

struct TrainConfig {
  Schedules sched = make_schedules();
  RadianceConfig radiance;
  int batch = 1024;
  int n_samples = 128;
  int n_views = 24;
  int view_w = 96;
  int view_h = 96;
  double vfov_deg = 50.0;
  uint64_t seed = 0;
  bool interpolated = true;
  bool normal_grad = true;
  bool normalize_cos = true;
  bool deterministic = false;
  int threads = 0;
  double s_init = 20.0;
  double init_radius = 0.35;  // radius of the sphere the grid starts from
  double trans_cutoff = 1e-4;
  int stop_step = -1;       // pause the loop here and return; < 0 runs to the end
  std::string metrics_csv;  // per-step metrics written here when non-empty
};

struct TrainState {
  Grid3 grid;
  VertexGradientField<3> field;
  RadianceParams params;
  double lns = 0;
  SparseAdam opt_grid, opt_tables, opt_decoder, opt_lns;
  int step = 0;
  uint64_t seed = 0;
};

struct StepMetrics {
  int step = 0;
  double l_rgb = 0;
  double l_eik = 0;
  double l_curv = 0;
  double s = 0;
  double psnr = 0;
};

struct TrainResult {
  TrainState state;
  std::vector<StepMetrics> log;
};

// Renders the ground truth in memory, then optimizes the grid, the
// radiance field and ln s for sched.total_steps steps. Passing a resume
// state continues from state.step instead of initializing.
TrainResult train(const AnalyticScene& scene, const TrainConfig& cfg,
                  const TrainState* resume = nullptr);

// checkpoint: grid, radiance, ln s, step, seed and all optimizer state
void save_checkpoint(const std::string& path, const TrainState& st);
TrainState load_checkpoint(const std::string& path);

}  // namespace voxrec
