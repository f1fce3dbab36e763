#include "voxrec/cli.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "voxrec/diagnostics.hpp"
#include "voxrec/meshing.hpp"
#include "voxrec/regularizer.hpp"

namespace voxrec {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

json parse_json_text(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string(what) + ": bad json: " + e.what());
  }
}

double get_positive(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number() || !(v.get<double>() > 0))
    throw UsageError(std::string("run config: ") + key +
                     " must be a positive number");
  return v.get<double>();
}

std::string get_string(const json& j, const char* key,
                       const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_string())
    throw UsageError(std::string("run config: ") + key + " must be a string");
  return v.get<std::string>();
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  const json j = parse_json_text(text, "run config");
  if (!j.is_object())
    throw UsageError("run config: top level must be an object");

  static constexpr const char* known[] = {
      "subcommand", "scene",       "out",        "seed",       "deterministic",
      "gradient",   "threads",     "total_steps", "milestones", "w_eik_hi",
      "w_eik_lo",   "w_curv_lo",   "w_curv_hi",  "w_curv_end", "k_s",
      "w_mask",     "lr_grid",     "lr_tables",  "lr_decoder", "lr_lns"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || (it.key() == k);
    if (!ok) throw UsageError("run config: unknown key '" + it.key() + "'");
  }

  RunConfig rc;
  rc.subcommand = get_string(j, "subcommand", "");
  rc.scene = get_string(j, "scene", "");
  rc.out = get_string(j, "out", rc.out);

  if (j.contains("seed")) {
    const json& v = j.at("seed");
    if (!v.is_number_integer() ||
        (!v.is_number_unsigned() && v.get<int64_t>() < 0))
      throw UsageError("run config: seed must be a nonnegative integer");
    rc.seed = v.get<uint64_t>();
  }
  if (j.contains("deterministic")) {
    if (!j.at("deterministic").is_boolean())
      throw UsageError("run config: deterministic must be a boolean");
    rc.deterministic = j.at("deterministic").get<bool>();
  }
  if (j.contains("gradient")) {
    const std::string g = get_string(j, "gradient", "");
    if (g == "interpolated")
      rc.interpolated = true;
    else if (g == "analytical")
      rc.interpolated = false;
    else
      throw UsageError(
          "run config: gradient must be 'analytical' or 'interpolated'");
  }
  if (j.contains("threads")) {
    const json& v = j.at("threads");
    if (!v.is_number_integer() || v.get<int64_t>() < 0)
      throw UsageError("run config: threads must be a nonnegative integer");
    rc.threads = int(v.get<int64_t>());
  }

  int total = 3000;
  if (j.contains("total_steps")) {
    const json& v = j.at("total_steps");
    if (!v.is_number_integer() || v.get<int64_t>() < 1)
      throw UsageError("run config: total_steps must be a positive integer");
    total = int(v.get<int64_t>());
  }
  rc.sched = make_schedules(total);

  if (j.contains("milestones")) {
    const json& m = j.at("milestones");
    if (!m.is_array())
      throw UsageError(
          "run config: milestones must be an array of [step, resolution] "
          "pairs");
    std::vector<std::pair<int, int>> ms;
    for (const json& e : m) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() ||
          !e[1].is_number_integer())
        throw UsageError(
            "run config: milestones must be [step, resolution] integer pairs");
      const int64_t step = e[0].get<int64_t>();
      const int64_t res = e[1].get<int64_t>();
      if (step < 0 || step >= total)
        throw UsageError("run config: milestone step " + std::to_string(step) +
                         " is out of range for total_steps " +
                         std::to_string(total));
      if (res < 2)
        throw UsageError("run config: milestone resolution must be at least 2");
      if (!ms.empty()) {
        if (step <= ms.back().first)
          throw UsageError(
              "run config: milestone steps must be strictly increasing");
        if (res < ms.back().second)
          throw UsageError(
              "run config: milestone resolutions must not shrink");
      }
      ms.emplace_back(int(step), int(res));
    }
    rc.sched.milestones = std::move(ms);
  }

  rc.sched.w_eik_hi = get_positive(j, "w_eik_hi", rc.sched.w_eik_hi);
  rc.sched.w_eik_lo = get_positive(j, "w_eik_lo", rc.sched.w_eik_lo);
  rc.sched.w_curv_lo = get_positive(j, "w_curv_lo", rc.sched.w_curv_lo);
  rc.sched.w_curv_hi = get_positive(j, "w_curv_hi", rc.sched.w_curv_hi);
  rc.sched.w_curv_end = get_positive(j, "w_curv_end", rc.sched.w_curv_end);
  rc.sched.k_s = get_positive(j, "k_s", rc.sched.k_s);
  rc.sched.lr_grid = get_positive(j, "lr_grid", rc.sched.lr_grid);
  rc.sched.lr_tables = get_positive(j, "lr_tables", rc.sched.lr_tables);
  rc.sched.lr_decoder = get_positive(j, "lr_decoder", rc.sched.lr_decoder);
  rc.sched.lr_lns = get_positive(j, "lr_lns", rc.sched.lr_lns);
  if (j.contains("w_mask")) {
    const json& v = j.at("w_mask");
    if (!v.is_number() || v.get<double>() < 0)
      throw UsageError("run config: w_mask must be a nonnegative number");
    rc.sched.w_mask = v.get<double>();
  }
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

AnalyticScene resolve_scene(const std::string& spec) {
  if (spec.empty()) throw UsageError("a scene is required; pass --scene");
  if (spec == "sphere") return make_sphere_scene();
  if (spec == "box") return make_box_scene();
  if (spec == "torus") return make_torus_scene();
  if (spec == "plane") return make_textured_plane_scene();
  return load_scene(spec);
}

namespace {

// Flags shared by the subcommands that take a run config. Explicit flags win
// over config file keys, so the merge happens at the JSON level.
struct CommonFlags {
  std::string config;
  std::string scene;
  std::string out = ".";
  uint64_t seed = 0;
  bool deterministic = false;
  std::string gradient;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonFlags& cf) {
  cmd->add_option("--config", cf.config,
                  "JSON run config; explicit flags override its keys");
  cmd->add_option("--scene", cf.scene,
                  "preset (sphere, box, torus, plane) or scene spec path");
  cmd->add_option("--out", cf.out, "output directory");
  cmd->add_option("--seed", cf.seed, "RNG seed");
  cmd->add_flag("--deterministic", cf.deterministic,
                "single thread, reproducible outputs");
  cmd->add_option("--gradient", cf.gradient, "analytical | interpolated")
      ->check(CLI::IsMember({"analytical", "interpolated"}));
  cmd->add_option("--threads", cf.threads, "worker cap; 0 = hardware")
      ->check(CLI::NonNegativeNumber);
}

RunConfig merge_config(const CLI::App* cmd, const CommonFlags& cf,
                       const char* sub, int steps_flag) {
  json j = json::object();
  if (!cf.config.empty()) {
    std::ifstream f(cf.config);
    if (!f) throw IoError("cannot open " + cf.config);
    std::stringstream ss;
    ss << f.rdbuf();
    j = parse_json_text(ss.str(), "run config");
    if (!j.is_object())
      throw UsageError("run config: top level must be an object");
  }
  if (cmd->count("--scene")) j["scene"] = cf.scene;
  if (cmd->count("--out")) j["out"] = cf.out;
  if (cmd->count("--seed")) j["seed"] = cf.seed;
  if (cmd->count("--deterministic")) j["deterministic"] = cf.deterministic;
  if (cmd->count("--gradient")) j["gradient"] = cf.gradient;
  if (cmd->count("--threads")) j["threads"] = cf.threads;
  if (steps_flag > 0) j["total_steps"] = steps_flag;

  RunConfig rc = parse_run_config(j.dump());
  if (!rc.subcommand.empty() && rc.subcommand != sub)
    throw UsageError("run config: subcommand '" + rc.subcommand +
                     "' does not match '" + sub + "'");
  rc.subcommand = sub;
  if (rc.deterministic) rc.threads = 1;
  return rc;
}

void write_report(const json& rep, const std::string& path) {
  if (path.empty()) {
    std::printf("%s\n", rep.dump(2).c_str());
    return;
  }
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << rep.dump(2) << "\n";
  if (!f) throw IoError("write failed: " + path);
}

int cmd_gen(const RunConfig& rc, int views, int w, int h, double vfov) {
  const AnalyticScene scene = resolve_scene(rc.scene);
  const CameraRig rig = make_rig(scene, views, w, h, vfov);
  write_dataset(scene, rig, rc.out);
  std::printf("wrote %d views under %s\n", views, rc.out.c_str());
  return 0;
}

struct TrainFlags {
  int batch = 1024;
  int samples = 128;
  int views = 24;
  int width = 96;
  int height = 96;
  double s_init = 20.0;
  int stop_step = -1;
  std::string resume;
};

int cmd_train(const RunConfig& rc, const TrainFlags& tf) {
  const AnalyticScene scene = resolve_scene(rc.scene);
  std::filesystem::create_directories(rc.out);

  TrainConfig tc;
  tc.sched = rc.sched;
  tc.batch = tf.batch;
  tc.n_samples = tf.samples;
  tc.n_views = tf.views;
  tc.view_w = tf.width;
  tc.view_h = tf.height;
  tc.s_init = tf.s_init;
  tc.seed = rc.seed;
  tc.interpolated = rc.interpolated;
  tc.deterministic = rc.deterministic;
  tc.threads = rc.threads;
  tc.stop_step = tf.stop_step;
  tc.metrics_csv = rc.out + "/metrics.csv";

  TrainResult res;
  if (!tf.resume.empty()) {
    const TrainState st = load_checkpoint(tf.resume);
    res = train(scene, tc, &st);
  } else {
    res = train(scene, tc);
  }

  const std::string ckpt = rc.out + "/checkpoint.bin";
  save_checkpoint(ckpt, res.state);
  if (!res.log.empty()) {
    const StepMetrics& m = res.log.back();
    std::printf("step %d  L_RGB %.6f  psnr %.2f  s %.2f\n", m.step, m.l_rgb,
                m.psnr, m.s);
  }
  std::printf("checkpoint %s\nmetrics %s\n", ckpt.c_str(),
              tc.metrics_csv.c_str());
  return 0;
}

int cmd_mesh(const std::string& ckpt, const std::string& out, double sigma,
             double level, int threads) {
  if (sigma < 0) throw UsageError("mesh: --sigma must be nonnegative");
  const TrainState st = load_checkpoint(ckpt);
  const Grid3 grid = gaussian_filter(st.grid, sigma, threads);
  const TriangleMesh mesh = marching_cubes(grid, level, threads);
  save_ply(mesh, out);
  std::printf("%zu vertices, %zu triangles -> %s\n", mesh.vertices.size(),
              mesh.tris.size(), out.c_str());
  return 0;
}

struct EvalFlags {
  std::string mesh;
  std::string checkpoint;
  std::string ref_mesh;
  std::string report;
  int gt_res = 96;
  int points = 20000;
  double sigma = 0;
  double level = 0;
};

int cmd_eval(const RunConfig& rc, const EvalFlags& ef) {
  if (ef.mesh.empty() == ef.checkpoint.empty())
    throw UsageError("eval: pass exactly one of --mesh or --checkpoint");

  TriangleMesh subject;
  std::string subject_name;
  if (!ef.mesh.empty()) {
    subject = load_ply(ef.mesh);
    subject_name = ef.mesh;
  } else {
    const TrainState st = load_checkpoint(ef.checkpoint);
    subject =
        marching_cubes(gaussian_filter(st.grid, ef.sigma, rc.threads),
                       ef.level, rc.threads);
    subject_name = ef.checkpoint;
  }

  TriangleMesh ref;
  std::string ref_name;
  if (!ef.ref_mesh.empty()) {
    ref = load_ply(ef.ref_mesh);
    ref_name = ef.ref_mesh;
  } else {
    const AnalyticScene scene = resolve_scene(rc.scene);
    const Grid3 gt = bake_grid(scene, {ef.gt_res, ef.gt_res, ef.gt_res});
    ref = marching_cubes(gt, 0.0, rc.threads);
    ref_name = "scene:" + rc.scene;
  }

  const std::vector<Vec3> a = sample_surface(subject, ef.points, rc.seed);
  const std::vector<Vec3> b = sample_surface(ref, ef.points, rc.seed);
  const double ch = chamfer(a, b);

  json rep;
  rep["chamfer"] = ch;
  rep["points"] = ef.points;
  rep["mesh"] = subject_name;
  rep["reference"] = ref_name;
  std::printf("chamfer %.6g\n", ch);
  if (!ef.report.empty()) write_report(rep, ef.report);
  return 0;
}

struct DiagnoseFlags {
  int res = 16;
  int samples = 256;
  int trials = 120;
  int probe_res = 16;
};

int cmd_diagnose(const RunConfig& rc, const DiagnoseFlags& df) {
  std::filesystem::create_directories(rc.out);

  // 3D part: two-sided gradient limits at random interior faces of the
  // baked scene grid, for both estimators.
  const AnalyticScene scene =
      resolve_scene(rc.scene.empty() ? "sphere" : rc.scene);
  const Grid3 grid =
      bake_grid(scene, {df.probe_res, df.probe_res, df.probe_res});
  Rng rng(mix_seed(rc.seed, 0x64696167));
  double gap_a = 0, gap_i = 0;
  std::ofstream jf(rc.out + "/junction_trials.csv");
  if (!jf) throw IoError("cannot open " + rc.out + "/junction_trials.csv");
  jf << "trial,axis,plane,gap_analytical,gap_interpolated\n";
  for (int trial = 0; trial < df.trials; ++trial) {
    const int axis = int(rng.below(3));
    const int plane = 1 + int(rng.below(uint64_t(grid.res[axis] - 2)));
    Vec3 p;
    for (int k = 0; k < 3; ++k)
      p[k] = grid.origin[k] +
             rng.uniform(0.6, double(grid.res[k]) - 1.6) * grid.spacing;
    const JunctionProbe jp = probe_junction(grid, axis, plane, p);
    const double ga = norm(jp.grad_a_left - jp.grad_a_right);
    const double gi = norm(jp.grad_i_left - jp.grad_i_right);
    gap_a = std::max(gap_a, ga);
    gap_i = std::max(gap_i, gi);
    jf << trial << ',' << axis << ',' << plane << ',' << ga << ',' << gi
       << '\n';
  }
  if (!jf) throw IoError("write failed: " + rc.out + "/junction_trials.csv");
  jf.close();

  // 2D part: weight curves along a center ray and a grazing chord of the
  // circle scene, plus a 2x refined grazing trace.
  const Grid2 circle = bake_circle(df.res);
  const double s = 4.0 / circle.spacing;
  const Vec2 cdir = normalized(make_vec2(2, 1));
  const RayTrace2D center =
      trace_ray_2d(circle, make_vec2(-1.6, -0.8), cdir, df.samples, s);
  const RayTrace2D grazing = trace_ray_2d(circle, make_vec2(-2, 0.66),
                                          make_vec2(1, 0), df.samples, s);
  const RayTrace2D fine = trace_ray_2d(circle, make_vec2(-2, 0.66),
                                       make_vec2(1, 0), 2 * df.samples, s);
  write_trace_csv(center, rc.out + "/trace_center.csv");
  write_trace_csv(grazing, rc.out + "/trace_grazing.csv");
  write_trace_csv(fine, rc.out + "/trace_grazing_fine.csv");

  const double glitch_a = glitch_metric(grazing, true);
  const double glitch_i = glitch_metric(grazing, false);

  json rep;
  rep["max_analytical_gap"] = gap_a;
  rep["max_interpolated_gap"] = gap_i;
  rep["glitch_metric_analytical"] = glitch_a;
  rep["glitch_metric_interpolated"] = glitch_i;
  rep["glitch_metric_ratio"] = glitch_a / std::max(glitch_i, 1e-300);
  rep["trials"] = df.trials;
  rep["samples"] = df.samples;
  write_report(rep, rc.out + "/report.json");
  std::printf(
      "max gap: analytical %.3g, interpolated %.3g; glitch ratio %.2f\n",
      gap_a, gap_i, glitch_a / std::max(glitch_i, 1e-300));
  return 0;
}

struct BenchFlags {
  int res = 64;
  int batch = 2048;
  int reps = 5;
  std::string mode = "all";
  std::string report;
};

double max_rel_gap(const GradAccum& a, const GradAccum& b) {
  double worst = 0;
  for (int64_t i : a.touched)
    worst = std::max(worst, std::abs(a.g[size_t(i)] - b.g[size_t(i)]) /
                                std::max({1e-12, std::abs(a.g[size_t(i)]),
                                          std::abs(b.g[size_t(i)])}));
  for (int64_t i : b.touched)
    worst = std::max(worst, std::abs(a.g[size_t(i)] - b.g[size_t(i)]) /
                                std::max({1e-12, std::abs(a.g[size_t(i)]),
                                          std::abs(b.g[size_t(i)])}));
  return worst;
}

int cmd_bench_reg(const RunConfig& rc, const BenchFlags& bf) {
  if (bf.res < 3) throw UsageError("bench-reg: --res must be at least 3");
  if (bf.batch < 1 || bf.reps < 1)
    throw UsageError("bench-reg: --batch and --reps must be positive");

  Aabb3 box;
  box.lo = make_vec3(-1, -1, -1);
  box.hi = make_vec3(1, 1, 1);
  Grid3 grid = make_grid<3>({bf.res, bf.res, bf.res}, box);
  Rng rng(mix_seed(rc.seed, 0x62656e63));
  for (float& v : grid.values) v = float(rng.uniform(-0.5, 0.5));
  std::vector<Vec3> pts(size_t(bf.batch));
  for (Vec3& p : pts)
    for (int k = 0; k < 3; ++k) p[k] = rng.uniform(-0.95, 0.95);

  const int t_eff = rc.threads > 0 ? rc.threads : omp_get_max_threads();
  const VertexGradientField<3> field = vertex_gradients(grid, t_eff);
  const int64_t n = grid.num_vertices();

  GradAccum base, g_eik, g_curv;
  base.resize(n);
  g_eik.resize(n);
  g_curv.resize(n);

  TapeStats stats;
  auto run_mode = [&](const std::string& mode, GradAccum& out_eik,
                      GradAccum& out_curv) {
    base.clear();
    out_eik.clear();
    out_curv.clear();
    const std::vector<int64_t> vr = collect_vertices(grid, pts);
    if (mode == "tape") {
      regularize_tape(grid, vr, out_eik, out_curv, &stats);
    } else {
      const int t = mode == "serial" ? 1 : t_eff;
      eikonal(grid, field, vr, out_eik, t);
      curvature(grid, vr, out_curv, t);
    }
    accumulate(base, out_eik, out_curv, 1e-2, 1e-8);
  };

  // one evaluation of every mode up front: the three implementations must
  // agree before any timing is worth reporting
  GradAccum te, tcv, se, scv, pe, pcv;
  for (GradAccum* g : {&te, &tcv, &se, &scv, &pe, &pcv}) g->resize(n);
  run_mode("tape", te, tcv);
  run_mode("serial", se, scv);
  run_mode("parallel", pe, pcv);
  const double rel = std::max(
      {max_rel_gap(te, se), max_rel_gap(tcv, scv), max_rel_gap(te, pe),
       max_rel_gap(tcv, pcv)});
  const bool match = rel <= 1e-6;

  const size_t manual_bytes =
      3 * size_t(n) * (sizeof(double) + 1) + pts.size() * sizeof(Vec3);
  json modes = json::object();
  auto bench = [&](const char* name, const std::string& mode) {
    const auto t0 = Clock::now();
    for (int r = 0; r < bf.reps; ++r) run_mode(mode, g_eik, g_curv);
    const double sec =
        std::chrono::duration<double>(Clock::now() - t0).count() / bf.reps;
    json m;
    m["seconds_per_batch"] = sec;
    m["batches_per_s"] = sec > 0 ? 1.0 / sec : 0.0;
    m["peak_bytes"] =
        mode == "tape" ? stats.bytes + manual_bytes : manual_bytes;
    modes[name] = m;
  };
  if (bf.mode == "all" || bf.mode == "tape") bench("tape_oracle", "tape");
  if (bf.mode == "all" || bf.mode == "serial")
    bench("manual_serial", "serial");
  if (bf.mode == "all" || bf.mode == "parallel")
    bench("manual_parallel", "parallel");

  json rep;
  rep["res"] = bf.res;
  rep["batch"] = bf.batch;
  rep["reps"] = bf.reps;
  rep["threads"] = t_eff;
  rep["modes"] = modes;
  rep["max_rel_diff"] = rel;
  rep["grads_match"] = match;
  write_report(rep, bf.report);
  if (!bf.report.empty())
    std::printf("max rel diff %.3g (%s)\n", rel,
                match ? "match" : "MISMATCH");
  if (!match) throw ShapeMismatch("bench-reg: mode gradients disagree");
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"dense-grid surface reconstruction via volume rendering"};
  app.require_subcommand(1);

  CLI::App* gen = app.add_subcommand("gen", "render a synthetic dataset");
  CommonFlags gen_cf;
  add_common(gen, gen_cf);
  int gen_views = 8, gen_w = 64, gen_h = 64;
  double gen_vfov = 50;
  gen->add_option("--views", gen_views, "camera count")
      ->check(CLI::Range(2, 1024));
  gen->add_option("--width", gen_w, "image width")->check(CLI::PositiveNumber);
  gen->add_option("--height", gen_h, "image height")
      ->check(CLI::PositiveNumber);
  gen->add_option("--vfov", gen_vfov, "vertical field of view, degrees");

  CLI::App* tr = app.add_subcommand("train", "optimize a grid on a scene");
  CommonFlags tr_cf;
  add_common(tr, tr_cf);
  TrainFlags tf;
  int tr_steps = 0;
  tr->add_option("--steps", tr_steps, "total steps; overrides the config")
      ->check(CLI::PositiveNumber);
  tr->add_option("--batch", tf.batch, "rays per step")
      ->check(CLI::PositiveNumber);
  tr->add_option("--samples", tf.samples, "samples per ray")
      ->check(CLI::PositiveNumber);
  tr->add_option("--views", tf.views, "training cameras")
      ->check(CLI::Range(2, 1024));
  tr->add_option("--width", tf.width, "view width")
      ->check(CLI::PositiveNumber);
  tr->add_option("--height", tf.height, "view height")
      ->check(CLI::PositiveNumber);
  tr->add_option("--s-init", tf.s_init, "initial sigmoid sharpness")
      ->check(CLI::PositiveNumber);
  tr->add_option("--stop-step", tf.stop_step,
                 "checkpoint and return at this step");
  tr->add_option("--resume", tf.resume, "checkpoint to continue from");

  CLI::App* me = app.add_subcommand("mesh", "extract a mesh from a checkpoint");
  std::string me_ckpt, me_out;
  double me_sigma = 0, me_level = 0;
  int me_threads = 0;
  bool me_det = false;
  me->add_option("--checkpoint", me_ckpt, "trained checkpoint")->required();
  me->add_option("--out", me_out, "output PLY path")->required();
  me->add_option("--sigma", me_sigma, "Gaussian smoothing radius, world units");
  me->add_option("--level", me_level, "iso level");
  me->add_option("--threads", me_threads, "worker cap; 0 = hardware")
      ->check(CLI::NonNegativeNumber);
  me->add_flag("--deterministic", me_det, "single thread");

  CLI::App* ev = app.add_subcommand("eval", "Chamfer distance report");
  CommonFlags ev_cf;
  add_common(ev, ev_cf);
  EvalFlags ef;
  ev->add_option("--mesh", ef.mesh, "mesh to evaluate");
  ev->add_option("--checkpoint", ef.checkpoint, "checkpoint to evaluate");
  ev->add_option("--ref-mesh", ef.ref_mesh,
                 "reference mesh; defaults to the baked scene");
  ev->add_option("--report", ef.report, "write the report JSON here");
  ev->add_option("--gt-res", ef.gt_res, "bake resolution for the reference")
      ->check(CLI::Range(4, 1024));
  ev->add_option("--points", ef.points, "surface samples per side")
      ->check(CLI::PositiveNumber);
  ev->add_option("--sigma", ef.sigma, "smoothing before extraction");
  ev->add_option("--level", ef.level, "iso level for --checkpoint");

  CLI::App* di = app.add_subcommand(
      "diagnose", "gradient junction gaps and weight-curve traces");
  CommonFlags di_cf;
  add_common(di, di_cf);
  DiagnoseFlags df;
  di->add_option("--res", df.res, "circle grid resolution")
      ->check(CLI::Range(4, 4096));
  di->add_option("--samples", df.samples, "samples per ray")
      ->check(CLI::Range(16, 1 << 20));
  di->add_option("--trials", df.trials, "junction probes")
      ->check(CLI::PositiveNumber);
  di->add_option("--probe-res", df.probe_res, "3D probe grid resolution")
      ->check(CLI::Range(4, 4096));

  CLI::App* be = app.add_subcommand(
      "bench-reg", "regularizer timing against the tape oracle");
  CommonFlags be_cf;
  add_common(be, be_cf);
  BenchFlags bf;
  be->add_option("--res", bf.res, "grid resolution")
      ->check(CLI::Range(3, 1024));
  be->add_option("--batch", bf.batch, "sample batch size")
      ->check(CLI::PositiveNumber);
  be->add_option("--reps", bf.reps, "timed repetitions")
      ->check(CLI::PositiveNumber);
  be->add_option("--mode", bf.mode, "tape | serial | parallel | all")
      ->check(CLI::IsMember({"tape", "serial", "parallel", "all"}));
  be->add_option("--report", bf.report, "write the report JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen(merge_config(gen, gen_cf, "gen", 0), gen_views, gen_w,
                     gen_h, gen_vfov);
    if (tr->parsed())
      return cmd_train(merge_config(tr, tr_cf, "train", tr_steps), tf);
    if (me->parsed())
      return cmd_mesh(me_ckpt, me_out, me_sigma, me_level,
                      me_det ? 1 : me_threads);
    if (ev->parsed()) return cmd_eval(merge_config(ev, ev_cf, "eval", 0), ef);
    if (di->parsed())
      return cmd_diagnose(merge_config(di, di_cf, "diagnose", 0), df);
    if (be->parsed())
      return cmd_bench_reg(merge_config(be, be_cf, "bench-reg", 0), bf);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 1;
}

}  // namespace voxrec
