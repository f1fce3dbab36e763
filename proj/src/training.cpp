#include "voxrec/training.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "voxrec/regularizer.hpp"

namespace voxrec {

LossResult loss(const std::vector<Vec3>& pred, const std::vector<Vec3>& target,
                const std::vector<double>& sum_w,
                const std::vector<double>& mask, double w_mask) {
  if (pred.size() != target.size())
    throw ShapeMismatch("loss: prediction/target batch sizes differ");
  const bool use_mask = w_mask != 0.0 && !mask.empty();
  if (use_mask && (sum_w.size() != pred.size() || mask.size() != pred.size()))
    throw ShapeMismatch("loss: mask columns do not match the batch");

  LossResult r;
  const size_t b = pred.size();
  r.d_color.assign(b, make_vec3(0, 0, 0));
  r.d_sum_w.assign(b, 0.0);
  if (b == 0) return r;

  const double inv = 1.0 / (3.0 * double(b));
  for (size_t i = 0; i < b; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double d = pred[i][c] - target[i][c];
      r.rgb += std::abs(d) * inv;
      r.d_color[i][c] = d > 0 ? inv : d < 0 ? -inv : 0.0;
    }
  }
  if (use_mask) {
    const double lo = 1e-6, hi = 1.0 - 1e-6;
    for (size_t i = 0; i < b; ++i) {
      const double w = std::clamp(sum_w[i], lo, hi);
      r.mask -= (mask[i] * std::log(w) + (1.0 - mask[i]) * std::log1p(-w)) /
                double(b);
      if (sum_w[i] > lo && sum_w[i] < hi)
        r.d_sum_w[i] = w_mask * (w - mask[i]) / (w * (1.0 - w)) / double(b);
    }
  }
  r.total = r.rgb + w_mask * r.mask;
  return r;
}

double amplify_s_gradient(double g, double k) { return g < 0 ? k * g : g; }

void SparseAdam::resize(int64_t count) {
  m.assign(size_t(count), 0.0);
  v.assign(size_t(count), 0.0);
  n.assign(size_t(count), 0);
}

void SparseAdam::step_one(int64_t i, double grad, double* param) {
  n[i] += 1;
  m[i] = beta1 * m[i] + (1.0 - beta1) * grad;
  v[i] = beta2 * v[i] + (1.0 - beta2) * grad * grad;
  const double mh = m[i] / (1.0 - std::pow(beta1, double(n[i])));
  const double vh = v[i] / (1.0 - std::pow(beta2, double(n[i])));
  *param -= lr * mh / (std::sqrt(vh) + eps);
}

void SparseAdam::step(float* params, const GradAccum& grad) {
  for (int64_t i : grad.touched) {
    const double g = grad.g[i];
    if (g == 0.0) continue;
    double p = params[i];
    step_one(i, g, &p);
    params[i] = float(p);
  }
}

int Schedules::flat_end() const {
  return int(std::llround(total_steps * 11.0 / 40.0));
}
int Schedules::linear_end() const {
  return int(std::llround(total_steps * 21.0 / 40.0));
}

Schedules make_schedules(int total_steps) {
  Schedules s;
  s.total_steps = total_steps;
  s.milestones.push_back({0, 32});
  const int t1 = total_steps / 3, t2 = 2 * total_steps / 3;
  if (t1 > 0) s.milestones.push_back({t1, 64});
  if (t2 > t1) s.milestones.push_back({t2, 96});
  return s;
}

ScheduleTick schedule_tick(const Schedules& s, int step) {
  ScheduleTick t;
  const int t1 = s.flat_end(), t2 = s.linear_end();
  if (step <= t1 || t2 <= t1) {
    t.w_eik = s.w_eik_hi;
    t.w_curv = s.w_curv_lo;
  } else if (step <= t2) {
    const double u = double(step - t1) / double(t2 - t1);
    t.w_eik = s.w_eik_hi + (s.w_eik_lo - s.w_eik_hi) * u;
    t.w_curv = s.w_curv_lo + (s.w_curv_hi - s.w_curv_lo) * u;
  } else {
    t.w_eik = s.w_eik_lo;
    if (s.total_steps <= t2) {
      t.w_curv = s.w_curv_end;
    } else {
      const double u = double(step - t2) / double(s.total_steps - t2);
      t.w_curv = s.w_curv_hi * std::pow(s.w_curv_end / s.w_curv_hi, u);
    }
  }
  for (const auto& [ms, res] : s.milestones)
    if (ms == step) t.resolution = res;
  return t;
}

namespace {

struct PixelRay {
  Ray ray;
  Vec3 color;
  double mask = 0;
};

std::vector<PixelRay> build_pool(const AnalyticScene& scene,
                                 const TrainConfig& cfg) {
  std::vector<PixelRay> pool;
  const CameraRig rig =
      make_rig(scene, cfg.n_views, cfg.view_w, cfg.view_h, cfg.vfov_deg);
  for (const Camera& cam : rig.cams) {
    const RenderedView view = render_ground_truth(scene, cam, cfg.threads);
    for (int y = 0; y < cam.h; ++y) {
      for (int x = 0; x < cam.w; ++x) {
        try {
          PixelRay pr;
          pr.ray = make_ray(cam.pos, cam.ray_dir(x, y), scene.box);
          pr.color = view.image.get(x, y);
          pr.mask = view.mask[size_t(y) * size_t(cam.w) + size_t(x)];
          pool.push_back(pr);
        } catch (const NoIntersection&) {
        }
      }
    }
  }
  if (pool.empty()) throw EmptySet("no training ray intersects the grid box");
  return pool;
}

TrainState init_state(const AnalyticScene& scene, const TrainConfig& cfg) {
  TrainState st;
  st.seed = cfg.seed;
  const int res0 =
      cfg.sched.milestones.empty() ? 32 : cfg.sched.milestones.front().second;
  st.grid = make_grid<3>({res0, res0, res0}, scene.box);
  const Vec3 center = 0.5 * (scene.box.lo + scene.box.hi);
  for (int64_t i = 0; i < st.grid.num_vertices(); ++i) {
    const Vec3 p = st.grid.vertex_pos(st.grid.unflat(i));
    st.grid.values[i] = float(norm(p - center) - cfg.init_radius);
  }
  st.field = vertex_gradients(st.grid, cfg.threads);
  st.params = make_radiance(scene.box, cfg.seed, cfg.radiance);
  st.lns = std::log(cfg.s_init);
  st.opt_grid.resize(st.grid.num_vertices());
  st.opt_tables.resize(int64_t(st.params.tables.size()));
  st.opt_decoder.resize(int64_t(st.params.decoder.size()));
  st.opt_lns.resize(1);
  return st;
}

void reset_or_clear(GradAccum& acc, int64_t n) {
  if (int64_t(acc.g.size()) != n)
    acc.resize(n);
  else
    acc.clear();
}

}  // namespace

TrainResult train(const AnalyticScene& scene, const TrainConfig& cfg,
                  const TrainState* resume) {
  TrainResult out;
  out.state = resume ? *resume : init_state(scene, cfg);
  TrainState& st = out.state;
  st.opt_grid.lr = cfg.sched.lr_grid;
  st.opt_tables.lr = cfg.sched.lr_tables;
  st.opt_decoder.lr = cfg.sched.lr_decoder;
  st.opt_lns.lr = cfg.sched.lr_lns;

  const std::vector<PixelRay> pool = build_pool(scene, cfg);

  RenderConfig rc;
  rc.n_samples = cfg.n_samples;
  rc.interpolated = cfg.interpolated;
  rc.normalize_cos = cfg.normalize_cos;
  rc.normal_grad = cfg.normal_grad;
  rc.trans_cutoff = cfg.trans_cutoff;
  rc.background = scene.background;

  const int t_eff = cfg.deterministic
                        ? 1
                        : (cfg.threads > 0 ? cfg.threads : omp_get_max_threads());

  std::ofstream csv;
  if (!cfg.metrics_csv.empty()) {
    csv.open(cfg.metrics_csv);
    if (!csv) throw IoError("cannot open " + cfg.metrics_csv + " for writing");
    csv << "step,L_RGB,L_eik,L_curv,s,psnr\n";
  }

  GradAccum g_grid, g_tables, g_decoder, g_eik, g_curv;
  const int chunk = 64;
  std::vector<RaySegments> segs(chunk);
  std::vector<int64_t> picks(size_t(cfg.batch));
  std::vector<Vec3> cp(chunk), ct(chunk);
  std::vector<double> cw(chunk), cm(chunk);
  std::vector<Vec3> points;
  points.reserve(size_t(cfg.batch) * size_t(cfg.n_samples));

  const int until = cfg.stop_step >= 0
                        ? std::min(cfg.stop_step, cfg.sched.total_steps)
                        : cfg.sched.total_steps;
  for (; st.step < until; ++st.step) {
    const ScheduleTick tick = schedule_tick(cfg.sched, st.step);
    if (tick.resolution && tick.resolution != st.grid.res[0]) {
      st.grid = upsample(
          st.grid, {tick.resolution, tick.resolution, tick.resolution},
          cfg.threads);
      st.field = vertex_gradients(st.grid, cfg.threads);
      st.opt_grid.resize(st.grid.num_vertices());
    }
    reset_or_clear(g_grid, st.grid.num_vertices());
    reset_or_clear(g_tables, int64_t(st.params.tables.size()));
    reset_or_clear(g_decoder, int64_t(st.params.decoder.size()));

    Rng pick(mix_seed(st.seed, 0x626174, uint64_t(st.step)));
    for (int i = 0; i < cfg.batch; ++i)
      picks[i] = int64_t(pick.below(uint64_t(pool.size())));

    double l_rgb = 0, d_lns = 0, mse = 0;
    points.clear();

    for (int c0 = 0; c0 < cfg.batch; c0 += chunk) {
      const int nc = std::min(chunk, cfg.batch - c0);
#pragma omp parallel for schedule(dynamic, 4) num_threads(t_eff)
      for (int i = 0; i < nc; ++i) {
        Rng jit(mix_seed(st.seed ^ 0x6a6974, uint64_t(st.step),
                         uint64_t(c0 + i)));
        segs[i] = render_ray(st.grid, st.field, st.params, st.lns,
                             pool[picks[c0 + i]].ray, rc, &jit);
      }

      cp.resize(nc);
      ct.resize(nc);
      cw.resize(nc);
      cm.resize(nc);
      for (int i = 0; i < nc; ++i) {
        const PixelRay& pr = pool[picks[c0 + i]];
        cp[i] = segs[i].out;
        ct[i] = pr.color;
        cw[i] = segs[i].sum_w;
        cm[i] = pr.mask;
      }
      const LossResult lr = loss(cp, ct, cw, cm, cfg.sched.w_mask);
      const double scale = double(nc) / double(cfg.batch);
      l_rgb += lr.rgb * scale;
      for (int i = 0; i < nc; ++i) {
        for (int c = 0; c < 3; ++c) mse += sq(cp[i][c] - ct[i][c]);
        backprop_ray(st.grid, st.params, st.lns, rc, segs[i],
                     scale * lr.d_color[i], scale * lr.d_sum_w[i], g_grid,
                     g_tables, g_decoder, d_lns);
        for (int k = 0; k < segs[i].n_used; ++k)
          points.push_back(segs[i].ray.o + segs[i].t[k] * segs[i].ray.v);
      }
    }

    const std::vector<int64_t> vr = collect_vertices(st.grid, points);
    reset_or_clear(g_eik, st.grid.num_vertices());
    reset_or_clear(g_curv, st.grid.num_vertices());
    const double l_eik = eikonal(st.grid, st.field, vr, g_eik, 1);
    const double l_curv = curvature(st.grid, vr, g_curv, 1);
    accumulate(g_grid, g_eik, g_curv, tick.w_eik, tick.w_curv);

    st.opt_grid.step(st.grid.values.data(), g_grid);
    st.opt_tables.step(st.params.tables.data(), g_tables);
    st.opt_decoder.step(st.params.decoder.data(), g_decoder);
    const double ds = amplify_s_gradient(d_lns, cfg.sched.k_s);
    if (ds != 0.0) st.opt_lns.step_one(0, ds, &st.lns);

    st.field = vertex_gradients(st.grid, cfg.threads);

    mse /= 3.0 * double(cfg.batch);
    StepMetrics sm;
    sm.step = st.step;
    sm.l_rgb = l_rgb;
    sm.l_eik = l_eik;
    sm.l_curv = l_curv;
    sm.s = std::exp(st.lns);
    sm.psnr = mse > 0 ? -10.0 * std::log10(mse) : 99.0;
    out.log.push_back(sm);
    if (csv.is_open())
      csv << sm.step << ',' << sm.l_rgb << ',' << sm.l_eik << ',' << sm.l_curv
          << ',' << sm.s << ',' << sm.psnr << '\n';
  }

  if (csv.is_open() && !csv) throw IoError("write failed: " + cfg.metrics_csv);
  return out;
}

namespace {

void wr(std::ofstream& f, const void* p, size_t bytes) {
  f.write(reinterpret_cast<const char*>(p), std::streamsize(bytes));
}
void rd(std::ifstream& f, void* p, size_t bytes) {
  f.read(reinterpret_cast<char*>(p), std::streamsize(bytes));
}

void write_adam(std::ofstream& f, const SparseAdam& a) {
  const int64_t count = a.size();
  wr(f, &count, 8);
  wr(f, a.m.data(), a.m.size() * 8);
  wr(f, a.v.data(), a.v.size() * 8);
  wr(f, a.n.data(), a.n.size() * 4);
}

void read_adam(std::ifstream& f, SparseAdam& a, int64_t expect) {
  int64_t count = 0;
  rd(f, &count, 8);
  if (count != expect) throw IoError("checkpoint optimizer state mismatch");
  a.resize(count);
  rd(f, a.m.data(), a.m.size() * 8);
  rd(f, a.v.data(), a.v.size() * 8);
  rd(f, a.n.data(), a.n.size() * 4);
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& st) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write("VXTS", 4);
  const uint32_t version = 1;
  wr(f, &version, 4);

  for (int i = 0; i < 3; ++i) {
    const uint32_t r = uint32_t(st.grid.res[i]);
    wr(f, &r, 4);
  }
  const double origin[3] = {st.grid.origin[0], st.grid.origin[1],
                            st.grid.origin[2]};
  wr(f, origin, sizeof origin);
  wr(f, &st.grid.spacing, 8);
  wr(f, st.grid.values.data(), st.grid.values.size() * 4);

  const RadianceConfig& rc = st.params.cfg;
  const uint32_t rcfg[6] = {uint32_t(rc.levels),  uint32_t(rc.table_size),
                            uint32_t(rc.features), uint32_t(rc.n_min),
                            uint32_t(rc.n_max),    uint32_t(rc.hidden)};
  wr(f, rcfg, sizeof rcfg);
  const double rbox[6] = {st.params.box.lo[0], st.params.box.lo[1],
                          st.params.box.lo[2], st.params.box.hi[0],
                          st.params.box.hi[1], st.params.box.hi[2]};
  wr(f, rbox, sizeof rbox);
  wr(f, st.params.tables.data(), st.params.tables.size() * 4);
  wr(f, st.params.decoder.data(), st.params.decoder.size() * 4);

  wr(f, &st.lns, 8);
  const int64_t step = st.step;
  wr(f, &step, 8);
  wr(f, &st.seed, 8);
  write_adam(f, st.opt_grid);
  write_adam(f, st.opt_tables);
  write_adam(f, st.opt_decoder);
  write_adam(f, st.opt_lns);
  if (!f) throw IoError("write failed: " + path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4];
  rd(f, magic, 4);
  uint32_t version = 0;
  rd(f, &version, 4);
  if (!f || std::memcmp(magic, "VXTS", 4) != 0 || version != 1)
    throw IoError("not a training checkpoint: " + path);

  TrainState st;
  for (int i = 0; i < 3; ++i) {
    uint32_t r = 0;
    rd(f, &r, 4);
    if (r < 2 || r > (1u << 12)) throw IoError("corrupt checkpoint: " + path);
    st.grid.res[i] = int(r);
  }
  double origin[3] = {0, 0, 0};
  rd(f, origin, sizeof origin);
  st.grid.origin = make_vec3(origin[0], origin[1], origin[2]);
  rd(f, &st.grid.spacing, 8);
  st.grid.values.resize(size_t(st.grid.num_vertices()));
  rd(f, st.grid.values.data(), st.grid.values.size() * 4);

  uint32_t rcfg[6];
  rd(f, rcfg, sizeof rcfg);
  RadianceConfig rc;
  rc.levels = int(rcfg[0]);
  rc.table_size = int(rcfg[1]);
  rc.features = int(rcfg[2]);
  rc.n_min = int(rcfg[3]);
  rc.n_max = int(rcfg[4]);
  rc.hidden = int(rcfg[5]);
  if (!f || rc.levels < 1 || rc.table_size < 1 || rc.features < 1 ||
      rc.hidden < 1)
    throw IoError("corrupt checkpoint: " + path);
  double rbox[6] = {0, 0, 0, 0, 0, 0};
  rd(f, rbox, sizeof rbox);
  Aabb<3> box;
  box.lo = make_vec3(rbox[0], rbox[1], rbox[2]);
  box.hi = make_vec3(rbox[3], rbox[4], rbox[5]);
  st.params = make_radiance(box, 0, rc);
  rd(f, st.params.tables.data(), st.params.tables.size() * 4);
  rd(f, st.params.decoder.data(), st.params.decoder.size() * 4);

  rd(f, &st.lns, 8);
  int64_t step = 0;
  rd(f, &step, 8);
  rd(f, &st.seed, 8);
  st.step = int(step);
  read_adam(f, st.opt_grid, st.grid.num_vertices());
  read_adam(f, st.opt_tables, int64_t(st.params.tables.size()));
  read_adam(f, st.opt_decoder, int64_t(st.params.decoder.size()));
  read_adam(f, st.opt_lns, 1);
  if (!f) throw IoError("truncated checkpoint: " + path);

  st.field = vertex_gradients(st.grid);
  return st;
}

}  // namespace voxrec
