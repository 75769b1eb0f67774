#include "defocus/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <utility>

#include <json.hpp>

#include "defocus/errors.hpp"

namespace defocus {

using nlohmann::json;

std::vector<PairImages> load_pairs(const Manifest& manifest, const std::filesystem::path& base_dir,
                                   int focus_index) {
  if (focus_index < 0 || focus_index >= manifest.camera.n_focus()) {
    throw DomainError("load_pairs: focus index " + std::to_string(focus_index) +
                      " outside camera focus list");
  }
  // Sharp frames are shared across focus indices; key them by scene.
  std::map<std::pair<int, double>, const ManifestRecord*> sharp_by_scene;
  for (const auto& r : manifest.records) {
    if (r.role == "sharp") sharp_by_scene[{r.texture_id, r.depth_m}] = &r;
  }
  std::map<std::string, ImageF> sharp_cache;
  std::vector<PairImages> pairs;
  for (const auto& r : manifest.records) {
    if (r.role != "blurred" || r.focus_index != focus_index) continue;
    const auto it = sharp_by_scene.find({r.texture_id, r.depth_m});
    if (it == sharp_by_scene.end()) {
      throw DataError("manifest has no sharp frame for texture " + std::to_string(r.texture_id) +
                      " at depth " + std::to_string(r.depth_m));
    }
    auto cached = sharp_cache.find(it->second->path);
    if (cached == sharp_cache.end()) {
      cached = sharp_cache.emplace(it->second->path, read_image(base_dir / it->second->path)).first;
    }
    PairImages p;
    p.sharp = cached->second;
    p.blurred = read_image(base_dir / r.path);
    p.focus_index = focus_index;
    p.depth_m = r.depth_m;
    p.texture_id = r.texture_id;
    const int mx = p.sharp.width() - p.blurred.width();
    const int my = p.sharp.height() - p.blurred.height();
    if (mx < 0 || my < 0 || mx % 2 != 0 || mx != my) {
      throw DataError("pair '" + r.path + "': blurred frame must be the sharp frame minus an "
                      "equal even margin per axis");
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

PatchSample sample_patch(const PairImages& pair, int patch_size, int radius, Rng& rng) {
  const int p = patch_size;
  const int k = radius;
  if (p < 2 * k + 1) throw DimensionError("sample_patch: patch smaller than kernel support");
  const int w = pair.sharp.width();
  const int h = pair.sharp.height();
  const int m = (w - pair.blurred.width()) / 2;  // blurred-frame crop margin
  const int margin = p / 2 + std::max(k, m);
  const int lo = margin;
  const int hi_x = (w - 1) - margin;
  const int hi_y = (h - 1) - margin;
  if (hi_x < lo || hi_y < lo) throw DimensionError("sample_patch: image too small for patch");
  const int cx = static_cast<int>(rng.next_range(lo, hi_x));
  const int cy = static_cast<int>(rng.next_range(lo, hi_y));

  const int ss = p + 2 * k;  // sharp patch side
  const int sx0 = cx - p / 2 - k;
  const int sy0 = cy - p / 2 - k;
  std::vector<double> sharp(static_cast<std::size_t>(ss) * ss);
  for (int y = 0; y < ss; ++y) {
    const double* row = pair.sharp.data().data() + static_cast<std::size_t>(sy0 + y) * w + sx0;
    std::copy(row, row + ss, sharp.begin() + static_cast<std::size_t>(y) * ss);
  }
  // Blurred pixel (x, y) sits at sharp (x + m, y + m); align to the valid
  // convolution output of the sharp patch.
  const int bx0 = sx0 + k - m;
  const int by0 = sy0 + k - m;
  const int bw = pair.blurred.width();
  std::vector<double> blurred(static_cast<std::size_t>(p) * p);
  for (int y = 0; y < p; ++y) {
    const double* row = pair.blurred.data().data() + static_cast<std::size_t>(by0 + y) * bw + bx0;
    std::copy(row, row + p, blurred.begin() + static_cast<std::size_t>(y) * p);
  }

  PatchSample s;
  s.sharp = ImageF::from_data(ss, ss, std::move(sharp));
  s.blurred = ImageF::from_data(p, p, std::move(blurred));
  s.pos = to_polar(cx, cy, w, h);
  s.depth_m = pair.depth_m;
  s.focus_index = pair.focus_index;
  s.cx = cx;
  s.cy = cy;
  return s;
}

void FitConfig::validate() const {
  if (mode != "ih-polar" && mode != "xy-cartesian" && mode != "invariant") {
    throw ConfigError("fit mode must be 'ih-polar', 'xy-cartesian' or 'invariant', got '" + mode +
                      "'");
  }
  if (radius < 1) throw ConfigError("fit radius must be >= 1");
  if (patch_size < 2 * radius + 1) {
    throw ConfigError("patch_size must be at least 2*radius+1 = " + std::to_string(2 * radius + 1));
  }
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(weights.alpha >= 0) || !(weights.beta >= 0) || !(weights.charbonnier_eps > 0)) {
    throw ConfigError("loss weights must be alpha, beta >= 0 and charbonnier_eps > 0");
  }
  if (ih_bins < 1) throw ConfigError("ih_bins must be >= 1");
  if (mode == "ih-polar" && ih_bins < 2) {
    throw ConfigError("ih-polar mode needs ih_bins >= 2; use mode 'invariant' for a single bin");
  }
  if (!(ih_min >= 0) || !(ih_max <= 1) || !(ih_min < ih_max)) {
    throw ConfigError("need 0 <= ih_min < ih_max <= 1");
  }
  if (depth_bins < 1) throw ConfigError("depth_bins must be >= 1");
  if (std::isfinite(depth_min) && std::isfinite(depth_max) && depth_min > 0 && depth_max > 0 &&
      depth_min > depth_max) {
    throw ConfigError("depth_min must not exceed depth_max");
  }
  if (xy_bins < 1) throw ConfigError("xy_bins must be >= 1");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
}

namespace {

void check_fit_pairs(const std::vector<PairImages>& pairs, int focus_index) {
  if (pairs.empty()) {
    throw DataError("no training pairs for focus index " + std::to_string(focus_index));
  }
  for (const auto& p : pairs) {
    if (p.focus_index != focus_index) {
      throw DataError("training pair has focus index " + std::to_string(p.focus_index) +
                      ", expected " + std::to_string(focus_index));
    }
  }
}

std::vector<double> fit_depth_centers(const std::vector<PairImages>& pairs, const FitConfig& cfg) {
  double lo = cfg.depth_min;
  double hi = cfg.depth_max;
  if (!(lo > 0) || !(hi > 0)) {
    lo = pairs.front().depth_m;
    hi = lo;
    for (const auto& p : pairs) {
      lo = std::min(lo, p.depth_m);
      hi = std::max(hi, p.depth_m);
    }
  }
  if (hi - lo < 1e-12) return {lo};
  return linspace(lo, hi, cfg.depth_bins);
}

// One sample's loss terms plus its parameter-gradient pieces, each anchored
// at the flat offset of a contributing bin.
struct SlotResult {
  double loss = 0.0;
  double recon = 0.0;
  double smooth = 0.0;
  double radial = 0.0;
  std::vector<std::pair<std::size_t, std::vector<double>>> grads;
};

// Shared stochastic-fit driver: per-step patch batches drawn on the calling
// thread, slot-parallel loss evaluation, fixed-order gradient reduction, and
// a dense moment-based update. Deterministic for a given seed at any pool
// size.
void run_fit(std::vector<double>& params,
             const std::function<SlotResult(const PatchSample&)>& eval,
             const std::vector<PairImages>& pairs, const FitConfig& cfg, ThreadPool* pool,
             FitStats* stats) {
  const std::size_t n = params.size();
  std::vector<double> m(n, 0.0), v(n, 0.0), grad(n, 0.0);
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  Rng rng(cfg.seed);
  double ema = 0.0;
  double loss = 0.0;
  std::vector<PatchSample> samples(static_cast<std::size_t>(cfg.batch));
  std::vector<SlotResult> slots(static_cast<std::size_t>(cfg.batch));
  const auto n_pairs = static_cast<std::int64_t>(pairs.size());

  for (int t = 1; t <= cfg.steps; ++t) {
    const double lr_t =
        cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * (t - 1) / cfg.steps));
    for (int b = 0; b < cfg.batch; ++b) {
      const auto pick = static_cast<std::size_t>(rng.next_below(n_pairs));
      samples[static_cast<std::size_t>(b)] =
          sample_patch(pairs[pick], cfg.patch_size, cfg.radius, rng);
    }
    auto slot_job = [&](std::int64_t b) {
      slots[static_cast<std::size_t>(b)] = eval(samples[static_cast<std::size_t>(b)]);
    };
    try {
      if (pool) {
        pool->parallel_for(cfg.batch, slot_job);
      } else {
        for (int b = 0; b < cfg.batch; ++b) slot_job(b);
      }
    } catch (const ParameterError&) {
      // Parameters went non-finite; report where the run broke down.
      throw DivergenceError("optimization diverged at step " + std::to_string(t), t);
    }

    std::fill(grad.begin(), grad.end(), 0.0);
    const double inv_batch = 1.0 / cfg.batch;
    double recon = 0.0, smooth = 0.0, radial = 0.0;
    loss = 0.0;
    for (const SlotResult& r : slots) {
      loss += r.loss * inv_batch;
      recon += r.recon * inv_batch;
      smooth += r.smooth * inv_batch;
      radial += r.radial * inv_batch;
      for (const auto& [offset, g] : r.grads) {
        for (std::size_t i = 0; i < g.size(); ++i) grad[offset + i] += g[i] * inv_batch;
      }
    }
    if (!std::isfinite(loss)) {
      throw DivergenceError("training loss went non-finite at step " + std::to_string(t), t);
    }
    ema = t == 1 ? loss : 0.99 * ema + 0.01 * loss;

    const double bc1 = 1.0 - std::pow(kBeta1, t);
    const double bc2 = 1.0 - std::pow(kBeta2, t);
    auto update_chunk = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
        params[i] -= lr_t * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
      }
    };
    constexpr std::size_t kChunk = 16384;
    const auto n_chunks = static_cast<std::int64_t>((n + kChunk - 1) / kChunk);
    if (pool && n_chunks > 1) {
      pool->parallel_for(n_chunks, [&](std::int64_t c) {
        const std::size_t lo = static_cast<std::size_t>(c) * kChunk;
        update_chunk(lo, std::min(n, lo + kChunk));
      });
    } else {
      update_chunk(0, n);
    }

    if (stats) {
      if (t == 500) stats->ema_at_500 = ema;
      if (t == 1 || t % cfg.log_every == 0 || t == cfg.steps) {
        stats->rows.push_back({t, lr_t, loss, recon, smooth, radial, ema});
      }
    }
  }
  if (stats) {
    stats->ema_final = ema;
    stats->final_loss = loss;
    stats->steps = cfg.steps;
  }
}

}  // namespace

PsfGrid fit_psf_grid(const std::vector<PairImages>& pairs, int focus_index, int n_focus,
                     const FitConfig& cfg, ThreadPool* pool, FitStats* stats) {
  cfg.validate();
  if (cfg.mode == "xy-cartesian") {
    throw ConfigError("fit_psf_grid handles modes 'ih-polar' and 'invariant'; use fit_xy_grid");
  }
  check_fit_pairs(pairs, focus_index);
  const bool invariant = cfg.mode == "invariant";
  std::vector<double> ih_centers =
      invariant ? linspace(cfg.ih_min, cfg.ih_max, 1) : linspace(cfg.ih_min, cfg.ih_max, cfg.ih_bins);
  PsfGrid grid = make_uniform_grid(focus_index, n_focus, cfg.radius, std::move(ih_centers),
                                   fit_depth_centers(pairs, cfg));
  const bool rotate = !grid.spatially_invariant();
  const auto len = static_cast<std::size_t>(grid.kernel_len());
  const auto n_depth = static_cast<std::size_t>(grid.n_depth());

  auto eval = [&grid, &cfg, rotate, len, n_depth](const PatchSample& smp) {
    GridBinMix mix = query_mix(grid, smp.pos.ih, smp.depth_m);
    const double theta = rotate ? smp.pos.theta : 0.0;
    const TotalLoss tl = total_loss(smp.blurred, smp.sharp, mix.kernel, theta, cfg.weights);
    const std::vector<double> g_raw = renorm_backprop(mix.kernel.values(), mix.sum, tl.grad);
    SlotResult r;
    r.loss = tl.value;
    r.recon = tl.recon;
    r.smooth = tl.smooth;
    r.radial = tl.radial;
    std::vector<double> part_grad(len);
    for (const auto& part : mix.parts) {
      for (std::size_t i = 0; i < len; ++i) part_grad[i] = part.w * g_raw[i];
      const std::size_t offset =
          (static_cast<std::size_t>(part.i_ih) * n_depth + static_cast<std::size_t>(part.i_depth)) *
          len;
      r.grads.emplace_back(offset, softmax_backprop(part.probs, part_grad));
    }
    return r;
  };
  run_fit(grid.params, eval, pairs, cfg, pool, stats);
  quantize_params_f32(grid);
  return grid;
}

namespace {

// Trilinear bin mix for the cartesian ablation grid; mirrors query_mix.
struct XyBinMix {
  struct Part {
    std::size_t offset = 0;
    double w = 0.0;
    std::vector<double> probs;
  };
  std::vector<Part> parts;
  double sum = 1.0;
  PsfKernel kernel;
};

XyBinMix xy_query_mix(const XyPsfGrid& g, double x, double y, double depth_m) {
  if (g.params.empty()) throw StateError("query on empty grid");
  const AxisLoc ax = locate_on_axis(g.x_centers, x);
  const AxisLoc ay = locate_on_axis(g.y_centers, y);
  const AxisLoc ad = locate_on_axis(g.depth_centers, depth_m);
  const auto len = static_cast<std::size_t>(g.kernel_len());
  const auto nx = static_cast<std::size_t>(g.n_x());
  const auto nd = static_cast<std::size_t>(g.n_depth());
  auto offset_of = [&](int iy, int ix, int id) {
    return ((static_cast<std::size_t>(iy) * nx + static_cast<std::size_t>(ix)) * nd +
            static_cast<std::size_t>(id)) *
           len;
  };
  XyBinMix out;
  if (ax.lo == ax.hi && ay.lo == ay.hi && ad.lo == ad.hi) {
    XyBinMix::Part part;
    part.offset = offset_of(ay.lo, ax.lo, ad.lo);
    part.w = 1.0;
    part.probs = softmax(std::span<const double>(g.params).subspan(part.offset, len));
    double s = 0;
    for (const double v : part.probs) s += v;
    out.sum = s;
    out.kernel = PsfKernel::from_values_normalized(g.radius, part.probs);
    out.parts.push_back(std::move(part));
    return out;
  }
  std::vector<double> mix(len, 0.0);
  const double wy[2] = {1.0 - ay.t, ay.t};
  const double wx[2] = {1.0 - ax.t, ax.t};
  const double wd[2] = {1.0 - ad.t, ad.t};
  const int iy[2] = {ay.lo, ay.hi};
  const int ix[2] = {ax.lo, ax.hi};
  const int id[2] = {ad.lo, ad.hi};
  for (int u = 0; u < 2; ++u) {
    if (u == 1 && iy[1] == iy[0]) continue;
    for (int v = 0; v < 2; ++v) {
      if (v == 1 && ix[1] == ix[0]) continue;
      for (int w = 0; w < 2; ++w) {
        if (w == 1 && id[1] == id[0]) continue;
        const double weight = wy[u] * wx[v] * wd[w];
        if (weight == 0) continue;
        XyBinMix::Part part;
        part.offset = offset_of(iy[u], ix[v], id[w]);
        part.w = weight;
        part.probs = softmax(std::span<const double>(g.params).subspan(part.offset, len));
        for (std::size_t i = 0; i < len; ++i) mix[i] += weight * part.probs[i];
        out.parts.push_back(std::move(part));
      }
    }
  }
  double s = 0;
  for (const double v : mix) s += v;
  out.sum = s;
  out.kernel = PsfKernel::from_values_normalized(g.radius, std::move(mix));
  return out;
}

}  // namespace

PsfKernel XyPsfGrid::query(double x, double y, double depth_m) const {
  return xy_query_mix(*this, x, y, depth_m).kernel;
}

XyPsfGrid fit_xy_grid(const std::vector<PairImages>& pairs, int focus_index, const FitConfig& cfg,
                      ThreadPool* pool, FitStats* stats) {
  cfg.validate();
  if (cfg.mode != "xy-cartesian") {
    throw ConfigError("fit_xy_grid requires mode 'xy-cartesian'");
  }
  check_fit_pairs(pairs, focus_index);
  const int w = pairs.front().sharp.width();
  const int h = pairs.front().sharp.height();
  XyPsfGrid grid;
  grid.focus_index = focus_index;
  grid.radius = cfg.radius;
  grid.x_centers = linspace(0.0, w - 1, cfg.xy_bins);
  grid.y_centers = linspace(0.0, h - 1, cfg.xy_bins);
  grid.depth_centers = fit_depth_centers(pairs, cfg);
  grid.params.assign(static_cast<std::size_t>(cfg.xy_bins) * cfg.xy_bins *
                         grid.depth_centers.size() * grid.kernel_len(),
                     0.0);

  const auto len = static_cast<std::size_t>(grid.kernel_len());
  auto eval = [&grid, &cfg, len](const PatchSample& smp) {
    XyBinMix mix = xy_query_mix(grid, smp.cx, smp.cy, smp.depth_m);
    const TotalLoss tl = total_loss(smp.blurred, smp.sharp, mix.kernel, 0.0, cfg.weights);
    const std::vector<double> g_raw = renorm_backprop(mix.kernel.values(), mix.sum, tl.grad);
    SlotResult r;
    r.loss = tl.value;
    r.recon = tl.recon;
    r.smooth = tl.smooth;
    r.radial = tl.radial;
    std::vector<double> part_grad(len);
    for (const auto& part : mix.parts) {
      for (std::size_t i = 0; i < len; ++i) part_grad[i] = part.w * g_raw[i];
      r.grads.emplace_back(part.offset, softmax_backprop(part.probs, part_grad));
    }
    return r;
  };
  run_fit(grid.params, eval, pairs, cfg, pool, stats);
  for (double& p : grid.params) p = static_cast<double>(static_cast<float>(p));
  return grid;
}

void save_fit_log(const FitStats& stats, const FitConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "# mode=" << cfg.mode << " steps=" << cfg.steps << " batch=" << cfg.batch
      << " patch=" << cfg.patch_size << " lr=" << cfg.lr << " seed=" << cfg.seed << "\n";
  out << "# step lr loss recon smooth radial ema\n";
  char line[256];
  for (const auto& r : stats.rows) {
    std::snprintf(line, sizeof(line), "%d %.8g %.12g %.12g %.12g %.12g %.12g\n", r.step, r.lr,
                  r.loss, r.recon, r.smooth, r.radial, r.ema);
    out << line;
  }
  std::snprintf(line, sizeof(line), "# final loss=%.12g ema=%.12g\n", stats.final_loss,
                stats.ema_final);
  out << line;
  if (!out) throw IoError("write failed: " + path.string());
}

PsfKernel gaussian_kernel(int radius, double sigma) {
  if (!(sigma > 0) || !std::isfinite(sigma)) {
    throw DomainError("gaussian_kernel: sigma must be positive");
  }
  const int side = 2 * radius + 1;
  std::vector<double> w1(static_cast<std::size_t>(side));
  const double inv = 1.0 / (sigma * std::numbers::sqrt2);
  for (int i = 0; i < side; ++i) {
    const double lo = (i - radius - 0.5) * inv;
    const double hi = (i - radius + 0.5) * inv;
    w1[static_cast<std::size_t>(i)] = 0.5 * (std::erf(hi) - std::erf(lo));
  }
  std::vector<double> v(static_cast<std::size_t>(side) * side);
  for (int j = 0; j < side; ++j) {
    for (int i = 0; i < side; ++i) {
      v[static_cast<std::size_t>(j) * side + i] =
          w1[static_cast<std::size_t>(j)] * w1[static_cast<std::size_t>(i)];
    }
  }
  return PsfKernel::from_values_normalized(radius, std::move(v));
}

void GaussianBaseline::validate() const {
  if (radius < 1) throw ConfigError("baseline radius must be >= 1");
  if (depth_centers.empty() || depth_centers.size() != sigmas.size()) {
    throw ConfigError("baseline needs one sigma per depth");
  }
  for (std::size_t i = 0; i < depth_centers.size(); ++i) {
    if (!std::isfinite(depth_centers[i]) || (i > 0 && depth_centers[i] <= depth_centers[i - 1])) {
      throw ConfigError("baseline depths must be strictly increasing");
    }
    if (!(sigmas[i] > 0) || !std::isfinite(sigmas[i])) {
      throw ConfigError("baseline sigmas must be positive");
    }
  }
}

double GaussianBaseline::sigma_at(double depth_m) const {
  const AxisLoc loc = locate_on_axis(depth_centers, depth_m);
  return (1.0 - loc.t) * sigmas[static_cast<std::size_t>(loc.lo)] +
         loc.t * sigmas[static_cast<std::size_t>(loc.hi)];
}

PsfKernel GaussianBaseline::kernel_at(double depth_m) const {
  return gaussian_kernel(radius, sigma_at(depth_m));
}

void GaussianFitConfig::validate() const {
  if (radius < 1) throw ConfigError("baseline radius must be >= 1");
  if (patch_size < 2 * radius + 1) {
    throw ConfigError("patch_size must be at least 2*radius+1");
  }
  if (probes_per_depth < 1) throw ConfigError("probes_per_depth must be >= 1");
  if (!(sigma_min > 0)) throw ConfigError("sigma_min must be positive");
  if (coarse_points < 3) throw ConfigError("coarse_points must be >= 3");
  if (!(charbonnier_eps > 0)) throw ConfigError("charbonnier_eps must be positive");
}

GaussianBaseline fit_gaussian_baseline(const std::vector<PairImages>& pairs, int focus_index,
                                       const GaussianFitConfig& cfg, ThreadPool* pool) {
  cfg.validate();
  check_fit_pairs(pairs, focus_index);
  std::set<double> depth_set;
  for (const auto& p : pairs) depth_set.insert(p.depth_m);
  const std::vector<double> depths(depth_set.begin(), depth_set.end());

  GaussianBaseline base;
  base.focus_index = focus_index;
  base.radius = cfg.radius;
  base.depth_centers = depths;
  base.sigmas.assign(depths.size(), cfg.sigma_min);
  const double sigma_max = cfg.radius / 2.0;
  if (sigma_max <= cfg.sigma_min) throw ConfigError("sigma search range is empty");
  const Rng root(cfg.seed);

  auto depth_job = [&](std::int64_t di) {
    const double d = depths[static_cast<std::size_t>(di)];
    std::vector<const PairImages*> at_depth;
    for (const auto& p : pairs) {
      if (p.depth_m == d) at_depth.push_back(&p);
    }
    Rng rng = root.child(static_cast<std::uint64_t>(di));
    std::vector<PatchSample> probes;
    probes.reserve(static_cast<std::size_t>(cfg.probes_per_depth));
    for (int i = 0; i < cfg.probes_per_depth; ++i) {
      const auto pick =
          static_cast<std::size_t>(rng.next_below(static_cast<std::int64_t>(at_depth.size())));
      probes.push_back(sample_patch(*at_depth[pick], cfg.patch_size, cfg.radius, rng));
    }
    auto cost = [&](double sigma) {
      const PsfKernel k = gaussian_kernel(cfg.radius, sigma);
      double sum = 0;
      for (const PatchSample& s : probes) {
        sum += recon_loss(s.blurred, s.sharp, k, 0.0, cfg.charbonnier_eps).value;
      }
      return sum / probes.size();
    };

    const std::vector<double> sgrid = linspace(cfg.sigma_min, sigma_max, cfg.coarse_points);
    std::size_t best = 0;
    double best_cost = cost(sgrid[0]);
    for (std::size_t i = 1; i < sgrid.size(); ++i) {
      const double c = cost(sgrid[i]);
      if (c < best_cost) {
        best_cost = c;
        best = i;
      }
    }
    double a = sgrid[best > 0 ? best - 1 : 0];
    double b = sgrid[std::min(best + 1, sgrid.size() - 1)];
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - phi * (b - a);
    double x2 = a + phi * (b - a);
    double f1 = cost(x1);
    double f2 = cost(x2);
    for (int it = 0; it < 60 && b - a > 1e-4; ++it) {
      if (f1 <= f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - phi * (b - a);
        f1 = cost(x1);
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + phi * (b - a);
        f2 = cost(x2);
      }
    }
    base.sigmas[static_cast<std::size_t>(di)] = 0.5 * (a + b);
  };
  const auto n_depths = static_cast<std::int64_t>(depths.size());
  if (pool) {
    pool->parallel_for(n_depths, depth_job);
  } else {
    for (std::int64_t i = 0; i < n_depths; ++i) depth_job(i);
  }
  base.validate();
  return base;
}

void save_gaussian_baseline(const GaussianBaseline& baseline, const std::filesystem::path& path) {
  baseline.validate();
  json j;
  j["format"] = "defocus-gaussian-v1";
  j["focus_index"] = baseline.focus_index;
  j["radius"] = baseline.radius;
  j["depth_centers_m"] = baseline.depth_centers;
  j["sigmas_px"] = baseline.sigmas;
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

GaussianBaseline load_gaussian_baseline(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("baseline file is not valid JSON (" + path.string() + "): " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "defocus-gaussian-v1") {
      throw FormatError("unsupported baseline format in " + path.string());
    }
    GaussianBaseline b;
    b.focus_index = j.at("focus_index").get<int>();
    b.radius = j.at("radius").get<int>();
    b.depth_centers = j.at("depth_centers_m").get<std::vector<double>>();
    b.sigmas = j.at("sigmas_px").get<std::vector<double>>();
    b.validate();
    return b;
  } catch (const json::exception& e) {
    throw FormatError("baseline missing or mistyped field (" + path.string() + "): " + e.what());
  }
}

}  // namespace defocus
