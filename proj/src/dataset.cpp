#include "panp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "panp/core/container.hpp"
#include "panp/core/error.hpp"
#include "panp/core/parallel.hpp"
#include "panp/core/rng.hpp"

namespace fs = std::filesystem;

namespace panp::dataset {

using std::numbers::pi;

void BackgroundConfig::validate() const {
  if (min_vessels > max_vessels) throw ConfigError("background: min_vessels exceeds max_vessels");
  if (!(min_radius > 0.0) || min_radius > max_radius) throw ConfigError("background: empty vessel radius range");
  if (!(min_depth >= 0.0) || min_depth > max_depth) throw ConfigError("background: empty vessel depth range");
  if (!(two_layer_probability >= 0.0 && two_layer_probability <= 1.0) ||
      !(line_probability >= 0.0 && line_probability <= 1.0))
    throw ConfigError("background: probabilities must lie in [0, 1]");
  if (!(noise_std >= 0.0)) throw ConfigError("background: noise_std must be non-negative");
  if (frames == 0) throw ConfigError("background: frames must be at least 1");
}

double Vessel::extent() const {
  return kind == Kind::disk ? radius : std::hypot(x2 - x, z2 - z) + radius;
}

std::vector<Vessel> sample_vessels(const BackgroundConfig& cfg, const Grid2D& grid, const TransducerArray& array) {
  cfg.validate();
  Rng rng(cfg.rng_seed, 0);
  const std::size_t n = cfg.min_vessels + rng.below(cfg.max_vessels - cfg.min_vessels + 1);
  // 2 mm inside the aperture so vessels stay within the cropped image.
  const double half_aperture = 0.5 * std::min(array.aperture(), grid.extent_x()) - 2e-3;
  const double bottom = grid.z_at(grid.nz - 1) - 1e-3;
  std::vector<Vessel> out;
  for (std::size_t attempt = 0; out.size() < n && attempt < 1000 * (n + 1); ++attempt) {
    Vessel v;
    v.radius = rng.uniform(cfg.min_radius, cfg.max_radius);
    v.two_layer = rng.uniform() < cfg.two_layer_probability;
    v.amplitude = rng.uniform(0.5, 1.0);
    double extent = v.radius;
    if (rng.uniform() < cfg.line_probability) {
      v.kind = Vessel::Kind::line;
      const double half_len = 0.5 * rng.uniform(3e-3, 10e-3);
      const double tilt = rng.uniform(-25.0, 25.0) * pi / 180.0;
      v.x2 = half_len * std::cos(tilt);  // offsets for now
      v.z2 = half_len * std::sin(tilt);
      extent = half_len + v.radius;
    }
    const double x_lo = grid.center_x() - half_aperture + extent, x_hi = grid.center_x() + half_aperture - extent;
    const double z_lo = std::max(cfg.min_depth, extent), z_hi = std::min(cfg.max_depth, bottom - extent);
    const double ux = rng.uniform(), uz = rng.uniform();
    if (x_lo > x_hi || z_lo > z_hi) continue;
    v.x = x_lo + (x_hi - x_lo) * ux;
    v.z = z_lo + (z_hi - z_lo) * uz;
    if (v.kind == Vessel::Kind::line) {
      v.x2 += v.x;
      v.z2 += v.z;
    }
    bool clear = true;
    for (const auto& o : out)
      if (std::hypot(o.x - v.x, o.z - v.z) < o.extent() + v.extent() + 0.5e-3) clear = false;
    if (clear) out.push_back(v);
  }
  return out;
}

ScalarField vessel_p0(const std::vector<Vessel>& vessels, const Grid2D& grid) {
  ScalarField p0(grid, Role::initial_pressure);
  for (const auto& v : vessels) {
    const double reach = v.extent() + grid.dx;
    const double rim = std::max(0.35 * v.radius, grid.dx);
    for (std::size_t j = 0; j < grid.nz; ++j) {
      const double z = grid.z_at(j);
      if (std::abs(z - v.z) > reach) continue;
      for (std::size_t i = 0; i < grid.nx; ++i) {
        const double x = grid.x_at(i);
        if (std::abs(x - v.x) > reach) continue;
        double d;
        if (v.kind == Vessel::Kind::disk) {
          d = std::hypot(x - v.x, z - v.z);
        } else {
          // Segment from (2c - far) to far.
          const double ax = 2.0 * v.x - v.x2, az = 2.0 * v.z - v.z2;
          const double vx = v.x2 - ax, vz = v.z2 - az;
          const double t = std::clamp(((x - ax) * vx + (z - az) * vz) / (vx * vx + vz * vz), 0.0, 1.0);
          d = std::hypot(x - (ax + t * vx), z - (az + t * vz));
        }
        if (d > v.radius) continue;
        const double value = v.amplitude * (v.two_layer && d < v.radius - rim ? 0.3 : 1.0);
        float& cell = p0.values(j, i);
        cell = std::max(cell, static_cast<float>(value));
      }
    }
  }
  return p0;
}

RfFrame simulate_vessel_rf(const BackgroundConfig& cfg, const Grid2D& grid, const TransducerArray& array,
                           const acoustics::MediumConfig& medium) {
  cfg.validate();
  const auto vessels = sample_vessels(cfg, grid, array);
  RfFrame clean = RfFrame::zeros(array);
  if (vessels.empty()) return clean;
  const auto solver = acoustics::make_solver_config(grid, medium, array);
  clean = acoustics::simulate_rf(vessel_p0(vessels, grid), medium, array, solver);
  const float peak = max_abs(clean.samples);
  if (peak > 0.0f)
    for (auto& v : clean.samples.flat()) v /= peak;
  return clean;
}

RfFrame add_background_noise(RfFrame clean, const BackgroundConfig& cfg) {
  cfg.validate();
  if (cfg.noise_std > 0.0) {
    std::vector<RfFrame> frames;
    for (std::size_t f = 0; f < cfg.frames; ++f) {
      RfFrame noisy = clean;
      Rng rng(cfg.rng_seed, 1000 + f);
      for (auto& v : noisy.samples.flat()) v += static_cast<float>(cfg.noise_std * rng.normal());
      frames.push_back(std::move(noisy));
    }
    clean = cfg.frames == 1 ? std::move(frames.front()) : recon::average_frames(frames);
  }
  return recon::zero_early_samples(std::move(clean));
}

RfFrame gen_background_rf(const BackgroundConfig& cfg, const Grid2D& grid, const TransducerArray& array,
                          const acoustics::MediumConfig& medium) {
  return add_background_noise(simulate_vessel_rf(cfg, grid, array, medium), cfg);
}

RfFrame composite_rf(const RfFrame& needle_rf, const RfFrame& background_rf, double target_peak) {
  if (needle_rf.samples.rows() != background_rf.samples.rows() ||
      needle_rf.samples.cols() != background_rf.samples.cols())
    throw Error("needle and background RF differ in shape");
  const float peak = max_abs(needle_rf.samples);
  if (!(peak > 0.0f)) throw Error("needle RF is all zero");
  const float scale = static_cast<float>(target_peak) / peak;
  RfFrame out = background_rf;
  const auto n = needle_rf.samples.flat();
  auto o = out.samples.flat();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] = n[k] * scale + o[k];
  return out;
}

PixelImage make_ground_truth(const ScalarField& p0, const recon::StandardGeometry& geom) {
  PixelImage img = recon::field_to_standard_image(p0, geom);
  const float peak = img.values.empty() ? 0.0f : max_value(img.values);
  if (!(peak > 0.0f)) throw Error("initial pressure is all zero; no ground truth");
  for (auto& v : img.values.flat()) v /= peak;
  return img;
}

std::optional<detect::NeedleSegment> truth_segment(const optics::NeedlePose& pose, const Grid2D& grid,
                                                   std::size_t side, const recon::StandardGeometry& geom,
                                                   double min_depth) {
  const double ax = geom.col_of(pose.entry_x - grid.center_x(), side), ay = geom.row_of(0.0, side);
  const double bx = geom.col_of(pose.tip_x() - grid.center_x(), side), by = geom.row_of(pose.depth, side);
  // Liang-Barsky clip of a + t (b - a), t in [0, 1], to [0, side - 1]^2.
  const double dx = bx - ax, dy = by - ay, lim = static_cast<double>(side) - 1.0;
  if (!(pose.depth > min_depth)) return std::nullopt;
  double t0 = std::max(0.0, min_depth / pose.depth), t1 = 1.0;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {ax, lim - ax, ay, lim - ay};
  for (int k = 0; k < 4; ++k) {
    if (p[k] == 0.0) {
      if (q[k] < 0.0) return std::nullopt;
      continue;
    }
    const double r = q[k] / p[k];
    if (p[k] < 0.0) t0 = std::max(t0, r);
    else t1 = std::min(t1, r);
  }
  if (!(t1 > t0)) return std::nullopt;
  return detect::NeedleSegment{{ax + t0 * dx, ay + t0 * dy}, {ax + t1 * dx, ay + t1 * dy}};
}

void DatasetConfig::validate() const {
  grid.validate();
  array.validate();
  medium.validate();
  tissue.validate();
  background.validate();
  if (count == 0) throw ConfigError("dataset count must be at least 1");
  if (n_backgrounds == 0) throw ConfigError("n_backgrounds must be at least 1");
  if (poses.depths.empty() || poses.angles_deg.empty() || poses.mu_a.empty())
    throw ConfigError("pose grid has an empty axis");
  if (!(target_peak_factor > 0.0)) throw ConfigError("target_peak_factor must be positive");
  if (zero_samples >= array.n_samples) throw ConfigError("zero_samples must be below n_samples");
  if (mc.n_photons == 0) throw ConfigError("mc.n_photons must be at least 1");
  try {
    optics::gauge_diameter(gauge);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (!(beam.width > 0.0) || beam.width > grid.extent_x() * (1.0 + 1e-12))
    throw ConfigError("beam width must be positive and fit the grid");
}

namespace {

nlohmann::json array_json(const TransducerArray& a) { return to_json(a); }

void read_grid(ConfigReader r, Grid2D& g) {
  r.get("nx", g.nx).get("nz", g.nz).get("dx_m", g.dx);
  r.reject_unknown();
}

void read_array(ConfigReader r, TransducerArray& a) {
  r.get("n_elements", a.n_elements)
      .get("pitch_m", a.pitch)
      .get("center_freq_hz", a.center_freq)
      .get("frac_bandwidth", a.frac_bandwidth)
      .get("sample_rate_hz", a.sample_rate)
      .get("n_samples", a.n_samples)
      .get("sound_speed_m_s", a.sound_speed);
  r.reject_unknown();
}

nlohmann::json background_json(const BackgroundConfig& b) {
  return {{"min_vessels", b.min_vessels},
          {"max_vessels", b.max_vessels},
          {"min_radius_m", b.min_radius},
          {"max_radius_m", b.max_radius},
          {"min_depth_m", b.min_depth},
          {"max_depth_m", b.max_depth},
          {"two_layer_probability", b.two_layer_probability},
          {"line_probability", b.line_probability},
          {"noise_std", b.noise_std},
          {"frames", b.frames},
          {"rng_seed", b.rng_seed}};
}

void read_background(ConfigReader r, BackgroundConfig& b) {
  r.get("min_vessels", b.min_vessels)
      .get("max_vessels", b.max_vessels)
      .get("min_radius_m", b.min_radius)
      .get("max_radius_m", b.max_radius)
      .get("min_depth_m", b.min_depth)
      .get("max_depth_m", b.max_depth)
      .get("two_layer_probability", b.two_layer_probability)
      .get("line_probability", b.line_probability)
      .get("noise_std", b.noise_std)
      .get("frames", b.frames)
      .get("rng_seed", b.rng_seed);
  r.reject_unknown();
}

}  // namespace

nlohmann::json to_json(const DatasetConfig& c) {
  return {{"grid", to_json(c.grid)},
          {"array", array_json(c.array)},
          {"medium", acoustics::to_json(c.medium)},
          {"tissue", optics::to_json(c.tissue)},
          {"beam", {{"width_m", c.beam.width}}},
          {"mc", optics::to_json(c.mc)},
          {"p0", {{"floor", c.p0.floor}}},
          {"poses",
           {{"depths_m", c.poses.depths},
            {"angles_deg", c.poses.angles_deg},
            {"mu_a_per_mm", c.poses.mu_a},
            {"tip_offset_m", c.poses.tip_offset},
            {"seed", c.poses.seed}}},
          {"gauge", c.gauge},
          {"background", background_json(c.background)},
          {"n_backgrounds", c.n_backgrounds},
          {"count", c.count},
          {"seed", c.seed},
          {"target_peak_factor", c.target_peak_factor},
          {"zero_samples", c.zero_samples}};
}

void read_dataset_config(ConfigReader& r, DatasetConfig& c) {
  read_grid(r.child("grid"), c.grid);
  read_array(r.child("array"), c.array);
  {
    auto m = r.child("medium");
    m.get("sound_speed_m_s", c.medium.sound_speed).get("density_kg_m3", c.medium.density).get("lossless", c.medium.lossless);
    m.reject_unknown();
  }
  {
    auto t = r.child("tissue");
    t.get("mu_a_per_mm", c.tissue.mu_a).get("mu_s_per_mm", c.tissue.mu_s).get("g", c.tissue.g).get("n", c.tissue.n);
    t.reject_unknown();
  }
  {
    auto b = r.child("beam");
    b.get("width_m", c.beam.width);
    b.reject_unknown();
  }
  {
    auto m = r.child("mc");
    m.get("n_photons", c.mc.n_photons)
        .get("rng_seed", c.mc.rng_seed)
        .get("roulette_threshold", c.mc.roulette_threshold)
        .get("roulette_survival", c.mc.roulette_survival)
        .get("reduction_blocks", c.mc.reduction_blocks)
        .get("threads", c.mc.threads);
    m.reject_unknown();
  }
  {
    auto p = r.child("p0");
    p.get("floor", c.p0.floor);
    p.reject_unknown();
  }
  {
    auto p = r.child("poses");
    p.get("depths_m", c.poses.depths)
        .get("angles_deg", c.poses.angles_deg)
        .get("mu_a_per_mm", c.poses.mu_a)
        .get("tip_offset_m", c.poses.tip_offset)
        .get("seed", c.poses.seed);
    p.reject_unknown();
  }
  read_background(r.child("background"), c.background);
  r.get("gauge", c.gauge)
      .get("n_backgrounds", c.n_backgrounds)
      .get("count", c.count)
      .get("seed", c.seed)
      .get("target_peak_factor", c.target_peak_factor)
      .get("zero_samples", c.zero_samples)
      .get("jobs", c.jobs)
      .get("cache_dir", c.cache_dir);
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  ConfigReader r(j);
  read_dataset_config(r, c);
  r.reject_unknown();
  r.finish();
  return c;
}

std::vector<NeedleSpec> enumerate_needles(const DatasetConfig& cfg) {
  std::vector<NeedleSpec> out;
  const double diameter = optics::gauge_diameter(cfg.gauge);
  for (double mu_a : cfg.poses.mu_a)
    for (double depth : cfg.poses.depths)
      for (double angle : cfg.poses.angles_deg) {
        Rng rng(cfg.poses.seed, out.size());
        const double tip_x = cfg.grid.center_x() + rng.uniform(-cfg.poses.tip_offset, cfg.poses.tip_offset);
        NeedleSpec s;
        s.mu_a = mu_a;
        s.pose.angle_deg = angle;
        s.pose.depth = depth;
        s.pose.diameter = diameter;
        s.pose.gauge = cfg.gauge;
        s.pose.entry_x = tip_x - depth / std::tan(angle * pi / 180.0);
        out.push_back(s);
      }
  return out;
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& name) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == name) out.push_back(&e);
  return out;
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"index", e.index},
                       {"needle_id", e.needle_id},
                       {"background_id", e.background_id},
                       {"needle_rf", e.needle_rf},
                       {"needle_p0", e.needle_p0},
                       {"background_rf", e.background_rf},
                       {"composite_image", e.composite_image},
                       {"ground_truth", e.ground_truth},
                       {"pose", optics::to_json(e.pose)},
                       {"mu_a_per_mm", e.mu_a},
                       {"target_peak", e.target_peak},
                       {"split", e.split}});
  return {{"schema_version", kSchemaVersion},
          {"kind", "dataset_manifest"},
          {"seed", m.seed},
          {"config_hash", m.config_hash},
          {"background_source", "procedural"},
          {"config", m.config},
          {"entries", entries}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j, const fs::path& root) {
  if (j.value("schema_version", -1) != kSchemaVersion)
    throw ConfigError(fmt::format("manifest schema version {} does not match {}", j.value("schema_version", -1), kSchemaVersion));
  DatasetManifest m;
  m.root = root;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.at("config");
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.index = je.at("index");
      e.needle_id = je.at("needle_id");
      e.background_id = je.at("background_id");
      e.needle_rf = je.at("needle_rf");
      e.needle_p0 = je.at("needle_p0");
      e.background_rf = je.at("background_rf");
      e.composite_image = je.at("composite_image");
      e.ground_truth = je.at("ground_truth");
      e.pose = optics::pose_from_json(je.at("pose"));
      e.mu_a = je.at("mu_a_per_mm");
      e.target_peak = je.at("target_peak");
      e.split = je.at("split");
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("malformed manifest: {}", e.what()));
  }
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) { write_json(path.string(), to_json(m)); }

DatasetManifest load_manifest(const fs::path& path) {
  return manifest_from_json(read_json(path.string()), path.parent_path());
}

std::array<std::size_t, 3> split_sizes(std::size_t n) {
  const auto train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  const auto val = std::min(n - train, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
  return {train, val, n - train - val};
}

PixelImage reconstruct_standard(const RfFrame& rf, const acoustics::MediumConfig& medium, std::size_t zero_samples) {
  return recon::to_standard_image(recon::fk_reconstruct(recon::zero_early_samples(rf, zero_samples), medium));
}

namespace {

/// Reuses `name` from the cache directory when present, otherwise produces it
/// with `make` (writing to a temporary name first) and copies it into the cache.
template <typename Make>
void produce(const fs::path& target, const fs::path& cache, Make&& make) {
  if (fs::exists(target)) return;
  if (!cache.empty() && fs::exists(cache)) {
    fs::copy_file(cache, target, fs::copy_options::overwrite_existing);
    return;
  }
  const fs::path tmp = target.string() + ".tmp";
  make(tmp);
  fs::rename(tmp, target);
  if (!cache.empty()) {
    const fs::path ctmp = cache.string() + ".tmp" + std::to_string(std::hash<std::string>{}(target.string()));
    fs::copy_file(target, ctmp, fs::copy_options::overwrite_existing);
    fs::rename(ctmp, cache);
  }
}

double abs_percentile(const Array2D<float>& a, double q) {
  std::vector<float> v(a.size());
  std::transform(a.flat().begin(), a.flat().end(), v.begin(), [](float x) { return std::abs(x); });
  const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<long>(k), v.end());
  return v[k];
}

}  // namespace

DatasetManifest gen_dataset(const DatasetConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const auto needles = enumerate_needles(cfg);
  for (const auto& n : needles) optics::rasterize_needle(n.pose, cfg.grid);  // fail early on bad poses

  const fs::path cache = cfg.cache_dir.empty() ? fs::path{} : fs::path(cfg.cache_dir);
  for (const char* sub : {"needles", "backgrounds", "images", "truth"}) fs::create_directories(out_dir / sub);
  if (!cache.empty()) fs::create_directories(cache);

  // Pairing plan: needles cycle through a seeded permutation, backgrounds are uniform.
  Rng plan(cfg.seed, 0x9a1d);
  std::vector<std::size_t> order(needles.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  plan.shuffle(order.begin(), order.end());
  std::vector<std::size_t> needle_of(cfg.count), background_of(cfg.count);
  for (std::size_t e = 0; e < cfg.count; ++e) {
    needle_of[e] = order[e % order.size()];
    background_of[e] = plan.below(cfg.n_backgrounds);
  }
  const std::set<std::size_t> used_needles(needle_of.begin(), needle_of.end());
  const std::set<std::size_t> used_backgrounds(background_of.begin(), background_of.end());

  const auto solver = acoustics::make_solver_config(cfg.grid, cfg.medium, cfg.array);
  auto needle_key = [&](std::size_t id) {
    optics::OpticalProperties t = cfg.tissue;
    t.mu_a = needles[id].mu_a;
    optics::McConfig mc = cfg.mc;
    mc.rng_seed = derive_seed(cfg.mc.rng_seed, id);
    return json_hash({{"grid", to_json(cfg.grid)},
                      {"array", to_json(cfg.array)},
                      {"medium", acoustics::to_json(cfg.medium)},
                      {"tissue", optics::to_json(t)},
                      {"beam", cfg.beam.width},
                      {"mc", optics::to_json(mc)},
                      {"p0_floor", cfg.p0.floor},
                      {"pose", optics::to_json(needles[id].pose)},
                      {"solver", acoustics::to_json(solver)}});
  };
  auto background_cfg = [&](std::size_t id) {
    BackgroundConfig b = cfg.background;
    b.rng_seed = derive_seed(cfg.background.rng_seed, derive_seed(cfg.seed, id));
    return b;
  };
  auto background_key = [&](std::size_t id) {
    return json_hash({{"grid", to_json(cfg.grid)},
                      {"array", to_json(cfg.array)},
                      {"medium", acoustics::to_json(cfg.medium)},
                      {"background", background_json(background_cfg(id))}});
  };

  auto vessel_key = [&](std::size_t id) {
    auto b = background_json(background_cfg(id));
    b.erase("noise_std");
    b.erase("frames");
    return json_hash({{"grid", to_json(cfg.grid)},
                      {"array", to_json(cfg.array)},
                      {"medium", acoustics::to_json(cfg.medium)},
                      {"vessels", b}});
  };

  std::vector<std::size_t> needle_list(used_needles.begin(), used_needles.end());
  std::vector<std::string> needle_name(needles.size());
  for (std::size_t id : needle_list) needle_name[id] = "needle_" + needle_key(id);
  spdlog::info("simulating {} needle placements ({} jobs)", needle_list.size(), cfg.jobs);
  parallel_for(needle_list.size(), cfg.jobs, [&](std::size_t k) {
    const std::size_t id = needle_list[k];
    const auto& spec = needles[id];
    const std::string base = needle_name[id];
    const fs::path rf_path = out_dir / "needles" / (base + ".rf.padf");
    const fs::path p0_path = out_dir / "needles" / (base + ".p0.padf");
    const fs::path gt_path = out_dir / "truth" / (base + ".gt.padf");
    if (fs::exists(rf_path) && fs::exists(p0_path) && fs::exists(gt_path)) return;
    ScalarField p0;
    const fs::path cached_p0 = cache.empty() ? fs::path{} : cache / (base + ".p0.padf");
    produce(p0_path, cached_p0, [&](const fs::path& tmp) {
      optics::OpticalProperties t = cfg.tissue;
      t.mu_a = spec.mu_a;
      optics::McConfig mc = cfg.mc;
      mc.rng_seed = derive_seed(cfg.mc.rng_seed, id);
      mc.threads = 1;
      const auto mask = optics::rasterize_needle(spec.pose, cfg.grid);
      const auto flu = optics::mc_fluence(cfg.grid, t, &mask.mask, cfg.beam, mc);
      save_field(tmp, optics::build_p0(flu, mask.mask, cfg.p0),
                 {{"pose", optics::to_json(spec.pose)}, {"tissue", optics::to_json(t)}, {"mc", optics::to_json(mc)}});
    });
    p0 = load_field(p0_path);
    const fs::path cached_rf = cache.empty() ? fs::path{} : cache / (base + ".rf.padf");
    produce(rf_path, cached_rf, [&](const fs::path& tmp) {
      save_rf(tmp, acoustics::simulate_rf(p0, cfg.medium, cfg.array, solver),
              {{"source", "synthetic_needle"}, {"solver", acoustics::to_json(solver)}, {"medium", acoustics::to_json(cfg.medium)}});
    });
    produce(gt_path, {}, [&](const fs::path& tmp) {
      save_image(tmp, make_ground_truth(p0), Role::initial_pressure, {{"source", "ground_truth"}});
    });
    spdlog::debug("needle {} done", id);
  });

  std::vector<std::size_t> bg_list(used_backgrounds.begin(), used_backgrounds.end());
  std::vector<std::string> bg_name(cfg.n_backgrounds);
  for (std::size_t id : bg_list) bg_name[id] = "background_" + background_key(id);
  spdlog::info("simulating {} backgrounds", bg_list.size());
  parallel_for(bg_list.size(), cfg.jobs, [&](std::size_t k) {
    const std::size_t id = bg_list[k];
    const fs::path path = out_dir / "backgrounds" / (bg_name[id] + ".padf");
    const fs::path cached = cache.empty() ? fs::path{} : cache / (bg_name[id] + ".padf");
    if (fs::exists(path)) return;
    produce(path, cached, [&](const fs::path& tmp) {
      // The noise-free vessel RF does not depend on noise or averaging, so it is cached on its own.
      const auto bcfg = background_cfg(id);
      const std::string vname = "vessels_" + vessel_key(id);
      const fs::path vpath = out_dir / "backgrounds" / (vname + ".padf");
      produce(vpath, cache.empty() ? fs::path{} : cache / (vname + ".padf"), [&](const fs::path& vtmp) {
        save_rf(vtmp, simulate_vessel_rf(bcfg, cfg.grid, cfg.array, cfg.medium), {{"source", "procedural_vessels"}});
      });
      const RfFrame clean = load_rf(vpath);
      BackgroundConfig single = bcfg;
      single.frames = 1;
      const double p99 = abs_percentile(add_background_noise(clean, single).samples, 0.99);
      save_rf(tmp, add_background_noise(clean, bcfg),
              {{"source", "procedural_background"},
               {"background", background_json(bcfg)},
               {"single_frame_p99", p99}});
      fs::remove(vpath);
    });
  });

  DatasetManifest m;
  m.root = out_dir;
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  m.config_hash = json_hash(m.config);
  m.entries.resize(cfg.count);

  // Split: seeded permutation, first 80% train, next 10% val, rest test.
  std::vector<std::size_t> perm(cfg.count);
  for (std::size_t k = 0; k < perm.size(); ++k) perm[k] = k;
  Rng split_rng(cfg.seed, 0x5b11);
  split_rng.shuffle(perm.begin(), perm.end());
  const auto sizes = split_sizes(cfg.count);
  std::vector<std::string> split_of(cfg.count);
  for (std::size_t k = 0; k < perm.size(); ++k)
    split_of[perm[k]] = k < sizes[0] ? "train" : (k < sizes[0] + sizes[1] ? "val" : "test");

  spdlog::info("compositing {} entries", cfg.count);
  std::vector<double> bg_reference(cfg.n_backgrounds, 0.0);
  for (std::size_t id : bg_list) {
    // Needle strength follows the single-acquisition background level, so averaging lowers noise only.
    const auto [h, payload] = read_container(out_dir / "backgrounds" / (bg_name[id] + ".padf"));
    const double p99 = h.extra.value("single_frame_p99", abs_percentile(payload, 0.99));
    bg_reference[id] = p99 > 0.0 ? p99 : 1.0;
  }
  parallel_for(cfg.count, cfg.jobs, [&](std::size_t e) {
    ManifestEntry& me = m.entries[e];
    const std::size_t nid = needle_of[e], bid = background_of[e];
    me.index = e;
    me.needle_id = nid;
    me.background_id = bid;
    me.needle_rf = "needles/" + needle_name[nid] + ".rf.padf";
    me.needle_p0 = "needles/" + needle_name[nid] + ".p0.padf";
    me.ground_truth = "truth/" + needle_name[nid] + ".gt.padf";
    me.background_rf = "backgrounds/" + bg_name[bid] + ".padf";
    me.composite_image = fmt::format("images/entry_{:05d}.padf", e);
    me.pose = needles[nid].pose;
    me.mu_a = needles[nid].mu_a;
    me.target_peak = cfg.target_peak_factor * bg_reference[bid];
    me.split = split_of[e];
    const auto rf = composite_rf(recon::zero_early_samples(load_rf(out_dir / me.needle_rf), cfg.zero_samples),
                                 load_rf(out_dir / me.background_rf), me.target_peak);
    save_image(out_dir / me.composite_image, reconstruct_standard(rf, cfg.medium, cfg.zero_samples), Role::recon_image,
               {{"source", "semi_synthetic_composite"}, {"entry", e}});
  });

  save_manifest(out_dir / "manifest.json", m);
  return m;
}

double regeneration_error(const DatasetManifest& m, const ManifestEntry& e) {
  const auto cfg = m.dataset_config();
  const auto rf = composite_rf(recon::zero_early_samples(load_rf(m.path_of(e.needle_rf)), cfg.zero_samples),
                               load_rf(m.path_of(e.background_rf)), e.target_peak);
  const auto img = reconstruct_standard(rf, cfg.medium, cfg.zero_samples);
  const auto stored = load_image(m.path_of(e.composite_image));
  if (stored.values.rows() != img.values.rows() || stored.values.cols() != img.values.cols())
    return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t k = 0; k < img.values.size(); ++k)
    worst = std::max(worst, static_cast<double>(std::abs(img.values.flat()[k] - stored.values.flat()[k])));
  return worst;
}

}  // namespace panp::dataset
