// Acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "panp/acoustics.hpp"
#include "panp/core/fft.hpp"
#include "panp/core/image_io.hpp"
#include "panp/core/log.hpp"
#include "panp/core/rng.hpp"
#include "panp/detect.hpp"
#include "panp/metrics.hpp"
#include "panp/neural.hpp"
#include "panp/optics.hpp"
#include "panp/pipeline.hpp"
#include "panp/recon.hpp"

namespace fs = std::filesystem;
using namespace panp;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(fmt::format("{}{}", ok ? "" : "FAILED ", what));
  }
  void info(const std::string& what) { notes.push_back("info: " + what); }
};

int report(int id, const std::string& title, const Verdict& v, json& out) {
  std::string detail;
  for (std::size_t k = 0; k < v.notes.size(); ++k) detail += (k ? "; " : "") + v.notes[k];
  std::printf("criterion %d %s: %s (%s)\n", id, title.c_str(), v.pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  out[std::to_string(id)] = {{"title", title}, {"pass", v.pass}, {"notes", v.notes}};
  return v.pass ? 0 : 1;
}

// ---------- criterion 1: physics oracles ----------

std::vector<double> envelope(const Array2D<double>& a, std::size_t ch) {
  const std::size_t n = next_pow2(a.rows());
  ComplexFft1d fft(n);
  auto b = fft.data();
  std::fill(b.begin(), b.end(), cplx{});
  for (std::size_t t = 0; t < a.rows(); ++t) b[t] = a(t, ch);
  fft.forward();
  for (std::size_t k = 1; k < n / 2; ++k) b[k] *= 2.0;
  for (std::size_t k = n / 2 + 1; k < n; ++k) b[k] = 0.0;
  fft.inverse();
  std::vector<double> e(a.rows());
  for (std::size_t t = 0; t < a.rows(); ++t) e[t] = std::abs(b[t]) / double(n);
  return e;
}

Verdict physics() {
  Verdict v;
  {
    // Beer-Lambert: mean fluence over 1 mm depth bins under the beam, mu_s = 0.
    Grid2D g;
    optics::OpticalProperties t{1.0, 0.0, 0.9, 1.4};
    optics::McConfig mc;
    mc.n_photons = 1'000'000;
    mc.rng_seed = 11;
    const auto f = optics::mc_fluence(g, t, nullptr, optics::BeamConfig{}, mc);
    double worst = 0.0;
    for (int b = 0; b < 5; ++b) {
      // Rows 10b+1 .. 10b+10 cover depths [(10b + 0.5) dx, (10b + 10.5) dx].
      const double z0 = (10 * b + 0.5) * 0.1, z1 = z0 + 1.0;
      const double expect = std::exp(-z0) - std::exp(-z1);
      double s = 0.0;
      for (std::size_t r = 10 * b + 1; r < std::size_t(10 * b + 11); ++r)
        for (std::size_t c = 8; c < 392; ++c) s += f.fluence.values(r, c);
      const double got = s / (10.0 * 384.0);
      worst = std::max(worst, std::abs(got - expect) / expect);
    }
    v.check(worst < 0.02, fmt::format("Beer-Lambert worst rel err {:.4f} (< 0.02)", worst));
    v.check(f.audit.relative_error() < 1e-9, fmt::format("audit {:.2e} without scattering", f.audit.relative_error()));

    optics::OpticalProperties ts{1.5, 10.0, 0.9, 1.4};
    optics::McConfig mc2;
    mc2.n_photons = 20000;
    optics::NeedlePose p;
    p.entry_x = 12e-3;
    p.angle_deg = 40;
    p.depth = 10e-3;
    Grid2D g2{200, 200, 0.2e-3};
    const auto m = optics::rasterize_needle(p, g2);
    const auto fs2 = optics::mc_fluence(g2, ts, &m.mask, optics::BeamConfig{}, mc2);
    v.check(fs2.audit.relative_error() < 1e-9,
            fmt::format("audit {:.2e} with scattering, roulette and a needle", fs2.audit.relative_error()));
  }
  {
    // Point source 10 mm below element 64; envelope peak against |source - element| / c.
    Grid2D g{400, 160, 0.1e-3};
    ScalarField p0(g, Role::initial_pressure);
    p0.values(100, 201) = 1.0f;
    acoustics::MediumConfig med;
    TransducerArray arr;
    auto solver = acoustics::make_solver_config(g, med, arr);
    solver.n_steps = 1300;
    const auto t = acoustics::pstd_forward(p0, med, arr, solver);
    double worst = 0.0;
    for (std::size_t k = 0; k < arr.n_elements; ++k) {
      const auto e = envelope(t.data, k);
      const auto peak = double(std::max_element(e.begin(), e.end()) - e.begin());
      const double d = std::hypot(g.x_at(201) - acoustics::element_x(arr, g, k), g.z_at(100));
      worst = std::max(worst, std::abs(peak - d / med.sound_speed * t.sample_rate));
    }
    v.check(worst <= 2.0, fmt::format("PSTD arrival worst {:.2f} internal samples (<= 2)", worst));
  }
  {
    const recon::StandardGeometry geom;
    double worst = 0.0;
    for (double depth_mm : {10.0, 15.0, 25.0}) {
      const auto j = static_cast<std::size_t>(std::lround(depth_mm * 10.0));
      Grid2D g{400, j + 60, 0.1e-3};
      ScalarField p0(g, Role::initial_pressure);
      p0.values(j, 180) = 1.0f;
      const auto rf = acoustics::simulate_rf(p0, {}, {}, acoustics::make_solver_config(g, {}, {}));
      const auto img = recon::to_standard_image(recon::fk_reconstruct(rf, {}));
      std::size_t br = 0, bc = 0;
      float best = -1.0f;
      for (std::size_t r = 0; r < img.height(); ++r)
        for (std::size_t c = 0; c < img.width(); ++c)
          if (img.values(r, c) > best) best = img.values(r, c), br = r, bc = c;
      const double err = std::hypot(double(bc) - geom.col_of(g.x_at(180) - g.center_x()), double(br) - geom.row_of(g.z_at(j)));
      worst = std::max(worst, err);
    }
    v.check(worst <= 2.0, fmt::format("round-trip localization worst {:.2f} px at 10/15/25 mm (<= 2)", worst));
  }
  return v;
}

// ---------- criterion 2: numerical checks ----------

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

template <typename V>
double central(V& v, std::size_t k, const std::function<double()>& f, double h = 1e-6) {
  const double keep = v[k];
  v[k] = keep + h;
  const double fp = f();
  v[k] = keep - h;
  const double fm = f();
  v[k] = keep;
  return (fp - fm) / (2 * h);
}

using T = neural::Tensor<double>;

T random_tensor(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  T t(c, h, w);
  Rng rng(seed);
  for (auto& x : t.v) x = rng.uniform(-1.0, 1.0);
  return t;
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::vector<double> v(n);
  Rng rng(seed);
  for (auto& x : v) x = rng.uniform(-0.5, 0.5);
  return v;
}

// Worst relative error of dL/d(x, w, b) for L = <layer(x), r>.
double layer_check(T x, std::vector<double> w, std::vector<double> b,
                   const std::function<T(const T&, const double*, const double*)>& fwd,
                   const std::function<T(const T&, const double*, const T&, double*, double*)>& bwd) {
  const auto y = fwd(x, w.data(), b.data());
  const T r = random_tensor(y.c, y.h, y.w, 99);
  std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0);
  const auto dx = bwd(x, w.data(), r, dw.data(), db.data());
  auto loss = [&] {
    const auto o = fwd(x, w.data(), b.data());
    double s = 0.0;
    for (std::size_t k = 0; k < o.v.size(); ++k) s += o.v[k] * r.v[k];
    return s;
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < x.v.size(); ++k) worst = std::max(worst, rel_err(dx.v[k], central(x.v, k, loss)));
  for (std::size_t k = 0; k < w.size(); ++k) worst = std::max(worst, rel_err(dw[k], central(w, k, loss)));
  for (std::size_t k = 0; k < b.size(); ++k) worst = std::max(worst, rel_err(db[k], central(b, k, loss)));
  return worst;
}

Verdict numerics() {
  namespace ops = neural::ops;
  Verdict v;
  std::vector<double> none;
  const std::vector<std::pair<std::string, double>> layers{
      {"conv3", layer_check(random_tensor(3, 5, 6, 1), random_vector(4 * 3 * 9, 2), random_vector(4, 3),
                            [](const T& x, const double* w, const double* b) { return ops::conv_forward(x, w, b, 4, 3); },
                            [](const T& x, const double* w, const T& dy, double* dw, double* db) {
                              return ops::conv_backward(x, w, 4, 3, dy, dw, db);
                            })},
      {"conv1", layer_check(random_tensor(3, 5, 6, 4), random_vector(4 * 3, 5), random_vector(4, 6),
                            [](const T& x, const double* w, const double* b) { return ops::conv_forward(x, w, b, 4, 1); },
                            [](const T& x, const double* w, const T& dy, double* dw, double* db) {
                              return ops::conv_backward(x, w, 4, 1, dy, dw, db);
                            })},
      {"relu", layer_check(random_tensor(2, 4, 4, 5), none, none,
                           [](const T& x, const double*, const double*) {
                             auto y = x;
                             ops::relu_inplace(y);
                             return y;
                           },
                           [](const T& x, const double*, const T& dy, double*, double*) {
                             auto y = x;
                             ops::relu_inplace(y);
                             auto d = dy;
                             ops::relu_backward(y, d);
                             return d;
                           })},
      {"maxpool", layer_check(random_tensor(2, 6, 4, 11), none, none,
                              [](const T& x, const double*, const double*) {
                                std::vector<std::uint32_t> am;
                                return ops::maxpool_forward(x, am);
                              },
                              [](const T& x, const double*, const T& dy, double*, double*) {
                                std::vector<std::uint32_t> am;
                                ops::maxpool_forward(x, am);
                                return ops::maxpool_backward(dy, am, x.c, x.h, x.w);
                              })},
      {"upconv", layer_check(random_tensor(3, 3, 4, 21), random_vector(2 * 4 * 3, 22), random_vector(2, 23),
                             [](const T& x, const double* w, const double* b) { return ops::upconv_forward(x, w, b, 2); },
                             [](const T& x, const double* w, const T& dy, double* dw, double* db) {
                               return ops::upconv_backward(x, w, 2, dy, dw, db);
                             })},
      {"concat", [] {
         const auto other = random_tensor(2, 3, 3, 31);
         std::vector<double> n;
         return layer_check(random_tensor(3, 3, 3, 32), n, n,
                            [&](const T& x, const double*, const double*) { return ops::concat(other, x); },
                            [](const T&, const double*, const T& dy, double*, double*) { return ops::split(dy, 2).second; });
       }()}};
  for (const auto& [name, err] : layers) v.check(err < 1e-4, fmt::format("{} grad {:.1e}", name, err));

  {
    // Default 3-scale network on 16x16, every layer sampled.
    neural::UNet<double> net(neural::NetworkConfig{});
    net.initialize(6);
    Rng rb(7);
    for (const auto& l : net.layers())
      for (std::size_t k = 0; k < l.cout; ++k) net.params()[l.bias_offset() + k] = rb.uniform(-0.05, 0.05);
    std::vector<T> xs{random_tensor(1, 16, 16, 43)}, ts{random_tensor(1, 16, 16, 44)};
    neural::AlignedVector<double> grad, dummy;
    net.loss_and_gradient(xs, ts, grad);
    auto loss = [&] { return net.loss_and_gradient(xs, ts, dummy); };
    Rng pick(8);
    double worst = 0.0;
    std::size_t checked = 0;
    for (const auto& l : net.layers()) {
      for (int k = 0; k < 14; ++k) {
        const std::size_t idx = k < 12 ? l.offset + pick.below(l.kernel_size()) : l.bias_offset() + pick.below(l.cout);
        worst = std::max(worst, rel_err(grad[idx], central(net.params(), idx, loss)));
        ++checked;
      }
    }
    v.check(worst < 1e-4, fmt::format("3-scale net 16x16 grad {:.1e} over {} parameters", worst, checked));
  }
  {
    Rng rng(2024);
    std::size_t mismatches = 0;
    for (int t = 0; t < 200; ++t) {
      auto random_set = [&] {
        metrics::PointSet s(1 + rng.below(500));
        for (auto& p : s) p = {double(rng.below(256)), double(rng.below(256))};
        return s;
      };
      const auto a = random_set(), b = random_set();
      if (metrics::mhd(a, b) != metrics::mhd_brute_force(a, b)) ++mismatches;
    }
    v.check(mismatches == 0, fmt::format("MHD index vs brute force: {} mismatches in 200 pairs", mismatches));
  }
  {
    // Noiseless lines drawn as one pixel per column (or row) at known (r, theta).
    std::size_t misses = 0, lines = 0;
    const std::size_t side = 256;
    for (double theta : {10.0, 30.0, 45.0, 60.0, 90.0, 120.0, 150.0, 170.0})
      for (double r : {-60.0, 40.0, 120.0}) {
        detect::Mask m(side, side, 0);
        const double th = theta * std::acos(-1.0) / 180.0, s = std::sin(th), c = std::cos(th);
        std::size_t on = 0;
        for (std::size_t i = 0; i < side; ++i) {
          // r = x sin + y cos: solve for y given x, or for x given y, along the steeper axis.
          double x, y;
          if (std::abs(c) >= std::abs(s)) x = double(i), y = (r - x * s) / c;
          else y = double(i), x = (r - y * c) / s;
          const long xi = std::lround(x), yi = std::lround(y);
          if (xi < 0 || yi < 0 || xi >= long(side) || yi >= long(side)) continue;
          m(std::size_t(yi), std::size_t(xi)) = 1;
          ++on;
        }
        if (on < 60) continue;
        ++lines;
        const auto acc = detect::hough_accumulate(m);
        const auto peaks = detect::hough_peaks(acc, 1, 1);
        const double dth = std::abs(peaks.at(0).theta_deg - theta);
        const bool ok = (std::abs(peaks[0].r - r) <= acc.r_res && std::min(dth, 180.0 - dth) <= acc.theta_res) ||
                        (std::abs(peaks[0].r + r) <= acc.r_res && std::abs(dth - 180.0) <= acc.theta_res);
        if (!ok) ++misses;
      }
    v.check(misses == 0, fmt::format("Hough within one bin: {} of {} lines missed", misses, lines));
  }
  return v;
}

// ---------- criterion 3: reported arithmetic ----------

Verdict arithmetic() {
  Verdict v;
  struct Seq {
    std::size_t with, without, missed, fp;
    double tpr, fpr;
  };
  const std::vector<Seq> seqs{{92, 36, 0, 0, 100.0, 0.0}, {53, 75, 5, 1, 90.6, 1.3}, {99, 29, 3, 1, 97.0, 3.4}};
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    const auto& s = seqs[k];
    std::vector<bool> detected, has;
    for (std::size_t f = 0; f < s.with; ++f) has.push_back(true), detected.push_back(f >= s.missed);
    for (std::size_t f = 0; f < s.without; ++f) has.push_back(false), detected.push_back(f < s.fp);
    const auto st = metrics::sequence_stats(detected, has);
    const double tpr = std::round(st.tpr * 1000.0) / 10.0, fpr = std::round(st.fpr * 1000.0) / 10.0;
    v.check(tpr == s.tpr && fpr == s.fpr, fmt::format("sequence {} TPR {:.1f}% FPR {:.1f}%", k + 1, tpr, fpr));
  }
  neural::TrainConfig tc;
  tc.iterations = 5000;
  const double a = neural::lr_at(0, tc), b = neural::lr_at(2500, tc), c = neural::lr_at(5000, tc);
  v.check(a == 0.001 && b == 0.0005 && c == 0.0, fmt::format("lr_at {} {} {}", a, b, c));
  return v;
}

// ---------- criteria 4 to 7: end to end ----------

pipeline::PipelineConfig desk_config(const fs::path& cache) {
  pipeline::PipelineConfig c;
  c.dataset.grid = {200, 200, 0.2e-3};
  c.dataset.count = 200;
  c.dataset.cache_dir = cache.string();
  c.network.n_scales = 3;
  c.train.iterations = 2000;
  c.train.input_size = 128;
  return c;
}

std::vector<std::string> differing_files(const fs::path& a, const fs::path& b) {
  std::vector<std::string> diff;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    if (rel == "timing.json") continue;
    const auto other = b / rel;
    if (!fs::exists(other) || read_bytes(e.path()) != read_bytes(other)) diff.push_back(rel.string());
  }
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file() && !fs::exists(a / fs::relative(e.path(), b))) diff.push_back(fs::relative(e.path(), b).string());
  return diff;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  unsigned jobs = 1;
  app.add_option("--work", work, "working directory (kept between runs as a simulation cache)");
  app.add_option("--only", only, "criteria to run (default all)");
  app.add_option("--jobs", jobs, "worker threads");
  CLI11_PARSE(app, argc, argv);
  auto want = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

  const fs::path root = fs::absolute(work);
  const fs::path cache = root / "cache";
  fs::create_directories(root);
  json results = json::object();
  int failures = 0;

  if (want(1)) {
    const auto t0 = Clock::now();
    auto v = physics();
    const double s = since(t0);
    v.check(s < 300.0, fmt::format("runtime {:.0f} s (< 300)", s));
    failures += report(1, "physics oracles", v, results);
  }
  if (want(2)) failures += report(2, "numerical checks", numerics(), results);
  if (want(3)) failures += report(3, "reported arithmetic", arithmetic(), results);

  if (want(4) || want(5)) {
    auto cfg = desk_config(cache);
    cfg.jobs = jobs;
    const auto t0 = Clock::now();
    const auto res = pipeline::run_pipeline(cfg, root / "desk");
    const double s = since(t0);
    const auto& sm = res.summary;
    using pipeline::Method;
    if (want(4)) {
      Verdict v;
      v.check(sm.visible > 0, fmt::format("{} of {} held-out frames show the needle", sm.visible, sm.frames));
      v.check(std::isfinite(sm.snr_ratio) && sm.snr_ratio >= 3.0,
              fmt::format("SNR U-Net/conventional {:.2f} (>= 3; conventional {:.2f}, U-Net {:.2f})", sm.snr_ratio,
                          sm[Method::conventional].snr.mean, sm[Method::unet].snr.mean));
      v.check(sm.mhd_ordering >= 0.9,
              fmt::format("MHD conventional > U-Net > post-processed on {:.0f}% of frames (>= 90%; means {:.1f} / {:.1f} / {:.1f})",
                          100.0 * sm.mhd_ordering, sm[Method::conventional].mhd.mean, sm[Method::unet].mhd.mean,
                          sm[Method::unet_postproc].mhd.mean));
      std::size_t ties = 0, line_ordered = 0, scored = 0;
      for (const auto& f : res.frames) {
        if (!f.visible || !f.has_unet) continue;
        ++scored;
        const double c = *f[Method::conventional].mhd, u = *f[Method::unet].mhd;
        if (*f[Method::unet_postproc].mhd == u) ++ties;
        if (c > u && u > *f[Method::unet_postproc_line].mhd) ++line_ordered;
      }
      v.info(fmt::format("post-processed mask equals the U-Net mask score on {} of {} frames", ties, scored));
      v.info(fmt::format("ordering with the fitted line as the post-processed set: {} of {} frames", line_ordered,
                         scored));
      v.check(s <= 7200.0, fmt::format("runtime {:.0f} s (<= 7200)", s));
      failures += report(4, "desk-scale learning", v, results);
    }
    if (want(5)) {
      Verdict v;
      const double pp = sm[Method::unet_postproc].mhd.mean, sht = sm[Method::sht].mhd.mean;
      v.check(sm[Method::sht].mhd.n > 0 && pp < sht, fmt::format("MHD post-processed {:.2f} < SHT {:.2f}", pp, sht));
      failures += report(5, "baseline comparison", v, results);
    }
  }

  if (want(6)) {
    // Small pipeline from scratch twice (no shared cache), compared byte for byte.
    pipeline::PipelineConfig c;
    c.dataset.grid = {200, 200, 0.2e-3};
    c.dataset.poses.depths = {10e-3, 15e-3, 20e-3};
    c.dataset.poses.angles_deg = {30, 45};
    c.dataset.poses.mu_a = {1.0};
    c.dataset.n_backgrounds = 4;
    c.dataset.count = 20;
    c.train.iterations = 60;
    c.train.input_size = 64;
    c.jobs = jobs;
    const fs::path a = root / "determinism_a", b = root / "determinism_b";
    fs::remove_all(a);
    fs::remove_all(b);
    pipeline::run_pipeline(c, a);
    pipeline::run_pipeline(c, b);
    const auto diff = differing_files(a, b);
    Verdict v;
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) files += e.is_regular_file();
    v.check(diff.empty(), fmt::format("{} of {} files differ{}", diff.size(), files,
                                      diff.empty() ? std::string() : " (first: " + diff.front() + ")"));
    for (const char* f : {"dataset/manifest.json", "weights.padf", "metrics.json", "summary.json"})
      v.check(fs::exists(a / f), fmt::format("{} written", f));
    failures += report(6, "determinism", v, results);
  }

  if (want(7)) {
    auto c = desk_config(cache);
    c.dataset.count = 50;
    c.train.iterations = 150;
    c.jobs = jobs;
    const auto table = pipeline::run_sweep(pipeline::SweepKind::capacity, c, root / "capacity");
    Verdict v;
    auto col = [&](const std::string& name) {
      const auto it = std::find(table.columns.begin(), table.columns.end(), name);
      return it == table.columns.end() ? std::string::npos : std::size_t(it - table.columns.begin());
    };
    v.check(table.rows.size() == 3, fmt::format("{} models", table.rows.size()));
    for (const char* name : {"training_seconds", "test_mse_mean", "inference_seconds", "snr_unet_mean", "mhd_unet_mean"})
      v.check(col(name) != std::string::npos, fmt::format("column {}", name));
    const auto fl = col("final_loss");
    std::string trend;
    for (const auto& row : table.rows) {
      const bool finite = fl != std::string::npos && std::isfinite(std::stod(row[fl]));
      v.check(finite, fmt::format("{} scales final loss {}", row[0], fl == std::string::npos ? "?" : row[fl]));
      trend += fmt::format(" {}:{}", row[0], row[col("test_mse_mean")]);
    }
    v.notes.push_back("test MSE by scales" + trend + " (reported, not asserted)");
    failures += report(7, "capacity sweep", v, results);
  }

  write_json((root / "acceptance.json").string(), results);
  return failures == 0 ? 0 : 1;
}
