#include "panp/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "panp/core/container.hpp"
#include "panp/core/parallel.hpp"
#include "panp/core/resample.hpp"
#include "panp/optics.hpp"

namespace panp::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json optional_segment(const std::optional<detect::NeedleSegment>& s) {
  return s ? detect::to_json(*s) : json(nullptr);
}

json threshold_json(const detect::ThresholdConfig& t) {
  return {{"method", detect::to_string(t.method)}, {"alpha", t.alpha}};
}

void read_threshold(ConfigReader r, detect::ThresholdConfig& t) {
  std::string method = detect::to_string(t.method);
  r.get("method", method).get("alpha", t.alpha);
  try {
    t.method = detect::threshold_method_from_string(method);
  } catch (const ConfigError& e) {
    r.error("method", e.what());
  }
  r.reject_unknown();
}

std::string mean_std(const Stat& s) {
  if (s.n == 0) return "-";
  return fmt::format("{:.2f} ± {:.2f}", s.mean, s.std);
}

}  // namespace

void EvalConfig::validate() const {
  if (size < 16) throw ConfigError(fmt::format("eval.size must be at least 16, got {}", size));
  for (const auto* t : {&threshold, &hough.threshold})
    if (!(t->alpha > 0.0 && t->alpha <= 1.0)) throw ConfigError("threshold alpha must lie in (0, 1]");
  if (!(hough.r_res > 0.0) || !(hough.theta_res > 0.0)) throw ConfigError("hough resolutions must be positive");
  if (hough.n_peaks == 0) throw ConfigError("hough.n_peaks must be at least 1");
}

json to_json(const EvalConfig& c) {
  return {{"size", c.size},
          {"threshold", threshold_json(c.threshold)},
          {"hough",
           {{"threshold", threshold_json(c.hough.threshold)},
            {"r_res", c.hough.r_res},
            {"theta_res", c.hough.theta_res},
            {"n_peaks", c.hough.n_peaks},
            {"min_votes", c.hough.min_votes}}},
          {"snr_dilation", c.snr_dilation}};
}

void read_eval_config(ConfigReader r, EvalConfig& c) {
  r.get("size", c.size).get("snr_dilation", c.snr_dilation);
  read_threshold(r.child("threshold"), c.threshold);
  {
    auto h = r.child("hough");
    read_threshold(h.child("threshold"), c.hough.threshold);
    h.get("r_res", c.hough.r_res)
        .get("theta_res", c.hough.theta_res)
        .get("n_peaks", c.hough.n_peaks)
        .get("min_votes", c.hough.min_votes);
    h.reject_unknown();
  }
  r.reject_unknown();
}

std::string to_string(Method m) {
  switch (m) {
    case Method::conventional: return "conventional";
    case Method::unet: return "unet";
    case Method::unet_postproc: return "unet_postproc";
    case Method::unet_postproc_line: return "unet_postproc_line";
    case Method::sht: return "sht";
  }
  return "?";
}

FrameEval evaluate_frame(const PixelImage& conventional, const PixelImage* unet,
                         const std::optional<detect::NeedleSegment>& truth, const EvalConfig& cfg) {
  const std::size_t w = conventional.width(), h = conventional.height();
  if (unet && (unet->width() != w || unet->height() != h))
    throw Error(fmt::format("U-Net image is {}x{} but the conventional image is {}x{}", unet->width(),
                            unet->height(), w, h));
  FrameEval f;
  f.has_unet = unet != nullptr;
  f.truth = truth;
  metrics::PointSet gt;
  if (truth) gt = metrics::segment_to_pointset(*truth, w, h);
  f.visible = !gt.empty();
  const double penalty = std::hypot(static_cast<double>(w), static_cast<double>(h));

  auto score = [&](MethodEval& me, const metrics::PointSet& pred) {
    me.detected = !pred.empty();
    if (f.visible) me.mhd = pred.empty() ? penalty : metrics::mhd(pred, gt);
  };
  auto snr_of = [&](const PixelImage& img) -> std::optional<double> {
    if (!f.visible) return std::nullopt;
    try {
      return metrics::snr(img, *truth, cfg.snr_dilation).snr;
    } catch (const Error&) {
      return std::nullopt;
    }
  };
  auto segment_points = [&](const std::optional<detect::NeedleSegment>& s) {
    return s ? metrics::segment_to_pointset(*s, w, h) : metrics::PointSet{};
  };

  {
    auto& me = f[Method::conventional];
    score(me, metrics::mask_to_pointset(detect::binarize(conventional, cfg.threshold).mask));
    me.snr = snr_of(conventional);
  }
  {
    auto& me = f[Method::sht];
    me.segment = detect::hough_detect(conventional, cfg.hough).segment;
    score(me, segment_points(me.segment));
  }
  if (unet) {
    auto& u = f[Method::unet];
    score(u, metrics::mask_to_pointset(detect::binarize(*unet, cfg.threshold).mask));
    u.snr = snr_of(*unet);
    const auto pp = detect::postprocess(*unet, cfg.threshold);
    auto& p = f[Method::unet_postproc];
    p.segment = pp.segment;
    score(p, metrics::mask_to_pointset(pp.mask));
    auto& l = f[Method::unet_postproc_line];
    l.segment = pp.segment;
    score(l, segment_points(pp.segment));
  }
  return f;
}

double visible_depth(const dataset::DatasetConfig& cfg) {
  return static_cast<double>(cfg.zero_samples) * cfg.medium.sound_speed / cfg.array.sample_rate;
}

PixelImage conventional_image(const dataset::DatasetManifest& m, const dataset::ManifestEntry& e, std::size_t size) {
  auto img = load_image(m.path_of(e.composite_image));
  if (img.width() == size && img.height() == size) return img;
  return resize_bicubic(img, size, size);
}

std::vector<const dataset::ManifestEntry*> select(const dataset::DatasetManifest& m, const std::string& split) {
  if (split == "all") {
    std::vector<const dataset::ManifestEntry*> out;
    for (const auto& e : m.entries) out.push_back(&e);
    return out;
  }
  if (split != "train" && split != "val" && split != "test")
    throw ConfigError(fmt::format("unknown split '{}' (expected train, val, test or all)", split));
  return m.split(split);
}

std::vector<FrameEval> evaluate(const dataset::DatasetManifest& m, const std::string& split, const Predictor& unet,
                                const EvalConfig& cfg, unsigned jobs) {
  cfg.validate();
  const auto dcfg = m.dataset_config();
  const double min_depth = visible_depth(dcfg);
  const auto entries = select(m, split);
  std::vector<FrameEval> out(entries.size());
  parallel_for(entries.size(), jobs, [&](std::size_t k) {
    const auto& e = *entries[k];
    const auto conv = conventional_image(m, e, cfg.size);
    const auto pred = unet ? unet(e) : std::nullopt;
    const auto truth = dataset::truth_segment(e.pose, dcfg.grid, cfg.size, {}, min_depth);
    out[k] = evaluate_frame(conv, pred ? &*pred : nullptr, truth, cfg);
    out[k].index = e.index;
  });
  return out;
}

Stat stat_of(const std::vector<double>& v) {
  Stat s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

EvalSummary summarize(const std::vector<FrameEval>& frames) {
  EvalSummary s;
  s.frames = frames.size();
  std::array<std::vector<double>, kMethods.size()> snrs, mhds;
  std::vector<double> ratios;
  std::size_t ordered = 0, ordering_frames = 0;
  for (const auto& f : frames) {
    s.has_unet = s.has_unet || f.has_unet;
    if (f.visible) ++s.visible;
    for (std::size_t k = 0; k < kMethods.size(); ++k) {
      const auto& me = f.methods[k];
      if (me.detected) ++s.methods[k].detected;
      if (me.mhd) mhds[k].push_back(*me.mhd);
      if (me.snr) snrs[k].push_back(*me.snr);
      else if (f.visible && (kMethods[k] == Method::conventional || (f.has_unet && kMethods[k] == Method::unet)))
        ++s.methods[k].snr_undefined;
    }
    const auto &c = f[Method::conventional], &u = f[Method::unet], &p = f[Method::unet_postproc];
    if (c.snr && u.snr && *c.snr > 0.0) ratios.push_back(*u.snr / *c.snr);
    if (f.visible && f.has_unet) {
      ++ordering_frames;
      if (*c.mhd > *u.mhd && *u.mhd > *p.mhd) ++ordered;
    }
  }
  for (std::size_t k = 0; k < kMethods.size(); ++k) {
    s.methods[k].snr = stat_of(snrs[k]);
    s.methods[k].mhd = stat_of(mhds[k]);
  }
  const auto &cs = s[Method::conventional].snr, &us = s[Method::unet].snr;
  s.snr_ratio = cs.n && us.n && cs.mean > 0.0 ? us.mean / cs.mean : std::numeric_limits<double>::quiet_NaN();
  s.mean_snr_ratio_per_frame = ratios.empty() ? std::numeric_limits<double>::quiet_NaN() : stat_of(ratios).mean;
  s.mhd_ordering = ordering_frames ? static_cast<double>(ordered) / static_cast<double>(ordering_frames) : 0.0;
  return s;
}

json to_json(const FrameEval& f) {
  json methods = json::object();
  for (std::size_t k = 0; k < kMethods.size(); ++k) {
    const auto m = kMethods[k];
    if (!f.has_unet && m != Method::conventional && m != Method::sht) continue;
    const auto& me = f.methods[k];
    json j = {{"detected", me.detected}, {"mhd", optional_number(me.mhd)}};
    if (m == Method::conventional || m == Method::unet) j["snr"] = optional_number(me.snr);
    if (m == Method::unet_postproc || m == Method::sht) j["segment"] = optional_segment(me.segment);
    methods[to_string(m)] = j;
  }
  return {{"index", f.index}, {"visible", f.visible}, {"truth", optional_segment(f.truth)}, {"methods", methods}};
}

json to_json(const EvalSummary& s) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  auto stat = [](const Stat& st) { return json{{"mean", st.mean}, {"std", st.std}, {"n", st.n}}; };
  json methods = json::object();
  for (std::size_t k = 0; k < kMethods.size(); ++k) {
    const auto& m = s.methods[k];
    methods[to_string(kMethods[k])] = {{"snr", stat(m.snr)},
                                       {"mhd", stat(m.mhd)},
                                       {"detected", m.detected},
                                       {"snr_undefined", m.snr_undefined}};
  }
  return {{"frames", s.frames},
          {"visible_frames", s.visible},
          {"has_unet", s.has_unet},
          {"methods", methods},
          {"snr_ratio", num(s.snr_ratio)},
          {"mean_snr_ratio_per_frame", num(s.mean_snr_ratio_per_frame)},
          {"mhd_ordering_fraction", s.mhd_ordering}};
}

json summary_table(const EvalSummary& s) {
  const std::vector<std::pair<std::string, Method>> cols{{"Conventional", Method::conventional},
                                                         {"U-Net", Method::unet},
                                                         {"U-Net + post-processing", Method::unet_postproc},
                                                         {"U-Net + post-processing (fitted line)", Method::unet_postproc_line},
                                                         {"SHT", Method::sht}};
  json names = json::array(), snr = json::array(), mhd = json::array();
  for (const auto& [name, m] : cols) {
    names.push_back(name);
    const bool intensity = m == Method::conventional || m == Method::unet;
    snr.push_back(intensity ? mean_std(s[m].snr) : "-");
    mhd.push_back(mean_std(s[m].mhd));
  }
  return {{"columns", names}, {"SNR", snr}, {"MHD", mhd}};
}

json metrics_json(const std::vector<FrameEval>& frames, const EvalConfig& cfg, const std::string& split) {
  const auto s = summarize(frames);
  json per_frame = json::array();
  for (const auto& f : frames) per_frame.push_back(to_json(f));
  return {{"schema_version", kSchemaVersion},
          {"split", split},
          {"eval", to_json(cfg)},
          {"summary", to_json(s)},
          {"table", summary_table(s)},
          {"frames", per_frame}};
}

json detection_json(const PixelImage& image, const std::string& method, const EvalConfig& cfg) {
  if (method == "unet-postproc") {
    const auto pp = detect::postprocess(image, cfg.threshold);
    return {{"schema_version", kSchemaVersion},
            {"method", method},
            {"threshold", pp.threshold},
            {"threshold_config", threshold_json(cfg.threshold)},
            {"mask_pixels", detect::count_set(pp.mask)},
            {"segment", optional_segment(pp.segment)}};
  }
  if (method == "hough") {
    const auto h = detect::hough_detect(image, cfg.hough);
    json lines = json::array();
    for (const auto& l : h.lines) lines.push_back(detect::to_json(l));
    return {{"schema_version", kSchemaVersion},
            {"method", method},
            {"threshold", h.threshold},
            {"threshold_config", threshold_json(cfg.hough.threshold)},
            {"lines", lines},
            {"segment", optional_segment(h.segment)}};
  }
  throw ConfigError(fmt::format("unknown detection method '{}' (expected unet-postproc or hough)", method));
}

RgbImage render_overlay(const PixelImage& image, const std::optional<detect::NeedleSegment>& segment) {
  const auto gray = to_gray8(image);
  RgbImage out(image.width(), image.height());
  for (std::size_t k = 0; k < gray.size(); ++k)
    for (std::size_t c = 0; c < 3; ++c) out.pixels[3 * k + c] = gray[k];
  if (segment)
    for (const auto& p : metrics::segment_to_pointset(*segment, image.width(), image.height()))
      out.set(static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y), 0, 255, 0);
  return out;
}

RgbImage render_plot(const std::vector<PlotSeries>& series, std::size_t width, std::size_t height) {
  RgbImage img(width, height, 255);
  const long margin = 40;
  const long x0 = margin, x1 = static_cast<long>(width) - margin / 2;
  const long y0 = margin / 2, y1 = static_cast<long>(height) - margin;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      const double sd = k < s.std.size() ? s.std[k] : 0.0;
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.mean[k])) continue;
      xmin = std::min(xmin, s.x[k]);
      xmax = std::max(xmax, s.x[k]);
      ymin = std::min(ymin, s.mean[k] - sd);
      ymax = std::max(ymax, s.mean[k] + sd);
    }
  if (!std::isfinite(xmin)) xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double x) { return x0 + std::lround((x - xmin) / (xmax - xmin) * static_cast<double>(x1 - x0)); };
  auto py = [&](double y) { return y1 - std::lround((y - ymin) / (ymax - ymin) * static_cast<double>(y1 - y0)); };
  auto blend = [&](long x, long y, const std::array<std::uint8_t, 3>& c, double a) {
    if (x < 0 || y < 0 || x >= static_cast<long>(width) || y >= static_cast<long>(height)) return;
    auto* p = &img.pixels[(static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)) * 3];
    for (int k = 0; k < 3; ++k) p[k] = static_cast<std::uint8_t>(std::lround((1.0 - a) * p[k] + a * c[k]));
  };
  auto line = [&](long xa, long ya, long xb, long yb, const std::array<std::uint8_t, 3>& c) {
    const long dx = std::abs(xb - xa), dy = -std::abs(yb - ya), sx = xa < xb ? 1 : -1, sy = ya < yb ? 1 : -1;
    long err = dx + dy;
    for (;;) {
      for (long t = 0; t < 2; ++t) blend(xa, ya + t, c, 1.0);
      if (xa == xb && ya == yb) break;
      const long e2 = 2 * err;
      if (e2 >= dy) err += dy, xa += sx;
      if (e2 <= dx) err += dx, ya += sy;
    }
  };

  const std::array<std::uint8_t, 3> grid{225, 225, 225}, axis{60, 60, 60};
  for (int t = 0; t <= 4; ++t) {
    const long gy = y0 + (y1 - y0) * t / 4, gx = x0 + (x1 - x0) * t / 4;
    line(x0, gy, x1, gy, grid);
    line(gx, y0, gx, y1, grid);
  }
  for (const auto& s : series) {
    if (s.x.empty()) continue;
    // Band: interpolate mean +- std along each pixel column between points.
    for (std::size_t k = 0; k + 1 < s.x.size() || (s.x.size() == 1 && k == 0); ++k) {
      const std::size_t k2 = s.x.size() == 1 ? k : k + 1;
      const long xa = px(s.x[k]), xb = s.x.size() == 1 ? xa : px(s.x[k2]);
      for (long x = std::min(xa, xb); x <= std::max(xa, xb); ++x) {
        const double t = xb == xa ? 0.0 : static_cast<double>(x - xa) / static_cast<double>(xb - xa);
        const double m = s.mean[k] + t * (s.mean[k2] - s.mean[k]);
        const double sd = s.std[k] + t * (s.std[k2] - s.std[k]);
        for (long y = py(m + sd); y <= py(m - sd); ++y) blend(x, y, s.color, 0.25);
      }
      if (s.x.size() == 1) break;
    }
    for (std::size_t k = 0; k + 1 < s.x.size(); ++k)
      line(px(s.x[k]), py(s.mean[k]), px(s.x[k + 1]), py(s.mean[k + 1]), s.color);
    for (std::size_t k = 0; k < s.x.size(); ++k)
      for (long dy = -2; dy <= 2; ++dy)
        for (long dx = -2; dx <= 2; ++dx) blend(px(s.x[k]) + dx, py(s.mean[k]) + dy, s.color, 1.0);
  }
  line(x0, y0, x0, y1, axis);
  line(x0, y1, x1, y1, axis);
  return img;
}

void PipelineConfig::validate() const {
  dataset.validate();
  network.validate();
  train.validate();
  eval.validate();
  const auto div = network.divisor();
  if (train.input_size % div != 0)
    throw ConfigError(fmt::format("train.input_size {} is not a multiple of {}", train.input_size, div));
  if (eval.size % div != 0) throw ConfigError(fmt::format("eval.size {} is not a multiple of {}", eval.size, div));
  for (auto k : averaging)
    if (k == 0) throw ConfigError("averaging: frame counts must be at least 1");
  for (const auto& g : gauges) {
    try {
      optics::gauge_diameter(g);
    } catch (const Error& e) {
      throw ConfigError(fmt::format("gauges: {}", e.what()));
    }
  }
  for (auto s : scales) {
    neural::NetworkConfig n = network;
    n.n_scales = s;
    n.validate();
    if (train.input_size % n.divisor() != 0 || eval.size % n.divisor() != 0)
      throw ConfigError(fmt::format("scales: {} scales need sizes that are multiples of {}", s, n.divisor()));
  }
  for (auto s : input_sizes)
    if (s < div || s % div != 0) throw ConfigError(fmt::format("input_sizes: {} is not a multiple of {}", s, div));
}

json to_json(const PipelineConfig& c) {
  json j = {{"schema_version", kSchemaVersion},
            {"dataset", dataset::to_json(c.dataset)},
            {"network", neural::to_json(c.network)},
            {"train", neural::to_json(c.train)},
            {"eval", to_json(c.eval)},
            {"overlays", c.overlays},
            {"averaging", c.averaging},
            {"gauges", c.gauges},
            {"scales", c.scales},
            {"input_sizes", c.input_sizes},
            {"sweep_count", c.sweep_count}};
  if (!c.weights.empty()) j["weights"] = c.weights;
  return j;
}

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  ConfigReader r(j);
  int schema = kSchemaVersion;
  r.get("schema_version", schema);
  if (schema != kSchemaVersion)
    r.error("schema_version", fmt::format("unsupported version {} (this build reads {})", schema, kSchemaVersion));
  {
    auto d = r.child("dataset");
    dataset::read_dataset_config(d, c.dataset);
    d.reject_unknown();
  }
  {
    auto n = r.child("network");
    n.get("n_scales", c.network.n_scales).get("base_channels", c.network.base_channels);
    n.reject_unknown();
  }
  {
    auto t = r.child("train");
    t.get("iterations", c.train.iterations)
        .get("batch_size", c.train.batch_size)
        .get("lr0", c.train.lr0)
        .get("beta1", c.train.beta1)
        .get("beta2", c.train.beta2)
        .get("eps", c.train.eps)
        .get("seed", c.train.seed)
        .get("input_size", c.train.input_size)
        .get("val_every", c.train.val_every);
    t.reject_unknown();
  }
  read_eval_config(r.child("eval"), c.eval);
  std::uint64_t seed = 0;
  const bool has_seed = r.has("seed");
  r.get("seed", seed)
      .get("jobs", c.jobs)
      .get("overlays", c.overlays)
      .get("averaging", c.averaging)
      .get("gauges", c.gauges)
      .get("scales", c.scales)
      .get("input_sizes", c.input_sizes)
      .get("sweep_count", c.sweep_count)
      .get("weights", c.weights);
  r.reject_unknown();
  r.finish();
  if (has_seed) apply_seed(c, seed);
  c.validate();
  return c;
}

PipelineConfig read_pipeline_config(const fs::path& path) { return pipeline_config_from_json(read_json(path.string())); }

void apply_seed(PipelineConfig& c, std::uint64_t seed) {
  c.dataset.seed = seed;
  c.train.seed = seed;
}

std::vector<neural::TrainPair> load_pairs(const dataset::DatasetManifest& m, const std::string& split,
                                          std::size_t size, unsigned jobs) {
  const auto entries = select(m, split);
  std::vector<neural::TrainPair> out(entries.size());
  parallel_for(entries.size(), jobs, [&](std::size_t k) {
    out[k].input = neural::prepare_input(load_image(m.path_of(entries[k]->composite_image)), size);
    out[k].target = neural::prepare_target(load_image(m.path_of(entries[k]->ground_truth)), size);
  });
  return out;
}

PixelImage enhance(const neural::Network& net, const PixelImage& image, std::size_t infer_size, std::size_t out_size) {
  auto out = neural::infer(net, image, infer_size);
  if (infer_size != out_size) out = resize_bicubic(out, out_size, out_size);
  return out;
}

std::size_t trained_input_size(const fs::path& weights, std::size_t fallback) {
  const auto h = read_container(weights).first;
  if (h.extra.contains("train") && h.extra["train"].contains("input_size"))
    return h.extra["train"]["input_size"].get<std::size_t>();
  return fallback;
}

void write_predictions(const neural::Network& net, const dataset::DatasetManifest& m, const std::string& split,
                       const fs::path& dir, std::size_t infer_size, std::size_t out_size, unsigned jobs) {
  fs::create_directories(dir);
  const auto entries = select(m, split);
  parallel_for(entries.size(), jobs, [&](std::size_t k) {
    const auto& e = *entries[k];
    const auto out = enhance(net, load_image(m.path_of(e.composite_image)), infer_size, out_size);
    save_image(dir / fs::path(e.composite_image).filename(), out, Role::recon_image,
               {{"source", "unet"}, {"entry", e.index}, {"schema_version", kSchemaVersion}});
  });
}

Predictor predictions_from(const fs::path& dir) {
  return [dir](const dataset::ManifestEntry& e) -> std::optional<PixelImage> {
    const fs::path p = dir / fs::path(e.composite_image).filename();
    if (!fs::exists(p))
      throw Error(fmt::format("missing prediction {} for entry {}; run `panp infer` on the split first", p.string(),
                              e.index));
    return load_image(p);
  };
}

namespace {

Predictor network_predictor(const neural::Network& net, const dataset::DatasetManifest& m, std::size_t infer_size,
                            std::size_t eval_size) {
  return [&net, &m, infer_size, eval_size](const dataset::ManifestEntry& e) -> std::optional<PixelImage> {
    return enhance(net, load_image(m.path_of(e.composite_image)), infer_size, eval_size);
  };
}

std::string weights_digest(const fs::path& p) {
  const auto bytes = read_bytes(p);
  return fnv1a_hex(std::string(bytes.begin(), bytes.end()));
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  PipelineResult res;

  auto dcfg = cfg.dataset;
  dcfg.jobs = std::max(dcfg.jobs, cfg.jobs);
  spdlog::info("pipeline: generating {} entries", dcfg.count);
  auto t0 = std::chrono::steady_clock::now();
  res.manifest = dataset::gen_dataset(dcfg, out_dir / "dataset");
  const double gen_seconds = seconds_since(t0);

  spdlog::info("pipeline: training {} iterations at {}x{}", cfg.train.iterations, cfg.train.input_size,
               cfg.train.input_size);
  const auto train_pairs = load_pairs(res.manifest, "train", cfg.train.input_size, cfg.jobs);
  const auto val_pairs = load_pairs(res.manifest, "val", cfg.train.input_size, cfg.jobs);
  res.train = neural::train(train_pairs, val_pairs, cfg.network, cfg.train);
  neural::save_weights(out_dir / "weights.padf", res.train.weights,
                       {{"train", neural::to_json(cfg.train)}, {"dataset_config_hash", res.manifest.config_hash}});
  {
    json j = neural::to_json(res.train);
    j["schema_version"] = kSchemaVersion;
    j["train"] = neural::to_json(cfg.train);
    j["network"] = neural::to_json(cfg.network);
    write_json((out_dir / "train.json").string(), j);
  }

  spdlog::info("pipeline: inference on the test split");
  t0 = std::chrono::steady_clock::now();
  write_predictions(res.train.weights, res.manifest, "test", out_dir / "predictions", cfg.train.input_size, cfg.eval.size,
                    cfg.jobs);
  const auto n_test = res.manifest.split("test").size();
  const double infer_seconds = n_test ? seconds_since(t0) / static_cast<double>(n_test) : 0.0;

  spdlog::info("pipeline: detection and evaluation");
  res.frames = evaluate(res.manifest, "test", predictions_from(out_dir / "predictions"), cfg.eval, cfg.jobs);
  res.summary = summarize(res.frames);

  const auto test = res.manifest.split("test");
  fs::create_directories(out_dir / "detections");
  if (cfg.overlays) fs::create_directories(out_dir / "overlays");
  parallel_for(test.size(), cfg.jobs, [&](std::size_t k) {
    const auto& e = *test[k];
    const std::string stem = fs::path(e.composite_image).stem().string();
    const auto conv = conventional_image(res.manifest, e, cfg.eval.size);
    const auto pred = load_image(out_dir / "predictions" / fs::path(e.composite_image).filename());
    write_json((out_dir / "detections" / (stem + ".unet-postproc.json")).string(),
               detection_json(pred, "unet-postproc", cfg.eval));
    write_json((out_dir / "detections" / (stem + ".hough.json")).string(), detection_json(conv, "hough", cfg.eval));
    if (cfg.overlays) {
      write_png(out_dir / "overlays" / (stem + ".unet.png"), render_overlay(conv, res.frames[k][Method::unet_postproc].segment));
      write_png(out_dir / "overlays" / (stem + ".sht.png"), render_overlay(conv, res.frames[k][Method::sht].segment));
    }
  });

  write_json((out_dir / "metrics.json").string(), metrics_json(res.frames, cfg.eval, "test"));
  write_json((out_dir / "summary.json").string(),
             {{"schema_version", kSchemaVersion},
              {"config_hash", json_hash(to_json(cfg))},
              {"dataset_config_hash", res.manifest.config_hash},
              {"weights_digest", weights_digest(out_dir / "weights.padf")},
              {"entries", res.manifest.entries.size()},
              {"test_frames", n_test},
              {"train",
               {{"final_loss", res.train.loss_history.empty() ? 0.0 : res.train.loss_history.back()},
                {"best_iteration", res.train.best_iteration},
                {"best_val_mse", res.train.best_val}}},
              {"table", summary_table(res.summary)},
              {"summary", to_json(res.summary)}});
  write_json((out_dir / "timing.json").string(),
             {{"schema_version", kSchemaVersion},
              {"dataset_seconds", gen_seconds},
              {"train_seconds", res.train.seconds},
              {"inference_seconds_per_frame", infer_seconds},
              {"total_seconds", seconds_since(t_start)}});
  spdlog::info("pipeline: SNR ratio {:.2f}, MHD ordering {:.2f}", res.summary.snr_ratio, res.summary.mhd_ordering);
  return res;
}

SweepKind sweep_kind_from_string(const std::string& s) {
  if (s == "averaging") return SweepKind::averaging;
  if (s == "diameter") return SweepKind::diameter;
  if (s == "capacity") return SweepKind::capacity;
  if (s == "input_size" || s == "input-size") return SweepKind::input_size;
  throw ConfigError(fmt::format("unknown sweep kind '{}' (expected averaging, diameter, capacity or input_size)", s));
}

std::string to_string(SweepKind k) {
  switch (k) {
    case SweepKind::averaging: return "averaging";
    case SweepKind::diameter: return "diameter";
    case SweepKind::capacity: return "capacity";
    case SweepKind::input_size: return "input_size";
  }
  return "?";
}

std::string to_csv(const SweepTable& t) {
  std::string out;
  for (std::size_t k = 0; k < t.columns.size(); ++k) out += (k ? "," : "") + t.columns[k];
  out += "\n";
  for (const auto& row : t.rows) {
    for (std::size_t k = 0; k < row.size(); ++k) out += (k ? "," : "") + row[k];
    out += "\n";
  }
  return out;
}

namespace {

struct SweepPoint {
  double x = 0.0;
  std::string label;
  EvalSummary summary;
  std::vector<std::pair<std::string, double>> extra;  // kind-specific columns
};

std::string num(double v) { return std::isfinite(v) ? fmt::format("{:.6g}", v) : std::string("nan"); }

const std::vector<std::pair<std::string, Method>>& sweep_methods() {
  static const std::vector<std::pair<std::string, Method>> m{{"conventional", Method::conventional},
                                                             {"unet", Method::unet},
                                                             {"unet_postproc", Method::unet_postproc},
                                                             {"sht", Method::sht}};
  return m;
}

SweepTable tabulate(SweepKind kind, const std::vector<SweepPoint>& points) {
  SweepTable t;
  t.columns = {to_string(kind), "frames", "visible_frames"};
  if (!points.empty())
    for (const auto& [name, v] : points.front().extra) t.columns.push_back(name);
  for (const auto& [name, m] : sweep_methods()) {
    if (m == Method::conventional || m == Method::unet) {
      t.columns.push_back("snr_" + name + "_mean");
      t.columns.push_back("snr_" + name + "_std");
    }
    t.columns.push_back("mhd_" + name + "_mean");
    t.columns.push_back("mhd_" + name + "_std");
  }
  t.columns.push_back("snr_ratio");
  for (const auto& p : points) {
    std::vector<std::string> row{p.label, std::to_string(p.summary.frames), std::to_string(p.summary.visible)};
    for (const auto& [name, v] : p.extra) row.push_back(num(v));
    for (const auto& [name, m] : sweep_methods()) {
      if (m == Method::conventional || m == Method::unet) {
        row.push_back(num(p.summary[m].snr.mean));
        row.push_back(num(p.summary[m].snr.std));
      }
      row.push_back(num(p.summary[m].mhd.mean));
      row.push_back(num(p.summary[m].mhd.std));
    }
    row.push_back(num(p.summary.snr_ratio));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_sweep_outputs(SweepKind kind, const std::vector<SweepPoint>& points, const SweepTable& table,
                         const PipelineConfig& cfg, const fs::path& out_dir) {
  const std::string base = "sweep_" + to_string(kind);
  const std::string csv = to_csv(table);
  write_bytes(out_dir / (base + ".csv"), std::vector<std::uint8_t>(csv.begin(), csv.end()));
  write_json((out_dir / (base + ".json")).string(), {{"schema_version", kSchemaVersion},
                                                    {"kind", to_string(kind)},
                                                    {"config_hash", json_hash(to_json(cfg))},
                                                    {"columns", table.columns},
                                                    {"rows", table.rows}});
  const std::array<std::uint8_t, 3> red{200, 40, 40}, blue{30, 90, 200}, green{20, 150, 60}, gray{110, 110, 110};
  auto series = [&](Method m, bool snr, std::array<std::uint8_t, 3> color) {
    PlotSeries s;
    s.color = color;
    for (const auto& p : points) {
      const auto& st = snr ? p.summary[m].snr : p.summary[m].mhd;
      if (st.n == 0) continue;
      s.x.push_back(p.x);
      s.mean.push_back(st.mean);
      s.std.push_back(st.std);
    }
    return s;
  };
  write_png(out_dir / (base + "_snr.png"),
            render_plot({series(Method::conventional, true, red), series(Method::unet, true, blue)}));
  write_png(out_dir / (base + "_mhd.png"),
            render_plot({series(Method::conventional, false, red), series(Method::unet, false, blue),
                         series(Method::unet_postproc, false, green), series(Method::sht, false, gray)}));
}

}  // namespace

SweepTable run_sweep(SweepKind kind, const PipelineConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  PipelineConfig base = cfg;
  base.dataset.jobs = std::max(base.dataset.jobs, cfg.jobs);
  if (base.dataset.cache_dir.empty()) base.dataset.cache_dir = (out_dir / "cache").string();

  std::vector<SweepPoint> points;
  const auto& ev = cfg.eval;

  // Trained network for the evaluation-only sweeps: given weights, or a base pipeline run.
  auto trained = [&]() {
    if (!cfg.weights.empty()) return neural::load_weights(cfg.weights);
    spdlog::info("sweep: training the base model");
    return run_pipeline(base, out_dir / "base").train.weights;
  };

  if (kind == SweepKind::averaging || kind == SweepKind::diameter) {
    const auto net = trained();
    const auto infer_size =
        cfg.weights.empty() ? cfg.train.input_size : trained_input_size(cfg.weights, cfg.train.input_size);
    const std::size_t n_points = kind == SweepKind::averaging ? cfg.averaging.size() : cfg.gauges.size();
    for (std::size_t k = 0; k < n_points; ++k) {
      auto dcfg = base.dataset;
      if (cfg.sweep_count) dcfg.count = cfg.sweep_count;
      SweepPoint p;
      if (kind == SweepKind::averaging) {
        dcfg.background.frames = cfg.averaging[k];
        p.x = static_cast<double>(cfg.averaging[k]);
        p.label = std::to_string(cfg.averaging[k]);
      } else {
        dcfg.gauge = cfg.gauges[k];
        p.x = std::stod(cfg.gauges[k]);
        p.label = cfg.gauges[k];
      }
      spdlog::info("sweep {}: point {}", to_string(kind), p.label);
      const auto m = dataset::gen_dataset(dcfg, out_dir / to_string(kind) / p.label);
      p.summary = summarize(evaluate(m, "all", network_predictor(net, m, infer_size, ev.size), ev, cfg.jobs));
      points.push_back(std::move(p));
    }
  } else if (kind == SweepKind::input_size) {
    const auto net = trained();
    const auto m = cfg.weights.empty() ? dataset::load_manifest(out_dir / "base" / "dataset" / "manifest.json")
                                       : dataset::gen_dataset(base.dataset, out_dir / "dataset");
    const auto test = m.split("test");
    for (auto size : cfg.input_sizes) {
      SweepPoint p;
      p.x = static_cast<double>(size);
      p.label = std::to_string(size);
      spdlog::info("sweep input_size: {}", size);
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto* e : test) (void)enhance(net, load_image(m.path_of(e->composite_image)), size, ev.size);
      const double per_frame = test.empty() ? 0.0 : seconds_since(t0) / static_cast<double>(test.size());
      p.summary = summarize(evaluate(m, "test", network_predictor(net, m, size, ev.size), ev, cfg.jobs));
      p.extra = {{"inference_seconds", per_frame}};
      points.push_back(std::move(p));
    }
  } else {
    const auto m = dataset::gen_dataset(base.dataset, out_dir / "dataset");
    const auto train_pairs = load_pairs(m, "train", cfg.train.input_size, cfg.jobs);
    const auto val_pairs = load_pairs(m, "val", cfg.train.input_size, cfg.jobs);
    const auto test_pairs = load_pairs(m, "test", cfg.train.input_size, cfg.jobs);
    const auto test = m.split("test");
    fs::create_directories(out_dir / "capacity");
    for (auto scales : cfg.scales) {
      SweepPoint p;
      p.x = static_cast<double>(scales);
      p.label = std::to_string(scales);
      spdlog::info("sweep capacity: {} scales", scales);
      auto ncfg = cfg.network;
      ncfg.n_scales = scales;
      const auto tr = neural::train(train_pairs, val_pairs, ncfg, cfg.train);
      neural::save_weights(out_dir / "capacity" / fmt::format("scales_{}.padf", scales), tr.weights,
                           {{"train", neural::to_json(cfg.train)}, {"dataset_config_hash", m.config_hash}});
      std::vector<double> mses;
      for (const auto& pair : test_pairs)
        mses.push_back(neural::mse(tr.weights.forward(pair.input), pair.target));
      const auto mse = stat_of(mses);
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto* e : test) (void)enhance(tr.weights, load_image(m.path_of(e->composite_image)), cfg.train.input_size, ev.size);
      const double per_frame = test.empty() ? 0.0 : seconds_since(t0) / static_cast<double>(test.size());
      p.summary = summarize(evaluate(m, "test", network_predictor(tr.weights, m, cfg.train.input_size, ev.size), ev, cfg.jobs));
      p.extra = {{"training_seconds", tr.seconds},
                 {"final_loss", tr.loss_history.empty() ? 0.0 : tr.loss_history.back()},
                 {"test_mse_mean", mse.mean},
                 {"test_mse_std", mse.std},
                 {"inference_seconds", per_frame},
                 {"parameters", static_cast<double>(neural::parameter_count(ncfg))}};
      points.push_back(std::move(p));
    }
  }

  const auto table = tabulate(kind, points);
  write_sweep_outputs(kind, points, table, cfg, out_dir);
  return table;
}

}  // namespace panp::pipeline
