#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "panp/acoustics.hpp"
#include "panp/core/container.hpp"
#include "panp/core/image_io.hpp"
#include "panp/core/log.hpp"
#include "panp/dataset.hpp"
#include "panp/optics.hpp"
#include "panp/pipeline.hpp"
#include "panp/recon.hpp"

namespace fs = std::filesystem;
using namespace panp;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string cache;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 0;
};

void add_common(CLI::App* cmd, Common& c, bool with_seed = true) {
  cmd->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
  if (with_seed) cmd->add_option("--seed", c.seed, "seed for every random choice of this stage");
  cmd->add_option("--jobs", c.jobs, "worker threads (default from config, else 1)");
}

void add_cache(CLI::App* cmd, Common& c) {
  cmd->add_option("--cache", c.cache, "shared needle and background simulation cache directory");
}

pipeline::PipelineConfig load_config(const Common& c) {
  pipeline::PipelineConfig cfg;
  if (!c.config.empty()) cfg = pipeline::read_pipeline_config(c.config);
  if (c.seed) pipeline::apply_seed(cfg, *c.seed);
  if (c.jobs) cfg.jobs = c.jobs;
  if (!c.cache.empty()) cfg.dataset.cache_dir = c.cache;
  cfg.dataset.jobs = std::max(cfg.dataset.jobs, cfg.jobs);
  cfg.validate();
  return cfg;
}

void require_file(const std::string& path, const std::string& what, const std::string& hint) {
  if (!fs::exists(path)) throw Error(fmt::format("{} '{}' not found; {}", what, path, hint));
}

neural::Network load_network(const std::string& path) {
  require_file(path, "weights file", "train a model first with `panp train --manifest <dataset>/manifest.json --out " +
                                         path + "` or run `panp pipeline`");
  return neural::load_weights(path);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

bool is_manifest(const std::string& path) { return fs::path(path).extension() == ".json"; }

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Photoacoustic needle visualization: simulation, dataset generation, U-Net training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fmt::format("panp (schema {})", kSchemaVersion));

  // simulate-fluence
  Common sf;
  std::string sf_out;
  double sf_depth_mm = 10.0, sf_angle = 45.0, sf_mu_a = -1.0;
  std::optional<double> sf_tip_x_mm;
  bool sf_no_needle = false, sf_png = false;
  auto* c_sf = app.add_subcommand("simulate-fluence", "Monte Carlo fluence and initial pressure for one needle pose");
  add_common(c_sf, sf);
  c_sf->add_option("--out", sf_out, "output directory")->required();
  c_sf->add_option("--depth-mm", sf_depth_mm, "needle tip depth");
  c_sf->add_option("--angle-deg", sf_angle, "insertion angle from the surface");
  c_sf->add_option("--tip-x-mm", sf_tip_x_mm, "tip lateral position (default: grid center)");
  c_sf->add_option("--mu-a", sf_mu_a, "tissue absorption in 1/mm (default: first pose value)");
  c_sf->add_flag("--no-needle", sf_no_needle, "tissue only");
  c_sf->add_flag("--png", sf_png, "also write PNG previews");

  // forward
  Common fw;
  std::string fw_in, fw_out;
  auto* c_fw = app.add_subcommand("forward", "acoustic forward model: initial pressure to RF channel data");
  add_common(c_fw, fw, false);
  c_fw->add_option("--in", fw_in, "initial pressure container")->required()->check(CLI::ExistingFile);
  c_fw->add_option("--out", fw_out, "RF container")->required();

  // reconstruct
  Common rc;
  std::string rc_in, rc_out, rc_png;
  std::optional<std::size_t> rc_zero;
  auto* c_rc = app.add_subcommand("reconstruct", "f-k migration of RF data onto the standard image grid");
  add_common(c_rc, rc, false);
  c_rc->add_option("--in", rc_in, "RF container")->required()->check(CLI::ExistingFile);
  c_rc->add_option("--out", rc_out, "image container")->required();
  c_rc->add_option("--png", rc_png, "PNG export (normalized by max)");
  c_rc->add_option("--zero", rc_zero, "early samples to blank (default from config)");

  // gen-dataset
  Common gd;
  std::string gd_out;
  std::optional<std::size_t> gd_count;
  auto* c_gd = app.add_subcommand("gen-dataset", "semi-synthetic dataset with manifest");
  add_common(c_gd, gd);
  add_cache(c_gd, gd);
  c_gd->add_option("--out", gd_out, "dataset directory")->required();
  c_gd->add_option("--count", gd_count, "number of entries");

  // train
  Common tr;
  std::string tr_manifest, tr_out;
  std::optional<std::size_t> tr_scales, tr_iters, tr_batch, tr_size;
  std::optional<double> tr_lr;
  auto* c_tr = app.add_subcommand("train", "train the U-Net on a dataset manifest");
  add_common(c_tr, tr);
  c_tr->add_option("--manifest", tr_manifest, "dataset manifest.json")->required();
  c_tr->add_option("--scales", tr_scales, "U-Net scales (3 to 5)");
  c_tr->add_option("--iters", tr_iters, "training iterations");
  c_tr->add_option("--batch", tr_batch, "batch size");
  c_tr->add_option("--lr", tr_lr, "initial learning rate");
  c_tr->add_option("--size", tr_size, "training input side");
  c_tr->add_option("--out", tr_out, "weights container")->required();

  // infer
  Common in;
  std::string in_weights, in_in, in_out, in_split = "test", in_png;
  std::optional<std::size_t> in_size;
  auto* c_in = app.add_subcommand("infer", "U-Net enhancement of one image, or of a manifest split into a directory");
  add_common(c_in, in, false);
  c_in->add_option("--weights", in_weights, "weights container")->required();
  c_in->add_option("--in", in_in, "image container or manifest.json")->required();
  c_in->add_option("--out", in_out, "image container, or directory for a manifest")->required();
  c_in->add_option("--split", in_split, "manifest split (train, val, test, all)");
  c_in->add_option("--size", in_size, "inference side (default: the training input size); output is eval.size");
  c_in->add_option("--png", in_png, "PNG export of a single output");

  // detect
  Common dt;
  std::string dt_in, dt_method = "unet-postproc", dt_weights, dt_out, dt_overlay;
  auto* c_dt = app.add_subcommand("detect", "needle detection on an image");
  add_common(c_dt, dt, false);
  c_dt->add_option("--in", dt_in, "image container")->required()->check(CLI::ExistingFile);
  c_dt->add_option("--method", dt_method, "unet-postproc or hough")->check(CLI::IsMember({"unet-postproc", "hough"}));
  c_dt->add_option("--weights", dt_weights, "enhance the input with this network first (unet-postproc)");
  c_dt->add_option("--out", dt_out, "detection JSON")->required();
  c_dt->add_option("--overlay", dt_overlay, "overlay PNG");

  // eval
  Common ev;
  std::string ev_pred, ev_truth, ev_out, ev_split = "test";
  auto* c_ev = app.add_subcommand("eval", "SNR and MHD of predictions against a dataset's truth");
  add_common(c_ev, ev, false);
  c_ev->add_option("--pred", ev_pred, "directory of U-Net outputs written by infer");
  c_ev->add_option("--truth", ev_truth, "dataset manifest.json")->required();
  c_ev->add_option("--out", ev_out, "metrics JSON")->required();
  c_ev->add_option("--split", ev_split, "manifest split (train, val, test, all)");

  // sweep
  Common sw;
  std::string sw_kind, sw_out, sw_weights;
  auto* c_sw = app.add_subcommand("sweep", "parameter sweep: averaging, diameter, capacity or input_size");
  add_common(c_sw, sw);
  add_cache(c_sw, sw);
  c_sw->add_option("--kind", sw_kind, "sweep kind")->required();
  c_sw->add_option("--out", sw_out, "output directory")->required();
  c_sw->add_option("--weights", sw_weights, "trained network (skips the base training run)");

  // pipeline
  Common pl;
  std::string pl_out;
  auto* c_pl = app.add_subcommand("pipeline", "gen-dataset, train, infer, detect and eval in one run");
  add_common(c_pl, pl);
  add_cache(c_pl, pl);
  c_pl->add_option("--out", pl_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*c_sf) {
      auto cfg = load_config(sf);
      auto d = cfg.dataset;
      if (sf.seed) d.mc.rng_seed = *sf.seed;
      optics::OpticalProperties tissue = d.tissue;
      tissue.mu_a = sf_mu_a > 0.0 ? sf_mu_a : d.poses.mu_a.at(0);
      fs::create_directories(sf_out);
      std::optional<optics::NeedleMask> mask;
      json pose_json = nullptr;
      if (!sf_no_needle) {
        optics::NeedlePose pose;
        pose.gauge = d.gauge;
        pose.diameter = optics::gauge_diameter(d.gauge);
        pose.depth = sf_depth_mm * 1e-3;
        pose.angle_deg = sf_angle;
        const double tip_x = sf_tip_x_mm ? *sf_tip_x_mm * 1e-3 : d.grid.center_x();
        pose.entry_x = tip_x - pose.depth / std::tan(sf_angle * std::acos(-1.0) / 180.0);
        mask = optics::rasterize_needle(pose, d.grid);
        pose_json = optics::to_json(pose);
      }
      d.mc.threads = std::max(1u, cfg.jobs);
      const auto flu = optics::mc_fluence(d.grid, tissue, mask ? &mask->mask : nullptr, d.beam, d.mc);
      const json extra = {{"schema_version", kSchemaVersion},
                          {"tissue", optics::to_json(tissue)},
                          {"mc", optics::to_json(d.mc)},
                          {"pose", pose_json}};
      save_field(fs::path(sf_out) / "fluence.padf", flu.fluence, extra);
      if (mask) {
        const auto p0 = optics::build_p0(flu, mask->mask, d.p0);
        save_field(fs::path(sf_out) / "p0.padf", p0, extra);
        if (sf_png) write_png_gray(fs::path(sf_out) / "p0.png", PixelImage(p0.values, d.grid.dx));
      }
      if (sf_png) write_png_gray(fs::path(sf_out) / "fluence.png", PixelImage(flu.fluence.values, d.grid.dx));
      write_json((fs::path(sf_out) / "audit.json").string(),
                 {{"schema_version", kSchemaVersion},
                  {"launched", flu.audit.launched},
                  {"deposited", flu.audit.deposited},
                  {"escaped", flu.audit.escaped},
                  {"roulette", flu.audit.roulette},
                  {"relative_error", flu.audit.relative_error()}});
      spdlog::info("wrote fluence to {}", sf_out);
    } else if (*c_fw) {
      const auto cfg = load_config(fw);
      const auto& d = cfg.dataset;
      const auto p0 = load_field(fw_in);
      if (p0.role != Role::initial_pressure)
        throw Error(fmt::format("{} holds role '{}', expected initial_pressure", fw_in, to_string(p0.role)));
      const auto solver = acoustics::make_solver_config(p0.grid, d.medium, d.array);
      ensure_parent(fw_out);
      save_rf(fw_out, acoustics::simulate_rf(p0, d.medium, d.array, solver),
              {{"schema_version", kSchemaVersion},
               {"source", "synthetic_needle"},
               {"solver", acoustics::to_json(solver)},
               {"medium", acoustics::to_json(d.medium)}});
    } else if (*c_rc) {
      const auto cfg = load_config(rc);
      const auto rf = load_rf(rc_in);
      const auto img = dataset::reconstruct_standard(rf, cfg.dataset.medium, rc_zero.value_or(cfg.dataset.zero_samples));
      ensure_parent(rc_out);
      save_image(rc_out, img, Role::recon_image, {{"schema_version", kSchemaVersion}, {"source", rc_in}});
      if (!rc_png.empty()) write_png_gray(rc_png, img);
    } else if (*c_gd) {
      auto cfg = load_config(gd);
      if (gd_count) cfg.dataset.count = *gd_count;
      cfg.dataset.validate();
      const auto m = dataset::gen_dataset(cfg.dataset, gd_out);
      spdlog::info("wrote {} entries to {}", m.entries.size(), gd_out);
    } else if (*c_tr) {
      auto cfg = load_config(tr);
      if (tr_scales) cfg.network.n_scales = *tr_scales;
      if (tr_iters) cfg.train.iterations = *tr_iters;
      if (tr_batch) cfg.train.batch_size = *tr_batch;
      if (tr_lr) cfg.train.lr0 = *tr_lr;
      if (tr_size) cfg.train.input_size = *tr_size;
      cfg.validate();
      require_file(tr_manifest, "manifest", "generate a dataset first with `panp gen-dataset`");
      const auto m = dataset::load_manifest(tr_manifest);
      const auto train = pipeline::load_pairs(m, "train", cfg.train.input_size, cfg.jobs);
      const auto val = pipeline::load_pairs(m, "val", cfg.train.input_size, cfg.jobs);
      const auto res = neural::train(train, val, cfg.network, cfg.train);
      ensure_parent(tr_out);
      neural::save_weights(tr_out, res.weights,
                           {{"train", neural::to_json(cfg.train)}, {"dataset_config_hash", m.config_hash}});
      json j = neural::to_json(res);
      j["schema_version"] = kSchemaVersion;
      j["train"] = neural::to_json(cfg.train);
      j["network"] = neural::to_json(cfg.network);
      write_json(fs::path(tr_out).replace_extension(".train.json").string(), j);
      spdlog::info("best validation MSE {:.4g} at iteration {} ({:.1f} s)", res.best_val, res.best_iteration,
                   res.seconds);
    } else if (*c_in) {
      const auto cfg = load_config(in);
      const auto net = load_network(in_weights);
      const std::size_t size = in_size.value_or(pipeline::trained_input_size(in_weights, cfg.train.input_size));
      if (is_manifest(in_in)) {
        const auto m = dataset::load_manifest(in_in);
        pipeline::write_predictions(net, m, in_split, in_out, size, cfg.eval.size, cfg.jobs);
      } else {
        const auto out = pipeline::enhance(net, load_image(in_in), size, cfg.eval.size);
        ensure_parent(in_out);
        save_image(in_out, out, Role::recon_image, {{"schema_version", kSchemaVersion}, {"source", "unet"}});
        if (!in_png.empty()) write_png_gray(in_png, out);
      }
    } else if (*c_dt) {
      const auto cfg = load_config(dt);
      auto img = load_image(dt_in);
      if (!dt_weights.empty()) {
        if (dt_method != "unet-postproc") throw ConfigError("--weights applies to --method unet-postproc only");
        const auto net = load_network(dt_weights);
        img = pipeline::enhance(net, img, pipeline::trained_input_size(dt_weights, cfg.train.input_size),
                                cfg.eval.size);
      }
      const auto j = pipeline::detection_json(img, dt_method, cfg.eval);
      ensure_parent(dt_out);
      write_json(dt_out, j);
      if (!dt_overlay.empty()) {
        std::optional<detect::NeedleSegment> seg;
        if (!j["segment"].is_null())
          seg = detect::NeedleSegment{{j["segment"]["a"][0], j["segment"]["a"][1]},
                                      {j["segment"]["b"][0], j["segment"]["b"][1]}};
        write_png(dt_overlay, pipeline::render_overlay(img, seg));
      }
    } else if (*c_ev) {
      const auto cfg = load_config(ev);
      require_file(ev_truth, "manifest", "generate a dataset first with `panp gen-dataset`");
      const auto m = dataset::load_manifest(ev_truth);
      pipeline::Predictor pred;
      if (!ev_pred.empty()) {
        if (!fs::is_directory(ev_pred))
          throw Error(fmt::format("prediction directory '{}' not found; write it with `panp infer --in {} --out {}`",
                                  ev_pred, ev_truth, ev_pred));
        pred = pipeline::predictions_from(ev_pred);
      }
      const auto frames = pipeline::evaluate(m, ev_split, pred, cfg.eval, cfg.jobs);
      ensure_parent(ev_out);
      auto j = pipeline::metrics_json(frames, cfg.eval, ev_split);
      j["dataset_config_hash"] = m.config_hash;
      write_json(ev_out, j);
      std::printf("%s\n", j["table"].dump(2).c_str());
    } else if (*c_sw) {
      auto cfg = load_config(sw);
      const auto kind = pipeline::sweep_kind_from_string(sw_kind);
      if (!sw_weights.empty()) {
        require_file(sw_weights, "weights file", "train a model first with `panp train`");
        cfg.weights = sw_weights;
      }
      const auto table = pipeline::run_sweep(kind, cfg, sw_out);
      std::printf("%s", pipeline::to_csv(table).c_str());
    } else if (*c_pl) {
      const auto cfg = load_config(pl);
      const auto res = pipeline::run_pipeline(cfg, pl_out);
      std::printf("%s\n", pipeline::summary_table(res.summary).dump(2).c_str());
    }
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 3;
  }
  return 0;
}
