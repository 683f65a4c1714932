#include "panp/optics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "panp/core/error.hpp"
#include "panp/core/rng.hpp"

namespace panp::optics {

void OpticalProperties::validate() const {
  if (!(mu_a >= 0.0) || !(mu_s >= 0.0)) throw ConfigError("optical coefficients must be non-negative");
  if (!(g > -1.0 && g < 1.0)) throw ConfigError(fmt::format("anisotropy must lie in (-1, 1), got {}", g));
  if (!(n >= 1.0)) throw ConfigError(fmt::format("refractive index must be >= 1, got {}", n));
  if (mu_a + mu_s <= 0.0) throw ConfigError("medium has zero attenuation");
}

double NeedlePose::tip_x() const {
  const double a = angle_deg * std::numbers::pi / 180.0;
  return entry_x + depth * std::cos(a) / std::sin(a);
}

const std::map<std::string, double>& default_gauge_table() {
  static const std::map<std::string, double> table = {
      {"16G", 1.65e-3}, {"18G", 1.27e-3}, {"20G", 0.91e-3}, {"25G", 0.52e-3}, {"30G", 0.31e-3}};
  return table;
}

double gauge_diameter(const std::string& gauge) {
  const auto& t = default_gauge_table();
  const auto it = t.find(gauge);
  if (it == t.end()) throw Error(fmt::format("unknown needle gauge '{}'", gauge));
  return it->second;
}

NeedleMask rasterize_needle(const NeedlePose& pose, const Grid2D& grid) {
  grid.validate();
  if (!(pose.diameter > 0.0)) throw Error("needle diameter must be positive");
  if (!(pose.angle_deg > 0.0 && pose.angle_deg <= 90.0))
    throw Error(fmt::format("needle angle must lie in (0, 90] degrees, got {}", pose.angle_deg));
  if (!(pose.depth >= 0.0)) throw Error("needle depth must be non-negative");

  const double tx = pose.tip_x();
  const double tz = pose.depth;
  const double max_x = grid.extent_x();
  const double max_z = grid.z_at(grid.nz - 1);
  if (tx < 0.0 || tx > max_x || tz > max_z) {
    const double over_x = tx < 0.0 ? -tx : std::max(0.0, tx - max_x);
    const double over_z = std::max(0.0, tz - max_z);
    throw Error(fmt::format(
        "needle tip ({:.3f} mm, {:.3f} mm) lies outside the {:.1f} x {:.1f} mm grid "
        "(lateral overhang {:.3f} mm, depth overhang {:.3f} mm)",
        tx * 1e3, tz * 1e3, max_x * 1e3, max_z * 1e3, over_x * 1e3, over_z * 1e3));
  }

  NeedleMask out{ScalarField(grid, Role::initial_pressure), tx, tz};
  const double ex = pose.entry_x;
  const double vx = tx - ex;
  const double vz = tz;
  const double len2 = vx * vx + vz * vz;
  const double r = 0.5 * pose.diameter;

  const double lo_x = std::min(ex, tx) - r, hi_x = std::max(ex, tx) + r;
  const double hi_z = tz + r;
  for (std::size_t j = 0; j < grid.nz; ++j) {
    const double z = grid.z_at(j);
    if (z > hi_z) break;
    for (std::size_t i = 0; i < grid.nx; ++i) {
      const double x = grid.x_at(i);
      if (x < lo_x || x > hi_x) continue;
      double t = len2 > 0.0 ? ((x - ex) * vx + z * vz) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double px = ex + t * vx - x;
      const double pz = t * vz - z;
      if (px * px + pz * pz <= r * r) out.mask.values(j, i) = 1.0f;
    }
  }
  return out;
}

double WeightAudit::relative_error() const {
  if (launched == 0.0) return 0.0;
  return std::abs(deposited + escaped + roulette - launched) / launched;
}

namespace {

struct Accumulator {
  std::vector<double> absorbed;
  double deposited = 0.0;
  double escaped = 0.0;
  double roulette = 0.0;
};

/// Transport in millimetres. Cell (i, j) spans x in [i dx, (i+1) dx) and
/// z in [(j - 1/2) dx, (j + 1/2) dx); tissue occupies z >= 0.
class Transport {
 public:
  Transport(const Grid2D& grid, const OpticalProperties& tissue, const ScalarField* needle,
            const McConfig& cfg)
      : nx_(static_cast<long>(grid.nx)),
        nz_(static_cast<long>(grid.nz)),
        dx_(grid.dx * 1e3),
        width_(static_cast<double>(grid.nx) * grid.dx * 1e3),
        bottom_((static_cast<double>(grid.nz) - 0.5) * grid.dx * 1e3),
        mu_a_(tissue.mu_a),
        mu_t_(tissue.mu_a + tissue.mu_s),
        albedo_ratio_((1.0 - tissue.g) / (1.0 + tissue.g)),
        scatters_(tissue.mu_s > 0.0),
        cfg_(cfg) {
    if (needle) {
      needle_.resize(grid.nx * grid.nz);
      for (std::size_t k = 0; k < needle_.size(); ++k) needle_[k] = needle->values.flat()[k] > 0.5f;
    }
  }

  void run_packet(double x0, Rng& rng, Accumulator& acc) const {
    double x = x0, z = 0.0, ux = 0.0, uz = 1.0, w = 1.0;
    long ci = cell_x(x), cj = 0;
    if (is_needle(ci, cj)) {
      deposit(acc, ci, cj, w);
      return;
    }
    for (;;) {
      const double s = -std::log(rng.uniform()) / mu_t_;
      if (!move(x, z, ux, uz, s, ci, cj, w, acc)) return;

      const double dw = w * mu_a_ / mu_t_;
      deposit(acc, ci, cj, dw);
      w -= dw;
      if (!scatters_ || w <= 0.0) {
        // With no scattering the whole packet is absorbed at the first interaction.
        if (w > 0.0) deposit(acc, ci, cj, w);
        return;
      }

      const double theta = 2.0 * std::atan(albedo_ratio_ * std::tan(std::numbers::pi * (rng.uniform() - 0.5)));
      const double c = std::cos(theta), sn = std::sin(theta);
      const double nux = ux * c - uz * sn;
      const double nuz = ux * sn + uz * c;
      const double norm = std::hypot(nux, nuz);
      ux = nux / norm;
      uz = nuz / norm;

      if (w < cfg_.roulette_threshold) {
        if (rng.uniform() < cfg_.roulette_survival) {
          const double boosted = w / cfg_.roulette_survival;
          acc.roulette -= boosted - w;
          w = boosted;
        } else {
          acc.roulette += w;
          return;
        }
      }
    }
  }

  [[nodiscard]] long cell_x(double x) const { return static_cast<long>(std::floor(x / dx_)); }
  [[nodiscard]] long cell_z(double z) const { return static_cast<long>(std::floor(z / dx_ + 0.5)); }

 private:
  bool is_needle(long i, long j) const {
    return !needle_.empty() && needle_[static_cast<std::size_t>(j * nx_ + i)];
  }

  void deposit(Accumulator& acc, long i, long j, double dw) const {
    acc.absorbed[static_cast<std::size_t>(j * nx_ + i)] += dw;
    acc.deposited += dw;
  }

  bool inside(double x, double z) const { return x >= 0.0 && x < width_ && z >= 0.0 && z < bottom_; }

  // Advances the packet by s. Returns false when the packet terminated
  // (escaped the domain or was captured by the needle).
  bool move(double& x, double& z, double ux, double uz, double s, long& ci, long& cj, double w,
            Accumulator& acc) const {
    if (needle_.empty()) {
      const double nx = x + s * ux, nz = z + s * uz;
      if (!inside(nx, nz)) {
        acc.escaped += w;
        return false;
      }
      x = nx;
      z = nz;
      ci = std::min(cell_x(x), nx_ - 1);
      cj = std::min(cell_z(z), nz_ - 1);
      return true;
    }

    // Cell walk along the segment so that needle cells are never skipped.
    const int step_i = ux > 0.0 ? 1 : -1;
    const int step_j = uz > 0.0 ? 1 : -1;
    const double inf = std::numeric_limits<double>::infinity();
    const double bx = ux > 0.0 ? (static_cast<double>(ci) + 1.0) * dx_ : static_cast<double>(ci) * dx_;
    const double bz = uz > 0.0 ? (static_cast<double>(cj) + 0.5) * dx_ : (static_cast<double>(cj) - 0.5) * dx_;
    double t_max_x = ux != 0.0 ? (bx - x) / ux : inf;
    double t_max_z = uz != 0.0 ? (bz - z) / uz : inf;
    const double t_dx = ux != 0.0 ? dx_ / std::abs(ux) : inf;
    const double t_dz = uz != 0.0 ? dx_ / std::abs(uz) : inf;

    for (;;) {
      const double t_next = std::min(t_max_x, t_max_z);
      if (t_next >= s) break;
      if (t_max_x < t_max_z) {
        ci += step_i;
        t_max_x += t_dx;
      } else {
        cj += step_j;
        t_max_z += t_dz;
      }
      if (ci < 0 || ci >= nx_ || cj >= nz_ || cj < 0 || (cj == 0 && z + t_next * uz < 0.0)) {
        acc.escaped += w;
        return false;
      }
      if (is_needle(ci, cj)) {
        deposit(acc, ci, cj, w);
        return false;
      }
    }
    const double nx = x + s * ux, nz = z + s * uz;
    if (!inside(nx, nz)) {
      // Leaving through the surface half of row 0.
      acc.escaped += w;
      return false;
    }
    x = nx;
    z = nz;
    return true;
  }

  long nx_, nz_;
  double dx_, width_, bottom_;
  double mu_a_, mu_t_, albedo_ratio_;
  bool scatters_;
  McConfig cfg_;
  std::vector<char> needle_;
};

}  // namespace

FluenceMap mc_fluence(const Grid2D& grid, const OpticalProperties& tissue,
                      const ScalarField* needle_mask, const BeamConfig& beam, const McConfig& cfg) {
  grid.validate();
  tissue.validate();
  if (cfg.n_photons == 0) throw Error("Monte Carlo needs at least one photon packet");
  if (!(beam.width > 0.0) || beam.width > grid.extent_x() * (1.0 + 1e-12))
    throw Error(fmt::format("beam width {:.2f} mm does not fit the {:.2f} mm grid", beam.width * 1e3,
                            grid.extent_x() * 1e3));
  if (needle_mask && !(needle_mask->grid == grid)) throw Error("needle mask grid does not match");
  if (!(cfg.roulette_survival > 0.0 && cfg.roulette_survival <= 1.0))
    throw Error("roulette survival must lie in (0, 1]");

  const Transport transport(grid, tissue, needle_mask, cfg);
  const double width_mm = beam.width * 1e3;
  const double x_start = 0.5 * (grid.extent_x() * 1e3 - width_mm);
  const std::size_t blocks = std::max<std::size_t>(1, std::min<std::size_t>(cfg.reduction_blocks, cfg.n_photons));
  const std::size_t cells = grid.nx * grid.nz;

  std::vector<Accumulator> acc(blocks);
  auto run_block = [&](std::size_t b) {
    acc[b].absorbed.assign(cells, 0.0);
    const std::uint64_t begin = cfg.n_photons * b / blocks;
    const std::uint64_t end = cfg.n_photons * (b + 1) / blocks;
    for (std::uint64_t p = begin; p < end; ++p) {
      Rng rng(cfg.rng_seed, p);
      const double x0 = x_start + width_mm * rng.uniform();
      transport.run_packet(x0, rng, acc[b]);
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(blocks)));
  if (threads == 1) {
    for (std::size_t b = 0; b < blocks; ++b) run_block(b);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t b = t; b < blocks; b += threads) run_block(b);
      });
  }

  std::vector<double> absorbed(cells, 0.0);
  WeightAudit audit;
  audit.launched = static_cast<double>(cfg.n_photons);
  for (const auto& a : acc) {
    for (std::size_t k = 0; k < cells; ++k) absorbed[k] += a.absorbed[k];
    audit.deposited += a.deposited;
    audit.escaped += a.escaped;
    audit.roulette += a.roulette;
  }

  FluenceMap out{ScalarField(grid, Role::fluence), ScalarField(grid, Role::fluence), audit};
  const double dx_mm = grid.dx * 1e3;
  const double per_photon_width = width_mm / static_cast<double>(cfg.n_photons);
  for (std::size_t j = 0; j < grid.nz; ++j) {
    const double area = (j == 0 ? 0.5 : 1.0) * dx_mm * dx_mm;
    for (std::size_t i = 0; i < grid.nx; ++i) {
      const double e = absorbed[j * grid.nx + i] * per_photon_width;
      out.absorbed.values(j, i) = static_cast<float>(e / dx_mm);
      out.fluence.values(j, i) = tissue.mu_a > 0.0 ? static_cast<float>(e / (tissue.mu_a * area)) : 0.0f;
    }
  }
  return out;
}

ScalarField build_p0(const FluenceMap& fluence, const ScalarField& needle_mask, const P0Config& cfg) {
  if (!(fluence.absorbed.grid == needle_mask.grid))
    throw Error("fluence map and needle mask are on different grids");
  ScalarField p0(needle_mask.grid, Role::initial_pressure);
  const auto& a = fluence.absorbed.values.flat();
  const auto& m = needle_mask.values.flat();
  auto out = p0.values.flat();
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = m[k] > 0.5f ? std::max(a[k], static_cast<float>(cfg.floor)) : 0.0f;
  return p0;
}

nlohmann::json to_json(const OpticalProperties& p) {
  return {{"mu_a_per_mm", p.mu_a}, {"mu_s_per_mm", p.mu_s}, {"g", p.g}, {"n", p.n}};
}

nlohmann::json to_json(const McConfig& c) {
  return {{"n_photons", c.n_photons},
          {"rng_seed", c.rng_seed},
          {"roulette_threshold", c.roulette_threshold},
          {"roulette_survival", c.roulette_survival},
          {"reduction_blocks", c.reduction_blocks}};
}

nlohmann::json to_json(const NeedlePose& p) {
  return {{"entry_x_m", p.entry_x}, {"angle_deg", p.angle_deg}, {"depth_m", p.depth},
          {"diameter_m", p.diameter}, {"gauge", p.gauge}};
}

NeedlePose pose_from_json(const nlohmann::json& j) {
  NeedlePose p;
  p.entry_x = j.at("entry_x_m").get<double>();
  p.angle_deg = j.at("angle_deg").get<double>();
  p.depth = j.at("depth_m").get<double>();
  p.diameter = j.at("diameter_m").get<double>();
  p.gauge = j.value("gauge", std::string{});
  return p;
}

}  // namespace panp::optics
