#include "panp/acoustics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "panp/core/error.hpp"
#include "panp/core/fft.hpp"

namespace panp::acoustics {

using std::numbers::pi;

void MediumConfig::validate() const {
  if (!(sound_speed > 0.0)) throw ConfigError("sound speed must be positive");
  if (!(density > 0.0)) throw ConfigError("density must be positive");
}

SolverConfig make_solver_config(const Grid2D& grid, const MediumConfig& medium,
                                const TransducerArray& array, double max_cfl) {
  grid.validate();
  medium.validate();
  SolverConfig s;
  for (std::size_t m = 2;; ++m) {
    const double rate = static_cast<double>(m) * array.sample_rate;
    if (medium.sound_speed / rate / grid.dx <= max_cfl) {
      s.internal_sample_rate = rate;
      s.dt = 1.0 / rate;
      s.n_steps = array.n_samples * m;
      return s;
    }
  }
}

double element_x(const TransducerArray& array, const Grid2D& grid, std::size_t k) {
  return grid.center_x() + array.element_offset(k);
}

namespace {

void check_array_fits(const TransducerArray& array, const Grid2D& grid) {
  const double lo = element_x(array, grid, 0);
  const double hi = element_x(array, grid, array.n_elements - 1);
  if (lo < grid.x_at(0) - 1e-12 || hi > grid.x_at(grid.nx - 1) + 1e-12)
    throw Error(fmt::format("{:.2f} mm aperture does not fit the {:.2f} mm grid", array.aperture() * 1e3,
                            grid.extent_x() * 1e3));
}

/// Multiplicative PML factors exp(-alpha dt / 2) at node (shift 0) or
/// staggered (shift 0.5) positions of an axis with `n` interior cells.
std::vector<double> pml_profile(std::size_t n, std::size_t width, double alpha, double c, double dx,
                                double dt, double shift) {
  const std::size_t total = n + 2 * width;
  std::vector<double> f(total, 1.0);
  if (width == 0) return f;
  const double w = static_cast<double>(width);
  const double first = static_cast<double>(width);
  const double last = static_cast<double>(width + n - 1);
  for (std::size_t i = 0; i < total; ++i) {
    const double pos = static_cast<double>(i) + shift;
    double d = 0.0;
    if (pos < first) d = (first - pos) / w;
    else if (pos > last) d = (pos - last) / w;
    if (d > 0.0) f[i] = std::exp(-alpha * (c / dx) * std::pow(std::min(d, 1.0), 4) * dt / 2.0);
  }
  return f;
}

}  // namespace

Traces pstd_forward(const ScalarField& p0, const MediumConfig& medium, const TransducerArray& array,
                    const SolverConfig& solver, const EnergyProbe* probe) {
  const Grid2D& grid = p0.grid;
  grid.validate();
  medium.validate();
  if (p0.values.rows() != grid.nz || p0.values.cols() != grid.nx)
    throw Error("initial pressure does not match its grid");
  if (!(solver.dt > 0.0) || solver.n_steps == 0) throw Error("solver needs a positive dt and step count");
  const double cfl = solver.cfl(medium, grid);
  if (cfl > kMaxCfl + 1e-12)
    throw Error(fmt::format("CFL number {:.4f} exceeds {:.2f}; reduce dt", cfl, kMaxCfl));
  check_array_fits(array, grid);

  const double c = medium.sound_speed;
  const double rho = medium.density;
  const double dt = solver.dt;
  const double dx = grid.dx;
  const std::size_t P = solver.pml_width;
  const std::size_t Nx = grid.nx + 2 * P;
  const std::size_t Nz = grid.nz + 2 * P;
  const std::size_t Kx = Nx / 2 + 1;
  const std::size_t cells = Nx * Nz;

  // k-space operators on the half spectrum (rows kz, cols kx), with the
  // transform normalization folded in.
  std::vector<cplx> dx_pos(Nz * Kx), dx_neg(Nz * Kx), dz_pos(Nz * Kx), dz_neg(Nz * Kx);
  const double norm = 1.0 / static_cast<double>(cells);
  for (std::size_t j = 0; j < Nz; ++j) {
    const long fj = fft_freq_index(j, Nz);
    const double kz = 2.0 * pi * static_cast<double>(fj) / (static_cast<double>(Nz) * dx);
    const bool nyq_z = Nz % 2 == 0 && j == Nz / 2;
    for (std::size_t i = 0; i < Kx; ++i) {
      const double kx = 2.0 * pi * static_cast<double>(i) / (static_cast<double>(Nx) * dx);
      const bool nyq_x = Nx % 2 == 0 && i == Nx / 2;
      const double k = std::hypot(kx, kz);
      const double arg = 0.5 * c * k * dt;
      const double kappa = arg == 0.0 ? 1.0 : std::sin(arg) / arg;
      const std::size_t idx = j * Kx + i;
      const cplx ikx = nyq_x ? cplx{} : cplx(0.0, kx);
      const cplx ikz = nyq_z ? cplx{} : cplx(0.0, kz);
      dx_pos[idx] = ikx * std::polar(1.0, kx * dx / 2.0) * kappa * norm;
      dx_neg[idx] = ikx * std::polar(1.0, -kx * dx / 2.0) * kappa * norm;
      dz_pos[idx] = ikz * std::polar(1.0, kz * dx / 2.0) * kappa * norm;
      dz_neg[idx] = ikz * std::polar(1.0, -kz * dx / 2.0) * kappa * norm;
    }
  }

  const auto pml_x = pml_profile(grid.nx, P, solver.pml_alpha, c, dx, dt, 0.0);
  const auto pml_x_sg = pml_profile(grid.nx, P, solver.pml_alpha, c, dx, dt, 0.5);
  const auto pml_z = pml_profile(grid.nz, P, solver.pml_alpha, c, dx, dt, 0.0);
  const auto pml_z_sg = pml_profile(grid.nz, P, solver.pml_alpha, c, dx, dt, 0.5);

  std::vector<double> p(cells, 0.0), ux(cells, 0.0), uz(cells, 0.0), rx(cells, 0.0), rz(cells, 0.0);
  for (std::size_t j = 0; j < grid.nz; ++j)
    for (std::size_t i = 0; i < grid.nx; ++i) {
      const double v = p0.values(j, i);
      const std::size_t idx = (j + P) * Nx + (i + P);
      p[idx] = v;
      rx[idx] = rz[idx] = v / (2.0 * c * c);
    }

  // Receivers: linear interpolation along row P.
  struct Tap {
    std::size_t i0;
    double w0;
  };
  std::vector<Tap> taps(array.n_elements);
  for (std::size_t k = 0; k < array.n_elements; ++k) {
    const double col = element_x(array, grid, k) / dx - 0.5 + static_cast<double>(P);
    const double base = std::floor(col);
    taps[k] = {static_cast<std::size_t>(base), 1.0 - (col - base)};
  }

  Traces out{Array2D<double>(solver.n_steps, array.n_elements, 0.0), 1.0 / dt};
  auto record = [&](std::size_t n) {
    const double* row = p.data() + P * Nx;
    for (std::size_t k = 0; k < taps.size(); ++k) {
      const auto& t = taps[k];
      out.data(n, k) = t.w0 * row[t.i0] + (1.0 - t.w0) * row[t.i0 + 1];
    }
  };
  // Energy at integer step n uses p(n) and the mean of u(n - 1/2) and u(n + 1/2).
  std::vector<double> ux_prev, uz_prev;
  auto energy = [&] {
    double e = 0.0;
    for (std::size_t idx = 0; idx < cells; ++idx) {
      const double vx = 0.5 * (ux[idx] + ux_prev[idx]);
      const double vz = 0.5 * (uz[idx] + uz_prev[idx]);
      e += p[idx] * p[idx] / (2.0 * rho * c * c) + 0.5 * rho * (vx * vx + vz * vz);
    }
    return e * dx * dx;
  };
  auto probing = [&](std::size_t n) {
    return probe && probe->on_sample && probe->interval > 0 && n % probe->interval == 0;
  };

  RealFft2d fft(Nz, Nx);
  auto real = fft.real();
  auto spec = fft.spectrum();
  std::vector<cplx> p_hat(Nz * Kx);

  auto spectral_derivative = [&](const std::vector<cplx>& op, const std::vector<cplx>& src) {
    for (std::size_t idx = 0; idx < src.size(); ++idx) spec[idx] = op[idx] * src[idx];
    fft.inverse();
  };
  auto transform_p = [&] {
    std::copy(p.begin(), p.end(), real.begin());
    fft.forward();
    std::copy(spec.begin(), spec.end(), p_hat.begin());
  };

  // u at t = -dt/2 such that u(0) = 0.
  transform_p();
  spectral_derivative(dx_pos, p_hat);
  for (std::size_t idx = 0; idx < cells; ++idx) ux[idx] = dt / (2.0 * rho) * real[idx];
  spectral_derivative(dz_pos, p_hat);
  for (std::size_t idx = 0; idx < cells; ++idx) uz[idx] = dt / (2.0 * rho) * real[idx];

  record(0);

  std::vector<cplx> u_hat(Nz * Kx);
  for (std::size_t n = 1; n <= solver.n_steps; ++n) {
    const bool report = probing(n - 1);
    if (report) {
      ux_prev = ux;
      uz_prev = uz;
    }
    transform_p();
    spectral_derivative(dx_pos, p_hat);
    for (std::size_t j = 0; j < Nz; ++j)
      for (std::size_t i = 0; i < Nx; ++i) {
        const std::size_t idx = j * Nx + i;
        ux[idx] = pml_x_sg[i] * (pml_x_sg[i] * ux[idx] - dt / rho * real[idx]);
      }
    spectral_derivative(dz_pos, p_hat);
    for (std::size_t j = 0; j < Nz; ++j)
      for (std::size_t i = 0; i < Nx; ++i) {
        const std::size_t idx = j * Nx + i;
        uz[idx] = pml_z_sg[j] * (pml_z_sg[j] * uz[idx] - dt / rho * real[idx]);
      }
    if (report) probe->on_sample(n - 1, energy());
    if (n == solver.n_steps) break;

    std::copy(ux.begin(), ux.end(), real.begin());
    fft.forward();
    std::copy(spec.begin(), spec.end(), u_hat.begin());
    spectral_derivative(dx_neg, u_hat);
    for (std::size_t j = 0; j < Nz; ++j)
      for (std::size_t i = 0; i < Nx; ++i) {
        const std::size_t idx = j * Nx + i;
        rx[idx] = pml_x[i] * (pml_x[i] * rx[idx] - dt * rho * real[idx]);
      }

    std::copy(uz.begin(), uz.end(), real.begin());
    fft.forward();
    std::copy(spec.begin(), spec.end(), u_hat.begin());
    spectral_derivative(dz_neg, u_hat);
    for (std::size_t j = 0; j < Nz; ++j)
      for (std::size_t i = 0; i < Nx; ++i) {
        const std::size_t idx = j * Nx + i;
        rz[idx] = pml_z[j] * (pml_z[j] * rz[idx] - dt * rho * real[idx]);
      }

    for (std::size_t idx = 0; idx < cells; ++idx) p[idx] = c * c * (rx[idx] + rz[idx]);
    record(n);
  }
  return out;
}

AnalyticResponse analytic_point_forward(double source_x, double source_z, double amplitude,
                                        const MediumConfig& medium, const TransducerArray& array,
                                        const Grid2D& grid, double sample_rate, std::size_t n_samples) {
  medium.validate();
  if (source_x < 0.0 || source_x > grid.extent_x() || source_z < 0.0 || source_z > grid.z_at(grid.nz - 1))
    throw Error(fmt::format("point source ({:.3f}, {:.3f}) mm lies outside the grid", source_x * 1e3,
                            source_z * 1e3));
  const double c = medium.sound_speed;
  const double dt = 1.0 / sample_rate;
  AnalyticResponse out{{Array2D<double>(n_samples, array.n_elements, 0.0), sample_rate}, {}};
  out.arrival_times.resize(array.n_elements);
  const double scale = amplitude / (2.0 * pi * c);
  for (std::size_t k = 0; k < array.n_elements; ++k) {
    const double r = std::hypot(element_x(array, grid, k) - source_x, source_z);
    const double tau = r / c;
    out.arrival_times[k] = tau;
    // Integral of 1/sqrt(t^2 - tau^2) is acosh(t / tau).
    auto primitive = [tau](double t) { return t <= tau ? 0.0 : std::acosh(t / tau); };
    for (std::size_t n = 0; n < n_samples; ++n) {
      const double tb = (static_cast<double>(n) + 0.5) * dt;
      if (tb <= tau) continue;
      const double ta = (static_cast<double>(n) - 0.5) * dt;
      out.traces.data(n, k) = scale * (primitive(tb) - primitive(ta)) / dt;
    }
  }
  return out;
}

double transducer_gain(double frequency, const TransducerArray& array) {
  const double f = std::abs(frequency);
  const double half_width = 0.5 * array.frac_bandwidth * array.center_freq;
  const double level = std::pow(10.0, -6.0 / 20.0);
  const double sigma = half_width / std::sqrt(2.0 * std::log(1.0 / level));
  const double d = f - array.center_freq;
  return std::exp(-d * d / (2.0 * sigma * sigma));
}

Traces apply_transducer_response(Traces traces, const TransducerArray& array) {
  const std::size_t n = traces.data.rows();
  if (n == 0) return traces;
  const std::size_t nfft = next_pow2(2 * n);
  ComplexFft1d fft(nfft);
  auto buf = fft.data();
  std::vector<double> gain(nfft);
  for (std::size_t k = 0; k < nfft; ++k) {
    const double f = static_cast<double>(fft_freq_index(k, nfft)) * traces.sample_rate / static_cast<double>(nfft);
    gain[k] = transducer_gain(f, array) / static_cast<double>(nfft);
  }
  for (std::size_t ch = 0; ch < traces.data.cols(); ++ch) {
    std::fill(buf.begin(), buf.end(), cplx{});
    for (std::size_t t = 0; t < n; ++t) buf[t] = traces.data(t, ch);
    fft.forward();
    for (std::size_t k = 0; k < nfft; ++k) buf[k] *= gain[k];
    fft.inverse();
    for (std::size_t t = 0; t < n; ++t) traces.data(t, ch) = buf[t].real();
  }
  return traces;
}

RfFrame downsample_to_rf(const Traces& traces, const TransducerArray& array) {
  const double ratio = traces.sample_rate / array.sample_rate;
  const double m_round = std::round(ratio);
  if (m_round < 1.0 || std::abs(ratio - m_round) > 1e-9 * ratio)
    throw Error(fmt::format("internal rate {:.6g} Hz is not an integer multiple of {:.6g} Hz",
                            traces.sample_rate, array.sample_rate));
  const auto m = static_cast<std::size_t>(m_round);

  // Hamming-windowed sinc, cutoff 0.45 of the output rate, unit DC gain.
  const std::size_t half = 16 * m;
  const double fc = 0.45 * array.sample_rate / traces.sample_rate;  // cycles per input sample
  std::vector<double> h(2 * half + 1);
  double sum = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double t = static_cast<double>(k) - static_cast<double>(half);
    const double sinc = t == 0.0 ? 2.0 * fc : std::sin(2.0 * pi * fc * t) / (pi * t);
    const double win = 0.54 - 0.46 * std::cos(2.0 * pi * static_cast<double>(k) / static_cast<double>(h.size() - 1));
    h[k] = sinc * win;
    sum += h[k];
  }
  for (double& v : h) v /= sum;
  if (m == 1) {
    std::fill(h.begin(), h.end(), 0.0);
    h[half] = 1.0;
  }

  RfFrame out = RfFrame::zeros(array);
  const std::size_t n_in = traces.data.rows();
  const std::size_t channels = std::min(traces.data.cols(), array.n_elements);
  for (std::size_t r = 0; r < array.n_samples; ++r) {
    const std::size_t centre = r * m;
    if (centre >= n_in) break;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      double acc = 0.0;
      for (std::size_t k = 0; k < h.size(); ++k) {
        const long idx = static_cast<long>(centre) + static_cast<long>(k) - static_cast<long>(half);
        if (idx < 0 || idx >= static_cast<long>(n_in)) continue;
        acc += h[k] * traces.data(static_cast<std::size_t>(idx), ch);
      }
      out.samples(r, ch) = static_cast<float>(acc);
    }
  }
  return out;
}

RfFrame simulate_rf(const ScalarField& p0, const MediumConfig& medium, const TransducerArray& array,
                    const SolverConfig& solver) {
  return downsample_to_rf(apply_transducer_response(pstd_forward(p0, medium, array, solver), array), array);
}

nlohmann::json to_json(const SolverConfig& s) {
  return {{"dt_s", s.dt},
          {"internal_sample_rate_hz", s.internal_sample_rate},
          {"n_steps", s.n_steps},
          {"pml_width", s.pml_width},
          {"pml_alpha", s.pml_alpha}};
}

nlohmann::json to_json(const MediumConfig& m) {
  return {{"sound_speed_m_s", m.sound_speed}, {"density_kg_m3", m.density}, {"lossless", m.lossless}};
}

}  // namespace panp::acoustics
