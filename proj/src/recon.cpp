#include "panp/recon.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "panp/core/error.hpp"
#include "panp/core/fft.hpp"
#include "panp/core/resample.hpp"

namespace panp::recon {

RfFrame zero_early_samples(RfFrame frame, std::size_t n_zero) {
  if (n_zero >= frame.n_samples())
    throw Error(fmt::format("cannot zero {} of {} samples", n_zero, frame.n_samples()));
  for (std::size_t r = 0; r < n_zero; ++r) {
    auto row = frame.samples.row(r);
    std::fill(row.begin(), row.end(), 0.0f);
  }
  return frame;
}

RfFrame average_frames(std::span<const RfFrame> frames) {
  if (frames.empty()) throw Error("cannot average an empty list of frames");
  const auto rows = frames[0].samples.rows(), cols = frames[0].samples.cols();
  std::vector<double> acc(rows * cols, 0.0);
  for (const auto& f : frames) {
    if (f.samples.rows() != rows || f.samples.cols() != cols)
      throw Error(fmt::format("frame shape {}x{} differs from {}x{}", f.samples.rows(), f.samples.cols(), rows, cols));
    const auto src = f.samples.flat();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += src[k];
  }
  RfFrame out{Array2D<float>(rows, cols), frames[0].array};
  const double inv = 1.0 / static_cast<double>(frames.size());
  auto dst = out.samples.flat();
  for (std::size_t k = 0; k < acc.size(); ++k) dst[k] = static_cast<float>(acc[k] * inv);
  return out;
}

nlohmann::json ReconGeometry::describe() const {
  return {{"method", "fk_migration"}, {"dx_lateral_m", dx_lateral}, {"dz_m", dz}, {"x0_m", x0},
          {"fft_rows", fft_rows},     {"fft_cols", fft_cols}};
}

MigratedImage fk_migrate(const RfFrame& frame, const acoustics::MediumConfig& medium) {
  medium.validate();
  const std::size_t nt = frame.n_samples();
  const std::size_t nch = frame.n_channels();
  if (nt < 2 || nch < 2) throw Error("f-k reconstruction needs at least 2 samples and 2 channels");

  const double c = medium.sound_speed;
  const double dt = 1.0 / frame.sample_rate();
  const double dz = c * dt;
  const double pitch = frame.array.pitch;
  const std::size_t Nt = next_pow2(2 * nt);
  const std::size_t Nx = next_pow2(2 * nch);
  const std::size_t off = (Nx - nch) / 2;

  ComplexFft2d data(Nt, Nx);
  auto buf = data.data();
  std::fill(buf.begin(), buf.end(), cplx{});
  for (std::size_t t = 0; t < nt; ++t)
    for (std::size_t k = 0; k < nch; ++k) data.at(t, off + k) = frame.samples(t, k);
  data.forward();

  ComplexFft2d image(Nt, Nx);
  auto img = image.data();
  std::fill(img.begin(), img.end(), cplx{});
  const double half = static_cast<double>(Nt / 2);
  for (std::size_t j = 0; j < Nx; ++j) {
    // Lateral wavenumber expressed in temporal-frequency bins.
    const double beta = static_cast<double>(fft_freq_index(j, Nx)) / (static_cast<double>(Nx) * pitch) *
                        static_cast<double>(Nt) * dz;
    // Only kz > 0 is filled (doubled), giving the analytic signal along depth.
    for (std::size_t n = 1; n < Nt / 2; ++n) {
      const double kz = static_cast<double>(n);
      const double m = std::sqrt(kz * kz + beta * beta);
      if (m >= half) continue;
      const auto m0 = static_cast<std::size_t>(m);
      const double frac = m - static_cast<double>(m0);
      const cplx value = (1.0 - frac) * data.at(m0, j) + frac * data.at(m0 + 1, j);
      image.at(n, j) = 2.0 * (kz / m) * value;
    }
  }
  image.inverse();

  MigratedImage out;
  out.values = Array2D<cplx>(nt, Nx);
  out.geometry.dx_lateral = pitch;
  out.geometry.dz = dz;
  out.geometry.x0 = -(static_cast<double>(off) + 0.5 * static_cast<double>(nch - 1)) * pitch;
  out.geometry.fft_rows = Nt;
  out.geometry.fft_cols = Nx;
  const double norm = 1.0 / (static_cast<double>(Nt) * static_cast<double>(Nx));
  for (std::size_t r = 0; r < nt; ++r)
    for (std::size_t col = 0; col < Nx; ++col) out.values(r, col) = image.at(r, col) * norm;
  return out;
}

ReconImage fk_reconstruct(const RfFrame& frame, const acoustics::MediumConfig& medium) {
  const MigratedImage m = fk_migrate(frame, medium);
  ReconImage out{Array2D<float>(m.values.rows(), m.values.cols()), m.geometry};
  for (std::size_t k = 0; k < m.values.size(); ++k)
    out.values.flat()[k] = static_cast<float>(std::abs(m.values.flat()[k]));
  return out;
}

double StandardGeometry::x_of(double col, std::size_t size) const {
  const double col512 = (col + 0.5) * static_cast<double>(crop) / static_cast<double>(size) - 0.5;
  const double full_col = col512 + static_cast<double>(crop_left());
  return (full_col - 0.5 * static_cast<double>(full_width - 1)) * pixel;
}

double StandardGeometry::z_of(double row, std::size_t size) const {
  const double row512 = (row + 0.5) * static_cast<double>(crop) / static_cast<double>(size) - 0.5;
  return (row512 + static_cast<double>(crop_top())) * pixel;
}

double StandardGeometry::col_of(double x, std::size_t size) const {
  const double full_col = x / pixel + 0.5 * static_cast<double>(full_width - 1);
  const double col512 = full_col - static_cast<double>(crop_left());
  return (col512 + 0.5) * static_cast<double>(size) / static_cast<double>(crop) - 0.5;
}

double StandardGeometry::row_of(double z, std::size_t size) const {
  const double row512 = z / pixel - static_cast<double>(crop_top());
  return (row512 + 0.5) * static_cast<double>(size) / static_cast<double>(crop) - 0.5;
}

namespace {

template <typename Sampler>
PixelImage resample_to_standard(const StandardGeometry& geom, Sampler sample) {
  PixelImage out(geom.crop, geom.crop, geom.pixel);
  for (std::size_t r = 0; r < geom.crop; ++r) {
    const double z = geom.z_of(static_cast<double>(r));
    for (std::size_t col = 0; col < geom.crop; ++col)
      out.values(r, col) = sample(geom.x_of(static_cast<double>(col)), z);
  }
  return out;
}

}  // namespace

PixelImage to_standard_image(const ReconImage& recon, const StandardGeometry& geom) {
  return resample_to_standard(geom, [&](double x, double z) {
    const ReconGeometry& g = recon.geometry;
    return sample_bilinear(recon.values, z / g.dz, (x - g.x0) / g.dx_lateral);
  });
}

PixelImage field_to_standard_image(const ScalarField& field, const StandardGeometry& geom) {
  const Grid2D& g = field.grid;
  const double max_row = static_cast<double>(g.nz - 1);
  const double max_col = static_cast<double>(g.nx - 1);
  return resample_to_standard(geom, [&](double x, double z) {
    const double row = z / g.dx;
    const double col = (x + g.center_x()) / g.dx - 0.5;
    if (row < -0.5 || row > max_row + 0.5 || col < -0.5 || col > max_col + 0.5) return 0.0f;
    return sample_bilinear(field.values, row, col);
  });
}

}  // namespace panp::recon
