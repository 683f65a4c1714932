#pragma once

#include <complex>
#include <cstddef>
#include <span>

#include <fftw3.h>

namespace panp {

using cplx = std::complex<double>;

// FFTW wrappers. Plans use FFTW_ESTIMATE so that the chosen algorithm, and
// therefore every floating point result, is identical from run to run.
// Transforms are unnormalized in both directions.

/// Real 2D transform of an n0 x n1 row-major array (half spectrum n0 x (n1/2+1)).
class RealFft2d {
 public:
  RealFft2d(std::size_t n0, std::size_t n1);
  ~RealFft2d();
  RealFft2d(const RealFft2d&) = delete;
  RealFft2d& operator=(const RealFft2d&) = delete;

  std::span<double> real() { return {real_, n0_ * n1_}; }
  std::span<cplx> spectrum() { return {reinterpret_cast<cplx*>(spec_), n0_ * (n1_ / 2 + 1)}; }
  [[nodiscard]] std::size_t n0() const { return n0_; }
  [[nodiscard]] std::size_t n1() const { return n1_; }
  [[nodiscard]] std::size_t spectrum_cols() const { return n1_ / 2 + 1; }

  void forward();  // real -> spectrum
  void inverse();  // spectrum -> real (spectrum is clobbered)

 private:
  std::size_t n0_, n1_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

/// In-place complex 2D transform.
class ComplexFft2d {
 public:
  ComplexFft2d(std::size_t n0, std::size_t n1);
  ~ComplexFft2d();
  ComplexFft2d(const ComplexFft2d&) = delete;
  ComplexFft2d& operator=(const ComplexFft2d&) = delete;

  std::span<cplx> data() { return {reinterpret_cast<cplx*>(buf_), n0_ * n1_}; }
  cplx& at(std::size_t i0, std::size_t i1) { return data()[i0 * n1_ + i1]; }
  [[nodiscard]] std::size_t n0() const { return n0_; }
  [[nodiscard]] std::size_t n1() const { return n1_; }

  void forward();
  void inverse();

 private:
  std::size_t n0_, n1_;
  fftw_complex* buf_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

/// In-place complex 1D transform.
class ComplexFft1d {
 public:
  explicit ComplexFft1d(std::size_t n);
  ~ComplexFft1d();
  ComplexFft1d(const ComplexFft1d&) = delete;
  ComplexFft1d& operator=(const ComplexFft1d&) = delete;

  std::span<cplx> data() { return {reinterpret_cast<cplx*>(buf_), n_}; }
  [[nodiscard]] std::size_t size() const { return n_; }

  void forward();
  void inverse();

 private:
  std::size_t n_;
  fftw_complex* buf_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

/// Signed frequency index of FFT bin k for a transform of length n.
inline long fft_freq_index(std::size_t k, std::size_t n) {
  return k <= n / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

std::size_t next_pow2(std::size_t n);

}  // namespace panp
