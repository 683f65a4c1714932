#include "panp/core/fft.hpp"

#include <mutex>
#include <new>

namespace panp {
namespace {

// The FFTW planner is not thread safe; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

template <typename T>
T* fftw_alloc(std::size_t n) {
  void* p = fftw_malloc(sizeof(T) * n);
  if (!p) throw std::bad_alloc();
  return static_cast<T*>(p);
}

}  // namespace

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

RealFft2d::RealFft2d(std::size_t n0, std::size_t n1) : n0_(n0), n1_(n1) {
  real_ = fftw_alloc<double>(n0 * n1);
  spec_ = fftw_alloc<fftw_complex>(n0 * (n1 / 2 + 1));
  std::lock_guard lock(planner_mutex());
  fwd_ = fftw_plan_dft_r2c_2d(static_cast<int>(n0), static_cast<int>(n1), real_, spec_, FFTW_ESTIMATE);
  inv_ = fftw_plan_dft_c2r_2d(static_cast<int>(n0), static_cast<int>(n1), spec_, real_, FFTW_ESTIMATE);
}

RealFft2d::~RealFft2d() {
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }
  fftw_free(real_);
  fftw_free(spec_);
}

void RealFft2d::forward() { fftw_execute(fwd_); }
void RealFft2d::inverse() { fftw_execute(inv_); }

ComplexFft2d::ComplexFft2d(std::size_t n0, std::size_t n1) : n0_(n0), n1_(n1) {
  buf_ = fftw_alloc<fftw_complex>(n0 * n1);
  std::lock_guard lock(planner_mutex());
  fwd_ = fftw_plan_dft_2d(static_cast<int>(n0), static_cast<int>(n1), buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
  inv_ = fftw_plan_dft_2d(static_cast<int>(n0), static_cast<int>(n1), buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
}

ComplexFft2d::~ComplexFft2d() {
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }
  fftw_free(buf_);
}

void ComplexFft2d::forward() { fftw_execute(fwd_); }
void ComplexFft2d::inverse() { fftw_execute(inv_); }

ComplexFft1d::ComplexFft1d(std::size_t n) : n_(n) {
  buf_ = fftw_alloc<fftw_complex>(n);
  std::lock_guard lock(planner_mutex());
  fwd_ = fftw_plan_dft_1d(static_cast<int>(n), buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
  inv_ = fftw_plan_dft_1d(static_cast<int>(n), buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
}

ComplexFft1d::~ComplexFft1d() {
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }
  fftw_free(buf_);
}

void ComplexFft1d::forward() { fftw_execute(fwd_); }
void ComplexFft1d::inverse() { fftw_execute(inv_); }

}  // namespace panp
