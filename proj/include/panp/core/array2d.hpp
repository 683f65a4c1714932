#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace panp {

/// Dense row-major 2D array with value semantics.
template <typename T>
class Array2D {
 public:
  using value_type = T;

  Array2D() = default;
  Array2D(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Array2D(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    assert(data_.size() == rows_ * cols_);
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Array2D&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename To, typename From>
Array2D<To> array_cast(const Array2D<From>& a) {
  Array2D<To> out(a.rows(), a.cols());
  std::transform(a.flat().begin(), a.flat().end(), out.flat().begin(),
                 [](From v) { return static_cast<To>(v); });
  return out;
}

template <typename T>
T max_abs(const Array2D<T>& a) {
  T m{};
  for (T v : a.flat()) m = std::max<T>(m, v < T{} ? -v : v);
  return m;
}

template <typename T>
T max_value(const Array2D<T>& a) {
  assert(!a.empty());
  return *std::max_element(a.flat().begin(), a.flat().end());
}

}  // namespace panp
