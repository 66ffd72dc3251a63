#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "fastcaps/error.hpp"
#include "fastcaps/fxp.hpp"

namespace fastcaps {

using Dims = std::vector<std::size_t>;

inline std::size_t element_count(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string dims_string(const Dims& dims) {
  std::string out = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims[i]);
  }
  return out + ")";
}

/// Dense row-major N-d array. T is double or Fx16.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Dims dims, T fill = T{}) : dims_(std::move(dims)), data_(element_count(dims_), fill) {}

  Tensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (element_count(dims_) != data_.size()) {
      throw ShapeError("Tensor: dims " + dims_string(dims_) + " hold " +
                       std::to_string(element_count(dims_)) + " elements, got " +
                       std::to_string(data_.size()));
    }
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  template <class... I>
  T& operator()(I... idx) { return data_[offset(idx...)]; }
  template <class... I>
  const T& operator()(I... idx) const { return data_[offset(idx...)]; }

  template <class... I>
  std::size_t offset(I... idx) const {
    const std::size_t ix[] = {static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t a = 0; a < sizeof...(I); ++a) off = off * dims_[a] + ix[a];
    return off;
  }

  /// Same data viewed with new dims of equal element count.
  Tensor reshaped(Dims dims) const { return Tensor(std::move(dims), data_); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Dims dims_;
  std::vector<T> data_;
};

inline void require_dims(const Dims& got, const Dims& want, const std::string& what) {
  if (got != want) {
    throw ShapeError(what + ": expected " + dims_string(want) + ", got " + dims_string(got));
  }
}

// ---------------------------------------------------------------------------
// Scalar arithmetic policies. Acc is the MAC accumulator type; narrow() is the
// single rounding point back to the storage scalar.

template <class T>
struct Arith;

template <>
struct Arith<double> {
  using Acc = double;
  static Acc zero(FxFormat) { return 0.0; }
  static Acc widen(double v) { return v; }
  static Acc mac(Acc acc, double a, double b) { return acc + a * b; }
  static Acc add(Acc a, Acc b) { return a + b; }
  static double narrow(Acc acc, FxFormat) { return acc; }
  static double real(double v) { return v; }
  static double make(double v, FxFormat) { return v; }
};

template <>
struct Arith<Fx16> {
  using Acc = WideAcc;
  static Acc zero(FxFormat f) { return WideAcc::zero(f); }
  static Acc widen(Fx16 v) { return WideAcc::from(v); }
  static Acc mac(Acc acc, Fx16 a, Fx16 b) { return fx_mac(acc, a, b); }
  static Acc add(Acc a, Acc b) { return acc_add(a, b); }
  static Fx16 narrow(Acc acc, FxFormat f) { return writeback(acc, f); }
  static double real(Fx16 v) { return v.to_real(); }
  static Fx16 make(double v, FxFormat f) { return quantize(v, f); }
};

/// Format shared by every element; kQ8_8 for real tensors.
template <class T>
FxFormat format_of(std::span<const T> values) {
  if constexpr (std::is_same_v<T, Fx16>) {
    if (values.empty()) return kQ8_8;
    const FxFormat f = values.front().format;
    for (const Fx16& v : values) detail::require_same(f, v.format, "tensor");
    return f;
  } else {
    return kQ8_8;
  }
}

template <class T>
FxFormat format_of(const Tensor<T>& t) { return format_of<T>(t.data()); }

inline Tensor<Fx16> quantize(const Tensor<double>& t, FxFormat fmt, bool* saturated = nullptr) {
  std::vector<Fx16> out;
  out.reserve(t.size());
  for (double v : t.data()) out.push_back(quantize(v, fmt, saturated));
  return Tensor<Fx16>(t.dims(), std::move(out));
}

inline Tensor<double> to_real(const Tensor<Fx16>& t) {
  std::vector<double> out;
  out.reserve(t.size());
  for (Fx16 v : t.data()) out.push_back(v.to_real());
  return Tensor<double>(t.dims(), std::move(out));
}

inline Tensor<double> to_real(const Tensor<double>& t) { return t; }

/// Converts a real tensor into the scalar type T (identity for double).
template <class T>
Tensor<T> convert(const Tensor<double>& t, FxFormat fmt) {
  if constexpr (std::is_same_v<T, Fx16>) {
    return quantize(t, fmt);
  } else {
    return t;
  }
}

}  // namespace fastcaps
