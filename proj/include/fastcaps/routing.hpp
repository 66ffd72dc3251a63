#pragma once

// Dynamic routing by agreement between primary and digit capsules.
//
// Two schedules share one engine:
//   reference  exact softmax, agreement in i -> j -> k order;
//   optimized  polynomial softmax_approx, agreement in j -> k -> i order with
//              `fact` input capsules dispatched to the PE array at a time.
// In fixed-point mode every MAC chain accumulates in a WideAcc and rounds
// once, so both agreement orders produce identical bits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "fastcaps/error.hpp"
#include "fastcaps/fxp.hpp"
#include "fastcaps/tensor.hpp"

namespace fastcaps {

/// ||s||^2 / (1 + ||s||^2) * s / ||s||; zero maps to zero.
inline std::vector<double> squash(std::span<const double> s) {
  double n2 = 0.0;
  for (double x : s) n2 += x * x;
  std::vector<double> out(s.size(), 0.0);
  if (n2 == 0.0) return out;
  const double scale = std::sqrt(n2) / (1.0 + n2);
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] * scale;
  return out;
}

/// Fixed-point squash runs on the scalar path: dequantize, squash, requantize.
inline std::vector<Fx16> squash(std::span<const Fx16> s) {
  if (s.empty()) return {};
  const FxFormat fmt = format_of(s);
  std::vector<double> real(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) real[i] = s[i].to_real();
  std::vector<Fx16> out;
  out.reserve(s.size());
  for (double v : squash(std::span<const double>(real))) out.push_back(quantize(v, fmt));
  return out;
}

template <class T>
double real_norm(std::span<const T> v) {
  double n2 = 0.0;
  for (const T& x : v) {
    const double r = Arith<T>::real(x);
    n2 += r * r;
  }
  return std::sqrt(n2);
}

enum class RoutingMode { reference, optimized };

inline const char* to_string(RoutingMode m) { return m == RoutingMode::reference ? "reference" : "optimized"; }

template <class T>
struct RoutingState {
  Tensor<T> u_hat;  // (IN_CH, OUT_CH, OUT_DIM)
  Tensor<T> b;      // (IN_CH, OUT_CH)
  Tensor<T> c;      // (IN_CH, OUT_CH)
  Tensor<T> s;      // (OUT_CH, OUT_DIM)
  Tensor<T> v;      // (OUT_CH, OUT_DIM)

  std::size_t in_caps() const { return u_hat.dim(0); }
  std::size_t out_caps() const { return u_hat.dim(1); }
  std::size_t out_dim() const { return u_hat.dim(2); }
};

struct RoutingOptions {
  int iters = 3;
  RoutingMode mode = RoutingMode::reference;
  std::size_t fact = 1;       // agreement PE batch, optimized mode only
  bool update_last = false;   // also update logits after the final iteration
};

namespace detail {

template <class T>
void check_u_hat(const Tensor<T>& u_hat) {
  if (u_hat.rank() != 3) throw ShapeError("u_hat must be rank 3 (IN_CH, OUT_CH, OUT_DIM), got " + dims_string(u_hat.dims()));
  if (u_hat.dim(0) == 0 || u_hat.dim(1) == 0 || u_hat.dim(2) == 0) throw ShapeError("u_hat has an empty axis");
}

template <class T>
void check_agreement_args(const Tensor<T>& u_hat, const Tensor<T>& v) {
  check_u_hat(u_hat);
  require_dims(v.dims(), {u_hat.dim(1), u_hat.dim(2)}, "agreement: v");
}

}  // namespace detail

/// delta_b[i][j] = sum_k u_hat[i][j][k] * v[j][k], loops i -> j -> k.
template <class T>
Tensor<T> agreement_reference(const Tensor<T>& u_hat, const Tensor<T>& v) {
  detail::check_agreement_args(u_hat, v);
  using A = Arith<T>;
  const std::size_t in = u_hat.dim(0), out = u_hat.dim(1), dim = u_hat.dim(2);
  const FxFormat fmt = format_of(u_hat);
  Tensor<T> delta({in, out});
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      auto acc = A::zero(fmt);
      for (std::size_t k = 0; k < dim; ++k) acc = A::mac(acc, u_hat(i, j, k), v(j, k));
      delta(i, j) = A::narrow(acc, fmt);
    }
  }
  return delta;
}

/// Same sums with the loops reordered j -> k -> i. Each pass of the inner
/// loop hands `fact` consecutive input capsules to the PE array; lanes touch
/// disjoint b[i][j] so a batch has no write conflicts.
template <class T>
Tensor<T> agreement_parallel(const Tensor<T>& u_hat, const Tensor<T>& v, std::size_t fact) {
  detail::check_agreement_args(u_hat, v);
  const std::size_t in = u_hat.dim(0), out = u_hat.dim(1), dim = u_hat.dim(2);
  if (fact == 0 || in % fact != 0) {
    throw ContractError("agreement_parallel: fact " + std::to_string(fact) + " does not divide IN_CH " +
                        std::to_string(in));
  }
  using A = Arith<T>;
  const FxFormat fmt = format_of(u_hat);
  std::vector<typename A::Acc> acc(in * out, A::zero(fmt));

  auto pe_batch = [&](std::size_t first, std::size_t j, std::size_t k) {
    const T vk = v(j, k);
    for (std::size_t lane = 0; lane < fact; ++lane) {
      const std::size_t i = first + lane;
      acc[i * out + j] = A::mac(acc[i * out + j], u_hat(i, j, k), vk);
    }
  };

  for (std::size_t j = 0; j < out; ++j) {
    for (std::size_t k = 0; k < dim; ++k) {
      for (std::size_t blk = 0; blk < in / fact; ++blk) pe_batch(blk * fact, j, k);
    }
  }

  Tensor<T> delta({in, out});
  for (std::size_t p = 0; p < in * out; ++p) delta[p] = A::narrow(acc[p], fmt);
  return delta;
}

/// s_j = sum_i c[i][j] * u_hat[i][j].
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& u_hat, const Tensor<T>& c) {
  detail::check_u_hat(u_hat);
  const std::size_t in = u_hat.dim(0), out = u_hat.dim(1), dim = u_hat.dim(2);
  require_dims(c.dims(), {in, out}, "weighted_sum: c");
  using A = Arith<T>;
  const FxFormat fmt = format_of(u_hat);
  Tensor<T> s({out, dim});
  for (std::size_t j = 0; j < out; ++j) {
    for (std::size_t k = 0; k < dim; ++k) {
      auto acc = A::zero(fmt);
      for (std::size_t i = 0; i < in; ++i) acc = A::mac(acc, c(i, j), u_hat(i, j, k));
      s(j, k) = A::narrow(acc, fmt);
    }
  }
  return s;
}

/// Row-wise softmax of the logits over output capsules j.
template <class T>
Tensor<T> coupling_coefficients(const Tensor<T>& b, RoutingMode mode) {
  const std::size_t in = b.dim(0), out = b.dim(1);
  Tensor<T> c(b.dims());
  for (std::size_t i = 0; i < in; ++i) {
    std::span<const T> row = b.data().subspan(i * out, out);
    std::vector<T> probs;
    if (mode == RoutingMode::optimized) {
      probs = softmax_approx(row);
    } else if constexpr (std::is_same_v<T, Fx16>) {
      std::vector<double> real(out);
      for (std::size_t j = 0; j < out; ++j) real[j] = row[j].to_real();
      for (double p : softmax_exact(real)) probs.push_back(quantize(p, row.front().format));
    } else {
      probs = softmax_exact(row);
    }
    for (std::size_t j = 0; j < out; ++j) c(i, j) = probs[j];
  }
  return c;
}

template <class T>
RoutingState<T> route(const Tensor<T>& u_hat, const RoutingOptions& opt) {
  detail::check_u_hat(u_hat);
  if (opt.iters < 1) throw ContractError("routing: iters must be >= 1, got " + std::to_string(opt.iters));
  const std::size_t in = u_hat.dim(0), out = u_hat.dim(1), dim = u_hat.dim(2);
  if (opt.mode == RoutingMode::optimized && (opt.fact == 0 || in % opt.fact != 0)) {
    throw ContractError("routing: fact " + std::to_string(opt.fact) + " does not divide IN_CH " + std::to_string(in));
  }
  const FxFormat fmt = format_of(u_hat);
  const T zero = Arith<T>::make(0.0, fmt);

  RoutingState<T> st{u_hat, Tensor<T>({in, out}, zero), Tensor<T>({in, out}, zero), Tensor<T>({out, dim}, zero),
                     Tensor<T>({out, dim}, zero)};
  for (int it = 0; it < opt.iters; ++it) {
    st.c = coupling_coefficients(st.b, opt.mode);
    st.s = weighted_sum(u_hat, st.c);
    for (std::size_t j = 0; j < out; ++j) {
      const auto v = squash(st.s.data().subspan(j * dim, dim));
      for (std::size_t k = 0; k < dim; ++k) st.v(j, k) = v[k];
    }
    if (it + 1 < opt.iters || opt.update_last) {
      const Tensor<T> delta = opt.mode == RoutingMode::optimized ? agreement_parallel(u_hat, st.v, opt.fact)
                                                                  : agreement_reference(u_hat, st.v);
      for (std::size_t p = 0; p < st.b.size(); ++p) {
        if constexpr (std::is_same_v<T, Fx16>) {
          st.b[p] = fx_add(st.b[p], delta[p]);
        } else {
          st.b[p] += delta[p];
        }
      }
    }
  }
  return st;
}

template <class T>
RoutingState<T> route_reference(const Tensor<T>& u_hat, int iters) {
  return route(u_hat, RoutingOptions{iters, RoutingMode::reference, 1, false});
}

template <class T>
RoutingState<T> route_optimized(const Tensor<T>& u_hat, int iters, std::size_t fact) {
  return route(u_hat, RoutingOptions{iters, RoutingMode::optimized, fact, false});
}

/// ||v_j|| for every output capsule.
template <class T>
std::vector<double> capsule_norms(const Tensor<T>& v) {
  std::vector<double> norms(v.dim(0));
  for (std::size_t j = 0; j < v.dim(0); ++j) norms[j] = real_norm(v.data().subspan(j * v.dim(1), v.dim(1)));
  return norms;
}

/// Largest divisor of n that is <= limit (at least 1).
inline std::size_t largest_divisor_at_most(std::size_t n, std::size_t limit) {
  for (std::size_t f = std::min(n, limit); f > 1; --f) {
    if (n % f == 0) return f;
  }
  return 1;
}

}  // namespace fastcaps
