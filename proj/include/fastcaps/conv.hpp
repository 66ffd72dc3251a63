#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "fastcaps/error.hpp"
#include "fastcaps/mask.hpp"
#include "fastcaps/tensor.hpp"

namespace fastcaps {

template <class T>
struct ConvLayerWeights {
  Tensor<T> kernels;  // (C_out, C_in, k, k)
  Tensor<T> bias;     // (C_out)
  std::size_t stride = 1;

  std::size_t out_channels() const { return kernels.dim(0); }
  std::size_t in_channels() const { return kernels.dim(1); }
  std::size_t kernel_size() const { return kernels.dim(2); }

  void validate() const {
    if (kernels.rank() != 4) throw ShapeError("conv weights must be rank 4 (C_out, C_in, k, k)");
    if (kernels.dim(2) != kernels.dim(3)) throw ShapeError("conv kernels must be square");
    if (kernels.dim(2) == 0 || stride == 0) throw ShapeError("conv kernel size and stride must be positive");
    require_dims(bias.dims(), {kernels.dim(0)}, "conv bias");
  }
};

/// Executed work counters, filled by conv2d when requested.
struct ConvStats {
  std::uint64_t macs = 0;
  std::uint64_t kernels_visited = 0;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride) {
  if (in < k) throw ShapeError("conv input extent " + std::to_string(in) + " smaller than kernel " + std::to_string(k));
  return (in - k) / stride + 1;
}

inline void check_mask_shape(const PruneMask& mask, std::size_t out, std::size_t in) {
  if (mask.out_channels() != out || mask.in_channels() != in) {
    throw ShapeError("prune mask is " + std::to_string(mask.out_channels()) + "x" +
                     std::to_string(mask.in_channels()) + ", weights have " + std::to_string(out) +
                     "x" + std::to_string(in) + " kernels");
  }
}

/// Valid-padding cross-correlation plus bias over a (C, H, W) input.
///
/// With a mask, only surviving (out_ch, in_ch) kernels are visited. An output
/// channel with no surviving kernel is exactly zero: its bias is dropped too.
/// Accumulation order per output pixel is (in_ch, ky, kx) ascending, with the
/// bias first, so masked and zero-weighted runs round identically.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvLayerWeights<T>& w,
                 const PruneMask* mask = nullptr, ConvStats* stats = nullptr) {
  w.validate();
  if (input.rank() != 3) throw ShapeError("conv2d input must be rank 3 (C, H, W), got " + dims_string(input.dims()));
  const std::size_t cin = w.in_channels();
  const std::size_t cout = w.out_channels();
  if (input.dim(0) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(0)) + " channels, weights expect " +
                     std::to_string(cin));
  }
  if (mask) check_mask_shape(*mask, cout, cin);

  const std::size_t k = w.kernel_size();
  const std::size_t s = w.stride;
  const std::size_t h = input.dim(1);
  const std::size_t wd = input.dim(2);
  const std::size_t oh = conv_out_extent(h, k, s);
  const std::size_t ow = conv_out_extent(wd, k, s);

  const FxFormat fmt = format_of(input);
  using A = Arith<T>;
  Tensor<T> out({cout, oh, ow}, A::make(0.0, fmt));
  std::vector<typename A::Acc> acc(oh * ow);

  const T* in = input.data().data();
  const T* ker = w.kernels.data().data();
  for (std::size_t o = 0; o < cout; ++o) {
    std::vector<std::size_t> channels;
    if (mask) {
      channels = mask->row(o);
      if (channels.empty()) continue;  // dead channel: output stays zero
    } else {
      channels.resize(cin);
      for (std::size_t c = 0; c < cin; ++c) channels[c] = c;
    }
    std::fill(acc.begin(), acc.end(), A::widen(w.bias[o]));
    for (std::size_t c : channels) {
      const T* plane = in + c * h * wd;
      const T* kern = ker + (o * cin + c) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const T wv = kern[ky * k + kx];
          for (std::size_t y = 0; y < oh; ++y) {
            const T* src = plane + (y * s + ky) * wd + kx;
            auto* dst = acc.data() + y * ow;
            for (std::size_t x = 0; x < ow; ++x) dst[x] = A::mac(dst[x], src[x * s], wv);
          }
        }
      }
    }
    if (stats) {
      stats->kernels_visited += channels.size();
      stats->macs += static_cast<std::uint64_t>(channels.size()) * k * k * oh * ow;
    }
    for (std::size_t p = 0; p < oh * ow; ++p) out[o * oh * ow + p] = A::narrow(acc[p], fmt);
  }
  return out;
}

/// Scalar multiply-accumulates conv2d performs for an input of in_shape.
template <class T>
std::uint64_t count_mac_ops(const ConvLayerWeights<T>& w, const PruneMask* mask, const Dims& in_shape) {
  w.validate();
  if (in_shape.size() != 3) throw ShapeError("count_mac_ops: input shape must be (C, H, W)");
  if (in_shape[0] != w.in_channels()) throw ShapeError("count_mac_ops: channel mismatch");
  const std::size_t k = w.kernel_size();
  const std::size_t pixels = conv_out_extent(in_shape[1], k, w.stride) * conv_out_extent(in_shape[2], k, w.stride);
  std::uint64_t kernels = w.out_channels() * w.in_channels();
  if (mask) {
    check_mask_shape(*mask, w.out_channels(), w.in_channels());
    kernels = mask->survivors();
  }
  return kernels * k * k * pixels;
}

/// Shape-only variant for cost modelling without materialized weights.
inline std::uint64_t count_mac_ops(std::size_t out_ch, std::size_t in_ch, std::size_t k, std::size_t stride,
                                   const PruneMask* mask, std::size_t h, std::size_t w) {
  const std::size_t pixels = conv_out_extent(h, k, stride) * conv_out_extent(w, k, stride);
  std::uint64_t kernels = out_ch * in_ch;
  if (mask) {
    check_mask_shape(*mask, out_ch, in_ch);
    kernels = mask->survivors();
  }
  return kernels * k * k * pixels;
}

template <class T>
Tensor<T> relu(Tensor<T> t) {
  for (T& v : t.data()) {
    if constexpr (std::is_same_v<T, Fx16>) {
      if (v.raw < 0) v.raw = 0;
    } else {
      if (v < 0.0) v = 0.0;
    }
  }
  return t;
}

}  // namespace fastcaps
