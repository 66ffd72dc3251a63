#pragma once

// CapsNet inference: Conv -> ReLU -> PrimaryCaps conv -> capsule grouping ->
// prediction vectors -> dynamic routing -> class = argmax ||v_j||.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fastcaps/conv.hpp"
#include "fastcaps/error.hpp"
#include "fastcaps/mask.hpp"
#include "fastcaps/routing.hpp"
#include "fastcaps/tensor.hpp"

namespace fastcaps {

/// Architecture description. Defaults are the MNIST network: 28x28 input,
/// 9x9 conv to 256 channels, 9x9 stride-2 PrimaryCaps conv to 32 types of
/// 8-d capsules on a 6x6 grid, and 10 16-d digit capsules.
struct CapsNetSpec {
  std::size_t in_channels = 1;
  std::size_t in_h = 28;
  std::size_t in_w = 28;
  std::size_t conv1_channels = 256;
  std::size_t kernel = 9;
  std::size_t conv1_stride = 1;
  std::size_t capsule_types = 32;
  std::size_t caps_dim = 8;
  std::size_t primary_stride = 2;
  std::size_t out_caps = 10;
  std::size_t out_dim = 16;
  int routing_iters = 3;
  /// Input capsules that survived pruning; empty means all of them.
  std::vector<std::uint32_t> live_capsules;

  std::size_t conv1_h() const { return conv_out_extent(in_h, kernel, conv1_stride); }
  std::size_t conv1_w() const { return conv_out_extent(in_w, kernel, conv1_stride); }
  std::size_t grid_h() const { return conv_out_extent(conv1_h(), kernel, primary_stride); }
  std::size_t grid_w() const { return conv_out_extent(conv1_w(), kernel, primary_stride); }
  std::size_t grid_size() const { return grid_h() * grid_w(); }
  std::size_t primary_channels() const { return capsule_types * caps_dim; }
  /// IN_CH of the unpruned network.
  std::size_t total_capsules() const { return capsule_types * grid_size(); }
  /// IN_CH seen by routing.
  std::size_t in_caps() const { return live_capsules.empty() ? total_capsules() : live_capsules.size(); }
  /// Weights each input capsule owns in the routing layer (10*16*8 = 1280).
  std::size_t routing_block() const { return out_caps * out_dim * caps_dim; }
  std::size_t routing_weight_count() const { return in_caps() * routing_block(); }

  Dims conv1_dims() const { return {conv1_channels, in_channels, kernel, kernel}; }
  Dims primary_dims() const { return {primary_channels(), conv1_channels, kernel, kernel}; }
  Dims digit_dims() const { return {total_capsules(), out_caps, out_dim, caps_dim}; }

  void validate() const {
    if (routing_iters < 1) throw ContractError("routing_iters must be >= 1");
    if (caps_dim == 0 || capsule_types == 0 || out_caps == 0 || out_dim == 0 || conv1_channels == 0) {
      throw ShapeError("CapsNetSpec: capsule and channel counts must be positive");
    }
    (void)grid_size();  // throws when the geometry does not fit
    for (std::uint32_t id : live_capsules) {
      if (id >= total_capsules()) throw ShapeError("CapsNetSpec: live capsule id out of range");
    }
  }
};

/// Groups (C, gh, gw) features into capsules of caps_dim consecutive
/// channels: capsule t * grid + p holds channels [t*caps_dim, (t+1)*caps_dim)
/// at grid position p. Each capsule is squashed unless told otherwise.
template <class T>
Tensor<T> primary_caps(const Tensor<T>& features, std::size_t caps_dim, bool squash_capsules = true) {
  if (features.rank() != 3) throw ShapeError("primary_caps: features must be (C, H, W)");
  if (caps_dim == 0 || features.dim(0) % caps_dim != 0) {
    throw ShapeError("primary_caps: " + std::to_string(features.dim(0)) + " channels not divisible by caps_dim " +
                     std::to_string(caps_dim));
  }
  const std::size_t types = features.dim(0) / caps_dim;
  const std::size_t grid = features.dim(1) * features.dim(2);
  Tensor<T> caps({types * grid, caps_dim});
  for (std::size_t t = 0; t < types; ++t) {
    for (std::size_t p = 0; p < grid; ++p) {
      for (std::size_t d = 0; d < caps_dim; ++d) caps(t * grid + p, d) = features[(t * caps_dim + d) * grid + p];
    }
  }
  if (squash_capsules) {
    for (std::size_t i = 0; i < caps.dim(0); ++i) {
      const auto sq = squash(std::span<const T>(caps.data().subspan(i * caps_dim, caps_dim)));
      for (std::size_t d = 0; d < caps_dim; ++d) caps(i, d) = sq[d];
    }
  }
  return caps;
}

/// u_hat[i][j][k] = sum_d W[i][j][k][d] * capsules[i][d].
template <class T>
Tensor<T> predict_vectors(const Tensor<T>& capsules, const Tensor<T>& w) {
  if (capsules.rank() != 2 || w.rank() != 4) throw ShapeError("predict_vectors: expected capsules (IN, D) and W (IN, OUT, DIM, D)");
  const std::size_t in = capsules.dim(0), d = capsules.dim(1);
  if (w.dim(0) != in || w.dim(3) != d) {
    throw ShapeError("predict_vectors: W " + dims_string(w.dims()) + " does not match capsules " +
                     dims_string(capsules.dims()));
  }
  const std::size_t out = w.dim(1), dim = w.dim(2);
  using A = Arith<T>;
  const FxFormat fmt = format_of(capsules);
  Tensor<T> u({in, out, dim});
  const T* wp = w.data().data();
  for (std::size_t i = 0; i < in; ++i) {
    const T* ci = capsules.data().data() + i * d;
    for (std::size_t jk = 0; jk < out * dim; ++jk) {
      const T* row = wp + (i * out * dim + jk) * d;
      auto acc = A::zero(fmt);
      for (std::size_t e = 0; e < d; ++e) acc = A::mac(acc, row[e], ci[e]);
      u[i * out * dim + jk] = A::narrow(acc, fmt);
    }
  }
  return u;
}

/// Rows of t (along axis 0) listed in ids, in that order.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& t, const std::vector<std::uint32_t>& ids) {
  Dims dims = t.dims();
  const std::size_t row = t.size() / dims.at(0);
  std::vector<T> out;
  out.reserve(ids.size() * row);
  for (std::uint32_t id : ids) {
    if (id >= dims[0]) throw ShapeError("gather_rows: id out of range");
    const auto src = t.data().subspan(std::size_t{id} * row, row);
    out.insert(out.end(), src.begin(), src.end());
  }
  dims[0] = ids.size();
  return Tensor<T>(std::move(dims), std::move(out));
}

template <class T>
struct CapsNetParams {
  ConvLayerWeights<T> conv1;
  ConvLayerWeights<T> primary;
  Tensor<T> digit;  // (total_capsules, OUT_CH, OUT_DIM, caps_dim)
};

template <class T>
CapsNetParams<T> convert_params(const CapsNetParams<double>& p, FxFormat fmt) {
  return {{convert<T>(p.conv1.kernels, fmt), convert<T>(p.conv1.bias, fmt), p.conv1.stride},
          {convert<T>(p.primary.kernels, fmt), convert<T>(p.primary.bias, fmt), p.primary.stride},
          convert<T>(p.digit, fmt)};
}

/// Per-layer survival masks of a pruned network.
struct PruneSet {
  PruneMask conv1;
  PruneMask primary;
  PruneMask routing;  // (total_capsules x 1), capsule granularity
};

enum class ArithMode { real, fx16 };

inline const char* to_string(ArithMode a) { return a == ArithMode::real ? "real" : "fx16"; }

struct InferOptions {
  RoutingMode mode = RoutingMode::reference;
  ArithMode arith = ArithMode::real;
  std::size_t fact = 10;
  std::size_t pe_count = 10;
  bool squash_primary = true;
  bool update_last = false;
};

struct InferResult {
  int cls = 0;
  std::vector<double> caps_norms;
};

/// Index of the largest value; ties go to the lowest index.
inline int argmax(const std::vector<double>& v) {
  int best = 0;
  for (std::size_t j = 1; j < v.size(); ++j) {
    if (v[j] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}

/// Immutable model: spec, real weights, optional masks, and (when a fixed
/// format is given) a quantized copy of the weights. infer() is const and
/// safe to call from several threads.
class CapsNet {
 public:
  CapsNet(CapsNetSpec spec, CapsNetParams<double> params, std::optional<PruneSet> masks = std::nullopt,
          std::optional<FxFormat> fixed = std::nullopt)
      : spec_(std::move(spec)), real_(std::move(params)), masks_(std::move(masks)) {
    spec_.validate();
    require_dims(real_.conv1.kernels.dims(), spec_.conv1_dims(), "conv1 weights");
    require_dims(real_.conv1.bias.dims(), {spec_.conv1_channels}, "conv1 bias");
    require_dims(real_.primary.kernels.dims(), spec_.primary_dims(), "primary_caps weights");
    require_dims(real_.primary.bias.dims(), {spec_.primary_channels()}, "primary_caps bias");
    require_dims(real_.digit.dims(), spec_.digit_dims(), "digit_caps weights");
    if (real_.conv1.stride != spec_.conv1_stride || real_.primary.stride != spec_.primary_stride) {
      throw ShapeError("conv strides disagree with the spec");
    }
    if (masks_) {
      check_mask_shape(masks_->conv1, spec_.conv1_channels, spec_.in_channels);
      check_mask_shape(masks_->primary, spec_.primary_channels(), spec_.conv1_channels);
      check_mask_shape(masks_->routing, spec_.total_capsules(), 1);
      live_ = masks_->routing.index_table();
      if (live_.empty()) throw ContractError("pruned network has no surviving capsules");
    } else if (!spec_.live_capsules.empty()) {
      live_ = spec_.live_capsules;
    } else {
      live_.resize(spec_.total_capsules());
      for (std::size_t i = 0; i < live_.size(); ++i) live_[i] = static_cast<std::uint32_t>(i);
    }
    spec_.live_capsules = live_.size() == spec_.total_capsules() ? std::vector<std::uint32_t>{} : live_;
    digit_real_ = gather_rows(real_.digit, live_);
    if (fixed) {
      fmt_ = *fixed;
      fixed_ = convert_params<Fx16>(real_, *fixed);
      digit_fixed_ = gather_rows(fixed_->digit, live_);
    }
  }

  const CapsNetSpec& spec() const noexcept { return spec_; }
  const CapsNetParams<double>& params() const noexcept { return real_; }
  const std::optional<PruneSet>& masks() const noexcept { return masks_; }
  const std::vector<std::uint32_t>& live_capsules() const noexcept { return live_; }
  bool has_fixed() const noexcept { return fixed_.has_value(); }

  /// Routing PE batch actually used: the largest divisor of IN_CH not above
  /// the requested fact or the PE count.
  std::size_t effective_fact(const InferOptions& opt) const {
    return largest_divisor_at_most(live_.size(), std::min(opt.fact, opt.pe_count));
  }

  InferResult infer(const Tensor<double>& image, const InferOptions& opt = {}) const {
    require_dims(image.dims(), {spec_.in_channels, spec_.in_h, spec_.in_w}, "infer: image");
    if (opt.arith == ArithMode::fx16) {
      if (!fixed_) throw ContractError("infer: model was not prepared for fixed-point arithmetic");
      return run<Fx16>(quantize(image, fmt_), *fixed_, digit_fixed_, opt);
    }
    return run<double>(image, real_, digit_real_, opt);
  }

  /// Routing state of one image, for inspection and tests.
  RoutingState<double> trace(const Tensor<double>& image, const InferOptions& opt = {}) const {
    require_dims(image.dims(), {spec_.in_channels, spec_.in_h, spec_.in_w}, "trace: image");
    return route(predict<double>(image, real_, digit_real_, opt), routing_options(opt));
  }

 private:
  RoutingOptions routing_options(const InferOptions& opt) const {
    return {spec_.routing_iters, opt.mode, opt.mode == RoutingMode::optimized ? effective_fact(opt) : 1,
            opt.update_last};
  }

  template <class T>
  Tensor<T> predict(const Tensor<T>& x, const CapsNetParams<T>& p, const Tensor<T>& digit,
                    const InferOptions& opt) const {
    const PruneMask* m1 = masks_ ? &masks_->conv1 : nullptr;
    const PruneMask* m2 = masks_ ? &masks_->primary : nullptr;
    const Tensor<T> a1 = relu(conv2d(x, p.conv1, m1));
    const Tensor<T> a2 = conv2d(a1, p.primary, m2);
    const Tensor<T> caps = primary_caps(a2, spec_.caps_dim, opt.squash_primary);
    const Tensor<T> live = live_.size() == caps.dim(0) ? caps : gather_rows(caps, live_);
    return predict_vectors(live, digit);
  }

  template <class T>
  InferResult run(const Tensor<T>& x, const CapsNetParams<T>& p, const Tensor<T>& digit,
                  const InferOptions& opt) const {
    const RoutingState<T> st = route(predict(x, p, digit, opt), routing_options(opt));
    InferResult r;
    r.caps_norms = capsule_norms(st.v);
    r.cls = argmax(r.caps_norms);
    return r;
  }

  CapsNetSpec spec_;
  CapsNetParams<double> real_;
  std::optional<PruneSet> masks_;
  std::vector<std::uint32_t> live_;
  Tensor<double> digit_real_;
  FxFormat fmt_{};
  std::optional<CapsNetParams<Fx16>> fixed_;
  Tensor<Fx16> digit_fixed_;
};

}  // namespace fastcaps
