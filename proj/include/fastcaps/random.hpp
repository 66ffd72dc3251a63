#pragma once

// Seeded synthetic weights and inputs, for runs without trained models.

#include <cstdint>
#include <random>

#include "fastcaps/capsnet.hpp"
#include "fastcaps/tensor.hpp"

namespace fastcaps {

inline Tensor<double> random_tensor(const Dims& dims, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(dims);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

/// Every weight uniform in [-0.1, 0.1]; biases too unless zero_bias.
inline CapsNetParams<double> random_params(const CapsNetSpec& spec, std::uint64_t seed, bool zero_bias = false) {
  spec.validate();
  std::mt19937_64 rng(seed);
  CapsNetParams<double> p;
  p.conv1.kernels = random_tensor(spec.conv1_dims(), rng, -0.1, 0.1);
  p.conv1.bias = zero_bias ? Tensor<double>({spec.conv1_channels}) : random_tensor({spec.conv1_channels}, rng, -0.1, 0.1);
  p.conv1.stride = spec.conv1_stride;
  p.primary.kernels = random_tensor(spec.primary_dims(), rng, -0.1, 0.1);
  p.primary.bias =
      zero_bias ? Tensor<double>({spec.primary_channels()}) : random_tensor({spec.primary_channels()}, rng, -0.1, 0.1);
  p.primary.stride = spec.primary_stride;
  p.digit = random_tensor(spec.digit_dims(), rng, -0.1, 0.1);
  return p;
}

/// n images of the spec's input size, pixels uniform on the 1/255 grid.
inline Tensor<double> random_images(const CapsNetSpec& spec, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> px(0, 255);
  Tensor<double> t({n, spec.in_h, spec.in_w});
  for (double& v : t.data()) v = px(rng) / 255.0;
  return t;
}

}  // namespace fastcaps
