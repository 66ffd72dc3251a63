#pragma once

// Structured kernel pruning over a chain of conv layers.
//
// A kernel is one (kh x kw) slice at an (out_ch, in_ch) pair. Look-ahead
// pruning (LAKP) scores every weight as
//
//     L(w) = |w| * ||W_prev[c, :, :, :]||_F * ||W_next[:, o, :, :]||_F
//
// for w at (o, c, y, x): the first norm covers every weight producing input
// channel c, the second every weight consuming output channel o. A missing
// neighbour contributes 1. Kernel scores are sums of their weight scores and
// the floor(s * N) lowest-scored units of each layer are masked. Magnitude
// kernel pruning (KP) is the same pipeline with kernel score sum |w|.
//
// Ties: lower score first, then lower sum |w|, then lower unit id. The
// magnitude key only matters for exact score ties (typically zero scores on
// already-pruned stacks) and keeps re-pruning idempotent.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fastcaps/capsnet.hpp"
#include "fastcaps/error.hpp"
#include "fastcaps/mask.hpp"
#include "fastcaps/tensor.hpp"

namespace fastcaps {

/// Conv weight tensors W_1..W_L (each (C_out, C_in, kh, kw)) with the
/// per-layer sparsity and pruning unit.
struct LayerStack {
  std::vector<Tensor<double>> layers;
  std::vector<double> sparsity;
  std::vector<Granularity> granularity;  // empty: kernel everywhere
  std::size_t group_channels = 8;        // output channels per capsule_group unit

  std::size_t size() const { return layers.size(); }

  Granularity unit(std::size_t i) const { return granularity.empty() ? Granularity::kernel : granularity.at(i); }

  void validate() const {
    if (sparsity.size() != layers.size()) throw ContractError("LayerStack: one sparsity per layer required");
    if (!granularity.empty() && granularity.size() != layers.size()) {
      throw ContractError("LayerStack: one granularity per layer required");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].rank() != 4) throw ShapeError("LayerStack: layer " + std::to_string(i) + " is not rank 4");
      if (!(sparsity[i] >= 0.0 && sparsity[i] < 1.0)) {
        throw ContractError("LayerStack: sparsity of layer " + std::to_string(i) + " must be in [0, 1)");
      }
      if (i + 1 < layers.size() && layers[i].dim(0) != layers[i + 1].dim(1)) {
        throw ShapeError("LayerStack: layer " + std::to_string(i) + " emits " + std::to_string(layers[i].dim(0)) +
                         " channels but layer " + std::to_string(i + 1) + " consumes " +
                         std::to_string(layers[i + 1].dim(1)));
      }
      const Granularity g = unit(i);
      if (g == Granularity::capsule) throw ContractError("LayerStack: capsule granularity applies to routing masks only");
      if (g == Granularity::capsule_group && (group_channels == 0 || layers[i].dim(0) % group_channels != 0)) {
        throw ShapeError("LayerStack: layer " + std::to_string(i) + " channels not divisible into capsule groups");
      }
    }
  }
};

namespace detail {

inline std::vector<double> out_channel_norms(const Tensor<double>& w) {
  const std::size_t out = w.dim(0), per = w.size() / out;
  std::vector<double> n(out, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t e = 0; e < per; ++e) n[o] += w[o * per + e] * w[o * per + e];
    n[o] = std::sqrt(n[o]);
  }
  return n;
}

inline std::vector<double> in_channel_norms(const Tensor<double>& w) {
  const std::size_t out = w.dim(0), in = w.dim(1), kk = w.dim(2) * w.dim(3);
  std::vector<double> n(in, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t c = 0; c < in; ++c) {
      for (std::size_t e = 0; e < kk; ++e) {
        const double v = w[(o * in + c) * kk + e];
        n[c] += v * v;
      }
    }
  }
  for (double& v : n) v = std::sqrt(v);
  return n;
}

}  // namespace detail

/// Per-weight look-ahead scores of w given its neighbours (either may be null).
inline Tensor<double> lookahead_scores(const Tensor<double>* prev, const Tensor<double>& w,
                                       const Tensor<double>* next) {
  if (w.rank() != 4) throw ShapeError("lookahead_scores: weights must be rank 4");
  const std::size_t out = w.dim(0), in = w.dim(1), kk = w.dim(2) * w.dim(3);
  std::vector<double> f_in(in, 1.0), f_out(out, 1.0);
  if (prev) {
    if (prev->rank() != 4 || prev->dim(0) != in) {
      throw ShapeError("lookahead_scores: previous layer emits " + std::to_string(prev->dim(0)) +
                       " channels, layer consumes " + std::to_string(in));
    }
    f_in = detail::out_channel_norms(*prev);
  }
  if (next) {
    if (next->rank() != 4 || next->dim(1) != out) {
      throw ShapeError("lookahead_scores: next layer consumes " + std::to_string(next->dim(1)) +
                       " channels, layer emits " + std::to_string(out));
    }
    f_out = detail::in_channel_norms(*next);
  }
  Tensor<double> scores(w.dims());
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t c = 0; c < in; ++c) {
      const double factor = f_in[c] * f_out[o];
      for (std::size_t e = 0; e < kk; ++e) {
        const std::size_t idx = (o * in + c) * kk + e;
        scores[idx] = std::fabs(w[idx]) * factor;
      }
    }
  }
  return scores;
}

/// Sum of per-weight values over each kernel; length C_out * C_in.
inline std::vector<double> kernel_sums(const Tensor<double>& per_weight) {
  const std::size_t n = per_weight.dim(0) * per_weight.dim(1);
  const std::size_t kk = per_weight.dim(2) * per_weight.dim(3);
  std::vector<double> sums(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t e = 0; e < kk; ++e) sums[k] += per_weight[k * kk + e];
  }
  return sums;
}

inline std::vector<double> kernel_magnitudes(const Tensor<double>& w) {
  Tensor<double> mag(w.dims());
  for (std::size_t i = 0; i < w.size(); ++i) mag[i] = std::fabs(w[i]);
  return kernel_sums(mag);
}

/// Ids of the `count` lowest units under (score, magnitude, id) ordering.
inline std::vector<std::size_t> lowest_units(const std::vector<double>& score, const std::vector<double>& magnitude,
                                             std::size_t count) {
  std::vector<std::size_t> order(score.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] < score[b];
    if (magnitude[a] != magnitude[b]) return magnitude[a] < magnitude[b];
    return a < b;
  });
  order.resize(std::min(count, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

/// Number of units removed at sparsity s.
inline std::size_t pruned_count(double s, std::size_t units) {
  return static_cast<std::size_t>(std::floor(s * static_cast<double>(units)));
}

enum class Pruner { lakp, kp };

inline const char* to_string(Pruner p) { return p == Pruner::lakp ? "lakp" : "kp"; }

struct PruneResult {
  std::vector<PruneMask> masks;
  std::vector<Tensor<double>> weights;           // mask applied
  std::vector<std::vector<double>> unit_scores;  // score of every pruning unit, per layer
};

/// Collapses kernel-level values into capsule_group units.
inline std::vector<double> group_sums(const std::vector<double>& per_kernel, std::size_t out, std::size_t in,
                                      std::size_t group) {
  std::vector<double> g(out / group, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t c = 0; c < in; ++c) g[o / group] += per_kernel[o * in + c];
  }
  return g;
}

inline Tensor<double> apply_mask(const Tensor<double>& w, const PruneMask& mask) {
  check_mask_shape(mask, w.dim(0), w.dim(1));
  Tensor<double> out = w;
  const std::size_t kk = w.dim(2) * w.dim(3);
  for (std::size_t k = 0; k < mask.kernel_count(); ++k) {
    if (!mask.alive(k)) std::fill_n(out.data().begin() + static_cast<std::ptrdiff_t>(k * kk), kk, 0.0);
  }
  return out;
}

inline PruneResult prune_stack(const LayerStack& stack, Pruner pruner) {
  stack.validate();
  PruneResult res;
  const std::size_t L = stack.size();
  for (std::size_t i = 0; i < L; ++i) {
    const Tensor<double>& w = stack.layers[i];
    const std::size_t out = w.dim(0), in = w.dim(1);
    const std::vector<double> magnitude = kernel_magnitudes(w);
    std::vector<double> score;
    if (pruner == Pruner::lakp) {
      const Tensor<double>* prev = i > 0 ? &stack.layers[i - 1] : nullptr;
      const Tensor<double>* next = i + 1 < L ? &stack.layers[i + 1] : nullptr;
      score = kernel_sums(lookahead_scores(prev, w, next));
    } else {
      score = magnitude;
    }

    const Granularity g = stack.unit(i);
    PruneMask mask(out, in, g);
    if (g == Granularity::capsule_group) {
      const std::size_t gc = stack.group_channels;
      const auto gscore = group_sums(score, out, in, gc);
      const auto gmag = group_sums(magnitude, out, in, gc);
      for (std::size_t grp : lowest_units(gscore, gmag, pruned_count(stack.sparsity[i], gscore.size()))) {
        for (std::size_t o = grp * gc; o < (grp + 1) * gc; ++o) {
          for (std::size_t c = 0; c < in; ++c) mask.kill(o, c);
        }
      }
      res.unit_scores.push_back(gscore);
    } else {
      for (std::size_t k : lowest_units(score, magnitude, pruned_count(stack.sparsity[i], score.size()))) {
        mask.set(k, false);
      }
      res.unit_scores.push_back(score);
    }
    res.weights.push_back(apply_mask(w, mask));
    res.masks.push_back(std::move(mask));
  }
  return res;
}

inline PruneResult lakp_prune(const LayerStack& stack) { return prune_stack(stack, Pruner::lakp); }
inline PruneResult kp_prune(const LayerStack& stack) { return prune_stack(stack, Pruner::kp); }

// ---------------------------------------------------------------------------
// Dead-structure propagation

/// How the last conv layer of a CapsNet feeds routing.
struct NetTopology {
  std::size_t group_channels = 8;  // channels per primary capsule type
  std::size_t grid_size = 36;      // capsules per type
  std::size_t routing_block = 1280;

  static NetTopology from(const CapsNetSpec& s) { return {s.caps_dim, s.grid_size(), s.routing_block()}; }
};

struct Propagation {
  std::vector<PruneMask> masks;   // conv chain after propagation
  PruneMask routing;              // (capsules x 1), capsule granularity
  std::vector<std::uint32_t> live_types;
  std::size_t sweeps = 0;         // sweeps that changed a mask
};

/// Repeatedly kills kernels that consume a dead channel (a channel whose
/// incoming kernels are all masked) until nothing changes, then marks a
/// capsule type dead when all its channels are dead.
inline Propagation propagate_dead_structures(std::vector<PruneMask> chain, const NetTopology& topo) {
  if (chain.empty()) throw ContractError("propagate_dead_structures: empty layer chain");
  for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
    if (chain[i].out_channels() != chain[i + 1].in_channels()) {
      throw ShapeError("propagate_dead_structures: masks " + std::to_string(i) + " and " + std::to_string(i + 1) +
                       " are not channel compatible");
    }
  }
  Propagation p;
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
      PruneMask& next = chain[i + 1];
      for (std::size_t ch = 0; ch < chain[i].out_channels(); ++ch) {
        if (chain[i].channel_alive(ch)) continue;
        for (std::size_t o = 0; o < next.out_channels(); ++o) {
          if (next.alive(o, ch)) {
            next.kill(o, ch);
            changed = true;
          }
        }
      }
    }
    if (changed) ++p.sweeps;
  }
  for (std::size_t i = 0; i < chain.size(); ++i) {
    bool any = false;
    for (std::size_t o = 0; o < chain[i].out_channels() && !any; ++o) any = chain[i].channel_alive(o);
    if (!any) throw ContractError("propagate_dead_structures: layer " + std::to_string(i) + " has no surviving output channel; network severed");
  }

  const PruneMask& last = chain.back();
  const std::size_t gc = topo.group_channels;
  if (gc == 0 || last.out_channels() % gc != 0) throw ShapeError("propagate_dead_structures: channels not divisible into capsule types");
  const std::size_t types = last.out_channels() / gc;
  p.routing = PruneMask(types * topo.grid_size, 1, Granularity::capsule);
  for (std::size_t t = 0; t < types; ++t) {
    bool alive = false;
    for (std::size_t ch = t * gc; ch < (t + 1) * gc && !alive; ++ch) alive = last.channel_alive(ch);
    if (alive) {
      p.live_types.push_back(static_cast<std::uint32_t>(t));
    } else {
      for (std::size_t q = 0; q < topo.grid_size; ++q) p.routing.set(t * topo.grid_size + q, false);
    }
  }
  p.masks = std::move(chain);
  return p;
}

/// CapsNet form: returns the full mask set and the compacted spec.
struct CapsNetPruning {
  PruneSet masks;
  CapsNetSpec spec;
  std::size_t sweeps = 0;
};

inline CapsNetPruning propagate_dead_structures(const PruneMask& conv1, const PruneMask& primary,
                                                const CapsNetSpec& spec) {
  check_mask_shape(conv1, spec.conv1_channels, spec.in_channels);
  check_mask_shape(primary, spec.primary_channels(), spec.conv1_channels);
  Propagation p = propagate_dead_structures({conv1, primary}, NetTopology::from(spec));
  CapsNetPruning out{{std::move(p.masks[0]), std::move(p.masks[1]), std::move(p.routing)}, spec, p.sweeps};
  out.spec.live_capsules = out.masks.routing.index_table();
  if (out.spec.live_capsules.size() == spec.total_capsules()) out.spec.live_capsules.clear();
  return out;
}

/// Zeroes masked kernels, biases of dead channels, and routing rows of dead capsules.
inline CapsNetParams<double> apply_masks(const CapsNetParams<double>& p, const PruneSet& m) {
  CapsNetParams<double> out = p;
  out.conv1.kernels = apply_mask(p.conv1.kernels, m.conv1);
  out.primary.kernels = apply_mask(p.primary.kernels, m.primary);
  for (std::size_t o = 0; o < m.conv1.out_channels(); ++o) {
    if (!m.conv1.channel_alive(o)) out.conv1.bias[o] = 0.0;
  }
  for (std::size_t o = 0; o < m.primary.out_channels(); ++o) {
    if (!m.primary.channel_alive(o)) out.primary.bias[o] = 0.0;
  }
  check_mask_shape(m.routing, p.digit.dim(0), 1);
  const std::size_t row = p.digit.size() / p.digit.dim(0);
  for (std::size_t i = 0; i < m.routing.kernel_count(); ++i) {
    if (!m.routing.alive(i)) std::fill_n(out.digit.data().begin() + static_cast<std::ptrdiff_t>(i * row), row, 0.0);
  }
  return out;
}

struct CompressionReport {
  std::uint64_t total_weights = 0;
  std::uint64_t surviving_weights = 0;
  double survived_weight_pct = 100.0;
  std::uint64_t conv_weights = 0;
  std::uint64_t surviving_conv_weights = 0;
  std::size_t total_capsules = 0;
  std::size_t survived_capsules = 0;
  std::uint64_t routing_weight_count = 0;
  std::uint64_t index_entries = 0;
  double index_overhead_pct = 0.0;
  std::vector<std::size_t> surviving_kernels;  // conv1, primary
};

/// Exact counts for a propagated mask set over the full (uncompacted) spec.
inline CompressionReport compression_report(const PruneSet& m, const CapsNetSpec& spec) {
  check_mask_shape(m.conv1, spec.conv1_channels, spec.in_channels);
  check_mask_shape(m.primary, spec.primary_channels(), spec.conv1_channels);
  check_mask_shape(m.routing, spec.total_capsules(), 1);
  const std::uint64_t kk = spec.kernel * spec.kernel;
  CompressionReport r;
  r.surviving_kernels = {m.conv1.survivors(), m.primary.survivors()};
  r.conv_weights = (m.conv1.kernel_count() + m.primary.kernel_count()) * kk;
  r.surviving_conv_weights = (r.surviving_kernels[0] + r.surviving_kernels[1]) * kk;
  r.total_capsules = spec.total_capsules();
  r.survived_capsules = m.routing.survivors();
  r.routing_weight_count = static_cast<std::uint64_t>(r.survived_capsules) * spec.routing_block();
  r.total_weights = r.conv_weights + static_cast<std::uint64_t>(r.total_capsules) * spec.routing_block();
  r.surviving_weights = r.surviving_conv_weights + r.routing_weight_count;
  r.survived_weight_pct = 100.0 * static_cast<double>(r.surviving_weights) / static_cast<double>(r.total_weights);
  r.index_entries = r.surviving_kernels[0] + r.surviving_kernels[1] + r.survived_capsules;
  r.index_overhead_pct = r.surviving_weights == 0
                             ? 0.0
                             : 100.0 * static_cast<double>(r.index_entries) / static_cast<double>(r.surviving_weights);
  return r;
}

/// Conv stack of a CapsNet in pruning order.
inline LayerStack capsnet_stack(const CapsNetParams<double>& p, double conv1_sparsity, double primary_sparsity,
                                Granularity conv1_unit, Granularity primary_unit, std::size_t caps_dim) {
  return {{p.conv1.kernels, p.primary.kernels}, {conv1_sparsity, primary_sparsity}, {conv1_unit, primary_unit}, caps_dim};
}

}  // namespace fastcaps
