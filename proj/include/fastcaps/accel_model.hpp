#pragma once

// Analytic cycle model of the CapsNet accelerator.
//
// Baseline: every routing operation runs as a sequential scalar schedule. A
// MAC costs one multiply plus one add; softmax evaluates exp and div per
// element with the baseline primitive latencies.
//
// Optimized: MAC-dominated steps (FullyConnected, WeightedSum, Agreement) are
// dispatched to an array of pe_count PEs, each doing mac_width multiplies and
// an adder tree. n MACs take d = ceil(n / (pe_count * mac_width)) dispatches;
// pipelined at II cycles that is (d - 1) * II + latency, otherwise d * latency,
// where latency = mul + add * ceil(log2(mac_width)). Softmax runs one input
// capsule's OUT_CH logits across the PEs in parallel, using the approximated
// exp and div; max and sum are adder-tree reductions. Squash stays on the
// scalar path in both modes and only benefits from the cheaper divide.
//
// Convolutions run on the PE array in both modes; memory traffic is not
// modelled (all parameters live on chip).

#include <array>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "fastcaps/capsnet.hpp"
#include "fastcaps/conv.hpp"
#include "fastcaps/error.hpp"

namespace fastcaps {

struct CostTable {
  std::uint64_t exp_baseline = 27;
  std::uint64_t exp_optimized = 14;
  std::uint64_t div_baseline = 49;
  std::uint64_t div_optimized = 36;
  std::uint64_t mul = 1;
  std::uint64_t add = 1;
  std::uint64_t mac = 1;
  std::uint64_t sqrt = 16;  // model-derived, not a measured latency

  void validate() const {
    for (std::uint64_t c : {exp_baseline, exp_optimized, div_baseline, div_optimized, mul, add, mac, sqrt}) {
      if (c < 1) throw ContractError("CostTable: every cost must be >= 1 cycle");
    }
    if (exp_optimized >= exp_baseline || div_optimized >= div_baseline) {
      throw ContractError("CostTable: optimized exp/div must be cheaper than baseline");
    }
  }
};

struct PEArraySpec {
  std::size_t pe_count = 10;
  std::size_t mac_width = 9;
  std::size_t pipeline_ii = 1;
  bool pipelined = true;

  void validate() const {
    if (pe_count < 1 || mac_width < 1 || pipeline_ii < 1) throw ContractError("PEArraySpec: counts must be >= 1");
  }
};

enum class RoutingStep : std::size_t { FullyConnected, Softmax, WeightedSum, Squash, Agreement };

inline constexpr std::array<RoutingStep, 5> kRoutingSteps = {
    RoutingStep::FullyConnected, RoutingStep::Softmax, RoutingStep::WeightedSum, RoutingStep::Squash,
    RoutingStep::Agreement};

inline const char* to_string(RoutingStep s) {
  switch (s) {
    case RoutingStep::FullyConnected: return "FullyConnected";
    case RoutingStep::Softmax: return "Softmax";
    case RoutingStep::WeightedSum: return "WeightedSum";
    case RoutingStep::Squash: return "Squash";
    case RoutingStep::Agreement: return "Agreement";
  }
  return "?";
}

struct StepCycles {
  std::array<std::uint64_t, 5> cycles{};

  std::uint64_t& operator[](RoutingStep s) { return cycles[static_cast<std::size_t>(s)]; }
  std::uint64_t operator[](RoutingStep s) const { return cycles[static_cast<std::size_t>(s)]; }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : cycles) t += c;
    return t;
  }
};

struct CycleReport {
  StepCycles baseline;
  StepCycles optimized;

  std::uint64_t baseline_total() const { return baseline.total(); }
  std::uint64_t optimized_total() const { return optimized.total(); }

  /// Percentage of baseline cycles removed for one step.
  double reduction_pct(RoutingStep s) const {
    const double b = static_cast<double>(baseline[s]);
    return b == 0.0 ? 0.0 : 100.0 * (b - static_cast<double>(optimized[s])) / b;
  }
};

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

inline std::uint64_t ceil_log2(std::uint64_t n) {
  std::uint64_t d = 0;
  while ((std::uint64_t{1} << d) < n) ++d;
  return d;
}

/// Cycles of one dispatch through a PE: parallel multiplies then the adder tree.
inline std::uint64_t pe_latency(const CostTable& c, const PEArraySpec& pe) {
  return c.mul + c.add * ceil_log2(pe.mac_width);
}

inline std::uint64_t pe_mac_cycles(std::uint64_t macs, const CostTable& c, const PEArraySpec& pe) {
  if (macs == 0) return 0;
  const std::uint64_t dispatches = ceil_div(macs, pe.pe_count * pe.mac_width);
  const std::uint64_t lat = pe_latency(c, pe);
  if (!pe.pipelined) return dispatches * lat;
  return (dispatches - 1) * pe.pipeline_ii * c.mac + lat;
}

inline std::uint64_t scalar_mac_cycles(std::uint64_t macs, const CostTable& c) { return macs * (c.mul + c.add); }

/// Softmax over n logits of one input capsule.
inline std::uint64_t softmax_row_cycles(std::uint64_t n, const CostTable& c, const PEArraySpec& pe, bool optimized) {
  if (!optimized) {
    return (n - 1) * c.add + n * c.add + n * c.exp_baseline + (n - 1) * c.add + n * c.div_baseline;
  }
  const std::uint64_t groups = ceil_div(n, pe.pe_count);
  const std::uint64_t tree = ceil_log2(n) * c.add;
  return tree + groups * c.add + groups * c.exp_optimized + tree + groups * c.div_optimized;
}

/// Squash of one dim-vector on the scalar path.
inline std::uint64_t squash_cycles(std::uint64_t dim, const CostTable& c, bool optimized) {
  const std::uint64_t div = optimized ? c.div_optimized : c.div_baseline;
  return dim * (c.mul + c.add) + c.add + c.sqrt + div + dim * c.mul;
}

inline StepCycles routing_cycles(const CapsNetSpec& spec, const CostTable& c, const PEArraySpec& pe, bool optimized,
                                 bool update_last = false) {
  spec.validate();
  c.validate();
  pe.validate();
  const std::uint64_t in = spec.in_caps(), out = spec.out_caps, dim = spec.out_dim, d = spec.caps_dim;
  const std::uint64_t iters = static_cast<std::uint64_t>(spec.routing_iters);
  const std::uint64_t updates = update_last ? iters : iters - 1;
  auto macs = [&](std::uint64_t n) { return optimized ? pe_mac_cycles(n, c, pe) : scalar_mac_cycles(n, c); };

  StepCycles s;
  s[RoutingStep::FullyConnected] = macs(in * out * dim * d);
  s[RoutingStep::Softmax] = iters * in * softmax_row_cycles(out, c, pe, optimized);
  s[RoutingStep::WeightedSum] = iters * macs(in * out * dim);
  s[RoutingStep::Squash] = iters * out * squash_cycles(dim, c, optimized);
  s[RoutingStep::Agreement] = updates * macs(in * out * dim);
  return s;
}

inline CycleReport routing_cycle_report(const CapsNetSpec& spec, const CostTable& c = {}, const PEArraySpec& pe = {},
                                        bool update_last = false) {
  return {routing_cycles(spec, c, pe, false, update_last), routing_cycles(spec, c, pe, true, update_last)};
}

/// Convolution cycles on the PE array, honouring pruning masks.
inline std::uint64_t conv_cycles(const CapsNetSpec& spec, const PruneSet* masks, const CostTable& c,
                                 const PEArraySpec& pe) {
  const std::uint64_t m1 = count_mac_ops(spec.conv1_channels, spec.in_channels, spec.kernel, spec.conv1_stride,
                                         masks ? &masks->conv1 : nullptr, spec.in_h, spec.in_w);
  const std::uint64_t m2 = count_mac_ops(spec.primary_channels(), spec.conv1_channels, spec.kernel,
                                         spec.primary_stride, masks ? &masks->primary : nullptr, spec.conv1_h(),
                                         spec.conv1_w());
  return pe_mac_cycles(m1, c, pe) + pe_mac_cycles(m2, c, pe);
}

struct ThroughputEstimate {
  std::uint64_t conv_cycles = 0;
  std::uint64_t routing_cycles = 0;
  std::uint64_t total_cycles = 0;
  double fps = 0.0;
};

/// clock_hz / cycles per inference. With masks, spec should be the compacted
/// spec returned by propagate_dead_structures.
inline ThroughputEstimate throughput_estimate(const CapsNetSpec& spec, const PruneSet* masks, const CostTable& c,
                                              const PEArraySpec& pe, double clock_hz, bool optimized) {
  if (!(clock_hz > 0.0)) throw ContractError("throughput_estimate: clock_hz must be positive");
  ThroughputEstimate t;
  t.conv_cycles = conv_cycles(spec, masks, c, pe);
  t.routing_cycles = routing_cycles(spec, c, pe, optimized).total();
  t.total_cycles = t.conv_cycles + t.routing_cycles;
  t.fps = clock_hz / static_cast<double>(t.total_cycles);
  return t;
}

// ---------------------------------------------------------------------------
// Report output

inline void write_primitive_rows(std::ostream& os, const CostTable& c) {
  os << "exp: " << c.exp_baseline << " -> " << c.exp_optimized << "\n";
  os << "div: " << c.div_baseline << " -> " << c.div_optimized << "\n";
}

inline void write_cycle_table(std::ostream& os, const CycleReport& r) {
  os << std::left << std::setw(16) << "step" << std::right << std::setw(14) << "baseline" << std::setw(14)
     << "optimized" << std::setw(12) << "reduction" << "\n";
  for (RoutingStep s : kRoutingSteps) {
    std::ostringstream pct;
    pct << std::fixed << std::setprecision(1) << r.reduction_pct(s) << "%";
    os << std::left << std::setw(16) << to_string(s) << std::right << std::setw(14) << r.baseline[s]
       << std::setw(14) << r.optimized[s] << std::setw(12) << pct.str() << "\n";
  }
  os << std::left << std::setw(16) << "total" << std::right << std::setw(14) << r.baseline_total() << std::setw(14)
     << r.optimized_total() << "\n";
}

inline void write_cycle_records(std::ostream& os, const CycleReport& r) {
  for (RoutingStep s : kRoutingSteps) {
    os << "step=" << to_string(s) << ";baseline=" << r.baseline[s] << ";optimized=" << r.optimized[s] << "\n";
  }
  os << "step=total;baseline=" << r.baseline_total() << ";optimized=" << r.optimized_total() << "\n";
}

}  // namespace fastcaps
