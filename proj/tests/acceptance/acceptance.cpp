// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fastcaps/fastcaps.hpp"
#include "oracles.hpp"

using namespace fastcaps;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

oracle::Layer as_layer(const Tensor<double>& t) { return {t.dim(0), t.dim(1), t.dim(2) * t.dim(3), t.values()}; }

// Three conv layers, at most 200 kernels each. `dyadic` draws weights from
// {+-0.5, +-1} so that exact score ties occur and exercise the tie-break.
LayerStack random_stack(std::mt19937_64& g, bool dyadic) {
  std::uniform_int_distribution<std::size_t> ch(1, 16), ks(1, 3);
  std::vector<std::size_t> w(4);
  do {
    for (auto& x : w) x = ch(g);
  } while (w[0] * w[1] > 200 || w[1] * w[2] > 200 || w[2] * w[3] > 200);
  LayerStack st;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t k = ks(g);
    Tensor<double> t = random_tensor({w[l + 1], w[l], k, k}, g, -1, 1);
    if (dyadic) {
      for (double& v : t.data()) v = (v < 0 ? -1.0 : 1.0) * (std::fabs(v) < 0.5 ? 0.5 : 1.0);
    }
    st.layers.push_back(t);
    st.sparsity.push_back(oracle::uniform(g, 0.0, 0.95));
  }
  return st;
}

std::vector<std::size_t> pruned_ids(const PruneMask& m) {
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < m.kernel_count(); ++k)
    if (!m.alive(k)) ids.push_back(k);
  return ids;
}

Outcome p1_lakp_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  auto g = oracle::rng(101);
  double worst = 0;
  const int trials = 120;
  for (int trial = 0; trial < trials; ++trial) {
    const LayerStack st = random_stack(g, trial % 5 == 0);
    const PruneResult res = lakp_prune(st);
    for (std::size_t l = 0; l < 3; ++l) {
      const auto L = as_layer(st.layers[l]);
      const oracle::Layer prev = l ? as_layer(st.layers[l - 1]) : oracle::Layer{};
      const oracle::Layer next = l < 2 ? as_layer(st.layers[l + 1]) : oracle::Layer{};
      const auto scores = oracle::per_kernel(L, oracle::lookahead(l ? &prev : nullptr, L, l < 2 ? &next : nullptr));
      for (std::size_t k = 0; k < scores.size(); ++k) {
        const double err = std::fabs(res.unit_scores[l][k] - scores[k]) / std::max(1.0, std::fabs(scores[k]));
        worst = std::max(worst, err);
      }
      oracle::Vec mag(L.w.size());
      for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::fabs(L.w[i]);
      if (pruned_ids(res.masks[l]) != oracle::bottom_kernels(scores, oracle::per_kernel(L, mag), st.sparsity[l])) {
        o.fail("pruned set differs from exhaustive sort, trial " + std::to_string(trial) + " layer " +
               std::to_string(l));
      }
    }
  }
  const double secs = seconds_since(t0);
  if (worst > 1e-9) o.fail("score error " + fmt(worst));
  if (secs >= 30) o.fail("runtime " + fmt(secs) + " s");
  if (o.pass) o.detail = std::to_string(trials) + " stacks, max score error " + fmt(worst, 3) + ", " + fmt(secs, 3) + " s";
  return o;
}

Outcome p2_scaling_invariance() {
  Outcome o;
  auto g = oracle::rng(202);
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    const LayerStack st = random_stack(g, false);
    const auto base = lakp_prune(st).masks;
    for (double c : {0.01, 1.0, 100.0}) {
      for (std::size_t l = 0; l < 3; ++l) {
        LayerStack scaled = st;
        for (double& v : scaled.layers[l].data()) v *= c;
        if (lakp_prune(scaled).masks != base) {
          o.fail("trial " + std::to_string(trial) + ": layer " + std::to_string(l) + " scaled by " + fmt(c) +
                 " changed a selection");
        }
      }
    }
  }
  if (o.pass) o.detail = std::to_string(trials) + " trials x 3 layers x c in {0.01, 1, 100}";
  return o;
}

Outcome p3_structure() {
  Outcome o;
  const CapsNetSpec s;
  const auto p = random_params(s, 303);
  if (s.routing_weight_count() != 1474560u) o.fail("unpruned routing weights " + std::to_string(s.routing_weight_count()));
  std::string detail = "unpruned 1152 capsules / 1474560 routing weights";
  for (auto [types_left, caps, weights] : {std::tuple{7u, 252u, 322560u}, std::tuple{12u, 432u, 552960u}}) {
    const double sp = (32.0 - types_left) / 32.0;
    const auto res = lakp_prune(capsnet_stack(p, 0.0, sp, Granularity::kernel, Granularity::capsule_group, 8));
    const auto pr = propagate_dead_structures(res.masks[0], res.masks[1], s);
    const auto r = compression_report(pr.masks, s);
    if (r.survived_capsules != caps || r.routing_weight_count != weights || pr.spec.routing_weight_count() != weights) {
      o.fail(std::to_string(types_left) + " types: " + std::to_string(r.survived_capsules) + " capsules, " +
             std::to_string(r.routing_weight_count) + " routing weights");
    }
    detail += "; " + std::to_string(types_left) + " types -> " + std::to_string(r.survived_capsules) + " / " +
              std::to_string(r.routing_weight_count);
  }
  if (o.pass) o.detail = detail;
  return o;
}

Outcome p4_approximations() {
  Outcome o;
  auto g = oracle::rng(404);
  double exp_red = 0, exp_wide = 0, div_err = 0, sum_err = 0;
  for (int i = 0; i < 10000; ++i) {
    // The implementation reduces into [0, ln2); [-0.5, 0.5] is checked too.
    for (double x : {oracle::uniform(g, 0.0, kLn2), oracle::uniform(g, -0.5, 0.5)}) {
      exp_red = std::max(exp_red, std::fabs(exp_approx(x) - std::exp(x)) / std::exp(x));
    }
    const double x = oracle::uniform(g, -20.0, 5.0);
    exp_wide = std::max(exp_wide, std::fabs(exp_approx(x) - std::exp(x)) / std::exp(x));
    const double a = std::pow(10.0, oracle::uniform(g, -3, 3)), b = std::pow(10.0, oracle::uniform(g, -3, 3));
    div_err = std::max(div_err, std::fabs(div_approx(a, b) - a / b) / (a / b));
  }
  int accepted = 0, argmax_miss = 0;
  while (accepted < 1000) {
    std::vector<double> v(10);
    for (double& x : v) x = oracle::uniform(g, -4, 4);
    const auto exact = softmax_exact(v);
    auto sorted = exact;
    std::sort(sorted.rbegin(), sorted.rend());
    if (sorted[0] - sorted[1] < 0.01) continue;
    ++accepted;
    const auto approx = softmax_approx(v);
    double sum = 0;
    for (double c : approx) sum += c;
    sum_err = std::max(sum_err, std::fabs(sum - 1.0));
    argmax_miss += argmax(approx) != argmax(exact);
  }
  if (exp_red > 1e-3) o.fail("exp reduced-interval error " + fmt(exp_red));
  if (exp_wide > 5e-3) o.fail("exp [-20, 5] error " + fmt(exp_wide));
  if (div_err > 1e-2) o.fail("div error " + fmt(div_err));
  if (sum_err > 1e-3) o.fail("softmax sum error " + fmt(sum_err));
  if (argmax_miss) o.fail(std::to_string(argmax_miss) + " softmax argmax flips");
  if (o.pass) {
    o.detail = "exp " + fmt(exp_red, 3) + " / " + fmt(exp_wide, 3) + ", div " + fmt(div_err, 3) + ", softmax sum " +
               fmt(sum_err, 3) + ", argmax flips 0/1000";
  }
  return o;
}

Outcome p5_loop_reorder() {
  Outcome o;
  std::size_t checks = 0;
  for (std::size_t in : {8u, 36u, 1152u}) {
    std::vector<std::size_t> divs;
    for (std::size_t f = 1; f <= in; ++f)
      if (in % f == 0) divs.push_back(f);
    for (int trial = 0; trial < 50; ++trial) {
      std::mt19937_64 g(500 + in * 100 + trial);
      const auto u = quantize(random_tensor({in, 10, 16}, g, -4, 4), kQ8_8);
      const auto v = quantize(random_tensor({10, 16}, g, -1, 1), kQ8_8);
      const auto ref = agreement_reference(u, v);
      for (std::size_t f : divs) {
        ++checks;
        if (agreement_parallel(u, v, f) != ref) {
          o.fail("IN " + std::to_string(in) + " fact " + std::to_string(f) + " trial " + std::to_string(trial));
        }
      }
    }
  }
  if (o.pass) o.detail = std::to_string(checks) + " bitwise comparisons over IN in {8, 36, 1152}";
  return o;
}

std::vector<std::vector<oracle::Vec>> nested(const Tensor<double>& u) {
  std::vector<std::vector<oracle::Vec>> n(u.dim(0), std::vector<oracle::Vec>(u.dim(1), oracle::Vec(u.dim(2))));
  for (std::size_t i = 0; i < u.dim(0); ++i)
    for (std::size_t j = 0; j < u.dim(1); ++j)
      for (std::size_t k = 0; k < u.dim(2); ++k) n[i][j][k] = u(i, j, k);
  return n;
}

double max_row_sum_error(const Tensor<double>& c) {
  double worst = 0;
  for (std::size_t i = 0; i < c.dim(0); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < c.dim(1); ++j) s += c(i, j);
    worst = std::max(worst, std::fabs(s - 1.0));
  }
  return worst;
}

Outcome p6_routing() {
  Outcome o;
  auto g = oracle::rng(606);
  std::uniform_int_distribution<std::size_t> in_d(1, 40), out_d(2, 10), dim_d(2, 16);
  double oracle_err = 0, sum_err = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t in = in_d(g), out = out_d(g), dim = dim_d(g);
    const auto u = random_tensor({in, out, dim}, g, -1, 1);
    const int iters = 1 + t % 4;
    const auto st = route_reference(u, iters);
    const auto want = oracle::route(nested(u), iters);
    for (std::size_t j = 0; j < out; ++j)
      for (std::size_t k = 0; k < dim; ++k) oracle_err = std::max(oracle_err, std::fabs(st.v(j, k) - want.v[j][k]));
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t j = 0; j < out; ++j) oracle_err = std::max(oracle_err, std::fabs(st.c(i, j) - want.c[i][j]));
    sum_err = std::max(sum_err, max_row_sum_error(st.c));
    sum_err = std::max(sum_err, max_row_sum_error(route_optimized(u, iters, largest_divisor_at_most(in, 10)).c));
  }

  double linf = 0;
  int eligible = 0, agree = 0;
  for (int t = 0; t < 400; ++t) {
    const double scale = oracle::uniform(g, 0.05, 0.5);
    const auto u = random_tensor({36, 10, 16}, g, -scale, scale);
    const auto ref = route_reference(u, 3);
    const auto opt = route_optimized(u, 3, 9);
    for (std::size_t p = 0; p < ref.v.size(); ++p) linf = std::max(linf, std::fabs(opt.v[p] - ref.v[p]));
    auto norms = capsule_norms(ref.v);
    const int cls = argmax(norms);
    std::sort(norms.rbegin(), norms.rend());
    if (norms[0] - norms[1] < 0.05) continue;
    ++eligible;
    agree += argmax(capsule_norms(opt.v)) == cls;
  }
  const double rate = eligible ? double(agree) / eligible : 0.0;
  if (oracle_err > 1e-10) o.fail("oracle mismatch " + fmt(oracle_err));
  if (sum_err > 1e-3) o.fail("coupling row sum error " + fmt(sum_err));
  if (linf > 0.02) o.fail("optimized v L-inf " + fmt(linf));
  if (eligible < 50) o.fail("only " + std::to_string(eligible) + " instances with margin >= 0.05");
  if (rate < 0.99) o.fail("class agreement " + fmt(rate));
  if (o.pass) {
    o.detail = "oracle error " + fmt(oracle_err, 3) + ", row sums " + fmt(sum_err, 3) + ", L-inf " + fmt(linf, 3) +
               ", agreement " + std::to_string(agree) + "/" + std::to_string(eligible);
  }
  return o;
}

Outcome p7_cycle_model() {
  Outcome o;
  std::ostringstream rows;
  write_primitive_rows(rows, CostTable{});
  if (rows.str() != "exp: 27 -> 14\ndiv: 49 -> 36\n") o.fail("primitive rows: " + rows.str());
  const CycleReport r = routing_cycle_report(CapsNetSpec{});
  const double red = r.reduction_pct(RoutingStep::Softmax);
  if (red < 75.0 || red > 95.0) o.fail("softmax reduction " + fmt(red) + "%");
  for (std::size_t caps : {1152u, 432u, 252u}) {
    CapsNetSpec s;
    if (caps != s.total_capsules())
      for (std::uint32_t i = 0; i < caps; ++i) s.live_capsules.push_back(i);
    const CycleReport rr = routing_cycle_report(s);
    for (RoutingStep st : kRoutingSteps) {
      if (!(rr.optimized[st] < rr.baseline[st])) {
        o.fail(std::string(to_string(st)) + " not reduced at " + std::to_string(caps) + " capsules");
      }
    }
  }
  if (o.pass) o.detail = "exp 27 -> 14, div 49 -> 36, softmax reduction " + fmt(red) + "%, every step reduced";
  return o;
}

// Parses truncations and random byte corruptions of `good`. A parse may
// succeed or raise FormatError; anything else is counted as a crash.
struct FuzzTally {
  std::size_t cases = 0, rejected = 0, crashes = 0;
  std::string first_crash;
};

void fuzz(const Bytes& good, const std::function<void(const Bytes&)>& parse, std::mt19937_64& g, std::size_t rounds,
          FuzzTally& t) {
  auto attempt = [&](const Bytes& b) {
    ++t.cases;
    try {
      parse(b);
    } catch (const FormatError&) {
      ++t.rejected;
    } catch (const std::exception& e) {
      if (!t.crashes++) t.first_crash = e.what();
    }
  };
  std::uniform_int_distribution<std::size_t> pos(0, good.size() - 1);
  std::uniform_int_distribution<int> byte(0, 255);
  for (std::size_t r = 0; r < rounds; ++r) {
    Bytes bad = good;
    switch (r % 3) {
      case 0:
        bad.resize(pos(g));
        break;
      case 1:
        for (int f = 0, n = 1 + static_cast<int>(r % 5); f < n; ++f) bad[pos(g)] = static_cast<std::uint8_t>(byte(g));
        break;
      default: {
        const std::size_t at = pos(g) % 32;  // hammer the headers
        if (at < bad.size()) bad[at] = static_cast<std::uint8_t>(byte(g));
        bad.resize(bad.size() - pos(g) % 4);
      }
    }
    attempt(bad);
  }
}

Outcome p8_formats() {
  Outcome o;
  std::mt19937_64 g(808);
  CapsNetSpec s;
  s.in_h = s.in_w = 12;
  s.kernel = 3;
  s.conv1_channels = 8;
  s.capsule_types = 4;
  s.caps_dim = 4;
  s.out_caps = 3;
  s.out_dim = 4;
  WeightFile wf = to_weight_file(random_params(s, 9));
  wf[4] = StoredTensor::from_fixed(wf[4].name, quantize(wf[4].to_real(), kQ8_8));
  const Bytes wb = serialize_weights(wf);

  const auto res = lakp_prune(capsnet_stack(random_params(s, 9), 0.25, 0.5, Granularity::kernel,
                                            Granularity::capsule_group, s.caps_dim));
  const Bytes mb = serialize_masks(to_mask_file(propagate_dead_structures(res.masks[0], res.masks[1], s).masks));
  const Bytes ib = serialize_idx_images(random_images(s, 3, 10));
  const Bytes lb = serialize_idx_labels({0, 7, 9, 3});

  if (serialize_weights(parse_weights(wb)) != wb || parse_weights(wb) != wf) o.fail("weight container round trip");
  if (serialize_masks(parse_masks(mb)) != mb) o.fail("mask file round trip");
  if (serialize_idx_images(parse_idx_images(ib)) != ib) o.fail("IDX image round trip");
  if (serialize_idx_labels(parse_idx_labels(lb)) != lb) o.fail("IDX label round trip");

  FuzzTally t;
  fuzz(wb, [](const Bytes& b) { parse_weights(b); }, g, 3400, t);
  fuzz(mb, [](const Bytes& b) { parse_masks(b); }, g, 3400, t);
  fuzz(ib, [](const Bytes& b) { parse_idx(b); }, g, 1700, t);
  fuzz(lb, [](const Bytes& b) { parse_idx(b); }, g, 1500, t);
  if (t.crashes) o.fail(std::to_string(t.crashes) + " unstructured failures, first: " + t.first_crash);
  if (t.cases < 10000) o.fail("only " + std::to_string(t.cases) + " fuzz cases");
  if (o.pass) {
    o.detail = "4 round trips bitwise; " + std::to_string(t.cases) + " fuzz cases, " + std::to_string(t.rejected) +
               " structured rejections, 0 crashes";
  }
  return o;
}

Outcome p9_index_overhead() {
  Outcome o;
  const CapsNetSpec s;
  const auto p = random_params(s, 909);
  // Pass 1 keeps 7 capsule types; pass 2 thins the surviving primary kernels.
  const auto first = lakp_prune(capsnet_stack(p, 0.75, 0.78125, Granularity::kernel, Granularity::capsule_group, 8));
  const auto pass1 = propagate_dead_structures(first.masks[0], first.masks[1], s);
  const auto p1 = apply_masks(p, pass1.masks);
  const auto second = lakp_prune(capsnet_stack(p1, 0.75, 0.99, Granularity::kernel, Granularity::kernel, 8));
  const auto pr = propagate_dead_structures(second.masks[0], second.masks[1], s);
  const auto r = compression_report(pr.masks, s);
  if (r.survived_capsules != 252) o.fail(std::to_string(r.survived_capsules) + " capsules, expected 252");
  if (r.index_overhead_pct > 0.5) o.fail("index overhead " + fmt(r.index_overhead_pct) + "%");
  if (o.pass) {
    o.detail = "252 capsules, " + std::to_string(r.index_entries) + " index entries for " +
               std::to_string(r.surviving_weights) + " surviving weights = " + fmt(r.index_overhead_pct) + "%";
  }
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"P1 look-ahead scores and selection match brute force", p1_lakp_oracle},
      {"P2 selection invariant to layer scaling", p2_scaling_invariance},
      {"P3 capsule and routing-weight counts", p3_structure},
      {"P4 exp/div/softmax approximation error", p4_approximations},
      {"P5 reordered agreement is bit-identical", p5_loop_reorder},
      {"P6 routing correctness", p6_routing},
      {"P7 cycle model gates", p7_cycle_model},
      {"P8 file format robustness", p8_formats},
      {"P9 index overhead of the 252-capsule model", p9_index_overhead},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << o.detail << ") [" << fmt(seconds_since(t0), 3)
              << " s]" << std::endl;
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criteria failed" : "acceptance: all passed")
            << std::endl;
  return failures ? 1 : 0;
}
