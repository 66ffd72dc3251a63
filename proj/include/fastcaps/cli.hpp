#pragma once

// Command-line driver. run_cli() parses argv with CLI11, runs one
// subcommand and maps failures to exit codes:
//   0 success, 1 compute-contract violation, 2 input/format/config error.
// Reports go to `out` as line-oriented key=value text.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "fastcaps/accel_model.hpp"
#include "fastcaps/capsnet.hpp"
#include "fastcaps/config.hpp"
#include "fastcaps/error.hpp"
#include "fastcaps/io.hpp"
#include "fastcaps/pruning.hpp"
#include "fastcaps/random.hpp"

namespace fastcaps::cli {

struct CommonArgs {
  std::string config_path;
  std::optional<std::string> mode;
  std::optional<std::string> arith;
  std::optional<std::size_t> fact;
  std::uint64_t seed = 0;
};

inline RunConfig load_config(const CommonArgs& a) {
  RunConfig cfg = a.config_path.empty() ? RunConfig{} : parse_config(a.config_path);
  if (a.mode) cfg.mode = *a.mode == "optimized" ? RoutingMode::optimized : RoutingMode::reference;
  if (a.arith) cfg.arith = *a.arith == "fx16" ? ArithMode::fx16 : ArithMode::real;
  if (a.fact) {
    if (*a.fact == 0) throw ConfigError("--fact must be >= 1");
    cfg.fact = *a.fact;
  }
  return cfg;
}

inline std::string fmt_double(double v, int precision = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

/// Replaces the CapsNet tensors of `original` with `p`, keeping each tensor's
/// dtype and frac_bits and leaving any other tensors untouched.
inline WeightFile rewrite_weights(const WeightFile& original, const CapsNetParams<double>& p) {
  WeightFile out = original;
  for (StoredTensor& t : out) {
    const Tensor<double>* src = nullptr;
    if (t.name == kConv1Weight) src = &p.conv1.kernels;
    else if (t.name == kConv1Bias) src = &p.conv1.bias;
    else if (t.name == kPrimaryWeight) src = &p.primary.kernels;
    else if (t.name == kPrimaryBias) src = &p.primary.bias;
    else if (t.name == kDigitWeight) src = &p.digit;
    if (!src) continue;
    t = t.dtype == DType::f32 ? StoredTensor::from_real(t.name, *src)
                              : StoredTensor::from_fixed(t.name, quantize(*src, FxFormat(t.frac_bits)));
  }
  return out;
}

struct PruneOutcome {
  CapsNetPruning pruning;
  CapsNetParams<double> params;
  CompressionReport report;
};

inline PruneOutcome prune_model(const LoadedModel& m, const RunConfig& cfg) {
  const LayerStack stack = capsnet_stack(m.params, cfg.sparsity_conv1, cfg.sparsity_primary, cfg.granularity_conv1,
                                         cfg.granularity_primary, m.spec.caps_dim);
  const PruneResult res = prune_stack(stack, cfg.pruner);
  PruneOutcome o{propagate_dead_structures(res.masks[0], res.masks[1], m.spec), {}, {}};
  o.params = apply_masks(m.params, o.pruning.masks);
  o.report = compression_report(o.pruning.masks, m.spec);
  return o;
}

inline void write_report(std::ostream& out, const CompressionReport& r, const PruneSet& m) {
  out << "conv1_kernels=" << r.surviving_kernels[0] << "/" << m.conv1.kernel_count() << "\n";
  out << "primary_caps_kernels=" << r.surviving_kernels[1] << "/" << m.primary.kernel_count() << "\n";
  out << "capsules_total=" << r.total_capsules << "\n";
  out << "capsules_surviving=" << r.survived_capsules << "\n";
  out << "routing_weight_count=" << r.routing_weight_count << "\n";
  out << "total_weights=" << r.total_weights << "\n";
  out << "surviving_weights=" << r.surviving_weights << "\n";
  out << "survived_weight_pct=" << fmt_double(r.survived_weight_pct, 4) << "\n";
  out << "index_entries=" << r.index_entries << "\n";
  out << "index_overhead_pct=" << fmt_double(r.index_overhead_pct, 4) << "\n";
  out << "capsules: " << r.total_capsules << " -> " << r.survived_capsules << "\n";
}

inline int cmd_prune(const std::string& weights_in, const CommonArgs& a, const std::string& weights_out,
                     const std::string& mask_out, std::ostream& out) {
  const RunConfig cfg = load_config(a);
  const WeightFile wf = load_weights(weights_in);
  const LoadedModel m = model_from_weights(wf, cfg.routing_iters);
  const PruneOutcome o = prune_model(m, cfg);
  save_weights(weights_out, rewrite_weights(wf, o.params));
  save_mask(mask_out, to_mask_file(o.pruning.masks));
  out << "pruner=" << to_string(cfg.pruner) << "\n";
  out << "propagation_sweeps=" << o.pruning.sweeps << "\n";
  write_report(out, o.report, o.pruning.masks);
  return 0;
}

/// Runs `fn(i)` for i in [0, n) over up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct InferArgs {
  std::string weights;
  std::string mask;
  std::string images;
  std::string labels;
  std::size_t threads = 0;  // 0: hardware concurrency
  bool compare = false;
};

inline Tensor<double> image_at(const Tensor<double>& batch, std::size_t i) {
  const std::size_t h = batch.dim(1), w = batch.dim(2);
  const auto src = batch.data().subspan(i * h * w, h * w);
  return Tensor<double>({1, h, w}, std::vector<double>(src.begin(), src.end()));
}

inline int cmd_infer(const InferArgs& ia, const CommonArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(a);
  LoadedModel m = model_from_weights(load_weights(ia.weights), cfg.routing_iters);
  const Tensor<double> images = load_idx_images(ia.images);
  std::vector<int> labels;
  if (!ia.labels.empty()) {
    labels = load_idx_labels(ia.labels);
    if (labels.size() != images.dim(0)) {
      throw FormatError(ia.labels + ": " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(images.dim(0)) + " images",
                        4);
    }
  }
  if (m.spec.in_channels != 1) throw ShapeError("IDX images are single-channel; model expects " + std::to_string(m.spec.in_channels));
  m.spec = with_input_extent(m.spec, images.dim(1), images.dim(2));
  std::optional<PruneSet> masks;
  if (!ia.mask.empty()) masks = prune_set_from(load_mask(ia.mask));
  const std::optional<FxFormat> fixed =
      cfg.arith == ArithMode::fx16 ? std::optional<FxFormat>(cfg.format()) : std::nullopt;
  const CapsNet net(m.spec, m.params, masks, fixed);

  InferOptions opt;
  opt.mode = cfg.mode;
  opt.arith = cfg.arith;
  opt.fact = cfg.fact;
  opt.pe_count = cfg.pe_count;
  InferOptions other = opt;
  other.mode = opt.mode == RoutingMode::reference ? RoutingMode::optimized : RoutingMode::reference;

  const std::size_t n = images.dim(0);
  std::vector<InferResult> results(n), alt(ia.compare ? n : 0);
  const std::size_t threads = ia.threads ? ia.threads : std::max(1u, std::thread::hardware_concurrency());
  parallel_for(n, threads, [&](std::size_t i) {
    const Tensor<double> img = image_at(images, i);
    results[i] = net.infer(img, opt);
    if (ia.compare) alt[i] = net.infer(img, other);
  });

  out << "mode=" << to_string(opt.mode) << "\n";
  out << "arith=" << to_string(opt.arith) << "\n";
  out << "capsules=" << net.live_capsules().size() << "\n";
  if (opt.mode == RoutingMode::optimized) out << "fact=" << net.effective_fact(opt) << "\n";
  std::size_t correct = 0, agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out << "image=" << i << " class=" << results[i].cls;
    if (!labels.empty()) {
      out << " label=" << labels[i];
      correct += results[i].cls == labels[i];
    }
    out << "\n";
    if (ia.compare) agree += results[i].cls == alt[i].cls;
  }
  if (!labels.empty()) out << "accuracy=" << fmt_double(n ? double(correct) / double(n) : 0.0) << "\n";
  if (ia.compare) out << "agreement=" << fmt_double(n ? double(agree) / double(n) : 0.0) << "\n";
  return 0;
}

inline int cmd_latency(const std::string& weights, const std::string& mask, const CommonArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(a);
  CapsNetSpec spec;
  spec.routing_iters = cfg.routing_iters;
  if (!weights.empty()) spec = model_from_weights(load_weights(weights), cfg.routing_iters).spec;
  std::optional<PruneSet> masks;
  if (!mask.empty()) {
    masks = prune_set_from(load_mask(mask));
    check_mask_shape(masks->conv1, spec.conv1_channels, spec.in_channels);
    check_mask_shape(masks->primary, spec.primary_channels(), spec.conv1_channels);
    check_mask_shape(masks->routing, spec.total_capsules(), 1);
    spec.live_capsules = masks->routing.index_table();
    if (spec.live_capsules.empty()) throw ContractError("mask leaves no surviving capsules");
    if (spec.live_capsules.size() == spec.total_capsules()) spec.live_capsules.clear();
  }
  const PEArraySpec pe = cfg.pe();
  const CycleReport r = routing_cycle_report(spec, cfg.costs, pe);
  write_primitive_rows(out, cfg.costs);
  write_cycle_table(out, r);
  write_cycle_records(out, r);
  const PruneSet* mp = masks ? &*masks : nullptr;
  const ThroughputEstimate base = throughput_estimate(spec, mp, cfg.costs, pe, cfg.clock_hz, false);
  const ThroughputEstimate opt = throughput_estimate(spec, mp, cfg.costs, pe, cfg.clock_hz, true);
  out << "softmax_reduction_pct=" << fmt_double(r.reduction_pct(RoutingStep::Softmax), 2) << "\n";
  out << "capsules=" << spec.in_caps() << "\n";
  out << "clock_hz=" << fmt_double(cfg.clock_hz, 0) << "\n";
  out << "conv_cycles=" << base.conv_cycles << "\n";
  out << "cycles_baseline=" << base.total_cycles << "\n";
  out << "cycles_optimized=" << opt.total_cycles << "\n";
  out << "fps_baseline=" << fmt_double(base.fps, 2) << "\n";
  out << "fps_optimized=" << fmt_double(opt.fps, 2) << "\n";
  out << "fps_ratio=" << fmt_double(opt.fps / base.fps, 3) << "\n";
  return 0;
}

inline std::vector<double> parse_sweep(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double s = 0.0;
    const auto t = detail::trim(item);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), s);
    if (t.empty() || ec != std::errc() || p != t.data() + t.size() || !(s >= 0.0 && s < 1.0)) {
      throw ConfigError("sparsity sweep entry '" + item + "' is not a number in [0, 1)");
    }
    v.push_back(s);
  }
  if (v.empty()) throw ConfigError("empty sparsity sweep");
  return v;
}

inline int cmd_compare_pruners(const std::string& weights, const std::string& sweep, const CommonArgs& a,
                               std::ostream& out) {
  const RunConfig cfg = load_config(a);
  const LoadedModel m = model_from_weights(load_weights(weights), cfg.routing_iters);
  for (double s : parse_sweep(sweep)) {
    const LayerStack stack =
        capsnet_stack(m.params, s, s, cfg.granularity_conv1, cfg.granularity_primary, m.spec.caps_dim);
    const PruneResult lakp = prune_stack(stack, Pruner::lakp);
    const PruneResult kp = prune_stack(stack, Pruner::kp);
    std::size_t same = 0, total = 0;
    for (std::size_t l = 0; l < lakp.masks.size(); ++l) {
      for (std::size_t k = 0; k < lakp.masks[l].kernel_count(); ++k) {
        same += lakp.masks[l].alive(k) == kp.masks[l].alive(k);
        ++total;
      }
    }
    for (const auto* res : {&lakp, &kp}) {
      out << "sparsity=" << fmt_double(s, 4) << ";pruner=" << (res == &lakp ? "lakp" : "kp")
          << ";conv1_kernels=" << res->masks[0].survivors() << ";primary_caps_kernels=" << res->masks[1].survivors();
      try {
        const CapsNetPruning p = propagate_dead_structures(res->masks[0], res->masks[1], m.spec);
        const CompressionReport r = compression_report(p.masks, m.spec);
        out << ";propagated_conv1_kernels=" << r.surviving_kernels[0]
            << ";propagated_primary_caps_kernels=" << r.surviving_kernels[1] << ";capsules=" << r.survived_capsules
            << ";survived_weight_pct=" << fmt_double(r.survived_weight_pct, 4);
      } catch (const ContractError&) {
        out << ";capsules=0;severed=true";
      }
      out << "\n";
    }
    out << "sparsity=" << fmt_double(s, 4) << ";selection_agreement=" << fmt_double(double(same) / double(total), 4)
        << "\n";
  }
  return 0;
}

struct GenArgs {
  std::string out;
  bool zero_bias = false;
  std::size_t input = 28;
  std::size_t kernel = 9;
  std::size_t conv1_channels = 256;
  std::size_t capsule_types = 32;
  std::size_t caps_dim = 8;
  std::size_t out_caps = 10;
  std::size_t out_dim = 16;
};

inline CapsNetSpec gen_spec(const GenArgs& g) {
  CapsNetSpec s;
  s.in_h = s.in_w = g.input;
  s.kernel = g.kernel;
  s.conv1_channels = g.conv1_channels;
  s.capsule_types = g.capsule_types;
  s.caps_dim = g.caps_dim;
  s.out_caps = g.out_caps;
  s.out_dim = g.out_dim;
  s.validate();
  return s;
}

inline int cmd_gen_weights(const GenArgs& g, const CommonArgs& a, std::ostream& out) {
  const CapsNetSpec s = gen_spec(g);
  save_weights(g.out, to_weight_file(random_params(s, a.seed, g.zero_bias)));
  out << "wrote=" << g.out << "\n";
  out << "capsules=" << s.total_capsules() << "\n";
  out << "routing_weight_count=" << s.routing_weight_count() << "\n";
  return 0;
}

inline int cmd_gen_images(const GenArgs& g, std::size_t count, const std::string& labels_out, const CommonArgs& a,
                          std::ostream& out) {
  CapsNetSpec s;
  s.in_h = s.in_w = g.input;
  write_file(g.out, serialize_idx_images(random_images(s, count, a.seed)));
  if (!labels_out.empty()) {
    std::mt19937_64 rng(a.seed ^ 0x5bd1e995u);
    std::uniform_int_distribution<int> d(0, 9);
    std::vector<int> labels(count);
    for (int& l : labels) l = d(rng);
    write_file(labels_out, serialize_idx_labels(labels));
  }
  out << "wrote=" << g.out << "\n";
  out << "images=" << count << "\n";
  return 0;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"fastcaps: pruned CapsNet inference, routing optimization and accelerator cycle model"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&](CLI::App* sub, bool routing) {
    sub->add_option("--config", common.config_path, "Run configuration file (key = value lines)");
    sub->add_option("--seed", common.seed, "Seed for generated data")->capture_default_str();
    if (routing) {
      sub->add_option("--mode", common.mode, "Routing mode, overrides config (default reference)")
          ->check(CLI::IsMember({"reference", "optimized"}));
      sub->add_option("--arith", common.arith, "Arithmetic, overrides config (default real)")
          ->check(CLI::IsMember({"real", "fx16"}));
      sub->add_option("--fact", common.fact, "Agreement PE batch, overrides config (default 10)");
    }
  };

  std::string weights, weights_out, mask, mask_out, sweep = "0.1,0.25,0.5,0.75,0.9", labels_out;
  InferArgs ia;
  GenArgs gen;
  std::size_t count = 16;

  CLI::App* prune = app.add_subcommand("prune", "Prune conv kernels, propagate dead structures, write weights and mask");
  prune->add_option("--weights", weights, "Input weight container")->required();
  prune->add_option("--out", weights_out, "Pruned weight container")->required();
  prune->add_option("--mask-out", mask_out, "Mask/index file")->required();
  add_common(prune, false);

  CLI::App* infer = app.add_subcommand("infer", "Classify IDX images");
  infer->add_option("--weights", ia.weights, "Weight container")->required();
  infer->add_option("--mask", ia.mask, "Mask/index file from prune");
  infer->add_option("--images", ia.images, "IDX image file")->required();
  infer->add_option("--labels", ia.labels, "IDX label file; prints accuracy");
  infer->add_option("--threads", ia.threads, "Worker threads (0 = all cores)")->capture_default_str();
  infer->add_flag("--compare", ia.compare, "Also run the other routing mode and print the agreement rate");
  add_common(infer, true);

  CLI::App* latency = app.add_subcommand("latency", "Routing cycle report and FPS estimate");
  latency->add_option("--weights", weights, "Weight container (default: MNIST geometry)");
  latency->add_option("--mask", mask, "Mask/index file from prune");
  add_common(latency, false);

  CLI::App* compare = app.add_subcommand("compare-pruners", "Structural statistics of LAKP vs KP over a sparsity sweep");
  compare->add_option("--weights", weights, "Weight container")->required();
  compare->add_option("--sparsity", sweep, "Comma-separated sparsities")->capture_default_str();
  add_common(compare, false);

  auto add_geometry = [&](CLI::App* sub) {
    sub->add_option("--input", gen.input, "Square input extent")->capture_default_str();
  };
  CLI::App* gw = app.add_subcommand("gen-weights", "Write seeded uniform [-0.1, 0.1] weights");
  gw->add_option("--out", gen.out, "Output weight container")->required();
  gw->add_flag("--zero-bias", gen.zero_bias, "Zero all biases");
  add_geometry(gw);
  gw->add_option("--kernel", gen.kernel, "Conv kernel size")->capture_default_str();
  gw->add_option("--conv1-channels", gen.conv1_channels, "Conv1 output channels")->capture_default_str();
  gw->add_option("--capsule-types", gen.capsule_types, "Primary capsule types")->capture_default_str();
  gw->add_option("--caps-dim", gen.caps_dim, "Primary capsule dimension")->capture_default_str();
  gw->add_option("--out-caps", gen.out_caps, "Digit capsules")->capture_default_str();
  gw->add_option("--out-dim", gen.out_dim, "Digit capsule dimension")->capture_default_str();
  add_common(gw, false);

  CLI::App* gi = app.add_subcommand("gen-images", "Write seeded random IDX images (and labels)");
  gi->add_option("--out", gen.out, "Output IDX image file")->required();
  gi->add_option("--labels-out", labels_out, "Output IDX label file");
  gi->add_option("--count", count, "Number of images")->capture_default_str();
  add_geometry(gi);
  add_common(gi, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (prune->parsed()) return cmd_prune(weights, common, weights_out, mask_out, out);
    if (infer->parsed()) return cmd_infer(ia, common, out);
    if (latency->parsed()) return cmd_latency(weights, mask, common, out);
    if (compare->parsed()) return cmd_compare_pruners(weights, sweep, common, out);
    if (gw->parsed()) return cmd_gen_weights(gen, common, out);
    if (gi->parsed()) return cmd_gen_images(gen, count, labels_out, common, out);
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace fastcaps::cli
