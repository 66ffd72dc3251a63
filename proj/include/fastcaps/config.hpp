#pragma once

// Run configuration: plain `key = value` lines, `#` starts a comment.
//
//   sparsity.conv1 / sparsity.primary_caps      fraction in [0, 1)
//   granularity.conv1 / granularity.primary_caps  kernel | capsule_group
//   pruner          lakp | kp
//   routing_iters   >= 1
//   frac_bits       1..15
//   pe_count, fact, mac_width, pipeline_ii   >= 1
//   pipelined       true | false
//   clock_hz        > 0
//   mode            reference | optimized
//   arith           real | fx16
//   cost.<exp_baseline|exp_optimized|div_baseline|div_optimized|mul|add|mac|sqrt>  >= 1
//
// Absent keys keep their defaults; unknown keys and repeated keys are errors.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "fastcaps/accel_model.hpp"
#include "fastcaps/capsnet.hpp"
#include "fastcaps/error.hpp"
#include "fastcaps/fxp.hpp"
#include "fastcaps/io.hpp"
#include "fastcaps/mask.hpp"
#include "fastcaps/pruning.hpp"

namespace fastcaps {

struct RunConfig {
  double sparsity_conv1 = 0.0;
  double sparsity_primary = 0.0;
  Granularity granularity_conv1 = Granularity::kernel;
  Granularity granularity_primary = Granularity::capsule_group;
  Pruner pruner = Pruner::lakp;
  int routing_iters = 3;
  int frac_bits = 8;
  std::size_t pe_count = 10;
  std::size_t fact = 10;
  std::size_t mac_width = 9;
  std::size_t pipeline_ii = 1;
  bool pipelined = true;
  double clock_hz = 100e6;
  RoutingMode mode = RoutingMode::reference;
  ArithMode arith = ArithMode::real;
  CostTable costs;

  PEArraySpec pe() const { return {pe_count, mac_width, pipeline_ii, pipelined}; }
  FxFormat format() const { return FxFormat(frac_bits); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
  RunConfig cfg;
  std::map<std::string, std::function<void(const std::string&)>> setters;

  auto where = [&](std::size_t line) { return origin + ":" + std::to_string(line) + ": "; };
  std::size_t line_no = 0;

  auto bad = [&](const std::string& key, const std::string& why) -> ConfigError {
    return ConfigError(where(line_no) + key + ": " + why);
  };
  auto as_double = [&](const std::string& key, const std::string& v) {
    double d = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
    if (ec != std::errc() || p != v.data() + v.size()) throw bad(key, "expected a number, got '" + v + "'");
    return d;
  };
  auto as_u64 = [&](const std::string& key, const std::string& v, std::uint64_t lo, std::uint64_t hi) {
    std::uint64_t n = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || p != v.data() + v.size()) throw bad(key, "expected a non-negative integer, got '" + v + "'");
    if (n < lo || n > hi) {
      throw bad(key, "value " + v + " out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    return n;
  };
  auto sparsity = [&](const std::string& key, const std::string& v) {
    const double s = as_double(key, v);
    if (!(s >= 0.0 && s < 1.0)) throw bad(key, "sparsity must be in [0, 1), got " + v);
    return s;
  };
  auto granularity = [&](const std::string& key, const std::string& v) {
    if (v == "kernel") return Granularity::kernel;
    if (v == "capsule_group") return Granularity::capsule_group;
    throw bad(key, "expected kernel or capsule_group, got '" + v + "'");
  };
  constexpr std::uint64_t kBig = 1u << 30;

  setters["sparsity.conv1"] = [&](const std::string& v) { cfg.sparsity_conv1 = sparsity("sparsity.conv1", v); };
  setters["sparsity.primary_caps"] = [&](const std::string& v) {
    cfg.sparsity_primary = sparsity("sparsity.primary_caps", v);
  };
  setters["granularity.conv1"] = [&](const std::string& v) {
    cfg.granularity_conv1 = granularity("granularity.conv1", v);
  };
  setters["granularity.primary_caps"] = [&](const std::string& v) {
    cfg.granularity_primary = granularity("granularity.primary_caps", v);
  };
  setters["pruner"] = [&](const std::string& v) {
    if (v == "lakp") cfg.pruner = Pruner::lakp;
    else if (v == "kp") cfg.pruner = Pruner::kp;
    else throw bad("pruner", "expected lakp or kp, got '" + v + "'");
  };
  setters["routing_iters"] = [&](const std::string& v) {
    cfg.routing_iters = static_cast<int>(as_u64("routing_iters", v, 1, 1000));
  };
  setters["frac_bits"] = [&](const std::string& v) { cfg.frac_bits = static_cast<int>(as_u64("frac_bits", v, 1, 15)); };
  setters["pe_count"] = [&](const std::string& v) { cfg.pe_count = as_u64("pe_count", v, 1, kBig); };
  setters["fact"] = [&](const std::string& v) { cfg.fact = as_u64("fact", v, 1, kBig); };
  setters["mac_width"] = [&](const std::string& v) { cfg.mac_width = as_u64("mac_width", v, 1, kBig); };
  setters["pipeline_ii"] = [&](const std::string& v) { cfg.pipeline_ii = as_u64("pipeline_ii", v, 1, kBig); };
  setters["pipelined"] = [&](const std::string& v) {
    if (v == "true") cfg.pipelined = true;
    else if (v == "false") cfg.pipelined = false;
    else throw bad("pipelined", "expected true or false, got '" + v + "'");
  };
  setters["clock_hz"] = [&](const std::string& v) {
    cfg.clock_hz = as_double("clock_hz", v);
    if (!(cfg.clock_hz > 0.0) || !std::isfinite(cfg.clock_hz)) throw bad("clock_hz", "must be positive");
  };
  setters["mode"] = [&](const std::string& v) {
    if (v == "reference") cfg.mode = RoutingMode::reference;
    else if (v == "optimized") cfg.mode = RoutingMode::optimized;
    else throw bad("mode", "expected reference or optimized, got '" + v + "'");
  };
  setters["arith"] = [&](const std::string& v) {
    if (v == "real") cfg.arith = ArithMode::real;
    else if (v == "fx16") cfg.arith = ArithMode::fx16;
    else throw bad("arith", "expected real or fx16, got '" + v + "'");
  };
  const std::pair<const char*, std::uint64_t CostTable::*> costs[] = {
      {"cost.exp_baseline", &CostTable::exp_baseline}, {"cost.exp_optimized", &CostTable::exp_optimized},
      {"cost.div_baseline", &CostTable::div_baseline}, {"cost.div_optimized", &CostTable::div_optimized},
      {"cost.mul", &CostTable::mul},                   {"cost.add", &CostTable::add},
      {"cost.mac", &CostTable::mac},                   {"cost.sqrt", &CostTable::sqrt}};
  for (const auto& [name, field] : costs) {
    setters[name] = [&, key = std::string(name), field](const std::string& v) {
      cfg.costs.*field = as_u64(key, v, 1, kBig);
    };
  }

  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where(line_no) + "expected 'key = value', got '" + std::string(line) + "'");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string value(detail::trim(line.substr(eq + 1)));
    if (key.empty() || value.empty()) throw ConfigError(where(line_no) + "expected 'key = value', got '" + std::string(line) + "'");
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where(line_no) + "unknown key '" + key + "'");
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError(where(line_no) + "key '" + key + "' already set on line " + std::to_string(prev->second));
    }
    seen[key] = line_no;
    it->second(value);
  }
  try {
    cfg.costs.validate();
  } catch (const ContractError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

inline RunConfig parse_config(const std::string& path) {
  const Bytes data = read_file(path);
  return parse_config_text(std::string(data.begin(), data.end()), path);
}

}  // namespace fastcaps
