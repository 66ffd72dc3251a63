#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fastcaps/error.hpp"

namespace fastcaps {

/// Unit a pruner scores and removes. `capsule` masks rows of the routing
/// weight tensor (one entry per input capsule).
enum class Granularity : std::uint8_t { kernel = 0, capsule_group = 1, capsule = 2 };

inline const char* to_string(Granularity g) {
  switch (g) {
    case Granularity::kernel: return "kernel";
    case Granularity::capsule_group: return "capsule_group";
    case Granularity::capsule: return "capsule";
  }
  return "?";
}

/// Survival bit per (out_ch, in_ch) kernel; kernel id = out_ch * in_ch_count + in_ch.
class PruneMask {
 public:
  PruneMask() = default;
  PruneMask(std::size_t out_channels, std::size_t in_channels,
            Granularity granularity = Granularity::kernel)
      : out_(out_channels), in_(in_channels), granularity_(granularity),
        alive_(out_channels * in_channels, 1) {}

  std::size_t out_channels() const noexcept { return out_; }
  std::size_t in_channels() const noexcept { return in_; }
  std::size_t kernel_count() const noexcept { return alive_.size(); }
  Granularity granularity() const noexcept { return granularity_; }
  void set_granularity(Granularity g) noexcept { granularity_ = g; }

  bool alive(std::size_t id) const { return alive_.at(id) != 0; }
  bool alive(std::size_t o, std::size_t c) const { return alive(o * in_ + c); }
  void set(std::size_t id, bool on) { alive_.at(id) = on ? 1 : 0; }
  void kill(std::size_t o, std::size_t c) { set(o * in_ + c, false); }

  std::size_t survivors() const {
    std::size_t n = 0;
    for (auto b : alive_) n += b;
    return n;
  }

  /// True when at least one kernel feeding output channel o survives.
  bool channel_alive(std::size_t o) const {
    for (std::size_t c = 0; c < in_; ++c) {
      if (alive(o, c)) return true;
    }
    return false;
  }

  /// Ascending ids of surviving kernels; what the accelerator stores.
  std::vector<std::uint32_t> index_table() const {
    std::vector<std::uint32_t> ids;
    for (std::size_t i = 0; i < alive_.size(); ++i) {
      if (alive_[i]) ids.push_back(static_cast<std::uint32_t>(i));
    }
    return ids;
  }

  /// Surviving input channels of output channel o, ascending.
  std::vector<std::size_t> row(std::size_t o) const {
    std::vector<std::size_t> cs;
    for (std::size_t c = 0; c < in_; ++c) {
      if (alive(o, c)) cs.push_back(c);
    }
    return cs;
  }

  friend bool operator==(const PruneMask&, const PruneMask&) = default;

 private:
  std::size_t out_ = 0;
  std::size_t in_ = 0;
  Granularity granularity_ = Granularity::kernel;
  std::vector<std::uint8_t> alive_;
};

}  // namespace fastcaps
