#pragma once

// 16-bit fixed-point arithmetic and the polynomial exp/log/div/softmax
// approximations used by the optimized routing path.
//
// Every approximation exists twice: a real-valued version that evaluates the
// same polynomials in double precision, and an Fx16 version that uses only
// integer multiply, add and shift on a Q24 internal datapath.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fastcaps/error.hpp"

namespace fastcaps {

/// Q(15-f).f layout of a 16-bit word. total_bits is fixed at 16.
class FxFormat {
 public:
  static constexpr int total_bits = 16;

  constexpr FxFormat() = default;
  constexpr explicit FxFormat(int frac_bits) : frac_bits_(frac_bits) {
    if (frac_bits < 1 || frac_bits > 15) {
      throw ContractError("FxFormat: frac_bits must be in [1, 15], got " +
                          std::to_string(frac_bits));
    }
  }

  constexpr int frac_bits() const noexcept { return frac_bits_; }
  double resolution() const noexcept { return std::ldexp(1.0, -frac_bits_); }
  double min_value() const noexcept { return std::ldexp(-32768.0, -frac_bits_); }
  double max_value() const noexcept { return std::ldexp(32767.0, -frac_bits_); }

  friend constexpr bool operator==(FxFormat, FxFormat) = default;

 private:
  int frac_bits_ = 8;
};

inline constexpr FxFormat kQ8_8{8};

struct Fx16 {
  std::int16_t raw = 0;
  FxFormat format{};

  static constexpr Fx16 from_raw(std::int16_t r, FxFormat f) { return {r, f}; }
  double to_real() const noexcept { return std::ldexp(static_cast<double>(raw), -format.frac_bits()); }

  friend constexpr bool operator==(const Fx16&, const Fx16&) = default;
};

namespace detail {

/// v / 2^shift rounded half-to-even. Negative shift multiplies; the caller
/// guarantees the result fits.
constexpr std::int64_t round_shift(std::int64_t v, int shift) {
  if (shift <= 0) return v * (std::int64_t{1} << -shift);
  if (shift >= 62) return 0;  // |v| < 2^61 everywhere this is used
  const std::int64_t q = v >> shift;  // floor
  const std::int64_t rem = v - q * (std::int64_t{1} << shift);
  const std::int64_t half = std::int64_t{1} << (shift - 1);
  if (rem > half || (rem == half && (q & 1) != 0)) return q + 1;
  return q;
}

constexpr std::int16_t saturate16(std::int64_t v, bool* saturated) {
  if (v > std::numeric_limits<std::int16_t>::max()) {
    if (saturated) *saturated = true;
    return std::numeric_limits<std::int16_t>::max();
  }
  if (v < std::numeric_limits<std::int16_t>::min()) {
    if (saturated) *saturated = true;
    return std::numeric_limits<std::int16_t>::min();
  }
  return static_cast<std::int16_t>(v);
}

constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline void require_same(FxFormat a, FxFormat b, const char* op) {
  if (a != b) {
    throw ContractError(std::string(op) + ": mismatched fixed-point formats Q." +
                        std::to_string(a.frac_bits()) + " vs Q." +
                        std::to_string(b.frac_bits()));
  }
}

template <std::size_t N>
constexpr double horner(const std::array<double, N>& c, double x) {
  double acc = c[N - 1];
  for (std::size_t i = N - 1; i-- > 0;) acc = c[i] + x * acc;
  return acc;
}

}  // namespace detail

/// Nearest representable value, ties to even; saturates out-of-range input.
inline Fx16 quantize(double x, FxFormat fmt, bool* saturated = nullptr) {
  if (std::isnan(x)) {
    if (saturated) *saturated = true;
    return {0, fmt};
  }
  const double scaled = std::ldexp(x, fmt.frac_bits());
  if (scaled >= 32767.5) {
    if (saturated) *saturated = true;
    return {std::numeric_limits<std::int16_t>::max(), fmt};
  }
  if (scaled < -32768.5) {
    if (saturated) *saturated = true;
    return {std::numeric_limits<std::int16_t>::min(), fmt};
  }
  double r = std::floor(scaled);
  const double diff = scaled - r;
  if (diff > 0.5 || (diff == 0.5 && std::fmod(r, 2.0) != 0.0)) r += 1.0;
  return {static_cast<std::int16_t>(r), fmt};
}

inline double to_real(Fx16 v) noexcept { return v.to_real(); }

inline Fx16 fx_add(Fx16 a, Fx16 b, bool* saturated = nullptr) {
  detail::require_same(a.format, b.format, "fx_add");
  return {detail::saturate16(std::int64_t{a.raw} + b.raw, saturated), a.format};
}

inline Fx16 fx_sub(Fx16 a, Fx16 b, bool* saturated = nullptr) {
  detail::require_same(a.format, b.format, "fx_sub");
  return {detail::saturate16(std::int64_t{a.raw} - b.raw, saturated), a.format};
}

inline Fx16 fx_mul(Fx16 a, Fx16 b, bool* saturated = nullptr) {
  detail::require_same(a.format, b.format, "fx_mul");
  const std::int64_t p = std::int64_t{a.raw} * b.raw;
  return {detail::saturate16(detail::round_shift(p, a.format.frac_bits()), saturated), a.format};
}

/// MAC accumulator with 2*frac_bits fraction bits. The carrier is 64-bit but
/// the legal range is that of a 48-bit DSP accumulator; leaving it throws.
struct WideAcc {
  static constexpr int kBits = 48;
  static constexpr std::int64_t kMax = (std::int64_t{1} << (kBits - 1)) - 1;
  static constexpr std::int64_t kMin = -(std::int64_t{1} << (kBits - 1));

  std::int64_t raw = 0;
  int frac_bits = 16;

  static constexpr WideAcc zero(FxFormat f) { return {0, 2 * f.frac_bits()}; }
  static constexpr WideAcc from(Fx16 v) {
    return {std::int64_t{v.raw} << v.format.frac_bits(), 2 * v.format.frac_bits()};
  }

  double to_real() const noexcept { return std::ldexp(static_cast<double>(raw), -frac_bits); }

  friend constexpr bool operator==(const WideAcc&, const WideAcc&) = default;
};

inline WideAcc fx_mac(WideAcc acc, Fx16 a, Fx16 b) {
  detail::require_same(a.format, b.format, "fx_mac");
  if (acc.frac_bits != 2 * a.format.frac_bits()) {
    throw ContractError("fx_mac: accumulator format does not match product format");
  }
  const std::int64_t next = acc.raw + std::int64_t{a.raw} * b.raw;
  if (next > WideAcc::kMax || next < WideAcc::kMin) {
    throw ContractError("fx_mac: 48-bit accumulator overflow");
  }
  return {next, acc.frac_bits};
}

inline WideAcc acc_add(WideAcc a, WideAcc b) {
  if (a.frac_bits != b.frac_bits) throw ContractError("acc_add: mismatched accumulator formats");
  const std::int64_t next = a.raw + b.raw;
  if (next > WideAcc::kMax || next < WideAcc::kMin) {
    throw ContractError("acc_add: 48-bit accumulator overflow");
  }
  return {next, a.frac_bits};
}

/// Single rounding point of a MAC chain.
inline Fx16 writeback(WideAcc acc, FxFormat fmt, bool* saturated = nullptr) {
  const int shift = acc.frac_bits - fmt.frac_bits();
  return {detail::saturate16(detail::round_shift(acc.raw, shift), saturated), fmt};
}

// ---------------------------------------------------------------------------
// Polynomial approximations

inline constexpr double kLn2 = 0.693147180559945309417;
inline constexpr double kExpHalf = 1.6487212707001281468;  // e^0.5

/// Horner coefficients of e^x expanded about a = 0.5, lowest order first.
/// Accurate on [0, 1]; range reduction keeps the
/// polynomial argument in [0, ln2).
inline constexpr std::array<double, 6> kExpCoeffs = {
    0.60653, 0.60659, 0.30260, 0.10347, 0.02118, 0.00833,
};

/// kExpCoeffs with the e^a factor folded in, leaving 5 mul + 5 add.
inline constexpr std::array<double, 6> kExpFolded = [] {
  std::array<double, 6> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = kExpHalf * kExpCoeffs[i];
  return out;
}();

/// ln(1 + t) on t in [0, 1], least squares on Chebyshev nodes.
/// Regenerate with tools/gen_log_coeffs.py. max abs error 9.975e-06.
inline constexpr std::array<double, 6> kLogCoeffs = {
    9.9750325521170351e-06,
    0.9992354838332741,
    -0.49023072342340807,
    0.28527268109056775,
    -0.13158182508875507,
    0.030449004538667664,
};

/// e^x as e^a * P5(r) * 2^k with x = r + k*ln2, r in [0, ln2).
inline double exp_approx(double x) {
  if (std::isnan(x)) return x;
  if (x == std::numeric_limits<double>::infinity()) return x;
  if (x == -std::numeric_limits<double>::infinity()) return 0.0;
  const double k = std::clamp(std::floor(x / kLn2), -2000.0, 2000.0);
  const double r = x - k * kLn2;
  return std::ldexp(detail::horner(kExpFolded, r), static_cast<int>(k));
}

/// ln x as e*ln2 + Q5(m - 1) with x = m * 2^e, m in [1, 2).
inline double log_approx(double x) {
  if (!(x > 0.0)) throw DomainError("log_approx: argument must be positive");
  if (std::isinf(x)) return x;
  int e = 0;
  const double m = 2.0 * std::frexp(x, &e);
  return (e - 1) * kLn2 + detail::horner(kLogCoeffs, m - 1.0);
}

/// a / b as exp(log a - log b). Sign of a is split off; a == 0 bypasses.
inline double div_approx(double a, double b) {
  if (!(b > 0.0)) throw DomainError("div_approx: divisor must be positive");
  if (a == 0.0) return 0.0;
  const double mag = exp_approx(log_approx(std::fabs(a)) - log_approx(b));
  return a < 0.0 ? -mag : mag;
}

inline std::vector<double> softmax_approx(std::span<const double> v) {
  if (v.empty()) throw ContractError("softmax_approx: empty input");
  const double peak = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = exp_approx(v[i] - peak);
    sum += out[i];
  }
  for (double& e : out) e = div_approx(e, sum);
  return out;
}

/// Exact softmax, the reference the approximations are judged against.
inline std::vector<double> softmax_exact(std::span<const double> v) {
  if (v.empty()) throw ContractError("softmax_exact: empty input");
  const double peak = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    sum += out[i];
  }
  for (double& e : out) e /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-point datapath. Intermediates are Q24 in 64-bit registers.

namespace detail {

inline constexpr int kQ = 24;
inline constexpr std::int64_t kOneQ = std::int64_t{1} << kQ;

constexpr std::int64_t to_q(double v) {
  const double s = v * static_cast<double>(kOneQ);
  return s < 0 ? -static_cast<std::int64_t>(-s + 0.5) : static_cast<std::int64_t>(s + 0.5);
}

inline constexpr std::int64_t kLn2Q = to_q(kLn2);

template <std::size_t N>
constexpr std::array<std::int64_t, N> to_q(const std::array<double, N>& c) {
  std::array<std::int64_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = to_q(c[i]);
  return out;
}

inline constexpr auto kExpQ = to_q(kExpFolded);
inline constexpr auto kLogQ = to_q(kLogCoeffs);

template <std::size_t N>
constexpr std::int64_t horner_q(const std::array<std::int64_t, N>& c, std::int64_t x) {
  std::int64_t acc = c[N - 1];
  for (std::size_t i = N - 1; i-- > 0;) acc = c[i] + round_shift(acc * x, kQ);
  return acc;
}

/// e^x for x in Q24, written to an Fx16 of format fmt.
inline Fx16 exp_q_to_fx(std::int64_t xq, FxFormat fmt, bool* saturated) {
  const std::int64_t k = floor_div(xq, kLn2Q);
  const std::int64_t r = xq - k * kLn2Q;  // [0, ln2)
  const std::int64_t p = horner_q(kExpQ, r);  // e^r in Q24, [1, 2)
  const std::int64_t shift = kQ - fmt.frac_bits() - k;
  if (shift >= 62) return {0, fmt};
  if (shift < 0 && -shift >= 16) {  // p >= 2^24 so the result is > 2^39
    if (saturated) *saturated = true;
    return {std::numeric_limits<std::int16_t>::max(), fmt};
  }
  return {saturate16(round_shift(p, static_cast<int>(shift)), saturated), fmt};
}

/// ln of a positive raw value of format fmt, in Q24.
inline std::int64_t log_raw_q(std::int64_t raw, FxFormat fmt) {
  const int msb = std::bit_width(static_cast<std::uint64_t>(raw)) - 1;
  const std::int64_t m = raw << (kQ - msb);  // [1, 2) in Q24, exact
  const std::int64_t poly = horner_q(kLogQ, m - kOneQ);
  return static_cast<std::int64_t>(msb - fmt.frac_bits()) * kLn2Q + poly;
}

}  // namespace detail

inline Fx16 exp_approx(Fx16 x, bool* saturated = nullptr) {
  const std::int64_t xq = std::int64_t{x.raw} << (detail::kQ - x.format.frac_bits());
  return detail::exp_q_to_fx(xq, x.format, saturated);
}

inline Fx16 log_approx(Fx16 x, bool* saturated = nullptr) {
  if (x.raw <= 0) throw DomainError("log_approx: argument must be positive");
  const std::int64_t lq = detail::log_raw_q(x.raw, x.format);
  const int shift = detail::kQ - x.format.frac_bits();
  return {detail::saturate16(detail::round_shift(lq, shift), saturated), x.format};
}

/// Fixed-point a / b. The log difference stays in Q24 between the two
/// halves so only the final result is rounded to the output format.
inline Fx16 div_approx(Fx16 a, Fx16 b, bool* saturated = nullptr) {
  detail::require_same(a.format, b.format, "div_approx");
  if (b.raw <= 0) throw DomainError("div_approx: divisor must be positive");
  if (a.raw == 0) return {0, a.format};
  const std::int64_t mag = a.raw < 0 ? -std::int64_t{a.raw} : std::int64_t{a.raw};
  const std::int64_t d = detail::log_raw_q(mag, a.format) - detail::log_raw_q(b.raw, b.format);
  Fx16 q = detail::exp_q_to_fx(d, a.format, saturated);
  if (a.raw < 0) q.raw = static_cast<std::int16_t>(-q.raw);
  return q;
}

inline std::vector<Fx16> softmax_approx(std::span<const Fx16> v, bool* saturated = nullptr) {
  if (v.empty()) throw ContractError("softmax_approx: empty input");
  const FxFormat fmt = v.front().format;
  std::int16_t peak = v.front().raw;
  for (const Fx16& x : v) {
    detail::require_same(fmt, x.format, "softmax_approx");
    peak = std::max(peak, x.raw);
  }
  std::vector<Fx16> out(v.size());
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Fx16 shifted = fx_sub(v[i], Fx16{peak, fmt});
    out[i] = exp_approx(shifted, saturated);
    sum += out[i].raw;
  }
  const Fx16 total{detail::saturate16(sum, saturated), fmt};
  for (Fx16& e : out) e = div_approx(e, total, saturated);
  return out;
}

}  // namespace fastcaps
