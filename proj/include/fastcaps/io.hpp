#pragma once

// Binary formats: the FASTCAPS weight container, the FCAPMASK index file and
// the big-endian IDX dataset files. Every parser checks remaining length
// before it reads or allocates and reports failures as FormatError with the
// byte offset where parsing stopped.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fastcaps/capsnet.hpp"
#include "fastcaps/error.hpp"
#include "fastcaps/fxp.hpp"
#include "fastcaps/mask.hpp"
#include "fastcaps/tensor.hpp"

namespace fastcaps {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on '" + path + "'");
  return data;
}

inline void write_file(const std::string& path, const Bytes& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed on '" + path + "'");
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
  Bytes take() { return std::move(buf_); }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes buf_;
};

class ByteReader {
 public:
  ByteReader(const Bytes& data, std::string what) : data_(data), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(what_ + ": " + msg, pos_); }
  [[noreturn]] void fail_at(const std::string& msg, std::size_t at) const { throw FormatError(what_ + ": " + msg, at); }

  void need(std::uint64_t n, const char* field) const {
    if (n > remaining()) {
      fail(std::string("truncated ") + field + " (need " + std::to_string(n) + " bytes, have " +
           std::to_string(remaining()) + ")");
    }
  }

  std::uint8_t u8(const char* field) {
    need(1, field);
    return data_[pos_++];
  }
  std::uint16_t u16(const char* field) { return static_cast<std::uint16_t>(le(2, field)); }
  std::uint32_t u32(const char* field) { return static_cast<std::uint32_t>(le(4, field)); }
  std::uint32_t u32_be(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_++];
    return v;
  }
  std::string str(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  const std::uint8_t* raw(std::size_t n, const char* field) {
    need(n, field);
    const std::uint8_t* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  void expect_end() const {
    if (remaining() != 0) fail(std::to_string(remaining()) + " trailing bytes");
  }

 private:
  std::uint64_t le(int n, const char* field) {
    need(static_cast<std::uint64_t>(n), field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{data_[pos_++]} << (8 * i);
    return v;
  }

  const Bytes& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

/// Product of dims, or max() when it would overflow 64 bits.
inline std::uint64_t checked_product(const std::vector<std::uint32_t>& dims) {
  std::uint64_t n = 1;
  for (std::uint32_t d : dims) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) return std::numeric_limits<std::uint64_t>::max();
    n *= d;
  }
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Weight container

inline constexpr std::string_view kWeightMagic = "FASTCAPS";
inline constexpr std::uint32_t kWeightVersion = 1;

enum class DType : std::uint8_t { f32 = 0, i16 = 1 };

/// One stored tensor. Exactly one of f32 / i16 is populated, by dtype.
struct StoredTensor {
  std::string name;
  DType dtype = DType::f32;
  std::uint8_t frac_bits = 0;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::int16_t> i16;

  std::size_t count() const { return dtype == DType::f32 ? f32.size() : i16.size(); }

  Dims shape() const { return Dims(dims.begin(), dims.end()); }

  Tensor<double> to_real() const {
    std::vector<double> v;
    v.reserve(count());
    if (dtype == DType::f32) {
      for (float x : f32) v.push_back(static_cast<double>(x));
    } else {
      const FxFormat fmt(frac_bits);
      for (std::int16_t r : i16) v.push_back(Fx16::from_raw(r, fmt).to_real());
    }
    return Tensor<double>(shape(), std::move(v));
  }

  static std::vector<std::uint32_t> narrow_dims(const Dims& d) {
    std::vector<std::uint32_t> out;
    for (std::size_t x : d) {
      if (x > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("tensor dim exceeds u32");
      out.push_back(static_cast<std::uint32_t>(x));
    }
    return out;
  }

  static StoredTensor from_real(std::string name, const Tensor<double>& t) {
    StoredTensor s{std::move(name), DType::f32, 0, narrow_dims(t.dims()), {}, {}};
    s.f32.reserve(t.size());
    for (double v : t.data()) s.f32.push_back(static_cast<float>(v));
    return s;
  }

  static StoredTensor from_fixed(std::string name, const Tensor<Fx16>& t) {
    const FxFormat fmt = format_of(t);
    StoredTensor s{std::move(name), DType::i16, static_cast<std::uint8_t>(fmt.frac_bits()), narrow_dims(t.dims()), {}, {}};
    s.i16.reserve(t.size());
    for (Fx16 v : t.data()) s.i16.push_back(v.raw);
    return s;
  }

  friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

using WeightFile = std::vector<StoredTensor>;

inline const StoredTensor& find_tensor(const WeightFile& wf, const std::string& name) {
  for (const StoredTensor& t : wf) {
    if (t.name == name) return t;
  }
  throw ShapeError("weight container has no tensor named '" + name + "'");
}

inline Bytes serialize_weights(const WeightFile& tensors) {
  std::set<std::string> seen;
  detail::ByteWriter w;
  w.bytes(kWeightMagic);
  w.u32(kWeightVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const StoredTensor& t : tensors) {
    if (!seen.insert(t.name).second) throw ContractError("duplicate tensor name '" + t.name + "'");
    if (t.name.size() > 0xFFFF) throw ContractError("tensor name too long");
    if (t.dims.size() > 0xFF) throw ContractError("tensor rank exceeds 255");
    const bool is_f32 = t.dtype == DType::f32;
    if (is_f32 ? t.frac_bits != 0 : (t.frac_bits < 1 || t.frac_bits > 15)) {
      throw ContractError("tensor '" + t.name + "' has invalid frac_bits for its dtype");
    }
    if ((is_f32 ? t.i16.size() : t.f32.size()) != 0 || detail::checked_product(t.dims) != t.count()) {
      throw ShapeError("tensor '" + t.name + "' payload does not match its dims");
    }
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name);
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u8(t.frac_bits);
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) w.u32(d);
    if (is_f32) {
      for (float v : t.f32) w.f32(v);
    } else {
      for (std::int16_t v : t.i16) w.i16(v);
    }
  }
  return w.take();
}

inline WeightFile parse_weights(const Bytes& data, const std::string& what = "weight container") {
  detail::ByteReader r(data, what);
  if (r.remaining() < kWeightMagic.size() ||
      std::memcmp(data.data(), kWeightMagic.data(), kWeightMagic.size()) != 0) {
    r.fail("bad magic, expected FASTCAPS");
  }
  r.raw(kWeightMagic.size(), "magic");
  const std::size_t version_at = r.offset();
  if (r.u32("version") != kWeightVersion) r.fail_at("unsupported version", version_at);
  const std::uint32_t count = r.u32("tensor_count");

  WeightFile out;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const std::size_t name_at = r.offset();
    const std::uint16_t name_len = r.u16("name length");
    t.name = r.str(name_len, "name");
    if (!seen.insert(t.name).second) r.fail_at("duplicate tensor name '" + t.name + "'", name_at);
    const std::size_t dtype_at = r.offset();
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype > 1) r.fail_at("unknown dtype " + std::to_string(dtype), dtype_at);
    t.dtype = static_cast<DType>(dtype);
    t.frac_bits = r.u8("frac_bits");
    if (t.dtype == DType::f32 ? t.frac_bits != 0 : (t.frac_bits < 1 || t.frac_bits > 15)) {
      r.fail_at("invalid frac_bits " + std::to_string(t.frac_bits), dtype_at + 1);
    }
    const std::uint8_t ndim = r.u8("ndim");
    r.need(std::uint64_t{ndim} * 4, "dims");
    for (std::uint8_t d = 0; d < ndim; ++d) t.dims.push_back(r.u32("dim"));
    const std::uint64_t n = detail::checked_product(t.dims);
    const std::uint64_t elem = t.dtype == DType::f32 ? 4 : 2;
    if (n > r.remaining() / elem) r.fail("truncated payload of '" + t.name + "'");
    const std::uint8_t* p = r.raw(static_cast<std::size_t>(n * elem), "payload");
    if (t.dtype == DType::f32) {
      t.f32.resize(static_cast<std::size_t>(n));
      for (std::size_t e = 0; e < t.f32.size(); ++e) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= std::uint32_t{p[e * 4 + b]} << (8 * b);
        t.f32[e] = std::bit_cast<float>(bits);
      }
    } else {
      t.i16.resize(static_cast<std::size_t>(n));
      for (std::size_t e = 0; e < t.i16.size(); ++e) {
        t.i16[e] = static_cast<std::int16_t>(static_cast<std::uint16_t>(p[e * 2] | (p[e * 2 + 1] << 8)));
      }
    }
    out.push_back(std::move(t));
  }
  r.expect_end();
  return out;
}

inline void save_weights(const std::string& path, const WeightFile& tensors) {
  write_file(path, serialize_weights(tensors));
}

inline WeightFile load_weights(const std::string& path) { return parse_weights(read_file(path), path); }

// CapsNet tensor names inside a container.
inline constexpr const char* kConv1Weight = "conv1.weight";
inline constexpr const char* kConv1Bias = "conv1.bias";
inline constexpr const char* kPrimaryWeight = "primary_caps.weight";
inline constexpr const char* kPrimaryBias = "primary_caps.bias";
inline constexpr const char* kDigitWeight = "digit_caps.weight";

inline WeightFile to_weight_file(const CapsNetParams<double>& p) {
  return {StoredTensor::from_real(kConv1Weight, p.conv1.kernels), StoredTensor::from_real(kConv1Bias, p.conv1.bias),
          StoredTensor::from_real(kPrimaryWeight, p.primary.kernels),
          StoredTensor::from_real(kPrimaryBias, p.primary.bias), StoredTensor::from_real(kDigitWeight, p.digit)};
}

/// Params plus the spec implied by their shapes. Strides are fixed at 1 and 2;
/// the input extent is the largest one giving the stored square capsule grid
/// (28 for the MNIST network). Use with_input_extent for other image sizes.
struct LoadedModel {
  CapsNetSpec spec;
  CapsNetParams<double> params;
};

inline LoadedModel model_from_weights(const WeightFile& wf, int routing_iters = 3) {
  LoadedModel m;
  m.params.conv1 = {find_tensor(wf, kConv1Weight).to_real(), find_tensor(wf, kConv1Bias).to_real(), 1};
  m.params.primary = {find_tensor(wf, kPrimaryWeight).to_real(), find_tensor(wf, kPrimaryBias).to_real(), 2};
  m.params.digit = find_tensor(wf, kDigitWeight).to_real();
  const auto& c1 = m.params.conv1.kernels;
  const auto& pc = m.params.primary.kernels;
  const auto& dg = m.params.digit;
  if (c1.rank() != 4 || pc.rank() != 4 || dg.rank() != 4) throw ShapeError("CapsNet weights must be rank 4");
  CapsNetSpec& s = m.spec;
  s.in_channels = c1.dim(1);
  s.conv1_channels = c1.dim(0);
  s.kernel = c1.dim(2);
  s.caps_dim = dg.dim(3);
  s.out_caps = dg.dim(1);
  s.out_dim = dg.dim(2);
  s.routing_iters = routing_iters;
  if (s.caps_dim == 0 || pc.dim(0) % s.caps_dim != 0) throw ShapeError("primary_caps channels not divisible by capsule dim");
  s.capsule_types = pc.dim(0) / s.caps_dim;
  if (s.capsule_types == 0 || dg.dim(0) % s.capsule_types != 0) throw ShapeError("digit_caps rows not divisible by capsule types");
  const std::size_t grid = dg.dim(0) / s.capsule_types;
  std::size_t side = 1;
  while (side * side < grid) ++side;
  if (side * side != grid) throw ShapeError("capsule grid of " + std::to_string(grid) + " positions is not square");
  s.in_h = s.in_w = (side - 1) * s.primary_stride + s.kernel + (s.primary_stride - 1) + (s.kernel - 1);
  m.params.conv1.validate();
  m.params.primary.validate();
  s.validate();
  require_dims(pc.dims(), s.primary_dims(), "primary_caps weights");
  require_dims(dg.dims(), s.digit_dims(), "digit_caps weights");
  return m;
}

/// Same model with a different input extent; the capsule grid must not change.
inline CapsNetSpec with_input_extent(CapsNetSpec spec, std::size_t h, std::size_t w) {
  const std::size_t grid = spec.grid_size();
  spec.in_h = h;
  spec.in_w = w;
  if (h < 2 * spec.kernel - 1 || w < 2 * spec.kernel - 1 || spec.grid_size() != grid) {
    throw ShapeError("images of " + std::to_string(h) + "x" + std::to_string(w) +
                     " do not produce the model's capsule grid");
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Mask / index file
//
// "FCAPMASK", version u32, layer_count u32, then per layer:
//   name_len u16, name, granularity u8, out_channels u32, in_channels u32,
//   kernel_count u32 (== out * in), bitset ceil(kernel_count / 8) bytes with
//   kernel id b at bit (b % 8) of byte b / 8 and zero padding bits,
//   index_count u32, index_count ascending u32 kernel ids.

inline constexpr std::string_view kMaskMagic = "FCAPMASK";
inline constexpr std::uint32_t kMaskVersion = 1;

struct NamedMask {
  std::string name;
  PruneMask mask;
  friend bool operator==(const NamedMask&, const NamedMask&) = default;
};

using MaskFile = std::vector<NamedMask>;

inline Bytes serialize_masks(const MaskFile& layers) {
  detail::ByteWriter w;
  w.bytes(kMaskMagic);
  w.u32(kMaskVersion);
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const NamedMask& l : layers) {
    const PruneMask& m = l.mask;
    if (l.name.size() > 0xFFFF) throw ContractError("mask layer name too long");
    if (m.kernel_count() > std::numeric_limits<std::uint32_t>::max()) throw ContractError("mask too large");
    w.u16(static_cast<std::uint16_t>(l.name.size()));
    w.bytes(l.name);
    w.u8(static_cast<std::uint8_t>(m.granularity()));
    w.u32(static_cast<std::uint32_t>(m.out_channels()));
    w.u32(static_cast<std::uint32_t>(m.in_channels()));
    w.u32(static_cast<std::uint32_t>(m.kernel_count()));
    std::vector<std::uint8_t> bits((m.kernel_count() + 7) / 8, 0);
    for (std::size_t k = 0; k < m.kernel_count(); ++k) {
      if (m.alive(k)) bits[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
    }
    for (std::uint8_t b : bits) w.u8(b);
    const auto ids = m.index_table();
    w.u32(static_cast<std::uint32_t>(ids.size()));
    for (std::uint32_t id : ids) w.u32(id);
  }
  return w.take();
}

inline MaskFile parse_masks(const Bytes& data, const std::string& what = "mask file") {
  detail::ByteReader r(data, what);
  if (r.remaining() < kMaskMagic.size() || std::memcmp(data.data(), kMaskMagic.data(), kMaskMagic.size()) != 0) {
    r.fail("bad magic, expected FCAPMASK");
  }
  r.raw(kMaskMagic.size(), "magic");
  const std::size_t version_at = r.offset();
  if (r.u32("version") != kMaskVersion) r.fail_at("unsupported version", version_at);
  const std::uint32_t count = r.u32("layer_count");

  MaskFile out;
  for (std::uint32_t l = 0; l < count; ++l) {
    NamedMask nm;
    nm.name = r.str(r.u16("name length"), "name");
    const std::size_t g_at = r.offset();
    const std::uint8_t g = r.u8("granularity");
    if (g > 2) r.fail_at("unknown granularity " + std::to_string(g), g_at);
    const std::uint32_t oc = r.u32("out_channels");
    const std::uint32_t ic = r.u32("in_channels");
    const std::size_t kc_at = r.offset();
    const std::uint32_t kc = r.u32("kernel_count");
    if (std::uint64_t{oc} * ic != kc) r.fail_at("kernel_count does not equal out_channels * in_channels", kc_at);
    const std::size_t nbytes = (std::size_t{kc} + 7) / 8;
    r.need(nbytes, "bitset");
    const std::size_t bits_at = r.offset();
    const std::uint8_t* bits = r.raw(nbytes, "bitset");
    nm.mask = PruneMask(oc, ic, static_cast<Granularity>(g));
    std::size_t pop = 0;
    for (std::size_t k = 0; k < kc; ++k) {
      const bool on = (bits[k / 8] >> (k % 8)) & 1u;
      nm.mask.set(k, on);
      pop += on;
    }
    if (kc % 8 != 0 && (bits[nbytes - 1] >> (kc % 8)) != 0) r.fail_at("nonzero bitset padding", bits_at + nbytes - 1);
    const std::size_t ic_at = r.offset();
    const std::uint32_t idx_count = r.u32("index_count");
    if (idx_count != pop) {
      r.fail_at("integrity error: index list has " + std::to_string(idx_count) + " entries, bitset has " +
                    std::to_string(pop) + " survivors",
                ic_at);
    }
    r.need(std::uint64_t{idx_count} * 4, "index list");
    std::uint32_t prev = 0;
    for (std::uint32_t e = 0; e < idx_count; ++e) {
      const std::size_t at = r.offset();
      const std::uint32_t id = r.u32("index");
      if (id >= kc || !nm.mask.alive(id) || (e > 0 && id <= prev)) {
        r.fail_at("integrity error: index " + std::to_string(id) + " does not match the bitset", at);
      }
      prev = id;
    }
    out.push_back(std::move(nm));
  }
  r.expect_end();
  return out;
}

inline void save_mask(const std::string& path, const MaskFile& layers) { write_file(path, serialize_masks(layers)); }

inline MaskFile load_mask(const std::string& path) { return parse_masks(read_file(path), path); }

inline constexpr const char* kConv1Mask = "conv1";
inline constexpr const char* kPrimaryMask = "primary_caps";
inline constexpr const char* kRoutingMask = "digit_caps";

inline MaskFile to_mask_file(const PruneSet& m) {
  return {{kConv1Mask, m.conv1}, {kPrimaryMask, m.primary}, {kRoutingMask, m.routing}};
}

inline PruneSet prune_set_from(const MaskFile& mf) {
  auto get = [&](const char* name) -> const PruneMask& {
    for (const NamedMask& nm : mf) {
      if (nm.name == name) return nm.mask;
    }
    throw ShapeError(std::string("mask file has no layer named '") + name + "'");
  };
  return {get(kConv1Mask), get(kPrimaryMask), get(kRoutingMask)};
}

// ---------------------------------------------------------------------------
// IDX

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Images scaled to [0, 1], shape (N, rows, cols).
inline Tensor<double> parse_idx_images(const Bytes& data, const std::string& what = "IDX images") {
  detail::ByteReader r(data, what);
  if (r.u32_be("magic") != kIdxImageMagic) r.fail_at("expected image magic 0x00000803", 0);
  const std::uint32_t n = r.u32_be("count"), rows = r.u32_be("rows"), cols = r.u32_be("cols");
  const std::uint64_t total = detail::checked_product({n, rows, cols});
  if (total > r.remaining()) r.fail("truncated payload");
  const std::uint8_t* p = r.raw(static_cast<std::size_t>(total), "payload");
  r.expect_end();
  std::vector<double> v(static_cast<std::size_t>(total));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = p[i] / 255.0;
  return Tensor<double>({n, rows, cols}, std::move(v));
}

inline std::vector<int> parse_idx_labels(const Bytes& data, const std::string& what = "IDX labels") {
  detail::ByteReader r(data, what);
  if (r.u32_be("magic") != kIdxLabelMagic) r.fail_at("expected label magic 0x00000801", 0);
  const std::uint32_t n = r.u32_be("count");
  const std::uint8_t* p = r.raw(n, "payload");
  r.expect_end();
  std::vector<int> labels(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (p[i] > 9) r.fail_at("label " + std::to_string(p[i]) + " outside 0-9", 8 + i);
    labels[i] = p[i];
  }
  return labels;
}

inline Tensor<double> load_idx_images(const std::string& path) { return parse_idx_images(read_file(path), path); }
inline std::vector<int> load_idx_labels(const std::string& path) { return parse_idx_labels(read_file(path), path); }

/// Either file kind, told apart by magic.
struct IdxData {
  bool is_labels = false;
  Tensor<double> images;
  std::vector<int> labels;
};

inline IdxData parse_idx(const Bytes& data, const std::string& what = "IDX file") {
  detail::ByteReader r(data, what);
  const std::uint32_t magic = r.u32_be("magic");
  if (magic == kIdxImageMagic) return {false, parse_idx_images(data, what), {}};
  if (magic == kIdxLabelMagic) return {true, {}, parse_idx_labels(data, what)};
  r.fail_at("unknown IDX magic", 0);
}

inline IdxData load_idx(const std::string& path) { return parse_idx(read_file(path), path); }

/// Inverse of parse_idx_images for values already on the 1/255 grid; others round.
inline Bytes serialize_idx_images(const Tensor<double>& images) {
  if (images.rank() != 3) throw ShapeError("IDX images must be (N, rows, cols)");
  Bytes out;
  auto be = [&](std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  be(kIdxImageMagic);
  for (std::size_t a = 0; a < 3; ++a) be(static_cast<std::uint32_t>(images.dim(a)));
  for (double v : images.data()) {
    const double c = std::clamp(v, 0.0, 1.0) * 255.0;
    out.push_back(static_cast<std::uint8_t>(std::lround(c)));
  }
  return out;
}

inline Bytes serialize_idx_labels(const std::vector<int>& labels) {
  Bytes out = {0, 0, 8, 1};
  const auto n = static_cast<std::uint32_t>(labels.size());
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  for (int l : labels) {
    if (l < 0 || l > 9) throw ContractError("label outside 0-9");
    out.push_back(static_cast<std::uint8_t>(l));
  }
  return out;
}

}  // namespace fastcaps
