#include <gtest/gtest.h>

#include <thread>
#include <vector>

#include "fastcaps/capsnet.hpp"
#include "fastcaps/pruning.hpp"
#include "fastcaps/random.hpp"

using namespace fastcaps;

namespace {

// 12x12 input, 3x3 kernels: conv1 -> 10x10, primary -> 4x4 grid, 4 types of 4-d capsules.
CapsNetSpec small_spec() {
  CapsNetSpec s;
  s.in_h = s.in_w = 12;
  s.kernel = 3;
  s.conv1_channels = 8;
  s.capsule_types = 4;
  s.caps_dim = 4;
  s.out_caps = 3;
  s.out_dim = 4;
  return s;
}

CapsNetParams<double> scaled_params(const CapsNetSpec& s, std::uint64_t seed) {
  auto p = random_params(s, seed);
  for (double& v : p.conv1.kernels.data()) v *= 10;
  for (double& v : p.primary.kernels.data()) v *= 10;
  for (double& v : p.digit.data()) v *= 10;
  return p;
}

Tensor<double> image(const CapsNetSpec& s, std::uint64_t seed) {
  return random_images(s, 1, seed).reshaped({1, s.in_h, s.in_w});
}

}  // namespace

TEST(CapsNetSpec, MnistCounts) {
  const CapsNetSpec s;
  EXPECT_EQ(s.conv1_h(), 20u);
  EXPECT_EQ(s.grid_h(), 6u);
  EXPECT_EQ(s.total_capsules(), 1152u);
  EXPECT_EQ(s.routing_block(), 1280u);
  EXPECT_EQ(s.routing_weight_count(), 1474560u);
  EXPECT_EQ(s.digit_dims(), (Dims{1152, 10, 16, 8}));
  CapsNetSpec bad;
  bad.routing_iters = 0;
  EXPECT_THROW(bad.validate(), ContractError);
}

TEST(CapsNet, InferIsDeterministic) {
  CapsNetSpec s;
  const CapsNet net(s, random_params(s, 0, true));
  const Tensor<double> zero({1, 28, 28});
  const InferResult a = net.infer(zero), b = net.infer(zero);
  EXPECT_EQ(a.cls, b.cls);
  EXPECT_EQ(a.caps_norms, b.caps_norms);
  EXPECT_EQ(a.caps_norms.size(), 10u);
}

TEST(CapsNet, ModesAgreeOnSmallNetwork) {
  const auto s = small_spec();
  const CapsNet net(s, scaled_params(s, 1), std::nullopt, kQ8_8);
  int agree = 0;
  for (int i = 0; i < 20; ++i) {
    const auto img = image(s, 100 + i);
    const auto ref = net.infer(img);
    InferOptions o;
    o.mode = RoutingMode::optimized;
    const auto opt = net.infer(img, o);
    for (std::size_t j = 0; j < ref.caps_norms.size(); ++j) EXPECT_NEAR(opt.caps_norms[j], ref.caps_norms[j], 0.02);
    o.arith = ArithMode::fx16;
    agree += net.infer(img, o).cls == ref.cls;
  }
  EXPECT_GE(agree, 18);
}

TEST(CapsNet, FixedPointNeedsPreparedModel) {
  const auto s = small_spec();
  const CapsNet net(s, scaled_params(s, 2));
  InferOptions o;
  o.arith = ArithMode::fx16;
  EXPECT_THROW(net.infer(image(s, 1), o), ContractError);
  EXPECT_THROW(net.infer(Tensor<double>({1, 5, 5})), ShapeError);
}

TEST(CapsNet, PrunedModelEqualsZeroedDenseModel) {
  const auto s = small_spec();
  const auto p = scaled_params(s, 3);
  const auto res = lakp_prune(capsnet_stack(p, 0.3, 0.5, Granularity::kernel, Granularity::capsule_group, s.caps_dim));
  const auto pr = propagate_dead_structures(res.masks[0], res.masks[1], s);
  ASSERT_LT(pr.masks.routing.survivors(), s.total_capsules());
  const CapsNet pruned(s, p, pr.masks);
  const CapsNet dense(s, apply_masks(p, pr.masks));
  EXPECT_EQ(pruned.live_capsules().size(), pr.masks.routing.survivors());
  for (int i = 0; i < 5; ++i) {
    const auto img = image(s, 200 + i);
    const auto a = pruned.infer(img), b = dense.infer(img);
    for (std::size_t j = 0; j < a.caps_norms.size(); ++j) EXPECT_NEAR(a.caps_norms[j], b.caps_norms[j], 1e-12);
  }
}

TEST(CapsNet, PermutingDigitCapsulesPermutesNorms) {
  const auto s = small_spec();
  const auto p = scaled_params(s, 4);
  const std::vector<std::size_t> perm = {2, 0, 1};
  auto q = p;
  const std::size_t in = s.total_capsules(), row = s.out_dim * s.caps_dim;
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t e = 0; e < row; ++e) q.digit[(i * 3 + perm[j]) * row + e] = p.digit[(i * 3 + j) * row + e];
  const CapsNet a(s, p), b(s, q);
  for (int t = 0; t < 5; ++t) {
    const auto img = image(s, 300 + t);
    const auto na = a.infer(img).caps_norms, nb = b.infer(img).caps_norms;
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(nb[perm[j]], na[j], 1e-12);
  }
}

TEST(CapsNet, ConcurrentInferenceMatchesSerial) {
  const auto s = small_spec();
  const CapsNet net(s, scaled_params(s, 5), std::nullopt, kQ8_8);
  std::vector<Tensor<double>> imgs;
  for (int i = 0; i < 8; ++i) imgs.push_back(image(s, 400 + i));
  InferOptions o;
  o.arith = ArithMode::fx16;
  o.mode = RoutingMode::optimized;
  std::vector<InferResult> serial, threaded(imgs.size());
  for (const auto& im : imgs) serial.push_back(net.infer(im, o));
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < imgs.size(); ++i) pool.emplace_back([&, i] { threaded[i] = net.infer(imgs[i], o); });
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < imgs.size(); ++i) EXPECT_EQ(serial[i].caps_norms, threaded[i].caps_norms);
}

TEST(CapsNet, EffectiveFactDividesCapsuleCount) {
  CapsNetSpec s;
  const CapsNet net(s, random_params(s, 6));
  EXPECT_EQ(net.effective_fact({}), 9u);
  InferOptions o;
  o.fact = 4;
  EXPECT_EQ(net.effective_fact(o), 4u);
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax({0.1, 0.5, 0.5, 0.2}), 1);
  EXPECT_EQ(argmax({0.0, 0.0}), 0);
}

TEST(PredictVectors, MatchesDefinition) {
  std::mt19937_64 g(7);
  const auto caps = random_tensor({5, 4}, g, -1, 1);
  const auto w = random_tensor({5, 3, 2, 4}, g, -1, 1);
  const auto u = predict_vectors(caps, w);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 2; ++k) {
        double s = 0;
        for (std::size_t d = 0; d < 4; ++d) s += w(i, j, k, d) * caps(i, d);
        EXPECT_NEAR(u(i, j, k), s, 1e-14);
      }
  EXPECT_THROW(predict_vectors(caps, random_tensor({4, 3, 2, 4}, g, -1, 1)), ShapeError);
}
