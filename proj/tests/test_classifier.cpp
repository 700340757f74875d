#include <doctest.h>

#include "ammsm/gradcheck.hpp"
#include "ammsm/model.hpp"

using namespace ammsm;

TEST_CASE("spatial stream aligns with the temporal stage-2 resolution") {
  Rng rng(1);
  auto net = SpatialNet<double>::make(16, rng);
  Tensor<double> img({64, 64, 3}, 0.5);
  auto y = net.forward(img);
  CHECK(y.shape() == Shape{8, 8, 32});  // total stride 8, channels 2 x base
  CHECK_THROWS_AS(net.forward(Tensor<double>::zeros({64, 64, 2})), ContractViolation);
}

TEST_CASE("zero image maps to zero features") {
  Rng rng(2);
  auto net = SpatialNet<double>::make(8, rng);
  auto y = net.forward(Tensor<double>::zeros({32, 32, 3}));
  for (auto v : y.data()) CHECK(v == 0.0);  // all biases start at zero
}

TEST_CASE("spatial golden forward, fixed seed") {
  Rng rng(0x5A7);
  auto net = SpatialNet<double>::make(8, rng);
  Tensor<double> img({64, 64, 3});
  Rng xr(42);
  for (auto& v : img.data()) v = xr.uniform();
  auto y = net.forward(img);
  REQUIRE(y.shape() == Shape{8, 8, 16});
  double sum = 0;
  for (auto v : y.data()) sum += v;
  CHECK(sum == doctest::Approx(236.00707156015179).epsilon(1e-9));
}

TEST_CASE("fusion is projection plus addition") {
  Rng rng(3);
  auto proj = Conv<double>::make(1, 1, 6, 4, 1, 0, rng);
  Tensor<double> temporal({8, 8, 4});
  Tensor<double> spatial({8, 8, 6});
  for (auto& v : temporal.data()) v = rng.normal();
  for (auto& v : spatial.data()) v = rng.normal();

  // spatial all zeros -> fused == temporal exactly
  auto f0 = fuse(temporal, Tensor<double>::zeros({8, 8, 6}), proj);
  for (Index i = 0; i < temporal.numel(); ++i) CHECK(f0[i] == temporal[i]);

  // temporal all zeros -> fused == projected spatial
  auto f1 = fuse(Tensor<double>::zeros({8, 8, 4}), spatial, proj);
  auto projected = proj(spatial);
  for (Index i = 0; i < projected.numel(); ++i) CHECK(f1[i] == projected[i]);

  // random pair against the dense oracle
  auto fused = fuse(temporal, spatial, proj);
  auto oracle = add(proj(spatial), temporal);
  for (Index i = 0; i < fused.numel(); ++i) CHECK(fused[i] == doctest::Approx(oracle[i]).epsilon(1e-12));

  CHECK_THROWS_AS(fuse(temporal, Tensor<double>::zeros({4, 4, 6}), proj), ContractViolation);
}

TEST_CASE("classify maps zero features to zero logits") {
  Rng rng(4);
  auto head = ClassifierHead<double>::make(16, 3, rng);
  auto logits = head.forward(Tensor<double>::zeros({16}));
  for (auto v : logits.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(head.forward(Tensor<double>::zeros({8})), ContractViolation);
}

TEST_CASE("identity-like head passes features through") {
  ClassifierHead<double> head;
  head.fc.w = Tensor<double>::zeros({3, 3});
  for (Index i = 0; i < 3; ++i) head.fc.w[i * 3 + i] = 1.0;
  head.fc.b = Tensor<double>::zeros({3});
  auto feats = Tensor<double>::from_vector({3}, {0.5, -1.25, 2.0});
  auto logits = head.forward(feats);
  for (Index i = 0; i < 3; ++i) CHECK(logits[i] == feats[i]);
}

TEST_CASE("cross-entropy spec values") {
  auto uniform = Tensor<double>::zeros({3});
  CHECK(cls_loss(uniform, 0).value() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  auto peaked = Tensor<double>::from_vector({3}, {10, -10, -10});
  CHECK(cls_loss(peaked, 0).value() == doctest::Approx(4.122307244877e-9).epsilon(1e-3));
  CHECK(cls_loss(peaked, 1).value() == doctest::Approx(20.0).epsilon(1e-6));
  CHECK_THROWS_AS(cls_loss(peaked, 3), ContractViolation);
  CHECK_THROWS_AS(cls_loss(peaked, -1), ContractViolation);
}

TEST_CASE("cross-entropy is non-negative and shift invariant") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor<double> logits({4});
    for (auto& v : logits.data()) v = rng.normal(0, 3);
    const Index label = static_cast<Index>(rng.uniform_int(0, 3));
    const double base = cls_loss(logits, label).value();
    CHECK(base >= 0.0);
    auto shifted = add(logits, Tensor<double>::full({4}, rng.normal()));
    CHECK(cls_loss(shifted, label).value() == doctest::Approx(base).epsilon(1e-6));
  }
}

TEST_CASE("multi-task path connects cls loss back to the magnifier") {
  Rng rng(0xFACE);
  ModelConfig mc;
  mc.stages.layers = {1, 1};
  mc.stages.channels = {8, 16};
  mc.stages.d_state = 4;
  mc.stages.heads = 2;
  mc.magnifier_base = 4;
  mc.spatial_base = 4;
  auto model = AmmsmModel<double>::make(mc, rng);
  // open the zero-initialized final magnifier layer and head (both start at
  // zero, which blocks this path until the first optimizer step)
  for (auto& v : model.magnifier.out.w.data()) v = rng.normal(0, 0.2);
  for (auto& v : model.head.fc.w.data()) v = rng.normal(0, 0.2);
  Tensor<double> flow({16, 16, 2});
  Tensor<double> onset({16, 16, 3});
  for (auto& v : flow.data()) v = rng.normal(0, 0.5);
  for (auto& v : onset.data()) v = rng.uniform();
  const std::vector<double> ratios(static_cast<std::size_t>(mc.stages.ratio_slots()), 0.2);

  GradTape<double> tape;
  {
    TapeScope<double> scope(&tape);
    model.watch_all(tape);
    auto out = model.forward(flow, onset, 1, 2.0, ratios);
    tape.backward(out.l_cls);
  }
  auto g = tape.grad_of(model.magnifier.enc1.w);
  double l1 = 0;
  for (auto v : g.data()) l1 += std::abs(v);
  CHECK(l1 > 0.0);

  // finite differences confirm the autodiff value on one magnifier parameter
  auto loss = [&]() {
    auto out = model.forward(flow, onset, 1, 2.0, ratios);
    return out.l_cls;
  };
  CHECK(finite_diff_check_param<double>(model.magnifier.out.b, loss) < 1e-3);
}
