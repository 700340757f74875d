#include <doctest.h>

#include "ammsm/gradcheck.hpp"
#include "ammsm/magnifier.hpp"

using namespace ammsm;

TEST_CASE("alpha map is a constant broadcast") {
  auto m = make_alpha_map<double>(2.0, 4, 4);
  REQUIRE(m.shape() == Shape{4, 4, 1});
  for (auto v : m.data()) CHECK(v == 2.0);
  auto ones = make_alpha_map<double>(1.0, 8, 8);
  for (auto v : ones.data()) CHECK(v == 1.0);
  auto top = make_alpha_map<double>(4.0, 16, 16);  // boundary of the searched range
  REQUIRE(top.shape() == Shape{16, 16, 1});
  for (auto v : top.data()) CHECK(v == 4.0);
}

TEST_CASE("alpha outside the configured range is a configuration error") {
  CHECK_THROWS_AS(make_alpha_map<double>(0.5, 4, 4), ConfigError);
  CHECK_THROWS_AS(make_alpha_map<double>(4.5, 4, 4), ConfigError);
  CHECK_THROWS_AS(make_alpha_map<double>(2.0, 0, 4), ConfigError);
}

TEST_CASE("magnify shape contract") {
  Rng rng(3);
  auto net = MagnifierNet<double>::make(8, rng);
  Tensor<double> flow({32, 32, 2});
  for (auto& v : flow.data()) v = rng.normal();
  auto out = magnify(flow, make_alpha_map<double>(2.0, 32, 32), net);
  CHECK(out.shape() == Shape{32, 32, 2});
  CHECK_THROWS_AS(magnify(flow, make_alpha_map<double>(2.0, 16, 16), net), ContractViolation);
}

TEST_CASE("zero-initialized final layer passes the flow through unchanged") {
  Rng rng(4);
  auto net = MagnifierNet<double>::make(8, rng, /*zero_init_final=*/true);
  Tensor<double> flow({16, 16, 2});
  for (auto& v : flow.data()) v = rng.normal();
  auto out = magnify(flow, make_alpha_map<double>(3.0, 16, 16), net);
  for (Index i = 0; i < out.numel(); ++i) CHECK(out[i] == flow[i]);
}

TEST_CASE("golden forward, seed 0xA11A, 8x8 ones, alpha 2") {
  Rng rng(0xA11A);
  auto net = MagnifierNet<double>::make(16, rng, /*zero_init_final=*/false);
  auto out = magnify(Tensor<double>::full({8, 8, 2}, 1.0), make_alpha_map<double>(2.0, 8, 8), net);
  double sum = 0, asum = 0;
  for (auto v : out.data()) {
    sum += v;
    asum += std::abs(v);
  }
  CHECK(sum == doctest::Approx(153.03718494629007).epsilon(1e-9));
  CHECK(asum == doctest::Approx(153.03718494629007).epsilon(1e-9));
  CHECK(out[0] == doctest::Approx(1.1169948930614526).epsilon(1e-9));
  CHECK(out[37] == doctest::Approx(2.1170121567396185).epsilon(1e-9));
  CHECK(out[127] == doctest::Approx(0.55936607214901723).epsilon(1e-9));
}

TEST_CASE("mag loss examples") {
  auto ones = Tensor<double>::full({4, 4, 2}, 1.0);
  auto twos = Tensor<double>::full({4, 4, 2}, 2.0);
  CHECK(mag_loss(ones, twos, 2.0).value() == 0.0);
  CHECK(mag_loss(ones, ones, 2.0).value() == doctest::Approx(1.0).epsilon(1e-12));
  Rng rng(5);
  Tensor<double> any({4, 4, 2});
  double asum = 0;
  for (auto& v : any.data()) {
    v = rng.normal();
    asum += std::abs(v);
  }
  CHECK(mag_loss(Tensor<double>::zeros({4, 4, 2}), any, 3.0).value() ==
        doctest::Approx(asum / 32.0).epsilon(1e-12));
  CHECK_THROWS_AS(mag_loss(ones, Tensor<double>::zeros({4, 4, 1}), 2.0), ContractViolation);
}

TEST_CASE("mag loss vanishes exactly on perfectly scaled flow") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor<double> f({8, 8, 2});
    for (auto& v : f.data()) v = rng.normal();
    const double alpha = rng.uniform(1.0, 4.0);
    CHECK(mag_loss(f, scale(f, alpha), alpha).value() == 0.0);
  }
}

TEST_CASE("loss weight follows the schedule exactly") {
  CHECK(loss_weight({0, 100}) == 1.0);
  CHECK(loss_weight({100, 100}) == 0.0);
  CHECK(loss_weight({70, 100}) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK_THROWS_AS(loss_weight({0, 0}), ConfigError);
  CHECK_THROWS_AS(loss_weight({5, 4}), ContractViolation);
  // affine and strictly decreasing with endpoints 1 and 0
  const Index er = 17;
  double prev = 2.0;
  for (Index e = 0; e <= er; ++e) {
    const double w = loss_weight({e, er});
    CHECK(w < prev);
    CHECK(w == doctest::Approx(1.0 - static_cast<double>(e) / er).epsilon(1e-12));
    prev = w;
  }
}

TEST_CASE("total loss combines per the schedule") {
  auto s = [](double v) { return Tensor<double>::scalar(v); };
  CHECK(total_loss(s(1.0), s(2.0), {0, 10}).value() == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(total_loss(s(1.0), s(2.0), {10, 10}).value() == 1.0);
  CHECK(total_loss(s(0.0), s(0.0), {3, 10}).value() == 0.0);
  CHECK_THROWS_AS(total_loss(s(-1.0), s(0.0), {0, 10}), ContractViolation);
  // weight vanishes at e == e_r for any losses
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const double lc = std::abs(rng.normal()), lm = std::abs(rng.normal());
    CHECK(total_loss(s(lc), s(lm), {7, 7}).value() == lc);
  }
}

TEST_CASE("magnifier gradients pass finite differences") {
  Rng rng(0xBEEF);
  auto net = MagnifierNet<double>::make(4, rng, /*zero_init_final=*/false);
  Tensor<double> flow({4, 4, 2});
  for (auto& v : flow.data()) v = rng.normal();
  auto amap = make_alpha_map<double>(2.0, 4, 4);
  std::vector<std::pair<std::string, Tensor<double>*>> params;
  net.visit_params("magnifier", [&](const std::string& n, Tensor<double>& t) { params.emplace_back(n, &t); });
  for (auto& [name, p] : params) {
    auto loss = [&]() { return mag_loss(flow, magnify(flow, amap, net), 2.0); };
    CAPTURE(name);
    CHECK(finite_diff_check_param<double>(*p, loss) < 1e-3);
  }
}
