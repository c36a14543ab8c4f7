#include <doctest.h>

#include <cmath>
#include <random>

#include "doublematch/ema.hpp"
#include "doublematch/error.hpp"
#include "doublematch/model.hpp"
#include "doublematch/optim.hpp"
#include "test_util.hpp"

using namespace dm;

TEST_CASE("init copies parameters exactly") {
  const std::vector<float> p{1.5f, -0.25f, 3e-8f};
  const auto e = ema_init<float>(p);
  CHECK(e.shadow == p);
  CHECK(e.momentum == 0.999);
}

TEST_CASE("hand recurrence") {
  EmaState<double> e{{0.0}, 0.5};
  const std::vector<double> one{1.0};
  const double expected[] = {0.5, 0.75, 0.875};
  for (double x : expected) {
    ema_update<double>(e, one);
    CHECK(e.shadow[0] == x);
  }
}

TEST_CASE("constant parameters are approached geometrically") {
  EmaState<double> e{{4.0, -1.0}, 0.9};
  const std::vector<double> theta{1.0, 1.0};
  for (int n = 1; n <= 30; ++n) {
    ema_update<double>(e, theta);
    CHECK(std::abs(e.shadow[0] - 1.0) == doctest::Approx(std::pow(0.9, n) * 3.0).epsilon(1e-9));
    CHECK(std::abs(e.shadow[1] - 1.0) == doctest::Approx(std::pow(0.9, n) * 2.0).epsilon(1e-9));
  }
}

TEST_CASE("zero momentum tracks parameters") {
  EmaState<double> e{{9.0, 9.0}, 0.0};
  const std::vector<double> p{0.3, -0.7};
  ema_update<double>(e, p);
  CHECK(e.shadow == p);
  CHECK_THROWS_AS(ema_update<double>(e, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("update is affine in shadow and parameters") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const double m = std::uniform_real_distribution<double>(0, 1)(rng);
    std::vector<double> s0(5), a(5);
    for (auto& x : s0) x = n(rng);
    for (auto& x : a) x = n(rng);
    EmaState<double> e{s0, m};
    ema_update<double>(e, a);
    for (int i = 0; i < 5; ++i) CHECK(e.shadow[i] == doctest::Approx(m * s0[i] + (1 - m) * a[i]).epsilon(1e-14));
  }
}

TEST_CASE("the optimizer never touches the shadow") {
  auto model = build_model<float>(ArchSpec{}, 1);
  auto e = ema_init<float>(model.state.params);
  const auto snapshot = e.shadow;
  auto opt = make_optimizer<float>(model.state.params.size(), 0.9);
  const std::vector<float> g(model.state.params.size(), 0.01f);
  sgd_step<float>(model.state.params, g, opt, 0.1);
  CHECK(e.shadow == snapshot);
  CHECK(model.state.params != snapshot);
}

TEST_CASE("a fresh average gives the raw model's logits") {
  ArchSpec spec;
  spec.num_classes = 4;
  auto model = build_model<float>(spec, 2);
  auto e = ema_init<float>(model.state.params);
  std::mt19937_64 rng(4);
  Tensor<float> x(3, 3, 32, 32);
  for (auto& v : x.data) v = std::uniform_real_distribution<float>(0, 1)(rng);
  const auto raw = model.forward_logits(model.forward_features(x, false));
  ModelBundle<float> shadow{model.net, {e.shadow, model.state.buffers}};
  CHECK(shadow.forward_logits(shadow.forward_features(x, false)) == raw);
}
