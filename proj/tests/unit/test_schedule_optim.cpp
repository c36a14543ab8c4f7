#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "doublematch/error.hpp"
#include "doublematch/optim.hpp"

using namespace dm;

TEST_CASE("learning rate endpoints") {
  LrSchedule s{0.3, 7.0 / 8.0, 1000};
  CHECK(lr_at(s, 0) == 0.3);
  CHECK(lr_at(s, 1000) == doctest::Approx(0.3 * std::cos(7 * std::numbers::pi / 16)));
  CHECK(lr_at(s, 1000) == doctest::Approx(0.0585).epsilon(1e-3));
  s.gamma = 5.0 / 8.0;
  CHECK(lr_at(s, 1000) == doctest::Approx(0.3 * std::cos(5 * std::numbers::pi / 16)));
  CHECK(lr_at(s, 1000) == doctest::Approx(0.1666).epsilon(1e-3));
  CHECK_THROWS_AS(lr_at(s, -1), ConfigError);
  CHECK_THROWS_AS(lr_at(s, 1001), ConfigError);
}

TEST_CASE("learning rate decreases and its end ratio ignores eta0") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> g(0.01, 0.99), e(1e-4, 10.0);
  for (int trial = 0; trial < 50; ++trial) {
    const LrSchedule s{e(rng), g(rng), 1 + static_cast<std::int64_t>(rng() % 500)};
    for (std::int64_t k = 0; k < s.total_steps; ++k) CHECK(lr_at(s, k + 1) < lr_at(s, k));
    CHECK(lr_at(s, s.total_steps) > 0);
    CHECK(lr_at(s, s.total_steps) / lr_at(s, 0) ==
          doctest::Approx(std::cos(s.gamma * std::numbers::pi / 2)).epsilon(1e-12));
  }
}

TEST_CASE("plain SGD with zero momentum") {
  std::vector<double> p{0.0};
  const std::vector<double> g{1.0};
  auto st = make_optimizer<double>(1, 0.0);
  sgd_step<double>(p, g, st, 0.1);
  CHECK(p[0] == doctest::Approx(-0.1));
  CHECK(st.step == 1);
}

TEST_CASE("zero gradients leave parameters and their norm unchanged") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> p(50);
  for (auto& x : p) x = n(rng);
  const auto before = p;
  const std::vector<double> g(50, 0.0);
  auto st = make_optimizer<double>(50, 0.9);
  for (int k = 0; k < 100; ++k) sgd_step<double>(p, g, st, 0.3);
  CHECK(p == before);
}

TEST_CASE("two Nesterov steps on a quadratic match a manual unroll") {
  // f(x) = a/2 x^2, grad = a x.
  const double a = 1.7, lr = 0.05, m = 0.9;
  double x = 2.0, v = 0.0;
  for (int k = 0; k < 2; ++k) {
    const double g = a * x;
    v = m * v + g;
    x -= lr * (g + m * v);
  }
  std::vector<double> p{2.0};
  auto st = make_optimizer<double>(1, m);
  for (int k = 0; k < 2; ++k) {
    const std::vector<double> g{a * p[0]};
    sgd_step<double>(p, g, st, lr);
  }
  CHECK(p[0] == doctest::Approx(x).epsilon(1e-15));
  CHECK(st.velocity[0] == doctest::Approx(v).epsilon(1e-15));
}

TEST_CASE("non-finite gradients abort before any change") {
  std::vector<double> p{1.0, 2.0};
  auto st = make_optimizer<double>(2, 0.9);
  st.velocity = {0.5, 0.5};
  const std::vector<double> g{0.1, std::nan("")};
  CHECK_THROWS_AS(sgd_step<double>(p, g, st, 0.1), TrainingError);
  CHECK(p == std::vector<double>{1.0, 2.0});
  CHECK(st.velocity == std::vector<double>{0.5, 0.5});
  CHECK(st.step == 0);
  const std::vector<double> short_g{0.1};
  CHECK_THROWS_AS(sgd_step<double>(p, short_g, st, 0.1), ShapeError);
}
