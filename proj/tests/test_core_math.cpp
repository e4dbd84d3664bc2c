#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "mtssl/core_math.hpp"
#include "mtssl/error.hpp"
#include "mtssl/rng.hpp"

using namespace mtssl;

namespace {

// d = H = Ce = Ci = 2 with hand-set weights.
TwoHeadModel tiny_model() {
  TwoHeadModel m(ModelShape{2, 2, 2, 2});
  auto tw = m.trunk_weights();
  tw[0] = 1; tw[1] = 0;  // row for x0
  tw[2] = 0; tw[3] = 1;  // row for x1
  m.trunk_bias()[0] = 0;
  m.trunk_bias()[1] = -1;
  auto ew = m.emo_weights();
  ew[0] = 1; ew[1] = -1;
  ew[2] = 2; ew[3] = 0;
  m.emo_bias()[1] = 0.5;
  auto iw = m.intent_weights();
  iw[0] = 0; iw[1] = 1;
  iw[2] = 1; iw[3] = 0;
  return m;
}

FeatureVector random_vector(Rng& rng, std::size_t n) {
  FeatureVector v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("softmax is normalized and shift invariant") {
  const auto p = softmax(std::vector<double>{1000.0, 1001.0, 999.0});
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  const auto q = softmax(std::vector<double>{0.0, 1.0, -1.0});
  for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-14));
}

TEST_CASE("forward on the hand-set 2-2-2 model") {
  const auto m = tiny_model();
  // x = (1, 2): hidden (1, 1), emo logits (3, -0.5), intent logits (1, 1)
  auto p = forward(m, std::vector<double>{1.0, 2.0});
  CHECK(p.emo[0] == doctest::Approx(0.97068776924864364).epsilon(1e-14));
  CHECK(p.emo[1] == doctest::Approx(0.029312230751356316).epsilon(1e-14));
  CHECK(p.intent[0] == doctest::Approx(0.5));
  // x = (-1, 2): the first hidden unit is clipped, emo logits (2, 0.5), intent (1, 0)
  p = forward(m, std::vector<double>{-1.0, 2.0});
  CHECK(p.emo[0] == doctest::Approx(0.81757447619364365).epsilon(1e-14));
  CHECK(p.intent[0] == doctest::Approx(0.7310585786300049).epsilon(1e-14));
}

TEST_CASE("forward: random models give normalized heads") {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const auto m = TwoHeadModel::initialize(ModelShape{5, 6, 7, 8}, rng.next_u64());
    const auto p = forward(m, random_vector(rng, 5));
    REQUIRE(p.emo.size() == 7);
    REQUIRE(p.intent.size() == 8);
    CHECK(std::accumulate(p.emo.begin(), p.emo.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::accumulate(p.intent.begin(), p.intent.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("forward: zero model is uniform") {
  const TwoHeadModel m(ModelShape{4, 3, 7, 8});
  const auto p = forward(m, std::vector<double>{1, 2, 3, 4});
  for (double v : p.emo) CHECK(v == doctest::Approx(1.0 / 7));
  for (double v : p.intent) CHECK(v == doctest::Approx(1.0 / 8));
}

TEST_CASE("forward: errors") {
  const TwoHeadModel m(ModelShape{4, 3, 7, 8});
  CHECK_THROWS_AS(forward(m, std::vector<double>{1, 2}), ContractError);
  CHECK_THROWS_AS(forward(m, std::vector<double>{1, 2, std::numeric_limits<double>::quiet_NaN(), 4}),
                  NumericError);
  CHECK_THROWS_AS(ModelShape({0, 3, 7, 8}).validate(), ContractError);
}

TEST_CASE("initialization stays inside the fan-in bound and is seeded") {
  const ModelShape s{16, 8, 7, 8};
  const auto a = TwoHeadModel::initialize(s, 5);
  const auto b = TwoHeadModel::initialize(s, 5);
  const auto c = TwoHeadModel::initialize(s, 6);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  for (double v : a.trunk_weights()) CHECK(std::abs(v) <= 1.0 / std::sqrt(16.0));
  for (double v : a.emo_weights()) CHECK(std::abs(v) <= 1.0 / std::sqrt(8.0));
}

TEST_CASE("backprop: CE at a one-hot prediction has zero logit gradient") {
  // A saturated head: p is one-hot to machine precision, so p - y = 0.
  TwoHeadModel m(ModelShape{1, 1, 2, 2});
  m.trunk_weights()[0] = 1.0;
  m.emo_weights()[0] = 1000.0;
  m.intent_weights()[1] = 1000.0;
  const std::vector<FeatureVector> xs = {{1.0}};
  const auto r = backprop(m, xs, [](std::span<const TaskProbs> p, std::span<HeadGradient> g) {
    g[0].emo = {-1.0 / p[0].emo[0], 0.0};
    g[0].intent = {0.0, -1.0 / p[0].intent[1]};
    return -std::log(p[0].emo[0]) - std::log(p[0].intent[1]);
  });
  CHECK(r.loss == doctest::Approx(0.0));
  for (double v : r.gradients.values) CHECK(v == 0.0);
}

TEST_CASE("backprop: zero upstream gives zero gradient") {
  const auto m = TwoHeadModel::initialize(ModelShape{3, 4, 7, 8}, 3);
  const std::vector<FeatureVector> xs = {{1, 2, 3}, {0, 1, 0}};
  const std::vector<HeadGradient> up(2, HeadGradient{std::vector<double>(7, 0.0), std::vector<double>(8, 0.0)});
  const auto g = backprop(m, xs, up);
  for (double v : g.values) CHECK(v == 0.0);
}

TEST_CASE("backprop agrees with finite differences for a generic probability loss") {
  Rng rng(2024);
  for (int t = 0; t < 20; ++t) {
    auto m = TwoHeadModel::initialize(ModelShape{5, 4, 3, 4}, rng.next_u64());
    std::vector<FeatureVector> xs;
    for (int j = 0; j < 3; ++j) xs.push_back(random_vector(rng, 5));
    std::vector<double> we(3), wi(4);
    for (double& w : we) w = rng.normal();
    for (double& w : wi) w = rng.normal();
    // L = sum_j sum_c we_c p_c^2 + wi_c q_c^3
    const ProbabilityLoss loss = [&](std::span<const TaskProbs> p, std::span<HeadGradient> g) {
      double l = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j) {
        g[j].emo.assign(3, 0.0);
        g[j].intent.assign(4, 0.0);
        for (std::size_t c = 0; c < 3; ++c) {
          l += we[c] * p[j].emo[c] * p[j].emo[c];
          g[j].emo[c] = 2 * we[c] * p[j].emo[c];
        }
        for (std::size_t c = 0; c < 4; ++c) {
          l += wi[c] * std::pow(p[j].intent[c], 3);
          g[j].intent[c] = 3 * wi[c] * p[j].intent[c] * p[j].intent[c];
        }
      }
      return l;
    };
    const auto analytic = backprop(m, xs, loss);
    const auto numeric = finite_difference_gradient(
        [&](const TwoHeadModel& mm) {
          std::vector<TaskProbs> ps;
          for (const auto& x : xs) ps.push_back(forward(mm, x));
          std::vector<HeadGradient> g(ps.size());
          return loss(ps, g);
        },
        m);
    CHECK(max_relative_error(analytic.gradients.values, numeric.values, 1e-5) < 1e-4);
  }
}

TEST_CASE("finite differences on scalar functions") {
  CHECK(finite_difference([](double t) { return t * t; }, 3.0) == doctest::Approx(6.0).epsilon(1e-6));
  CHECK(finite_difference([](double t) { return 5.0 * t; }, 0.7) == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("adam") {
  const ModelShape s{2, 2, 2, 2};
  SUBCASE("zero gradient from zero state leaves parameters") {
    auto m = TwoHeadModel::initialize(s, 1);
    const auto before = m.values;
    auto st = AdamState::zeros(s);
    adam_step(m, Gradients(s), st, 0.01);
    CHECK(m.values == before);
    CHECK(st.step == 1);
  }
  SUBCASE("first step moves by -lr sign(g)") {
    auto m = TwoHeadModel::initialize(s, 1);
    const auto before = m.values;
    Gradients g(s);
    g.values[0] = 0.3;
    g.values[1] = -2.0;
    auto st = AdamState::zeros(s);
    adam_step(m, g, st, 1e-3);
    CHECK(std::abs((m.values[0] - before[0]) - (-1e-3)) < 1e-6);
    CHECK(std::abs((m.values[1] - before[1]) - 1e-3) < 1e-6);
    CHECK(m.values[2] == before[2]);
  }
  SUBCASE("deterministic") {
    auto a = TwoHeadModel::initialize(s, 4);
    auto b = a;
    Gradients g(s);
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = std::sin(static_cast<double>(i));
    auto sa = AdamState::zeros(s), sb = AdamState::zeros(s);
    for (int k = 0; k < 2; ++k) {
      adam_step(a, g, sa, 0.01);
      adam_step(b, g, sb, 0.01);
    }
    CHECK(a.values == b.values);
  }
  SUBCASE("non-positive learning rate") {
    auto m = TwoHeadModel::initialize(s, 1);
    auto st = AdamState::zeros(s);
    CHECK_THROWS_AS(adam_step(m, Gradients(s), st, 0.0), ConfigError);
    CHECK_THROWS_AS(adam_step(m, Gradients(s), st, -1.0), ConfigError);
  }
}

TEST_CASE("rng streams") {
  Rng a(1), b(1);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng::derive(1, 2) != Rng::derive(1, 3));
  Rng r(9);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(r.index(7) < 7);
  }
}
