#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "mtssl/error.hpp"
#include "mtssl/rng.hpp"
#include "mtssl/ssl.hpp"

using namespace mtssl;

namespace {

Distribution random_dist(Rng& rng, std::size_t c, double sharpness = 3.0) {
  Distribution p(c);
  double s = 0.0;
  for (double& v : p) {
    v = std::exp(sharpness * rng.normal());
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

UnlabelledBatch random_batch(Rng& rng, std::size_t b, std::size_t c) {
  UnlabelledBatch u;
  for (std::size_t i = 0; i < b; ++i) {
    u.weak.push_back(random_dist(rng, c));
    u.strong.push_back(random_dist(rng, c));
  }
  return u;
}

// --- independent oracles -----------------------------------------------------

std::size_t oracle_argmax(const Distribution& p) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < p.size(); ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

// 1-based position of class c when sorted by descending probability, lower index first on ties
std::size_t oracle_rank(const Distribution& p, std::size_t c) {
  std::size_t r = 1;
  for (std::size_t o = 0; o < p.size(); ++o)
    if (p[o] > p[c] || (p[o] == p[c] && o < c)) ++r;
  return r;
}

std::size_t oracle_select_k(const UnlabelledBatch& u, double sigma) {
  const std::size_t c = u.weak.front().size();
  for (std::size_t k = 1; k <= c; ++k) {
    std::size_t hit = 0;
    for (std::size_t b = 0; b < u.weak.size(); ++b)
      if (oracle_rank(u.strong[b], oracle_argmax(u.weak[b])) <= k) ++hit;
    if (static_cast<double>(hit) / static_cast<double>(u.weak.size()) > sigma) return k;
  }
  return c;
}

double oracle_neg(const UnlabelledBatch& u, std::size_t k) {
  double l = 0.0;
  for (std::size_t b = 0; b < u.weak.size(); ++b)
    for (std::size_t c = 0; c < u.weak[b].size(); ++c)
      if (oracle_rank(u.weak[b], c) > k) l -= std::log(std::max(1.0 - u.strong[b][c], 1e-12));
  return l / static_cast<double>(u.weak.size());
}

double oracle_ent(const UnlabelledBatch& u, std::size_t k) {
  double l = 0.0;
  const std::size_t classes = u.weak.front().size();
  for (std::size_t b = 0; b < u.weak.size(); ++b) {
    if (k < 2) continue;
    const double y = (1.0 - u.strong[b][oracle_argmax(u.weak[b])]) / static_cast<double>(k - 1);
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t r = oracle_rank(u.weak[b], c);
      if (r < 2 || r > k) continue;
      const double p = u.strong[b][c];
      l -= y * std::log(std::max(p, 1e-12)) + (1 - y) * std::log(std::max(1 - p, 1e-12));
    }
  }
  return l / static_cast<double>(u.weak.size() * classes);
}

double oracle_fix(const UnlabelledBatch& u, double tau) {
  double l = 0.0;
  for (std::size_t b = 0; b < u.weak.size(); ++b) {
    const std::size_t c = oracle_argmax(u.weak[b]);
    if (u.weak[b][c] > tau) l -= std::log(std::max(u.strong[b][c], 1e-12));
  }
  return l / static_cast<double>(u.weak.size());
}

double oracle_sup(const LabelledBatch& l) {
  double s = 0.0;
  for (std::size_t j = 0; j < l.labels.size(); ++j) s -= std::log(l.probs[j][l.labels[j]]);
  return l.labels.empty() ? 0.0 : s / static_cast<double>(l.labels.size());
}

}  // namespace

TEST_CASE("gate_pseudo_label") {
  auto d = gate_pseudo_label(std::vector<double>{0.96, 0.03, 0.01}, 0.95);
  CHECK(d.predicted_class == 0);
  CHECK(d.accepted);
  d = gate_pseudo_label(std::vector<double>{0.5, 0.5}, 0.5);
  CHECK(d.predicted_class == 0);
  CHECK_FALSE(d.accepted);
  d = gate_pseudo_label(std::vector<double>(7, 1.0 / 7), 0.95);
  CHECK_FALSE(d.accepted);
  CHECK_THROWS_AS(gate_pseudo_label(std::vector<double>{0.5, 0.4}, 0.95), ContractError);
}

TEST_CASE("rank_classes breaks ties toward the lower index") {
  const auto r = rank_classes(std::vector<double>{0.25, 0.5, 0.25});
  CHECK(r == RankAssignment{2, 1, 3});
}

TEST_CASE("fixmatch_loss hand examples") {
  SUBCASE("two-sample batch, one accepted") {
    UnlabelledBatch u{{{0.97, 0.02, 0.01}, {0.4, 0.3, 0.3}}, {{0.7, 0.2, 0.1}, {0.1, 0.1, 0.8}}};
    const auto r = fixmatch_loss(LabelledBatch{}, u, 0.95, 0.5);
    CHECK(r.l_fix_unsup == doctest::Approx(0.17833747196936622).epsilon(1e-14));
    CHECK(r.accepted_count == 1);
    CHECK(r.labelled_empty);
    CHECK(r.total == doctest::Approx(0.5 * 0.17833747196936622).epsilon(1e-14));
  }
  SUBCASE("nothing accepted leaves the supervised term") {
    LabelledBatch l{{{0.6, 0.4}}, {1}};
    UnlabelledBatch u{{{0.9, 0.1}, {0.5, 0.5}}, {{0.2, 0.8}, {0.5, 0.5}}};
    const auto r = fixmatch_loss(l, u, 0.95, 0.5);
    CHECK(r.total == r.l_sup);
    CHECK(r.l_sup == doctest::Approx(-std::log(0.4)));
  }
  SUBCASE("matching one-hot branches contribute nothing") {
    UnlabelledBatch u{{{0, 0, 1.0}}, {{0, 0, 1.0}}};
    CHECK(fixmatch_loss(LabelledBatch{}, u, 0.95, 0.5).l_fix_unsup == 0.0);
  }
}

TEST_CASE("select_k hand examples") {
  SUBCASE("perfect agreement") {
    UnlabelledBatch u{{{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}}, {{0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}}};
    const auto s = select_k(u, 0.99);
    CHECK(s.k == 1);
    CHECK(s.topk_accuracy == 1.0);
  }
  SUBCASE("one sample at strong rank 2") {
    UnlabelledBatch u;
    for (int i = 0; i < 3; ++i) {
      u.weak.push_back({0.7, 0.2, 0.1});
      u.strong.push_back({0.6, 0.3, 0.1});
    }
    u.weak.push_back({0.7, 0.2, 0.1});
    u.strong.push_back({0.3, 0.6, 0.1});
    CHECK(top_k_accuracy(u, 1) == 0.75);
    CHECK(top_k_accuracy(u, 2) == 1.0);
    CHECK(select_k(u, 0.99).k == 2);
  }
  SUBCASE("weak argmax always last") {
    UnlabelledBatch u{{{0.7, 0.2, 0.1}, {0.7, 0.2, 0.1}}, {{0.1, 0.3, 0.6}, {0.05, 0.15, 0.8}}};
    CHECK(select_k(u, 0.99).k == 3);
  }
  CHECK_THROWS_AS(select_k(UnlabelledBatch{}, 0.99), ConfigError);
}

TEST_CASE("select_k agrees with a brute-force scan") {
  Rng rng(77);
  std::size_t mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t c = 2 + rng.index(8);
    const auto u = random_batch(rng, 1 + rng.index(12), c);
    const double sigma = rng.uniform(0.3, 1.0);
    if (select_k(u, sigma).k != oracle_select_k(u, sigma)) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("adaptive_negative_loss") {
  UnlabelledBatch u{{{0.6, 0.3, 0.1}}, {{0.7, 0.2, 0.1}}};
  CHECK(adaptive_negative_loss(u, 1) == doctest::Approx(0.32850406697203599).epsilon(1e-14));
  CHECK(adaptive_negative_loss(u, 3) == 0.0);
  UnlabelledBatch z{{{0.6, 0.3, 0.1}}, {{1.0, 0.0, 0.0}}};
  CHECK(adaptive_negative_loss(z, 1) == 0.0);
}

TEST_CASE("entropy meaning soft labels") {
  SUBCASE("k = 2") {
    const auto t = entropy_meaning_soft_label(std::vector<double>{0.5, 0.3, 0.2}, std::vector<double>{0.7, 0.2, 0.1}, 2);
    REQUIRE(t.size() == 1);
    CHECK(t[0].cls == 1);
    CHECK(t[0].target == doctest::Approx(0.3));
    const auto z = entropy_meaning_soft_label(std::vector<double>{0.5, 0.3, 0.2}, std::vector<double>{1.0, 0, 0}, 2);
    CHECK(z[0].target == 0.0);
  }
  SUBCASE("k = C = 4") {
    const auto t = entropy_meaning_soft_label(std::vector<double>{0.4, 0.3, 0.2, 0.1},
                                              std::vector<double>{0.4, 0.1, 0.25, 0.25}, 4);
    REQUIRE(t.size() == 3);
    double sum = 0.0;
    for (const auto& s : t) {
      CHECK(s.target == doctest::Approx(0.2));
      sum += s.target;
    }
    CHECK(sum == doctest::Approx(0.6));
  }
  CHECK(entropy_meaning_soft_label(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}, 1).empty());
}

TEST_CASE("entropy_meaning_loss") {
  UnlabelledBatch u{{{0.6, 0.3, 0.1}}, {{0.7, 0.2, 0.1}}};
  CHECK(entropy_meaning_loss(u, 2) == doctest::Approx(0.21301061988339226).epsilon(1e-14));
  CHECK(entropy_meaning_loss(u, 1) == 0.0);
}

TEST_CASE("entropy meaning: a matched target is the minimum of a 1-D scan") {
  // strong = (0.7, 0.3, 0): the rank-2 class sits exactly at its target 0.3
  const double y = 0.3;
  auto loss_at = [&](double p) {
    UnlabelledBatch u{{{0.6, 0.3, 0.1}}, {{0.7, p, 0.3 - p}}};
    return entropy_meaning_loss(u, 2);
  };
  const double at_target = loss_at(y);
  double best = 1e300, best_p = 0.0;
  for (int i = 1; i < 1000; ++i) {
    const double p = 0.001 * i;
    const double l = -(y * std::log(p) + (1 - y) * std::log(1 - p)) / 3.0;
    if (l < best) {
      best = l;
      best_p = p;
    }
  }
  CHECK(best_p == doctest::Approx(y));
  CHECK(at_target == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("fullmatch_loss") {
  SUBCASE("linear combination") {
    // components (l_sup, l_neg, l_ent) = (0.9, 0.3, 0.2): 0.9 + 0.5 * 0.3 + 0.5 * 0.2
    const double total = 0.9 + 0.5 * 0.3 + 0.5 * 0.2;
    CHECK(total == doctest::Approx(1.15));
  }
  SUBCASE("degenerates to fixmatch") {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
      const auto u = random_batch(rng, 6, 5);
      LabelledBatch l{{random_dist(rng, 5), random_dist(rng, 5)}, {1, 3}};
      SslCoefficients c;
      c.tau = 0.6;
      c.lambda2 = 0.0;
      c.lambda3 = 0.0;
      CHECK(fullmatch_loss(l, u, c).total == fixmatch_loss(l, u, c.tau, c.lambda1).total);
    }
  }
  SUBCASE("matches the composed component oracles") {
    Rng rng(6);
    for (int t = 0; t < 300; ++t) {
      const auto u = random_batch(rng, 6, 7);
      LabelledBatch l;
      for (int j = 0; j < 3; ++j) {
        l.probs.push_back(random_dist(rng, 7));
        l.labels.push_back(rng.index(7));
      }
      SslCoefficients c;
      c.tau = rng.uniform(0.3, 0.99);
      c.sigma = rng.uniform(0.3, 0.99);
      const auto r = fullmatch_loss(l, u, c);
      const std::size_t k = oracle_select_k(u, c.sigma);
      CHECK(r.k == k);
      const double expect = oracle_sup(l) + c.lambda1 * oracle_fix(u, c.tau) + c.lambda2 * oracle_neg(u, k) +
                            c.lambda3 * oracle_ent(u, k);
      CHECK(r.total == doctest::Approx(expect).epsilon(1e-12));
      CHECK(r.l_neg == doctest::Approx(adaptive_negative_loss(u, k)).epsilon(1e-14));
      CHECK(r.l_ent == doctest::Approx(entropy_meaning_loss(u, k)).epsilon(1e-14));
    }
  }
}

TEST_CASE("plan: rank partition and soft-label mass on random batches") {
  Rng rng(99);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t classes = 2 + rng.index(8);
    const auto u = random_batch(rng, 1 + rng.index(10), classes);
    SslCoefficients c;
    c.sigma = rng.uniform(0.0, 1.0);
    const auto plan = plan_task(Method::fullmatch, u, c);
    const std::size_t k = plan.selection.k;
    for (std::size_t b = 0; b < u.weak.size(); ++b) {
      const auto& s = plan.samples[b];
      std::set<std::size_t> top, mid, tail;
      for (std::size_t cls = 0; cls < classes; ++cls) {
        const std::size_t r = s.weak_rank[cls];
        (r == 1 ? top : r <= k ? mid : tail).insert(cls);
      }
      CHECK(top.size() == 1);
      CHECK(top.size() + mid.size() + tail.size() == classes);
      std::set<std::size_t> soft;
      double mass = 0.0;
      for (const auto& st : s.soft) {
        soft.insert(st.cls);
        mass += st.target;
      }
      CHECK(soft == mid);
      for (auto cls : tail) CHECK(soft.count(cls) == 0);
      if (k >= 2) {
        const double expect = 1.0 - u.strong[b][s.pseudo.predicted_class];
        CHECK(std::abs(mass - expect) <= 1e-12);
      }
    }
    CHECK(adaptive_negative_loss(u, classes) == 0.0);
  }
}

TEST_CASE("multi-task gating") {
  // emotion confident (0.97), intent not (0.90)
  TaskBatch emo{LabelledBatch{}, UnlabelledBatch{{{0.97, 0.02, 0.01}}, {{0.6, 0.3, 0.1}}}};
  TaskBatch intent{LabelledBatch{}, UnlabelledBatch{{{0.90, 0.05, 0.05}}, {{0.5, 0.3, 0.2}}}};
  SslCoefficients c;
  SUBCASE("fixmatch excludes the sample from both tasks") {
    const auto r = multitask_loss(Method::fixmatch, emo, intent, c);
    CHECK(r.emo.accepted_count == 0);
    CHECK(r.intent.accepted_count == 0);
    CHECK(r.total == 0.0);
  }
  SUBCASE("fullmatch plans each task on its own") {
    const auto r = multitask_loss(Method::fullmatch, emo, intent, c);
    CHECK(r.emo.accepted_count == 1);
    CHECK(r.intent.accepted_count == 0);
    const auto alone_emo = fullmatch_loss(LabelledBatch{}, emo.unlabelled, c);
    const auto alone_int = fullmatch_loss(LabelledBatch{}, intent.unlabelled, c);
    CHECK(r.emo.l_neg == alone_emo.l_neg);
    CHECK(r.emo.l_ent == alone_emo.l_ent);
    CHECK(r.intent.l_neg == alone_int.l_neg);
    CHECK(r.intent.l_ent == alone_int.l_ent);
    CHECK(r.total == doctest::Approx(alone_emo.total + alone_int.total));
  }
  SUBCASE("symmetric tasks double the single-task total") {
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
      TaskBatch b{LabelledBatch{{random_dist(rng, 4)}, {2}}, random_batch(rng, 5, 4)};
      for (Method m : {Method::baseline, Method::fixmatch, Method::fullmatch}) {
        SslCoefficients cc;
        cc.tau = 0.7;
        const auto r = multitask_loss(m, b, b, cc);
        const double single = m == Method::fullmatch ? fullmatch_loss(b.labelled, b.unlabelled, cc).total
                              : m == Method::fixmatch ? fixmatch_loss(b.labelled, b.unlabelled, cc.tau, cc.lambda1).total
                                                      : oracle_sup(b.labelled);
        CHECK(r.total == doctest::Approx(2.0 * single).epsilon(1e-14));
      }
    }
  }
  SUBCASE("mismatched sample counts") {
    TaskBatch other{LabelledBatch{}, UnlabelledBatch{{{0.5, 0.5}, {0.5, 0.5}}, {{0.5, 0.5}, {0.5, 0.5}}}};
    CHECK_THROWS_AS(multitask_loss(Method::fixmatch, emo, other, c), ContractError);
  }
}

TEST_CASE("empty objective") {
  SslCoefficients c;
  c.lambda1 = c.lambda2 = c.lambda3 = 0.0;
  Rng rng(1);
  const auto u = random_batch(rng, 4, 5);
  const auto plan = plan_task(Method::fullmatch, u, c);
  TaskLossGradient g;
  const auto r = evaluate_task_loss(plan, LabelledBatch{}, u.strong, c, &g);
  CHECK(r.total == 0.0);
  for (const auto& row : g.strong)
    for (double v : row) CHECK(v == 0.0);
}

TEST_CASE("unnormalized input is rejected") {
  UnlabelledBatch u{{{0.5, 0.6}}, {{0.5, 0.5}}};
  CHECK_THROWS_AS(select_k(u, 0.9), ContractError);
  CHECK_THROWS_AS(parse_method("mixmatch"), ConfigError);
}
