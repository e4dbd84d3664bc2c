// Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero on any FAIL.

#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtssl/augment.hpp"
#include "mtssl/cli.hpp"
#include "mtssl/data.hpp"
#include "mtssl/gradcheck.hpp"
#include "mtssl/metrics.hpp"
#include "mtssl/rng.hpp"
#include "mtssl/ssl.hpp"
#include "mtssl/trainer.hpp"

using namespace mtssl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Distribution random_dist(Rng& rng, std::size_t c, double sharpness = 3.0) {
  Distribution p(c);
  double s = 0.0;
  for (double& v : p) s += (v = std::exp(sharpness * rng.normal()));
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

std::size_t oracle_argmax(const Distribution& p) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < p.size(); ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

std::size_t oracle_rank(const Distribution& p, std::size_t c) {
  std::size_t r = 1;
  for (std::size_t o = 0; o < p.size(); ++o)
    if (p[o] > p[c] || (p[o] == p[c] && o < c)) ++r;
  return r;
}

// ---- 1 -----------------------------------------------------------------------

Outcome metric_fidelity() {
  const double rows[][3] = {{0.351, 0.454, 0.396}, {0.292, 0.323, 0.307}, {0.301, 0.399, 0.343}, {0.338, 0.453, 0.387}};
  Outcome o;
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, std::abs(jrbm(r[0], r[1]) - r[2]));
  o.pass = worst <= 0.0005;
  o.detail = "4 rows, worst |diff| " + fmt("%.6f", worst);
  return o;
}

// ---- 2 -----------------------------------------------------------------------

Outcome gradient_correctness() {
  GradcheckOptions opt;
  opt.seeds = 20;
  const auto report = run_gradcheck(1, opt);
  Outcome o;
  o.pass = report.max_relative_error <= 1e-4 && !report.cases.empty();
  for (const auto& c : report.cases) {
    if (c.seeds < 20 || c.active_seeds == 0) o.pass = false;
  }
  o.detail = std::to_string(report.cases.size()) + " configurations x 20 seeds, max relative error " +
             fmt("%.3g", report.max_relative_error);
  return o;
}

// ---- 3 -----------------------------------------------------------------------

Corpus small_corpus(std::size_t per_class, std::size_t unlabelled, std::uint64_t seed) {
  GeneratorConfig g;
  g.emotion_counts.assign(7, per_class);
  g.intent_counts.clear();
  g.unlabelled_count = unlabelled;
  g.separation = 1.0;
  g.signal_noise = 0.5;
  g.min_length = 48;
  g.max_length = 64;
  g.seed = seed;
  return synthesize_corpus(g);
}

Outcome degeneracy() {
  Outcome o;
  // full-match at lambda2 = lambda3 = 0 against fix-match, every field
  Rng rng(31);
  std::size_t mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t classes = 2 + rng.index(8);
    const auto u = random_batch(rng, 1 + rng.index(12), classes);
    LabelledBatch l;
    const std::size_t nl = 1 + rng.index(5);
    for (std::size_t j = 0; j < nl; ++j) {
      l.probs.push_back(random_dist(rng, classes));
      l.labels.push_back(rng.index(classes));
    }
    SslCoefficients c;
    c.tau = rng.uniform(0.0, 1.0);
    c.sigma = rng.uniform(0.0, 1.0);
    c.lambda1 = rng.uniform(0.0, 2.0);
    c.lambda2 = c.lambda3 = 0.0;
    const auto full = fullmatch_loss(l, u, c);
    const auto fix = fixmatch_loss(l, u, c.tau, c.lambda1);
    if (full.total != fix.total || full.l_fix_unsup != fix.l_fix_unsup || full.accepted_count != fix.accepted_count)
      ++mismatches;
  }
  o.pass = mismatches == 0;
  o.detail = "full=fix mismatches " + std::to_string(mismatches) + "/1000";

  // fix-match at tau = 1 against the baseline, parameters after every step
  const Corpus corpus = small_corpus(12, 60, 3);
  TrainConfig base;
  base.method = Method::baseline;
  base.epochs = 4;
  base.lr0 = 3e-3;
  base.hidden = 16;
  base.signal_aug.flip_max_frames = 8;
  base.train_fraction = 0.6;
  base.valid_fraction = 0.2;
  base.test_fraction = 0.2;
  base.seed = 5;
  TrainConfig fix = base;
  fix.method = Method::fixmatch;
  fix.tau = 1.0;
  const auto data = prepare_data(fix, corpus);
  std::vector<std::vector<double>> tb, tf;
  train(base, data, [&](std::size_t, std::size_t, const TwoHeadModel& m) { tb.push_back(m.values); });
  train(fix, data, [&](std::size_t, std::size_t, const TwoHeadModel& m) { tf.push_back(m.values); });
  const bool same_traj = !tb.empty() && tb == tf;
  o.pass = o.pass && same_traj;
  o.detail += std::string("; fix(tau=1)=baseline over ") + std::to_string(tb.size()) + " steps: " +
              (same_traj ? "identical" : "differs");

  // one-model fusion
  std::vector<std::vector<TaskProbs>> one(1);
  for (int s = 0; s < 500; ++s) one[0].push_back(TaskProbs{random_dist(rng, 7), random_dist(rng, 8)});
  const auto fused = margin_fusion(one);
  std::size_t diff = 0;
  for (std::size_t s = 0; s < fused.size(); ++s)
    if (fused[s].emo != argmax(one[0][s].emo) || fused[s].intent != argmax(one[0][s].intent)) ++diff;
  o.pass = o.pass && diff == 0;
  o.detail += "; single-model fusion mismatches " + std::to_string(diff) + "/500";
  return o;
}

// ---- 4 -----------------------------------------------------------------------

double oracle_weighted_f1(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& label,
                          std::size_t classes) {
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == c && label[i] == c;
      fp += pred[i] == c && label[i] != c;
      fn += pred[i] != c && label[i] == c;
    }
    if (tp + fn == 0) continue;
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0, rec = tp / (tp + fn);
    total += (tp + fn) * (prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0);
  }
  return total / static_cast<double>(pred.size());
}

std::pair<std::size_t, std::size_t> oracle_pick(const std::vector<Distribution>& per_model) {
  std::size_t best = 0;
  double best_margin = -1.0;
  for (std::size_t m = 0; m < per_model.size(); ++m) {
    Distribution s = per_model[m];
    std::sort(s.rbegin(), s.rend());
    const double mg = s[0] - s[1];
    if (mg > best_margin) {
      best_margin = mg;
      best = m;
    }
  }
  return {oracle_argmax(per_model[best]), best};
}

Outcome oracle_equivalence() {
  Rng rng(41);
  std::size_t k_bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t classes = 2 + rng.index(8);
    const auto u = random_batch(rng, 1 + rng.index(20), classes);
    const double sigma = rng.uniform(0.0, 1.0);
    std::size_t expect = classes;
    for (std::size_t k = 1; k <= classes; ++k) {
      std::size_t hit = 0;
      for (std::size_t b = 0; b < u.weak.size(); ++b) hit += oracle_rank(u.strong[b], oracle_argmax(u.weak[b])) <= k;
      if (static_cast<double>(hit) / static_cast<double>(u.weak.size()) > sigma) {
        expect = k;
        break;
      }
    }
    if (select_k(u, sigma).k != expect) ++k_bad;
  }

  std::size_t f1_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t classes = 2 + rng.index(7), n = 1 + rng.index(60);
    std::vector<std::size_t> pred(n), label(n);
    for (std::size_t i = 0; i < n; ++i) {
      label[i] = rng.index(classes);
      pred[i] = rng.bernoulli(0.5) ? label[i] : rng.index(classes);
    }
    if (std::abs(weighted_f1(pred, label, classes) - oracle_weighted_f1(pred, label, classes)) > 1e-12) ++f1_bad;
  }

  std::size_t fuse_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t models = 1 + rng.index(5), samples = 1 + rng.index(20);
    std::vector<std::vector<TaskProbs>> table(models);
    for (auto& m : table)
      for (std::size_t s = 0; s < samples; ++s) m.push_back(TaskProbs{random_dist(rng, 7), random_dist(rng, 8)});
    if (models > 1 && rng.bernoulli(0.3)) table[1] = table[0];
    const auto fused = margin_fusion(table);
    for (std::size_t s = 0; s < samples; ++s) {
      std::vector<Distribution> e, i;
      for (const auto& m : table) {
        e.push_back(m[s].emo);
        i.push_back(m[s].intent);
      }
      const auto [ce, me] = oracle_pick(e);
      const auto [ci, mi] = oracle_pick(i);
      if (fused[s].emo != ce || fused[s].emo_source != me || fused[s].intent != ci || fused[s].intent_source != mi) {
        ++fuse_bad;
        break;
      }
    }
  }
  Outcome o;
  o.pass = k_bad == 0 && f1_bad == 0 && fuse_bad == 0;
  o.detail = "select_k " + std::to_string(k_bad) + "/1000, weighted_f1 " + std::to_string(f1_bad) +
             "/100, margin_fusion " + std::to_string(fuse_bad) + "/100 mismatches";
  return o;
}

// ---- 5 -----------------------------------------------------------------------

Outcome structural_invariants() {
  Rng rng(51);
  std::size_t partition_bad = 0, zero_bad = 0;
  double worst_mass = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t classes = 2 + rng.index(8);
    const auto u = random_batch(rng, 1 + rng.index(10), classes);
    SslCoefficients c;
    c.sigma = rng.uniform(0.0, 1.0);
    const auto plan = plan_task(Method::fullmatch, u, c);
    const std::size_t k = plan.selection.k;
    bool ok = true;
    for (std::size_t b = 0; b < u.weak.size(); ++b) {
      const auto& s = plan.samples[b];
      // classes touched by each term
      std::set<std::size_t> fix = {s.pseudo.predicted_class}, ent, neg;
      for (const auto& st : s.soft) ent.insert(st.cls);
      for (std::size_t cls = 0; cls < classes; ++cls)
        if (oracle_rank(u.weak[b], cls) > k) neg.insert(cls);
      std::set<std::size_t> all;
      all.insert(fix.begin(), fix.end());
      all.insert(ent.begin(), ent.end());
      all.insert(neg.begin(), neg.end());
      if (all.size() != classes || fix.size() + ent.size() + neg.size() != classes) ok = false;
      if (oracle_rank(u.weak[b], s.pseudo.predicted_class) != 1) ok = false;
      if (k >= 2) {
        double mass = 0.0;
        for (const auto& st : s.soft) mass += st.target;
        worst_mass = std::max(worst_mass, std::abs(mass - (1.0 - u.strong[b][oracle_argmax(u.weak[b])])));
      }
    }
    if (!ok) ++partition_bad;
    if (adaptive_negative_loss(u, classes) != 0.0) ++zero_bad;
  }
  Outcome o;
  o.pass = partition_bad == 0 && zero_bad == 0 && worst_mass <= 1e-12;
  o.detail = "partition failures " + std::to_string(partition_bad) + "/1000, worst soft-mass error " +
             fmt("%.3g", worst_mass) + ", L_a(k=C) nonzero " + std::to_string(zero_bad) + "/1000";
  return o;
}

// ---- 6 -----------------------------------------------------------------------

Outcome splitting() {
  Outcome o;
  std::vector<std::pair<std::size_t, std::size_t>> neutral(970, {4, 4});
  const auto s = stratified_split(neutral, SplitSpec{0.84, 0.16, 0.0, 1});
  o.pass = s.train.size() == 815 && s.valid.size() == 155 && s.test.empty();
  o.detail = "970 -> " + std::to_string(s.train.size()) + "/" + std::to_string(s.valid.size());

  GeneratorConfig g;
  g.unlabelled_count = 0;
  g.min_length = 2;
  g.max_length = 3;
  const Corpus c = synthesize_corpus(g);
  std::vector<std::pair<std::size_t, std::size_t>> joint;
  for (const auto& smp : c.labelled) joint.emplace_back(*smp.emotion, *smp.intent);
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> sizes;
  for (const auto& j : joint) ++sizes[j];
  double worst = 0.0;
  std::size_t lost = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SplitSpec spec{0.8, 0.1, 0.1, seed};
    const auto sp = stratified_split(joint, spec);
    std::vector<std::size_t> seen(joint.size(), 0);
    std::map<std::pair<std::size_t, std::size_t>, std::array<double, 3>> got;
    for (auto i : sp.train) ++got[joint[i]][0], ++seen[i];
    for (auto i : sp.valid) ++got[joint[i]][1], ++seen[i];
    for (auto i : sp.test) ++got[joint[i]][2], ++seen[i];
    lost += static_cast<std::size_t>(std::count_if(seen.begin(), seen.end(), [](std::size_t v) { return v != 1; }));
    for (const auto& [key, n] : sizes) {
      if (n < 3) continue;  // too small to split; kept in train
      const double dn = static_cast<double>(n);
      const auto& a = got[key];
      worst = std::max({worst, std::abs(a[0] - 0.8 * dn), std::abs(a[1] - 0.1 * dn), std::abs(a[2] - 0.1 * dn)});
    }
  }
  o.pass = o.pass && worst <= 1.0 && lost == 0;
  o.detail += "; " + std::to_string(sizes.size()) + " joint classes x 100 seeds, worst deviation " +
              fmt("%.0f", worst) + ", partition errors " + std::to_string(lost);
  return o;
}

// ---- 7 -----------------------------------------------------------------------

struct SeedResult {
  double baseline = 0, fixmatch = 0, fullmatch = 0;
  bool full_active = true;
};

SeedResult experiment_seed(std::uint64_t seed) {
  GeneratorConfig g;
  g.emotion_counts.assign(7, 72);
  g.intent_counts.clear();
  g.unlabelled_count = 5000;
  g.separation = 2.0;
  g.signal_noise = 0.5;
  g.seed = seed;
  const Corpus corpus = synthesize_corpus(g);

  TrainConfig c;
  c.epochs = 30;
  c.lr0 = 3e-3;
  c.unlabelled_ratio = 4.0;
  c.signal_aug.flip_max_frames = 8;
  c.signal_aug.noise_scale = 0.5;  // the corpus noise level; 0.05 is lost against frames of amplitude ~2
  c.train_fraction = 0.4;
  c.valid_fraction = 0.3;
  c.test_fraction = 0.3;
  c.seed = seed;
  const auto data = prepare_data(c, corpus);

  SeedResult r;
  auto test_jrbm = [&](Method m, TrainResult* keep) {
    TrainConfig mc = c;
    mc.method = m;
    TrainResult tr = train(mc, data);
    const double v = evaluate(tr.best_model, data.test, data.featurizer).jrbm;
    if (keep) *keep = std::move(tr);
    return v;
  };
  r.baseline = test_jrbm(Method::baseline, nullptr);
  r.fixmatch = test_jrbm(Method::fixmatch, nullptr);
  TrainResult full;
  r.fullmatch = test_jrbm(Method::fullmatch, &full);
  // activity is judged on the two-task objective: a task whose weak and strong views agree on
  // more than sigma of the batch has k = 1 and no entropy-meaning classes, which is fine
  for (std::size_t e = 1; e < full.reports.size(); ++e) {
    const auto& rep = full.reports[e];
    if (rep.emo.accepted_count + rep.intent.accepted_count == 0) r.full_active = false;
    if (!(rep.emo.l_neg + rep.intent.l_neg > 0.0)) r.full_active = false;
    if (!(rep.emo.l_ent + rep.intent.l_ent > 0.0)) r.full_active = false;
  }
  return r;
}

Outcome ssl_experiment() {
  Outcome o;
  std::size_t wins = 0;
  bool active = true;
  std::ostringstream d;
  d << "200 train / 5000 unlabelled, test JRBM base/fix/full per seed:";
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = experiment_seed(seed);
    wins += r.fixmatch >= r.baseline;
    active = active && r.full_active;
    d << fmt(" %.3f", r.baseline) << fmt("/%.3f", r.fixmatch) << fmt("/%.3f", r.fullmatch);
  }
  d << "; fixmatch >= baseline in " << wins << "/5; fullmatch terms active every epoch after the first: "
    << (active ? "yes" : "no");
  o.pass = wins >= 4 && active;
  o.detail = d.str();
  return o;
}

// ---- 8 -----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  return run_cli(args, out, err);
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("mtssl_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "gen.cfg") << "emotion_counts = 20,20,20,20,20,20,20\nintent_counts =\nunlabelled_count = 200\n"
                                    "min_length = 48\nmax_length = 64\nseparation = 2\nsignal_noise = 0.5\n";
  std::ofstream(dir / "train.cfg") << "method = fullmatch\nepochs = 5\nlr0 = 0.003\nhidden = 16\nflip_max_frames = 8\n";
  const auto p = [&](const char* n) { return (dir / n).string(); };
  Outcome o;
  bool ran = cli({"gen-data", "--config", p("gen.cfg"), "--out", p("g1")}) == 0 &&
             cli({"gen-data", "--config", p("gen.cfg"), "--out", p("g2")}) == 0;
  ran = ran && cli({"train", "--config", p("train.cfg"), "--corpus", p("g1/corpus.jsonl"), "--out", p("t1")}) == 0 &&
        cli({"train", "--config", p("train.cfg"), "--corpus", p("g1/corpus.jsonl"), "--out", p("t2")}) == 0;
  const bool corpus_same = ran && slurp(dir / "g1/corpus.jsonl") == slurp(dir / "g2/corpus.jsonl") &&
                           !slurp(dir / "g1/corpus.jsonl").empty();
  const bool csv_same = ran && slurp(dir / "t1/epochs.csv") == slurp(dir / "t2/epochs.csv") &&
                        !slurp(dir / "t1/epochs.csv").empty();
  o.pass = corpus_same && csv_same;
  o.detail = std::string("gen-data corpora ") + (corpus_same ? "identical" : "differ") + ", train epoch CSVs " +
             (csv_same ? "identical" : "differ");
  fs::remove_all(dir);
  return o;
}

// ---- 9 -----------------------------------------------------------------------

template <class V>
V sorted(V v) {
  std::sort(v.begin(), v.end());
  return v;
}

bool is_subsequence(const std::vector<std::uint32_t>& sub, const std::vector<std::uint32_t>& full) {
  std::size_t i = 0;
  for (auto t : full)
    if (i < sub.size() && sub[i] == t) ++i;
  return i == sub.size();
}

Outcome augmentation_properties() {
  constexpr int kCases = 1000;
  Rng rng(91);
  std::size_t failures = 0, cases = 0;
  SignalAugmentParams sp;
  sp.flip_max_frames = 64;
  sp.time_mask_max_frames = 32;
  for (AugmentKind k : {AugmentKind::flip, AugmentKind::time_mask, AugmentKind::pitch_shift, AugmentKind::gaussian_noise}) {
    for (int t = 0; t < kCases; ++t, ++cases) {
      SignalSequence s;
      s.frames.resize(1 + rng.index(300));
      for (double& f : s.frames) f = rng.normal();
      const std::uint64_t seed = rng.next_u64();
      Rng a(seed), b(seed);
      const auto out = augment_signal(s, k, sp, a);
      bool ok = out.frames.size() == s.frames.size() && out == augment_signal(s, k, sp, b);
      if (k == AugmentKind::flip) ok = ok && sorted(out.frames) == sorted(s.frames);
      if (!ok) ++failures;
    }
  }
  const std::uint32_t vocab = 50;
  const auto table = EmbeddingTable::generate(9, vocab, 6);
  SynonymLexicon lex;
  lex.synonyms.resize(vocab);
  for (std::uint32_t t = 0; t + 1 < vocab; t += 2) {
    lex.synonyms[t] = {t + 1};
    lex.synonyms[t + 1] = {t};
  }
  TokenAugmentParams tp;
  tp.swap_count = 2;
  tp.delete_prob = 0.3;
  tp.synonym_prob = 0.5;
  tp.contextual_prob = 0.5;
  for (AugmentKind k : {AugmentKind::swap, AugmentKind::remove, AugmentKind::synonym, AugmentKind::contextual}) {
    for (int t = 0; t < kCases; ++t, ++cases) {
      TokenSequence s;
      s.vocab_size = vocab;
      s.tokens.resize(1 + rng.index(40));
      for (auto& x : s.tokens) x = static_cast<std::uint32_t>(rng.index(vocab));
      const std::uint64_t seed = rng.next_u64();
      Rng a(seed), b(seed);
      const auto out = augment_tokens(s, k, tp, lex, table, a);
      bool ok = out == augment_tokens(s, k, tp, lex, table, b) && !out.tokens.empty();
      for (auto x : out.tokens) ok = ok && x < vocab;
      if (k != AugmentKind::remove) ok = ok && out.tokens.size() == s.tokens.size();
      if (k == AugmentKind::swap) ok = ok && sorted(out.tokens) == sorted(s.tokens);
      if (k == AugmentKind::remove) ok = ok && is_subsequence(out.tokens, s.tokens);
      if (!ok) ++failures;
    }
  }
  Outcome o;
  o.pass = failures == 0;
  o.detail = std::to_string(cases) + " cases over 8 operators, " + std::to_string(failures) + " failures";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"metric fidelity", metric_fidelity},
      {"gradient correctness", gradient_correctness},
      {"degeneracy identities", degeneracy},
      {"oracle equivalence", oracle_equivalence},
      {"structural loss invariants", structural_invariants},
      {"splitting", splitting},
      {"desk-scale SSL experiment", ssl_experiment},
      {"determinism", determinism},
      {"augmentation properties", augmentation_properties},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %zu %s: %s (%s) [%.1fs]\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
