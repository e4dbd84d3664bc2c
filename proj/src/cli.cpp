#include "mtssl/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtssl/error.hpp"
#include "mtssl/gradcheck.hpp"
#include "mtssl/io.hpp"

namespace mtssl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kCheckpointFormat = "mtssl-checkpoint";
constexpr const char* kPredictionFormat = "mtssl-predictions";
constexpr double kGradcheckTolerance = 1e-4;

std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json matrix_json(const ConfusionMatrix& m) {
  json rows = json::array();
  for (std::size_t t = 0; t < m.classes; ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < m.classes; ++p) row.push_back(m.at(t, p));
    rows.push_back(row);
  }
  return rows;
}

json metrics_json(const MetricsReport& r) {
  return json{{"f1_emo", r.f1_emo},
              {"f1_intent", r.f1_intent},
              {"jrbm", r.jrbm},
              {"confusion_emo", matrix_json(r.confusion_emo)},
              {"confusion_intent", matrix_json(r.confusion_intent)}};
}

void write_json(const fs::path& path, const json& j) { atomic_write(path, j.dump(2) + "\n"); }

void write_confusions(const fs::path& dir, const MetricsReport& r, const std::vector<std::string>& emo_names,
                      const std::vector<std::string>& intent_names) {
  atomic_write(dir / "confusion_emo.csv", [&](std::ostream& o) { write_confusion_csv(o, r.confusion_emo, emo_names); });
  atomic_write(dir / "confusion_intent.csv",
               [&](std::ostream& o) { write_confusion_csv(o, r.confusion_intent, intent_names); });
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw Error(std::string(what) + " '" + path + "' does not exist");
}

// Train config with modality-appropriate augmentation defaults for keys left unset.
TrainConfig train_config_with_defaults(std::span<const ConfigEntry> entries) {
  TrainConfig cfg;
  bool weak_set = false, strong_set = false;
  for (const auto& e : entries) {
    if (!cfg.apply(e)) throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    weak_set |= e.key == "weak_aug_kind";
    strong_set |= e.key == "strong_aug_kind";
  }
  if (cfg.modality == Modality::tokens) {
    if (!weak_set) cfg.weak_aug_kind = AugmentKind::swap;
    if (!strong_set) cfg.strong_aug_kind = AugmentKind::contextual;
  }
  return cfg;
}

std::string key_table(const std::vector<std::pair<std::string, std::string>>& help,
                      const std::vector<std::pair<std::string, std::string>>& defaults) {
  std::map<std::string, std::string> def(defaults.begin(), defaults.end());
  std::ostringstream s;
  for (const auto& [key, text] : help) {
    s << "  " << key;
    if (auto it = def.find(key); it != def.end()) s << " = " << it->second;
    s << "\n      " << text << "\n";
  }
  return s.str();
}

std::string train_keys_footer() {
  return "Config keys (key = value, one per line; unknown keys are errors):\n" +
         key_table(train_config_help(), TrainConfig{}.entries());
}

std::string generator_keys_footer() {
  const GeneratorConfig d;
  auto list = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  const std::vector<std::pair<std::string, std::string>> help = {
      {"emotion_counts", "labelled samples per emotion class (comma-separated)"},
      {"intent_counts", "labelled samples per intent class; empty derives intent from emotion"},
      {"unlabelled_count", "number of unlabelled samples"},
      {"min_length", "shortest sequence (frames or tokens)"},
      {"max_length", "longest sequence (frames or tokens)"},
      {"separation", "class-evidence scale; 0 makes classes indistinguishable"},
      {"correlation", "emotion-intent coupling in [0, 1]"},
      {"signal_noise", "per-frame noise standard deviation"},
      {"sample_rate", "signal sample rate in Hz"},
      {"vocab_size", "token vocabulary size"},
      {"embedding_dim", "embedding table width"},
      {"topic_size", "tokens per class topic block"},
      {"modality", "signal | tokens | paired"},
      {"seed", "generator seed"},
  };
  const std::vector<std::pair<std::string, std::string>> defaults = {
      {"emotion_counts", list(d.emotion_counts)},
      {"intent_counts", list(d.intent_counts)},
      {"unlabelled_count", std::to_string(d.unlabelled_count)},
      {"min_length", std::to_string(d.min_length)},
      {"max_length", std::to_string(d.max_length)},
      {"separation", real_text(d.separation)},
      {"correlation", real_text(d.correlation)},
      {"signal_noise", real_text(d.signal_noise)},
      {"sample_rate", std::to_string(d.sample_rate)},
      {"vocab_size", std::to_string(d.vocab_size)},
      {"embedding_dim", std::to_string(d.embedding_dim)},
      {"topic_size", std::to_string(d.topic_size)},
      {"modality", "signal"},
      {"seed", "0"},
  };
  return "Config keys (key = value, one per line; unknown keys are errors):\n" + key_table(help, defaults);
}

// ---- shared training/evaluation plumbing ----------------------------------

struct EvaluatedModel {
  TrainResult result;
  PreparedData data;
  MetricsReport test;
  std::vector<TaskProbs> valid_probs;
  std::vector<TaskProbs> test_probs;
};

EvaluatedModel train_and_evaluate(const TrainConfig& config, const Corpus& corpus) {
  EvaluatedModel em;
  em.data = prepare_data(config, corpus);
  em.result = train(config, em.data);
  em.valid_probs = predict(em.result.best_model, em.data.valid, em.data.featurizer);
  em.test_probs = predict(em.result.best_model, em.data.test, em.data.featurizer);
  if (!em.data.test.empty()) em.test = evaluate(em.result.best_model, em.data.test, em.data.featurizer);
  return em;
}

// ---- subcommands -----------------------------------------------------------

struct Options {
  std::string config;
  std::string out;
  std::string corpus;
  std::vector<std::string> checkpoints;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_gen_data(const Options& opt, std::ostream& out) {
  GeneratorConfig cfg;
  if (!opt.config.empty()) {
    require_file(opt.config, "config file");
    cfg = generator_config_from(load_config_file(opt.config));
  }
  if (opt.seed_given) cfg.seed = opt.seed;
  cfg.validate();
  const Corpus corpus = synthesize_corpus(cfg);
  const fs::path path = fs::path(opt.out) / "corpus.jsonl";
  save_corpus(corpus, path);
  out << "wrote " << path.string() << " (" << corpus.labelled.size() << " labelled, " << corpus.unlabelled.size()
      << " unlabelled records)\n";
  return 0;
}

int cmd_train(const Options& opt, std::ostream& out) {
  require_file(opt.config, "config file");
  require_file(opt.corpus, "corpus file");
  TrainConfig cfg = train_config_with_defaults(load_config_file(opt.config));
  if (opt.seed_given) cfg.seed = opt.seed;
  cfg.validate();
  const Corpus corpus = load_corpus(opt.corpus);
  const EvaluatedModel em = train_and_evaluate(cfg, corpus);
  const fs::path dir(opt.out);

  for (const auto& w : em.data.warnings) out << "warning: " << w << "\n";
  save_checkpoint(Checkpoint{em.result.best_model, cfg, em.result.best_epoch, em.result.best_valid_jrbm},
                  dir / "model.json");
  atomic_write(dir / "epochs.csv", [&](std::ostream& o) { write_epoch_csv(o, em.result.reports); });
  save_predictions(make_prediction_file("valid", corpus, cfg.modality, em.result.best_valid_jrbm, em.data.valid,
                                        em.valid_probs),
                   dir / "predictions_valid.jsonl");
  save_predictions(make_prediction_file("test", corpus, cfg.modality, em.result.best_valid_jrbm, em.data.test,
                                        em.test_probs),
                   dir / "predictions_test.jsonl");

  json summary;
  summary["config"] = json::object();
  for (const auto& [k, v] : cfg.entries()) summary["config"][k] = v;
  summary["best_epoch"] = em.result.best_epoch;
  summary["best_valid_jrbm"] = em.result.best_valid_jrbm;
  summary["sizes"] = {{"train", em.data.train.size()},
                      {"valid", em.data.valid.size()},
                      {"test", em.data.test.size()},
                      {"unlabelled", em.data.unlabelled.size()}};
  if (!em.data.test.empty()) summary["test"] = metrics_json(em.test);
  json epochs = json::array();
  for (const auto& r : em.result.reports) {
    epochs.push_back({{"epoch", r.epoch},
                      {"lr", r.lr},
                      {"loss_total", r.mean_total},
                      {"acceptance_rate_emo", r.acceptance_rate_emo},
                      {"acceptance_rate_intent", r.acceptance_rate_intent},
                      {"k_histogram_emo", r.k_histogram_emo},
                      {"k_histogram_intent", r.k_histogram_intent},
                      {"valid_jrbm", r.valid.jrbm}});
  }
  summary["epochs"] = epochs;
  write_json(dir / "summary.json", summary);
  if (!em.data.test.empty()) {
    write_confusions(dir, em.test, corpus.emotion_labels, corpus.intent_labels);
  }
  out << "best epoch " << em.result.best_epoch << ", valid JRBM " << em.result.best_valid_jrbm;
  if (!em.data.test.empty()) out << ", test JRBM " << em.test.jrbm;
  out << "\n";
  return 0;
}

int cmd_eval(const Options& opt, std::ostream& out) {
  if (opt.checkpoints.size() != 1) throw ConfigError("eval takes exactly one --checkpoints model file");
  require_file(opt.checkpoints.front(), "checkpoint");
  require_file(opt.corpus, "corpus file");
  const Checkpoint ckpt = load_checkpoint(opt.checkpoints.front());
  const Corpus corpus = load_corpus(opt.corpus);
  const PreparedData data = prepare_data(ckpt.config, corpus);
  if (data.featurizer.dim() != ckpt.model.shape.input_dim) throw Error("checkpoint does not match the corpus features");
  const fs::path dir(opt.out);
  json metrics;
  for (const auto& [name, samples] : {std::pair{"valid", &data.valid}, std::pair{"test", &data.test}}) {
    if (samples->empty()) continue;
    const MetricsReport r = evaluate(ckpt.model, *samples, data.featurizer);
    metrics[name] = metrics_json(r);
    const auto probs = predict(ckpt.model, *samples, data.featurizer);
    save_predictions(make_prediction_file(name, corpus, ckpt.config.modality, ckpt.valid_jrbm, *samples, probs),
                     dir / (std::string("predictions_") + name + ".jsonl"));
    if (std::string(name) == "test") {
      write_confusions(dir, r, corpus.emotion_labels, corpus.intent_labels);
      out << "test F1 emo " << r.f1_emo << ", F1 intent " << r.f1_intent << ", JRBM " << r.jrbm << "\n";
    }
  }
  write_json(dir / "metrics.json", metrics);
  return 0;
}

int cmd_fuse(const Options& opt, std::ostream& out) {
  if (opt.checkpoints.size() < 2) throw ConfigError("fuse needs at least two --checkpoints prediction files");
  std::size_t best = 0;
  if (!opt.config.empty()) {
    require_file(opt.config, "config file");
    for (const auto& e : load_config_file(opt.config)) {
      if (e.key != "best") throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
      best = parse_unsigned(e);
    }
  }
  for (const auto& p : opt.checkpoints) require_file(p, "prediction file");
  std::vector<PredictionFile> files;
  for (const auto& p : opt.checkpoints) files.push_back(load_predictions(p));
  const auto chosen = rank_by_valid_jrbm(files, best);
  std::vector<PredictionFile> selected;
  for (auto i : chosen) selected.push_back(files[i]);
  const FusionResult fused = fuse_predictions(selected);

  const fs::path dir(opt.out);
  json j = metrics_json(fused.metrics);
  j["sources"] = json::array();
  for (auto i : chosen) j["sources"].push_back(opt.checkpoints[i]);
  write_json(dir / "fused_metrics.json", j);
  write_confusions(dir, fused.metrics, selected.front().emotion_labels, selected.front().intent_labels);
  atomic_write(dir / "fused_predictions.jsonl", [&](std::ostream& o) {
    for (std::size_t s = 0; s < fused.ids.size(); ++s) {
      o << json{{"id", fused.ids[s]},
                {"emotion", fused.predictions[s].emo},
                {"intent", fused.predictions[s].intent},
                {"emotion_source", fused.predictions[s].emo_source},
                {"intent_source", fused.predictions[s].intent_source}}
               .dump()
        << "\n";
    }
  });
  out << "fused " << selected.size() << " models: F1 emo " << fused.metrics.f1_emo << ", F1 intent "
      << fused.metrics.f1_intent << ", JRBM " << fused.metrics.jrbm << "\n";
  return 0;
}

struct SweepCell {
  Method method = Method::baseline;
  AugmentKind weak = AugmentKind::identity;
  bool weak_on_unlabelled = true;
  TrainConfig config;
  EvaluatedModel model;
};

std::string cell_name(const SweepCell& c) {
  if (c.method == Method::baseline) return "baseline";
  return std::string(to_string(c.method)) + "_" + std::string(to_string(c.weak)) + (c.weak_on_unlabelled ? "_w" : "_wo");
}

int cmd_sweep(const Options& opt, std::ostream& out) {
  require_file(opt.config, "config file");
  require_file(opt.corpus, "corpus file");
  std::vector<ConfigEntry> base_entries;
  std::vector<Method> methods = {Method::fixmatch, Method::fullmatch};
  std::vector<AugmentKind> kinds;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  for (const auto& e : load_config_file(opt.config)) {
    if (e.key == "methods") {
      methods.clear();
      for (const auto& m : parse_list(e)) methods.push_back(parse_method(m));
    } else if (e.key == "weak_aug_kinds") {
      for (const auto& k : parse_list(e)) kinds.push_back(parse_augment_kind(k));
    } else if (e.key == "threads") {
      threads = std::max<std::size_t>(1, parse_unsigned(e));
    } else {
      base_entries.push_back(e);
    }
  }
  TrainConfig base = train_config_with_defaults(base_entries);
  if (opt.seed_given) base.seed = opt.seed;
  base.validate();
  if (kinds.empty()) {
    kinds = base.modality == Modality::signal
                ? std::vector<AugmentKind>{AugmentKind::flip, AugmentKind::time_mask, AugmentKind::pitch_shift}
                : std::vector<AugmentKind>{AugmentKind::swap, AugmentKind::remove, AugmentKind::synonym};
  }
  const Corpus corpus = load_corpus(opt.corpus);

  std::vector<SweepCell> cells;
  SweepCell baseline;
  baseline.config = base;
  baseline.config.method = Method::baseline;
  cells.push_back(baseline);
  for (Method m : methods) {
    if (m == Method::baseline) continue;
    for (AugmentKind k : kinds) {
      for (bool on : {false, true}) {
        SweepCell c;
        c.method = m;
        c.weak = k;
        c.weak_on_unlabelled = on;
        c.config = base;
        c.config.method = m;
        c.config.weak_aug_kind = k;
        c.config.weak_aug_on_unlabelled = on;
        c.config.validate();
        cells.push_back(c);
      }
    }
  }

  // each cell trains independently; up to `threads` at a time
  for (std::size_t start = 0; start < cells.size(); start += threads) {
    std::vector<std::future<void>> running;
    for (std::size_t i = start; i < std::min(cells.size(), start + threads); ++i) {
      running.push_back(std::async(std::launch::async, [&cells, &corpus, i] {
        cells[i].model = train_and_evaluate(cells[i].config, corpus);
      }));
    }
    for (auto& f : running) f.get();
  }

  const fs::path dir(opt.out);
  for (const auto& c : cells) {
    atomic_write(dir / "cells" / (cell_name(c) + ".csv"),
                 [&](std::ostream& o) { write_epoch_csv(o, c.model.result.reports); });
  }

  auto group = [](std::ostream& o, double valid_jrbm, const MetricsReport& test) {
    o << ',' << real_text(valid_jrbm) << ',' << real_text(test.f1_emo) << ',' << real_text(test.f1_intent) << ','
      << real_text(test.jrbm);
  };
  // Fusion rows: within one ablation group, fuse the `n` cells with the best validation JRBM.
  auto fuse_group = [&](bool on, std::size_t n) {
    std::vector<const SweepCell*> pool;
    for (const auto& c : cells) {
      if (c.method == Method::baseline || c.weak_on_unlabelled == on) pool.push_back(&c);
    }
    std::stable_sort(pool.begin(), pool.end(), [](const SweepCell* a, const SweepCell* b) {
      return a->model.result.best_valid_jrbm > b->model.result.best_valid_jrbm;
    });
    pool.resize(std::min(n, pool.size()));
    std::vector<std::vector<TaskProbs>> valid, test;
    for (const auto* c : pool) {
      valid.push_back(c->model.valid_probs);
      test.push_back(c->model.test_probs);
    }
    const auto& ref = pool.front()->model.data;
    auto score = [&](const std::vector<std::vector<TaskProbs>>& probs, const std::vector<Sample>& samples) {
      const auto fused = margin_fusion(probs);
      std::vector<std::size_t> pe, le, pi, li;
      for (std::size_t s = 0; s < samples.size(); ++s) {
        pe.push_back(fused[s].emo);
        pi.push_back(fused[s].intent);
        le.push_back(*samples[s].emotion);
        li.push_back(*samples[s].intent);
      }
      return make_report(pe, le, ref.emo_classes, pi, li, ref.intent_classes);
    };
    return std::pair{score(valid, ref.valid).jrbm, score(test, ref.test)};
  };

  std::ostringstream table;
  table << "method,augment,wo_valid_jrbm,wo_test_f1_emo,wo_test_f1_intent,wo_test_jrbm,"
           "w_valid_jrbm,w_test_f1_emo,w_test_f1_intent,w_test_jrbm\n";
  const auto& b = cells.front().model;
  table << "baseline,-";
  group(table, b.result.best_valid_jrbm, b.test);
  group(table, b.result.best_valid_jrbm, b.test);
  table << '\n';
  for (std::size_t i = 1; i + 1 < cells.size(); i += 2) {
    const auto& wo = cells[i];
    const auto& w = cells[i + 1];
    table << to_string(wo.method) << ',' << to_string(wo.weak);
    group(table, wo.model.result.best_valid_jrbm, wo.model.test);
    group(table, w.model.result.best_valid_jrbm, w.model.test);
    table << '\n';
  }
  if (!b.data.valid.empty() && !b.data.test.empty()) {
    for (std::size_t n : {2, 4}) {
      const auto [wo_valid, wo_test] = fuse_group(false, n);
      const auto [w_valid, w_test] = fuse_group(true, n);
      table << "best" << n << ",fusion";
      group(table, wo_valid, wo_test);
      group(table, w_valid, w_test);
      table << '\n';
    }
  }
  atomic_write(dir / "table.csv", table.str());
  out << table.str();
  return 0;
}

int cmd_gradcheck(const Options& opt, std::ostream& out) {
  const GradcheckReport report = run_gradcheck(opt.seed);
  for (const auto& c : report.cases) {
    out << c.name << ": max relative error " << c.max_relative_error << " over " << c.seeds << " seeds ("
        << c.active_seeds << " with the term active)\n";
  }
  out << "max relative error " << report.max_relative_error << "\n";
  if (report.max_relative_error > kGradcheckTolerance) {
    out << "FAILED: exceeds " << kGradcheckTolerance << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

// ---- file formats ----------------------------------------------------------

void save_checkpoint(const Checkpoint& c, const fs::path& path) {
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = 1;
  const ModelShape& s = c.model.shape;
  j["shape"] = {{"input_dim", s.input_dim},
                {"hidden", s.hidden},
                {"emo_classes", s.emo_classes},
                {"intent_classes", s.intent_classes}};
  j["parameters"] = c.model.values;
  j["config"] = json::object();
  for (const auto& [k, v] : c.config.entries()) j["config"][k] = v;
  j["best_epoch"] = c.best_epoch;
  j["valid_jrbm"] = c.valid_jrbm;
  atomic_write(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ParseError("not a checkpoint file");
    Checkpoint c;
    ModelShape s;
    s.input_dim = j.at("shape").at("input_dim").get<std::size_t>();
    s.hidden = j.at("shape").at("hidden").get<std::size_t>();
    s.emo_classes = j.at("shape").at("emo_classes").get<std::size_t>();
    s.intent_classes = j.at("shape").at("intent_classes").get<std::size_t>();
    s.validate();
    c.model = TwoHeadModel(s);
    c.model.values = j.at("parameters").get<std::vector<double>>();
    if (c.model.values.size() != s.parameter_count()) throw ParseError("parameter count does not match the shape");
    std::size_t line = 0;
    for (const auto& [k, v] : j.at("config").items()) {
      if (!c.config.apply(ConfigEntry{k, v.get<std::string>(), ++line})) {
        throw ParseError("unknown config key '" + k + "' in checkpoint");
      }
    }
    c.config.validate();
    c.best_epoch = j.at("best_epoch").get<std::size_t>();
    c.valid_jrbm = j.at("valid_jrbm").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": malformed checkpoint: " + e.what());
  }
}

PredictionFile make_prediction_file(const std::string& split, const Corpus& corpus, Modality modality,
                                    double valid_jrbm, std::span<const Sample> samples,
                                    std::span<const TaskProbs> probs) {
  if (samples.size() != probs.size()) throw ContractError("prediction file: samples and probabilities differ");
  PredictionFile f;
  f.split = split;
  f.modality = modality;
  f.emotion_labels = corpus.emotion_labels;
  f.intent_labels = corpus.intent_labels;
  f.valid_jrbm = valid_jrbm;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    f.ids.push_back(samples[i].id);
    f.emotion.push_back(samples[i].emotion.value_or(0));
    f.intent.push_back(samples[i].intent.value_or(0));
    f.probs.push_back(probs[i]);
  }
  return f;
}

void save_predictions(const PredictionFile& f, const fs::path& path) {
  atomic_write(path, [&](std::ostream& out) {
    out << json{{"format", kPredictionFormat},
                {"split", f.split},
                {"modality", std::string(to_string(f.modality))},
                {"emotion_labels", f.emotion_labels},
                {"intent_labels", f.intent_labels},
                {"valid_jrbm", f.valid_jrbm}}
               .dump()
        << "\n";
    for (std::size_t i = 0; i < f.ids.size(); ++i) {
      out << json{{"id", f.ids[i]},
                  {"emotion", f.emotion[i]},
                  {"intent", f.intent[i]},
                  {"p_emo", f.probs[i].emo},
                  {"p_intent", f.probs[i].intent}}
                 .dump()
          << "\n";
    }
  });
}

PredictionFile load_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open prediction file '" + path.string() + "'");
  PredictionFile f;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (!header) {
        if (j.at("format").get<std::string>() != kPredictionFormat) throw ParseError("not a prediction file", line_no);
        f.split = j.at("split").get<std::string>();
        f.modality = parse_modality(j.at("modality").get<std::string>());
        f.emotion_labels = j.at("emotion_labels").get<std::vector<std::string>>();
        f.intent_labels = j.at("intent_labels").get<std::vector<std::string>>();
        f.valid_jrbm = j.at("valid_jrbm").get<double>();
        header = true;
        continue;
      }
      f.ids.push_back(j.at("id").get<std::string>());
      f.emotion.push_back(j.at("emotion").get<std::size_t>());
      f.intent.push_back(j.at("intent").get<std::size_t>());
      TaskProbs p{j.at("p_emo").get<std::vector<double>>(), j.at("p_intent").get<std::vector<double>>()};
      if (p.emo.size() != f.emotion_labels.size() || p.intent.size() != f.intent_labels.size()) {
        throw SchemaError("probability vector length does not match the label set", line_no);
      }
      f.probs.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
  }
  if (!header) throw ParseError(path.string() + ": missing header line");
  return f;
}

FusionResult fuse_predictions(std::span<const PredictionFile> files) {
  if (files.empty()) throw ContractError("fusion needs at least one prediction file");
  const PredictionFile& ref = files.front();
  std::vector<std::vector<TaskProbs>> per_model(files.size());
  per_model[0] = ref.probs;
  for (std::size_t m = 1; m < files.size(); ++m) {
    const PredictionFile& f = files[m];
    if (f.emotion_labels != ref.emotion_labels || f.intent_labels != ref.intent_labels) {
      throw ContractError("prediction files use different label sets");
    }
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < f.ids.size(); ++i) index[f.ids[i]] = i;
    for (std::size_t s = 0; s < ref.ids.size(); ++s) {
      const auto it = index.find(ref.ids[s]);
      if (it == index.end()) throw ContractError("sample '" + ref.ids[s] + "' missing from a prediction file");
      if (f.emotion[it->second] != ref.emotion[s] || f.intent[it->second] != ref.intent[s]) {
        throw ContractError("sample '" + ref.ids[s] + "' carries different labels across prediction files");
      }
      per_model[m].push_back(f.probs[it->second]);
    }
  }
  FusionResult r;
  r.ids = ref.ids;
  r.predictions = margin_fusion(per_model);
  std::vector<std::size_t> pe, pi;
  for (const auto& p : r.predictions) {
    pe.push_back(p.emo);
    pi.push_back(p.intent);
  }
  r.metrics = make_report(pe, ref.emotion, ref.emotion_labels.size(), pi, ref.intent, ref.intent_labels.size());
  return r;
}

std::vector<std::size_t> rank_by_valid_jrbm(std::span<const PredictionFile> files, std::size_t best) {
  std::vector<std::size_t> order(files.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (best == 0) return order;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return files[a].valid_jrbm > files[b].valid_jrbm; });
  order.resize(std::min(best, order.size()));
  return order;
}

// ---- entry point -----------------------------------------------------------

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-supervised multi-task emotion/intent training toolkit", "mtssl"};
  app.require_subcommand(1, 1);
  Options opt;

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", opt.seed, "seed override (u64)")->each([&](const std::string&) { opt.seed_given = true; });
  };
  auto* gen = app.add_subcommand("gen-data", "synthesize a corpus file (<out>/corpus.jsonl)");
  gen->add_option("--config", opt.config, "generator config file");
  gen->add_option("--out", opt.out, "output directory")->required();
  add_seed(gen);
  gen->footer(generator_keys_footer());

  auto* tr = app.add_subcommand("train", "train one model; writes model.json, epochs.csv, summary.json, predictions");
  tr->add_option("--config", opt.config, "train config file")->required();
  tr->add_option("--corpus", opt.corpus, "corpus file")->required();
  tr->add_option("--out", opt.out, "output directory")->required();
  add_seed(tr);
  tr->footer(train_keys_footer());

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on its valid/test split");
  ev->add_option("--checkpoints", opt.checkpoints, "model.json written by train")->required();
  ev->add_option("--corpus", opt.corpus, "corpus file")->required();
  ev->add_option("--out", opt.out, "output directory")->required();
  ev->footer("The split and featurizer settings are read from the checkpoint's stored config:\n" +
             key_table(train_config_help(), TrainConfig{}.entries()));

  auto* fu = app.add_subcommand("fuse", "margin-sampling fusion of prediction files");
  fu->add_option("--checkpoints", opt.checkpoints, "prediction files (.jsonl), at least two")->required();
  fu->add_option("--out", opt.out, "output directory")->required();
  fu->add_option("--config", opt.config, "optional config file");
  fu->footer(
      "Config keys:\n  best = 0\n      fuse only the N files with the highest validation JRBM (0 = all)\n");

  auto* sw = app.add_subcommand("sweep", "method x augmentation x weak-branch grid; writes table.csv");
  sw->add_option("--config", opt.config, "sweep config file")->required();
  sw->add_option("--corpus", opt.corpus, "corpus file")->required();
  sw->add_option("--out", opt.out, "output directory")->required();
  add_seed(sw);
  sw->footer("Sweep keys:\n  methods = fixmatch,fullmatch\n      methods crossed with the augmentations\n"
             "  weak_aug_kinds = (modality default)\n      weak augmentations to compare\n"
             "  threads = (hardware concurrency)\n      cells trained in parallel\n" +
             train_keys_footer());

  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with central finite differences");
  add_seed(gc);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    err << failing->help();
    return 2;
  }
  // a subcommand's --help is reported through the subcommand itself
  try {
    if (gen->parsed()) return cmd_gen_data(opt, out);
    if (tr->parsed()) return cmd_train(opt, out);
    if (ev->parsed()) return cmd_eval(opt, out);
    if (fu->parsed()) return cmd_fuse(opt, out);
    if (sw->parsed()) return cmd_sweep(opt, out);
    if (gc->parsed()) return cmd_gradcheck(opt, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mtssl
