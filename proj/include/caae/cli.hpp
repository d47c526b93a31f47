#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "caae/caae.hpp"

namespace caae {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat JSON run configuration. Command-line flags override it.
struct RunConfig {
  std::string train_path = "data/train.jsonl";
  std::string dev_path;
  std::string test_path = "data/test.jsonl";
  std::string vocab_path = "data/vocab.txt";
  std::string out_dir = "run";
  std::size_t min_count = 3;
  std::size_t max_len = 30;    // sentence truncation and greedy decode limit
  std::size_t eval_limit = 0;  // 0 = whole test set
  std::string precision = "f32";  // grad-check always runs at f64
  ModelConfig model{};
  TrainConfig train{};

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k = {
        "train_path", "dev_path",   "test_path",    "vocab_path",       "out_dir",
        "min_count",  "max_len",    "eval_limit",   "precision",        "hidden",
        "layers",     "fusion",     "n_candidates", "noise_width",      "init_range",
        "embed_init_range",         "aux_n",        "w_rec",            "w_cls",
        "w_adv",      "w_aux",      "lr",           "beta1",            "beta2",
        "adam_eps",   "clip_norm",  "epochs",       "phase_prob",       "batch_size",
        "seed",       "log_wall_time"};
    return k;
  }

  void set_seed(std::uint64_t s) {
    model.seed = s;
    train.seed = s;
  }

  void apply_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [k, v] : j.items()) {
      if (!keys().contains(k)) throw ConfigError("config field '" + k + "': unknown field");
      try {
        apply_field(k, v);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config field '" + k + "': " + e.what());
      }
    }
  }

  void validate() const {
    auto bad = [](const char* f, const char* why) {
      throw ConfigError(std::string("config field '") + f + "': " + why);
    };
    if (precision != "f32" && precision != "f64") bad("precision", "must be f32 or f64");
    if (min_count < 1) bad("min_count", "must be >= 1");
    if (max_len < 1) bad("max_len", "must be >= 1");
    if (model.hidden < 1) bad("hidden", "must be >= 1");
    if (model.layers < 1) bad("layers", "must be >= 1");
    if (model.n_candidates < 1) bad("n_candidates", "must be >= 1");
    if (model.noise_width < 1) bad("noise_width", "must be >= 1");
    if (!(model.init_range > 0)) bad("init_range", "must be > 0");
    if (!(model.embed_init_range > 0)) bad("embed_init_range", "must be > 0");
    if (train.aux_n < 1) bad("aux_n", "must be >= 1");
    if (!(train.phase_prob >= 0 && train.phase_prob <= 1)) bad("phase_prob", "must lie in [0, 1]");
    if (!(train.clip_norm > 0)) bad("clip_norm", "must be > 0");
    if (!(train.adam.lr > 0)) bad("lr", "must be > 0");
    if (!(train.adam.beta1 >= 0 && train.adam.beta1 < 1)) bad("beta1", "must lie in [0, 1)");
    if (!(train.adam.beta2 >= 0 && train.adam.beta2 < 1)) bad("beta2", "must lie in [0, 1)");
    if (!(train.adam.eps > 0)) bad("adam_eps", "must be > 0");
    if (train.batch_size < 1) bad("batch_size", "must be >= 1");
    if (train.epochs < 1) bad("epochs", "must be >= 1");
    for (auto [f, w] : {std::pair{"w_rec", train.w_rec}, std::pair{"w_cls", train.w_cls},
                        std::pair{"w_adv", train.w_adv}, std::pair{"w_aux", train.w_aux}})
      if (!(w >= 0)) bad(f, "must be >= 0");
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"train_path", train_path}, {"dev_path", dev_path},
                        {"test_path", test_path},   {"vocab_path", vocab_path},
                        {"out_dir", out_dir},       {"min_count", min_count},
                        {"max_len", max_len},       {"eval_limit", eval_limit},
                        {"precision", precision}};
    const auto mj = model.to_json(), tj = train.to_json();
    for (const auto& [k, v] : mj.items())
      if (k != "vocab_size") j[k] = v;
    for (const auto& [k, v] : tj.items()) j[k] = v;
    return j;
  }

 private:
  void apply_field(const std::string& k, const nlohmann::json& v) {
    if (k == "train_path") train_path = v.get<std::string>();
    else if (k == "dev_path") dev_path = v.get<std::string>();
    else if (k == "test_path") test_path = v.get<std::string>();
    else if (k == "vocab_path") vocab_path = v.get<std::string>();
    else if (k == "out_dir") out_dir = v.get<std::string>();
    else if (k == "min_count") min_count = v.get<std::size_t>();
    else if (k == "max_len") max_len = v.get<std::size_t>();
    else if (k == "eval_limit") eval_limit = v.get<std::size_t>();
    else if (k == "precision") precision = v.get<std::string>();
    else if (k == "hidden") model.hidden = v.get<std::size_t>();
    else if (k == "layers") model.layers = v.get<std::size_t>();
    else if (k == "fusion") {
      const auto f = parse_fusion(v.get<std::string>());
      if (!f) throw ConfigError("config field 'fusion': must be mean or mosm");
      model.fusion = *f;
    }
    else if (k == "n_candidates") model.n_candidates = v.get<std::size_t>();
    else if (k == "noise_width") model.noise_width = v.get<std::size_t>();
    else if (k == "init_range") model.init_range = v.get<double>();
    else if (k == "embed_init_range") model.embed_init_range = v.get<double>();
    else if (k == "aux_n") train.aux_n = v.get<std::size_t>();
    else if (k == "w_rec") train.w_rec = v.get<double>();
    else if (k == "w_cls") train.w_cls = v.get<double>();
    else if (k == "w_adv") train.w_adv = v.get<double>();
    else if (k == "w_aux") train.w_aux = v.get<double>();
    else if (k == "lr") train.adam.lr = v.get<double>();
    else if (k == "beta1") train.adam.beta1 = v.get<double>();
    else if (k == "beta2") train.adam.beta2 = v.get<double>();
    else if (k == "adam_eps") train.adam.eps = v.get<double>();
    else if (k == "clip_norm") train.clip_norm = v.get<double>();
    else if (k == "epochs") train.epochs = v.get<std::size_t>();
    else if (k == "phase_prob") train.phase_prob = v.get<double>();
    else if (k == "batch_size") train.batch_size = v.get<std::size_t>();
    else if (k == "seed") set_seed(v.get<std::uint64_t>());
    else if (k == "log_wall_time") train.log_wall_time = v.get<bool>();
  }
};

inline RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  c.apply_json(j);
  return c;
}

inline constexpr const char* kConfigurationTable =
    "Model configurations and their flags:\n"
    "  Baseline encoder-decoder    train --baseline\n"
    "  Mean (N=1)                  train --fusion mean --aux-n 1\n"
    "  Mean (N=10)                 train --fusion mean --aux-n 10\n"
    "  MOSM (N=1)                  train --fusion mosm --aux-n 1\n"
    "  MOSM (N=10)                 train --fusion mosm --aux-n 10\n"
    "  MOSM (N=1, -classifier)     train --fusion mosm --aux-n 1 --no-classifier\n"
    "  MOSM (-auxiliary loss)      train --fusion mosm --no-aux-loss\n"
    "  Random premise control      evaluate (field random_control)\n"
    "Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.\n";

namespace cli_detail {

inline std::vector<SnliExample> load_examples(const std::string& path, std::size_t max_len,
                                              std::ostream& err) {
  auto res = parse_snli_jsonl(path);
  for (const auto& e : res.errors) err << path << ":" << e.line << ": skipped: " << e.message << "\n";
  if (res.examples.empty()) throw DataError(path + " holds no labelled examples");
  truncate_examples(res.examples, max_len);
  return std::move(res.examples);
}

inline void write_jsonl(const std::string& path, const std::vector<SnliExample>& ex) {
  if (auto dir = std::filesystem::path(path).parent_path(); !dir.empty())
    std::filesystem::create_directories(dir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& e : ex)
    out << nlohmann::json{{"gold_label", label_name(e.label)},
                          {"sentence1", join(e.premise)},
                          {"sentence2", join(e.hypothesis)}}
               .dump()
        << '\n';
}

inline std::filesystem::path out_path(const RunConfig& c, const std::string& name) {
  std::filesystem::create_directories(c.out_dir);
  return std::filesystem::path(c.out_dir) / name;
}

struct LoadedCheckpoint {
  CheckpointData data;
  RunKind kind = RunKind::Full;
  ModelConfig model;
};

inline LoadedCheckpoint open_checkpoint(const std::string& path) {
  LoadedCheckpoint c;
  c.data = read_checkpoint(path);
  const auto kind = parse_run_kind(c.data.meta.value("kind", std::string()));
  if (!kind) throw DataError(path + " has no run kind in its metadata");
  c.kind = *kind;
  c.model = ModelConfig::from_json(c.data.meta.at("model"));
  return c;
}

inline int cmd_prepare(const RunConfig& cfg, std::size_t synthetic, std::ostream& out,
                       std::ostream& err) {
  if (synthetic > 0) {
    write_jsonl(cfg.train_path, synthetic_corpus(synthetic, cfg.train.seed));
    write_jsonl(cfg.test_path, synthetic_corpus(synthetic, cfg.train.seed + 1));
    out << "wrote " << synthetic << " synthetic examples to " << cfg.train_path << " and "
        << cfg.test_path << "\n";
  }
  const auto res = parse_snli_jsonl(cfg.train_path);
  for (const auto& e : res.errors)
    err << cfg.train_path << ":" << e.line << ": skipped: " << e.message << "\n";
  if (res.examples.empty()) throw DataError(cfg.train_path + " holds no labelled examples");
  auto examples = res.examples;
  const std::size_t cut = truncate_examples(examples, cfg.max_len);
  const Vocab vocab = Vocab::build(examples, cfg.min_count);
  if (auto dir = std::filesystem::path(cfg.vocab_path).parent_path(); !dir.empty())
    std::filesystem::create_directories(dir);
  vocab.save(cfg.vocab_path);
  out << "examples " << examples.size() << "\n"
      << "skipped_unlabeled " << res.skipped_unlabeled << "\n"
      << "skipped_malformed " << res.errors.size() << "\n"
      << "truncated " << cut << "\n";
  for (std::size_t l = 0; l < kNumLabels; ++l)
    out << "label " << kLabelNames[l] << " " << res.label_counts[l] << "\n";
  out << "vocab " << vocab.size() << " -> " << cfg.vocab_path << "\n";
  return kExitOk;
}

template <typename T>
int cmd_train(RunConfig cfg, RunKind kind, const std::string& resume, std::ostream& out,
              std::ostream& err) {
  const Vocab vocab = Vocab::load(cfg.vocab_path);
  const auto train = load_examples(cfg.train_path, cfg.max_len, err);
  cfg.model.vocab_size = vocab.size();
  RunOptions opt;
  opt.out_dir = cfg.out_dir;
  opt.resume = resume;
  if (!resume.empty()) {
    // The architecture comes from the checkpoint; the config may not change it.
    auto ck = open_checkpoint(resume);
    if (!(ck.data.vocab == vocab)) throw DataError("checkpoint vocabulary differs from " + cfg.vocab_path);
    cfg.model = ck.model;
  }
  {
    std::ofstream f(out_path(cfg, "config.json"), std::ios::binary | std::ios::trunc);
    f << cfg.to_json().dump(2) << '\n';
  }
  opt.on_epoch = [&](std::size_t e) { out << "epoch " << e << "/" << cfg.train.epochs << " done\n"; };
  RunSummary s;
  if (kind == RunKind::Baseline) {
    BaselineModel<T> model(cfg.model);
    s = train_baseline(model, vocab, train, cfg.train, opt);
  } else if (kind == RunKind::Probe) {
    ModelBundle<T> model(cfg.model);
    s = train_probe(model, vocab, train, cfg.train, opt);
    out << "probe train accuracy " << real_pair_accuracy(model, vocab, train) << "\n";
  } else {
    ModelBundle<T> model(cfg.model);
    s = train_full(model, vocab, train, cfg.train, opt);
  }
  out << "iterations " << s.iterations << "\n";
  if (!s.last_checkpoint.empty()) out << "checkpoint " << s.last_checkpoint << "\n";
  return kExitOk;
}

template <typename T>
int cmd_generate(const RunConfig& cfg, const std::string& ckpt, const std::string& hypothesis,
                 Label label, std::size_t count, std::ostream& out) {
  auto ck = open_checkpoint(ckpt);
  const Vocab& vocab = ck.data.vocab;
  std::vector<SnliExample> query(count, SnliExample{{}, tokenize(hypothesis), label});
  if (query.front().hypothesis.empty()) throw ConfigError("--hypothesis must not be empty");
  std::vector<Tokens> samples;
  std::mt19937_64 rng(cfg.train.seed);
  if (ck.kind == RunKind::Baseline) {
    BaselineModel<T> model(ck.model);
    load_params(ck.data, model.store());
    samples = baseline_generator(model, vocab, cfg.max_len)(query);
  } else {
    ModelBundle<T> model(ck.model);
    load_params(ck.data, model.store());
    samples = prior_generator(model, vocab, rng, cfg.max_len)(query);
  }
  std::ostringstream text;
  text << "H: " << join(query.front().hypothesis) << "\n" << "L: " << label_name(label) << "\n";
  for (std::size_t i = 0; i < samples.size(); ++i) text << "S" << i + 1 << ": " << join(samples[i]) << "\n";
  out << text.str();
  std::ofstream f(out_path(cfg, "samples.txt"), std::ios::binary | std::ios::trunc);
  f << text.str();
  if (!f) throw IoError("cannot write samples.txt");
  return kExitOk;
}

struct EvaluateFlags {
  std::string checkpoint;
  std::string probe_checkpoint;
  bool identity_permutation = false;
  std::string fixed_output;  // debug: every generation is this sentence
  std::size_t latents = 0;   // N prior samples per triplet for latents.jsonl
};

template <typename T>
int cmd_evaluate(const RunConfig& cfg, const EvaluateFlags& fl, std::ostream& out,
                 std::ostream& err) {
  auto gen_ck = open_checkpoint(fl.checkpoint);
  auto probe_ck = open_checkpoint(fl.probe_checkpoint);
  if (!(gen_ck.data.vocab == probe_ck.data.vocab))
    throw DataError("vocabulary mismatch between " + fl.checkpoint + " and " + fl.probe_checkpoint);
  if (probe_ck.kind != RunKind::Probe) throw DataError(fl.probe_checkpoint + " is not a probe checkpoint");
  const Vocab& vocab = gen_ck.data.vocab;
  auto test = load_examples(cfg.test_path, cfg.max_len, err);
  if (cfg.eval_limit && test.size() > cfg.eval_limit) test.resize(cfg.eval_limit);

  ModelBundle<T> probe(probe_ck.model);
  load_params(probe_ck.data, probe.store());

  std::mt19937_64 rng(cfg.train.seed);
  std::optional<ModelBundle<T>> full;
  std::optional<BaselineModel<T>> base;
  PremiseGenerator gen;
  if (!fl.fixed_output.empty()) {
    gen = constant_generator(tokenize(fl.fixed_output));
  } else if (gen_ck.kind == RunKind::Baseline) {
    base.emplace(gen_ck.model);
    load_params(gen_ck.data, base->store());
    gen = baseline_generator(*base, vocab, cfg.max_len);
  } else {
    full.emplace(gen_ck.model);
    load_params(gen_ck.data, full->store());
    gen = prior_generator(*full, vocab, rng, cfg.max_len);
  }

  EvalReport report = probe_eval(probe, vocab, gen, test);
  const auto div = diversity_eval(gen, test);
  report.diversity_count = div.count;
  report.failures = div.failures;
  if (div.count) {
    report.bleu_rs = div.bleu_rs;
    report.bleu_ss = div.bleu_ss;
  }
  if (div.failures) err << div.failures << " triplets produced an empty sample and were excluded\n";
  report.real_accuracy = real_pair_accuracy(probe, vocab, test);
  report.random_control = random_control(probe, vocab, test, cfg.train.seed, fl.identity_permutation);

  const std::string doc = report.to_json().dump(2);
  out << doc << "\n";
  std::ofstream f(out_path(cfg, "eval.json"), std::ios::binary | std::ios::trunc);
  f << doc << '\n';
  if (!f) throw IoError("cannot write eval.json");
  if (fl.latents > 0) {
    if (!full) throw ConfigError("--latents needs a full-model checkpoint");
    const auto path = out_path(cfg, "latents.jsonl").string();
    const auto rows = dump_latents(*full, vocab, test, fl.latents, rng, path);
    err << "wrote " << rows << " latent rows to " << path << "\n";
  }
  return kExitOk;
}

inline int cmd_grad_check(const GradCheckOptions& opt, std::ostream& out) {
  auto results = check_all_ops(opt);
  const std::size_t op_checks = results.size();
  for (auto& r : check_networks(opt)) results.push_back(std::move(r));
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << " max_rel_error=" << gc_fmt(r.max_rel_error)
        << " coords=" << r.coords;
    if (!r.passed) out << " worst: " << r.detail;
    out << "\n";
    failed += !r.passed;
  }
  out << "ops " << op_checks << "/" << kDifferentiableOps.size() << " registered, "
      << results.size() - failed << "/" << results.size() << " checks passed\n";
  return failed ? kExitNumeric : kExitOk;
}

}  // namespace cli_detail

// Entry point of the `caae` tool; returns the process exit code.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Conditional adversarial autoencoder for premise generation"};
  app.footer(kConfigurationTable);
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision, fusion, out_dir;
  std::optional<std::size_t> aux_n, epochs, batch_size, hidden, n_candidates, noise_width;
  std::optional<double> init_range, embed_init_range;
  bool no_classifier = false, no_aux = false, baseline = false, probe_run = false;
  std::string checkpoint, hypothesis, label_str = "entailment";
  std::size_t count = 2, synthetic = 0;
  cli_detail::EvaluateFlags ef;
  GradCheckOptions gc;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "JSON run configuration (flat keys)");
    c->add_option("--seed", seed, "seed for model init, batching, noise and permutations");
    c->add_option("--precision", precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    c->add_option("--out-dir", out_dir, "run directory");
  };

  auto* prep = app.add_subcommand("prepare-data", "build the vocabulary from the training file");
  common(prep);
  prep->add_option("--synthetic", synthetic, "first write N-example synthetic train/test files");

  auto* train = app.add_subcommand("train", "train a model");
  common(train);
  train->add_option("--fusion", fusion, "mean or mosm")->check(CLI::IsMember({"mean", "mosm"}));
  train->add_option("--aux-n", aux_n, "prior samples in the auxiliary loss")->check(CLI::PositiveNumber);
  train->add_flag("--no-classifier", no_classifier, "drop the classifier loss (w_cls = 0)");
  train->add_flag("--no-aux-loss", no_aux, "drop the auxiliary loss (w_aux = 0)");
  auto* base_flag = train->add_flag("--baseline", baseline, "train the plain encoder-decoder");
  train->add_flag("--probe", probe_run, "train the evaluation probe classifier")->excludes(base_flag);
  train->add_option("--checkpoint", checkpoint, "resume from this checkpoint");
  train->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
  train->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
  train->add_option("--hidden", hidden)->check(CLI::PositiveNumber);
  train->add_option("--n-candidates", n_candidates)->check(CLI::PositiveNumber);
  train->add_option("--noise-width", noise_width)->check(CLI::PositiveNumber);
  train->add_option("--init-range", init_range);
  train->add_option("--embed-init-range", embed_init_range);

  auto* gen = app.add_subcommand("generate", "sample premises for a hypothesis and label");
  common(gen);
  gen->add_option("--checkpoint", checkpoint)->required();
  gen->add_option("--hypothesis", hypothesis, "conditioning hypothesis")->required();
  gen->add_option("--label", label_str, "entailment, neutral or contradiction");
  gen->add_option("--count", count, "number of samples")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("evaluate", "probe accuracy, confusion, BLEU and random control");
  common(ev);
  ev->add_option("--checkpoint", ef.checkpoint, "generator checkpoint")->required();
  ev->add_option("--probe-checkpoint", ef.probe_checkpoint, "probe checkpoint")->required();
  ev->add_flag("--identity-permutation", ef.identity_permutation,
               "debug: random control keeps every premise in place");
  ev->add_option("--fixed-output", ef.fixed_output, "debug: replace every generation by this sentence");
  ev->add_option("--latents", ef.latents, "also dump N prior latents per triplet");

  auto* gcc = app.add_subcommand("grad-check", "finite-difference check of every gradient");
  common(gcc);
  gcc->add_option("--fault", gc.fault_op, "corrupt this op's backward rule");
  gcc->add_option("--max-coords", gc.max_coords, "probe at most this many coordinates per tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg = load_run_config(config_path);
    if (seed) cfg.set_seed(*seed);
    if (precision) cfg.precision = *precision;
    if (out_dir) cfg.out_dir = *out_dir;
    if (fusion) cfg.model.fusion = *parse_fusion(*fusion);
    if (aux_n) cfg.train.aux_n = *aux_n;
    if (epochs) cfg.train.epochs = *epochs;
    if (batch_size) cfg.train.batch_size = *batch_size;
    if (hidden) cfg.model.hidden = *hidden;
    if (n_candidates) cfg.model.n_candidates = *n_candidates;
    if (noise_width) cfg.model.noise_width = *noise_width;
    if (init_range) cfg.model.init_range = *init_range;
    if (embed_init_range) cfg.model.embed_init_range = *embed_init_range;
    if (no_classifier) cfg.train.w_cls = 0;
    if (no_aux) cfg.train.w_aux = 0;
    cfg.validate();
    const bool f32 = cfg.precision == "f32";

    if (*prep) return cli_detail::cmd_prepare(cfg, synthetic, out, err);
    if (*train) {
      const RunKind kind = baseline ? RunKind::Baseline : probe_run ? RunKind::Probe : RunKind::Full;
      return f32 ? cli_detail::cmd_train<float>(cfg, kind, checkpoint, out, err)
                 : cli_detail::cmd_train<double>(cfg, kind, checkpoint, out, err);
    }
    if (*gen) {
      const auto label = parse_label(label_str);
      if (!label) {
        err << "unknown label '" << label_str << "'; valid labels: entailment, neutral, contradiction\n";
        return kExitUsage;
      }
      return f32 ? cli_detail::cmd_generate<float>(cfg, checkpoint, hypothesis, *label, count, out)
                 : cli_detail::cmd_generate<double>(cfg, checkpoint, hypothesis, *label, count, out);
    }
    if (*ev)
      return f32 ? cli_detail::cmd_evaluate<float>(cfg, ef, out, err)
                 : cli_detail::cmd_evaluate<double>(cfg, ef, out, err);
    if (*gcc) return cli_detail::cmd_grad_check(gc, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace caae
