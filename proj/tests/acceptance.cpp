// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "caae/cli.hpp"

using namespace caae;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

// Desk-scale setting for the training criteria.
ModelConfig desk_model(std::size_t vocab, std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.hidden = 64;
  c.layers = 2;
  c.fusion = FusionKind::Mosm;
  c.n_candidates = 4;
  c.noise_width = 300;
  c.init_range = 0.4;
  c.embed_init_range = 1.0;
  c.seed = seed;
  return c;
}

TrainConfig desk_train(std::uint64_t seed, std::size_t aux_n) {
  TrainConfig t;
  t.adam = {1e-3, 0.0, 0.999, 1e-8};
  t.clip_norm = 1.0;
  t.phase_prob = 0.5;
  t.epochs = 30;
  t.batch_size = 1;
  t.aux_n = aux_n;
  t.seed = seed;
  t.log_wall_time = false;
  return t;
}

// ---- 1 -------------------------------------------------------------------

Verdict gradient_correctness() {
  GradCheckOptions opt;
  opt.rel_tol = 1e-4;
  auto results = check_all_ops(opt);
  const std::size_t ops = results.size();
  for (auto& r : check_networks(opt)) results.push_back(std::move(r));
  std::size_t ok = 0;
  std::string failed;
  for (const auto& r : results) {
    if (r.passed) ++ok;
    else failed += " " + r.name;
  }
  Verdict v;
  v.pass = ok == results.size() && ops == kDifferentiableOps.size();
  v.detail = std::to_string(ops) + "/" + std::to_string(kDifferentiableOps.size()) + " ops, " +
             std::to_string(ok) + "/" + std::to_string(results.size()) + " checks at rel tol 1e-4" +
             (failed.empty() ? "" : "; failed:" + failed);
  return v;
}

// ---- 2 -------------------------------------------------------------------

Verdict degenerate_equivalences() {
  std::mt19937_64 rng(21);
  ParamStore<float> store;
  const std::size_t dv = 12, dk = 7, d_o = 9;
  MosmLayer<float> layer(store, "m", dv, dk, d_o, 1, Activation::Identity, rng);
  const Tensor<float> w = layer.candidate(0);
  double worst = 0;
  bool mosm_ok = true;
  for (int i = 0; i < 100; ++i) {
    const auto v = Tensor<float>::normal({1, dv}, rng), k = Tensor<float>::normal({1, dk}, rng);
    Tape<float> t(false);
    Var<float> o = layer(t, t.constant(v), t.constant(k));
    for (std::size_t r = 0; r < d_o; ++r) {
      double exact = 0, mag = 0;
      for (std::size_t c = 0; c < dv; ++c) {
        exact += double(w.at(r, c)) * double(v[c]);
        mag += std::abs(double(w.at(r, c)) * double(v[c]));
      }
      // Standard dot-product rounding bound in single precision.
      const double bound = double(dv) * std::numeric_limits<float>::epsilon() * mag;
      const double err = std::abs(double(o.at(0, r)) - exact);
      worst = std::max(worst, mag > 0 ? err / bound : 0.0);
      mosm_ok = mosm_ok && err <= bound;
    }
  }

  const auto ex = synthetic_corpus(16, 3);
  const Vocab vocab = Vocab::build(ex, 1);
  ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.hidden = 10;
  mc.layers = 1;
  mc.noise_width = 6;
  ModelBundle<float> m(mc);
  const Batch b = make_batches(ex, vocab, 8, 1)[0];
  std::vector<Tensor<float>> noise{m.draw_noise(b.size, rng)};
  Tape<float> t;
  const auto hyp = m.encode_hypothesis(t, b);
  Var<float> aux = auxiliary_loss<float>(t, m, b, hyp, noise);
  Var<float> ref = m.decode(t, m.prior_sample(t, hyp, b.labels, noise[0]), b).nll;
  bool aux_ok = true;
  for (std::size_t r = 0; r < b.size; ++r) aux_ok = aux_ok && aux.at(r, 0) == ref.at(r, 0);

  Retriever<float> mean;
  const auto z = Tensor<float>::normal({3, 5}, rng);
  Var<float> c = mean(t, t.constant(z), t.constant(Tensor<float>::normal({4 * 3, 5}, rng)), 4);
  bool mean_ok = true;
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t k = 0; k < 5; ++k) mean_ok = mean_ok && c.at(s * 3 + r, k) == z.at(r, k);

  return {mosm_ok && aux_ok && mean_ok,
          std::string("mosm(N_W=1) vs linear on 100 inputs ") + (mosm_ok ? "ok" : "off") +
              " (worst err/bound " + fmt(worst, 3) + "), aux(N=1) " + (aux_ok ? "exact" : "differs") +
              ", mean retrieve " + (mean_ok ? "verbatim" : "differs")};
}

// ---- 3 -------------------------------------------------------------------

Verdict auxiliary_bound() {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  std::uniform_int_distribution<int> n_dist(1, 20);
  std::size_t held = 0;
  double tightest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> l(static_cast<std::size_t>(n_dist(rng)));
    for (auto& x : l) x = u(rng);
    const double lhs = log_mean_exp_nll(l);
    const double rhs = std::log(double(l.size())) + min_over_samples<double>(l).second;
    held += lhs <= rhs;
    tightest = std::min(tightest, rhs - lhs);
  }
  return {held == 1000, std::to_string(held) + "/1000 sets satisfy the bound, min slack " +
                            fmt(tightest, 6)};
}

// ---- 4 -------------------------------------------------------------------

Verdict overfit() {
  const auto ex = synthetic_corpus(64, 1);
  const Vocab vocab = Vocab::build(ex, 1);
  ModelBundle<float> m(desk_model(vocab.size(), 1));
  const auto eval_batches = make_batches(ex, vocab, 64, 0);
  double best_tok = 0, best_cls = 0;
  std::size_t reached = 0;
  RunOptions opt;
  opt.on_epoch = [&](std::size_t e) {
    const double tok = reconstruction_stats(m, eval_batches).token_accuracy();
    const double cls = classifier_accuracy(m, eval_batches);
    best_tok = std::max(best_tok, tok);
    best_cls = std::max(best_cls, cls);
    if (!reached && tok >= 0.99 && cls >= 1.0) reached = e;
    std::cerr << "  overfit epoch " << e << " token_acc " << fmt(tok) << " cls_acc " << fmt(cls) << "\n";
  };
  train_full(m, vocab, ex, desk_train(1, 1), opt);
  const double tok = reconstruction_stats(m, eval_batches).token_accuracy();
  const double cls = classifier_accuracy(m, eval_batches);
  return {reached > 0, "64 examples, MOSM, aux_N=1: " +
                           (reached ? "both thresholds met at epoch " + std::to_string(reached)
                                    : std::string("thresholds not met within 30 epochs")) +
                           "; final token acc " + fmt(tok) + ", classifier acc " + fmt(cls) +
                           "; best " + fmt(best_tok) + " / " + fmt(best_cls)};
}

// ---- 5 -------------------------------------------------------------------

Verdict diversity_trend() {
  const auto train = synthetic_corpus(64, 1);
  const auto test = synthetic_corpus(64, 1001);
  const Vocab vocab = Vocab::build(train, 1);
  std::map<std::size_t, double> mean_ss;
  std::string per_seed;
  bool defined = true;
  for (std::size_t n : {std::size_t{1}, std::size_t{10}}) {
    double sum = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
      ModelBundle<float> m(desk_model(vocab.size(), seed));
      train_full(m, vocab, train, desk_train(seed, n));
      std::mt19937_64 rng(seed + 500);
      const auto d = diversity_eval(prior_generator(m, vocab, rng, 30), test);
      defined = defined && d.count > 0;
      sum += d.bleu_ss;
      per_seed += " N" + std::to_string(n) + "/s" + std::to_string(seed) + "=" + fmt(d.bleu_ss, 2);
      if (d.failures) per_seed += "(" + std::to_string(d.failures) + " empty)";
      std::cerr << "  diversity aux_N=" << n << " seed " << seed << " BLEU_SS " << fmt(d.bleu_ss, 2)
                << " BLEU_RS " << fmt(d.bleu_rs, 2) << " empty " << d.failures << "\n";
    }
    mean_ss[n] = sum / 3.0;
  }
  return {defined && mean_ss[10] < mean_ss[1],
          "mean BLEU_SS aux_N=10 " + fmt(mean_ss[10], 2) + " vs aux_N=1 " + fmt(mean_ss[1], 2) +
              " (" + per_seed.substr(1) + ")"};
}

// ---- 6 -------------------------------------------------------------------

Verdict probe_sanity() {
  const auto ex = synthetic_corpus(64, 1);
  const Vocab vocab = Vocab::build(ex, 1);
  ModelConfig mc = desk_model(vocab.size(), 7);
  ModelBundle<float> probe(mc);
  TrainConfig tc = desk_train(7, 1);
  tc.batch_size = 4;
  tc.epochs = 30;
  train_probe(probe, vocab, ex, tc);
  const double real = real_pair_accuracy(probe, vocab, ex);
  const double copy = probe_eval(probe, vocab, copy_generator(), ex).accuracy;
  const double control = random_control(probe, vocab, ex, 7);
  return {real >= 0.9 && copy == real && control < real,
          "probe real-pair acc " + fmt(real) + ", copy generator " + fmt(copy) +
              ", random control " + fmt(control)};
}

// ---- 7 -------------------------------------------------------------------

// Second BLEU-4 with smoothing technique 2: string-keyed n-gram counts
// and a product of precisions instead of a log sum.
double reference_bleu(const std::vector<std::string>& c, const std::vector<std::string>& r) {
  auto grams = [](const std::vector<std::string>& s, std::size_t n) {
    std::unordered_map<std::string, int> out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      std::string key;
      for (std::size_t j = i; j < i + n; ++j) key += s[j] + '\x1f';
      ++out[key];
    }
    return out;
  };
  double prod = 1;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cg = grams(c, n), rg = grams(r, n);
    int match = 0, total = 0;
    for (const auto& [g, k] : cg) {
      total += k;
      auto it = rg.find(g);
      match += it == rg.end() ? 0 : std::min(k, it->second);
    }
    if (n == 1 && match == 0) return 0;
    prod *= n == 1 ? double(match) / total : (match + 1.0) / (total + 1.0);
  }
  const double bp = c.size() > r.size() ? 1 : std::exp(1 - double(r.size()) / double(c.size()));
  return 100 * bp * std::pow(prod, 0.25);
}

Verdict bleu_oracle() {
  std::mt19937_64 rng(77);
  const std::vector<std::string> words = {"a", "man", "dog", "is", "on", "the", "beach", "."};
  std::uniform_int_distribution<std::size_t> len(1, 14), word(0, words.size() - 1);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    Tokens c(len(rng)), r(len(rng));
    for (auto& w : c) w = words[word(rng)];
    for (auto& w : r) w = words[word(rng)];
    worst = std::max(worst, std::abs(smoothed_bleu(c, r) - reference_bleu(c, r)));
  }
  bool identical = true;
  for (int i = 0; i < 20; ++i) {
    Tokens c(len(rng));
    for (auto& w : c) w = words[word(rng)];
    identical = identical && smoothed_bleu(c, c) == 100.0;
  }
  return {worst <= 1e-6 && identical, "max |diff| on 200 pairs " + fmt(worst, 12) +
                                          ", identical pairs " + (identical ? "100.0" : "not 100")};
}

// ---- 8 -------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr) {
  std::vector<const char*> argv = {"caae"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (code != 0) std::cerr << "  cli failure: " << err.str();
  return code;
}

Verdict determinism() {
  const fs::path dir = fs::temp_directory_path() / ("caae_accept_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = (dir / "config.json").string();
  std::ofstream(cfg) << nlohmann::json{{"train_path", (dir / "train.jsonl").string()},
                                       {"test_path", (dir / "test.jsonl").string()},
                                       {"vocab_path", (dir / "vocab.txt").string()},
                                       {"min_count", 1},
                                       {"hidden", 16},
                                       {"layers", 2},
                                       {"noise_width", 16},
                                       {"epochs", 3},
                                       {"batch_size", 4},
                                       {"aux_n", 3},
                                       {"seed", 5},
                                       {"log_wall_time", false}}
                            .dump();
  bool ok = run_cli({"prepare-data", "--config", cfg, "--synthetic", "48"}) == 0;
  for (const char* run : {"a", "b"})
    ok = ok && run_cli({"train", "--config", cfg, "--precision", "f64", "--out-dir",
                        (dir / run).string()}) == 0;
  const std::string ma = slurp(dir / "a/metrics.jsonl"), mb = slurp(dir / "b/metrics.jsonl");
  const bool logs = ok && !ma.empty() && ma == mb;
  std::string g1, g2;
  const std::string ck = (dir / "a/checkpoints/epoch_3.ckpt").string();
  for (std::string* g : {&g1, &g2})
    ok = ok && run_cli({"generate", "--config", cfg, "--precision", "f64", "--checkpoint", ck,
                        "--hypothesis", "a dog is running .", "--label", "contradiction", "--count",
                        "4", "--seed", "9", "--out-dir", (dir / "gen").string()},
                       g) == 0;
  const bool gen = ok && !g1.empty() && g1 == g2;
  fs::remove_all(dir);
  return {logs && gen, std::string("f64 metrics logs ") + (logs ? "identical" : "differ") + " (" +
                           std::to_string(ma.size()) + " bytes), generate output " +
                           (gen ? "identical" : "differs")};
}

// ---- 9 -------------------------------------------------------------------

std::set<std::string> reached(ParamStore<double>& store, const std::function<Var<double>(Tape<double>&)>& loss) {
  store.zero_grad();
  Tape<double> t;
  t.backward(loss(t));
  std::set<std::string> out;
  for (auto& p : store.params())
    for (double g : p.grad)
      if (g != 0) {
        out.insert(p.name.substr(0, p.name.rfind('.')));
        break;
      }
  return out;
}

std::set<std::string> module_set(std::initializer_list<const char*> prefixes,
                                 ParamStore<double>& store) {
  std::set<std::string> out;
  for (auto& p : store.params()) {
    const std::string mod = p.name.substr(0, p.name.rfind('.'));
    for (const char* pre : prefixes)
      if (p.name.rfind(pre, 0) == 0) out.insert(mod);
  }
  return out;
}

std::vector<double> flat(const ParamGroup<double>& g) {
  std::vector<double> out;
  for (auto* p : g) out.insert(out.end(), p->value.values().begin(), p->value.values().end());
  return out;
}

Verdict sharing_structure() {
  const auto ex = synthetic_corpus(24, 2);
  const Vocab vocab = Vocab::build(ex, 1);
  ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.hidden = 8;
  mc.layers = 1;
  mc.n_candidates = 3;
  mc.noise_width = 5;
  ModelBundle<double> m(mc);
  auto& s = m.store();
  const Batch b = make_batches(ex, vocab, 6, 1)[0];
  std::mt19937_64 rng(3);
  const Tensor<double> eps = m.draw_noise(b.size, rng);
  std::vector<std::string> problems;
  auto expect = [&](const std::string& what, const std::set<std::string>& got,
                    const std::set<std::string>& want) {
    if (got != want) {
      std::string g;
      for (const auto& x : got) g += " " + x;
      problems.push_back(what + " reaches {" + g + " }");
    }
  };

  // Which modules each loss can reach, with nothing frozen.
  expect("reconstruction", reached(s, [&](Tape<double>& t) {
           return mean_all(m.decode(t, m.encode_premise(t, b), b).nll);
         }),
         module_set({"gen.embed", "gen.enc", "gen.compress", "gen.retrieve", "gen.dec", "gen.out"}, s));
  expect("classifier(real z)", reached(s, [&](Tape<double>& t) {
           return mean_xent(m.classify_logits(t, m.encode_premise(t, b), m.encode_hypothesis(t, b)), b.labels);
         }),
         module_set({"gen.embed", "gen.enc", "gen.compress", "gen.retrieve", "gen.cls"}, s));
  expect("prior sample", reached(s, [&](Tape<double>& t) { return sum_all(m.prior_sample(t, b, eps)); }),
         module_set({"gen.embed", "gen.enc", "gen.compress", "gen.prior"}, s));
  const Tensor<double> z_fixed = Tensor<double>::normal({b.size, mc.hidden}, rng);
  expect("discriminator(constant z)", reached(s, [&](Tape<double>& t) {
           const auto dh = m.discriminator().encode(t, b);
           return mean_bce(m.discriminate_logits(t, t.constant(z_fixed), dh, b.labels), 1.0);
         }),
         module_set({"disc."}, s));

  // Optimizer groups partition the store and never overlap.
  std::set<const void*> gen, disc;
  for (auto* p : m.generator_params()) gen.insert(p);
  for (auto* p : m.discriminator_params()) disc.insert(p);
  std::size_t overlap = 0;
  for (auto* p : disc) overlap += gen.count(p);
  if (overlap || gen.size() + disc.size() != s.size()) problems.push_back("optimizer groups overlap");

  // Update visibility: a reconstruction-only update moves f_retrieve and
  // f_compress as seen by the classifier and the prior; the discriminator
  // output on fixed inputs stays put. Each phase leaves the other group alone.
  const Tensor<double> h_fixed = Tensor<double>::normal({2 * 3, mc.hidden}, rng);
  const Tensor<double> z2 = Tensor<double>::normal({2, mc.hidden}, rng);
  auto probe_views = [&]() {
    Tape<double> t(false);
    Sequence<double> hs{t.constant(h_fixed), 3, {3, 3}};
    Var<double> cls = m.classify_logits(t, t.constant(z2), hs);
    Var<double> comp = m.prior().compress(t, hs);
    const auto dh = m.discriminator().encode(t, b);
    Var<double> d = m.discriminate_logits(t, t.constant(z_fixed), dh, b.labels);
    auto v = [](Var<double> x) { return std::vector<double>(x.value().begin(), x.value().end()); };
    return std::array<std::vector<double>, 3>{v(cls), v(comp), v(d)};
  };
  TrainConfig tc;
  tc.w_cls = tc.w_adv = tc.w_aux = 0;
  Trainer<double> rec_only(m, tc);
  const auto before = probe_views();
  const auto disc0 = flat(m.discriminator_params());
  rec_only.generative_step(b);
  const auto after = probe_views();
  if (before[0] == after[0]) problems.push_back("classifier does not see retrieval update");
  if (before[1] == after[1]) problems.push_back("prior does not see compression update");
  if (before[2] != after[2] || flat(m.discriminator_params()) != disc0)
    problems.push_back("generative update reached the discriminator");

  TrainConfig full;
  full.aux_n = 2;
  Trainer<double> tr(m, full);
  const auto gen0 = flat(m.generator_params());
  tr.discriminative_step(b);
  if (flat(m.generator_params()) != gen0) problems.push_back("discriminative update reached the generator");
  const auto disc1 = flat(m.discriminator_params());
  tr.generative_step(b);
  if (flat(m.discriminator_params()) != disc1) problems.push_back("adversarial update reached the discriminator");

  std::string detail = problems.empty() ? "reachability sets, group partition and update visibility as mapped"
                                        : problems.front();
  for (std::size_t i = 1; i < problems.size(); ++i) detail += "; " + problems[i];
  return {problems.empty(), detail};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Verdict()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 120, gradient_correctness},
      {2, "degenerate equivalences", 60, degenerate_equivalences},
      {3, "auxiliary-loss bound", 10, auxiliary_bound},
      {4, "overfit capability", 600, overfit},
      {5, "diversity trend", 1800, diversity_trend},
      {6, "probe pipeline sanity", 600, probe_sanity},
      {7, "BLEU oracle agreement", 10, bleu_oracle},
      {8, "determinism", 600, determinism},
      {9, "parameter-sharing structure", 10, sharing_structure},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = v.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << v.detail
              << " (" << fmt(secs, 1) << " s" << (in_time ? "" : ", over the time budget") << ")"
              << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
