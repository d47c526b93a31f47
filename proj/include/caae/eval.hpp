#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "caae/bleu.hpp"
#include "caae/model.hpp"
#include "caae/training.hpp"

namespace caae {

// Maps a list of (premise, hypothesis, label) triplets to one generated
// premise per triplet. Generators that sample draw from their own RNG, so
// two calls yield independent samples.
using PremiseGenerator = std::function<std::vector<Tokens>(const std::vector<SnliExample>&)>;
using BleuFn = std::function<double(const Tokens&, const Tokens&)>;

inline constexpr std::size_t kEvalChunk = 64;

struct EvalReport {
  std::size_t count = 0;
  double accuracy = 0;
  // counts[l][p]: conditioning label l, probe prediction p.
  std::array<std::array<std::size_t, kNumLabels>, kNumLabels> counts{};
  std::optional<double> bleu_rs;
  std::optional<double> bleu_ss;
  std::optional<double> random_control;
  std::optional<double> real_accuracy;
  std::size_t diversity_count = 0;
  std::size_t failures = 0;

  // Row-normalised confusion; a row with no samples stays all zero.
  std::array<std::array<double, kNumLabels>, kNumLabels> confusion() const {
    std::array<std::array<double, kNumLabels>, kNumLabels> out{};
    for (std::size_t l = 0; l < kNumLabels; ++l) {
      std::size_t n = 0;
      for (auto c : counts[l]) n += c;
      if (!n) continue;
      for (std::size_t p = 0; p < kNumLabels; ++p)
        out[l][p] = static_cast<double>(counts[l][p]) / static_cast<double>(n);
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json conf = nlohmann::json::array(), raw = nlohmann::json::array();
    const auto c = confusion();
    for (std::size_t l = 0; l < kNumLabels; ++l) {
      conf.push_back(c[l]);
      raw.push_back(counts[l]);
    }
    auto opt = [](const std::optional<double>& v) -> nlohmann::json {
      return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    return {{"count", count},
            {"accuracy", accuracy},
            {"labels", kLabelNames},
            {"confusion", conf},
            {"confusion_counts", raw},
            {"real_accuracy", opt(real_accuracy)},
            {"random_control", opt(random_control)},
            {"bleu_rs", opt(bleu_rs)},
            {"bleu_ss", opt(bleu_ss)},
            {"diversity_count", diversity_count},
            {"failures", failures}};
  }
};

namespace detail {

template <typename F>
void for_chunks(std::size_t n, F&& f) {
  for (std::size_t start = 0; start < n; start += kEvalChunk) f(start, std::min(n, start + kEvalChunk));
}

// Probe input: premises that came out empty are replaced by a lone <unk>.
inline Batch probe_batch(const Vocab& vocab, const std::vector<Tokens>& premises,
                         const std::vector<SnliExample>& examples, std::size_t first,
                         std::size_t last) {
  std::vector<Ids> prem, hyp;
  std::vector<Label> labels;
  for (std::size_t i = first; i < last; ++i) {
    Ids p = vocab.encode(premises[i], false);
    if (p.empty()) p.push_back(Vocab::kUnk);
    prem.push_back(std::move(p));
    hyp.push_back(vocab.encode(examples[i].hypothesis, false));
    labels.push_back(examples[i].label);
  }
  return batch_from_ids(prem, hyp, labels);
}

}  // namespace detail

// Probe predictions for (premises[i], hypothesis_i).
template <typename T>
std::vector<Label> probe_predict(const ModelBundle<T>& probe, const Vocab& vocab,
                                 const std::vector<Tokens>& premises,
                                 const std::vector<SnliExample>& examples) {
  if (premises.size() != examples.size()) throw std::invalid_argument("probe: size mismatch");
  std::vector<Label> out;
  detail::for_chunks(examples.size(), [&](std::size_t a, std::size_t b) {
    const auto pred = predict_labels(probe, detail::probe_batch(vocab, premises, examples, a, b));
    out.insert(out.end(), pred.begin(), pred.end());
  });
  return out;
}

// Accuracy and confusion of the probe against the conditioning labels.
inline EvalReport score_predictions(const std::vector<SnliExample>& examples,
                                    const std::vector<Label>& pred) {
  EvalReport r;
  r.count = examples.size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto l = static_cast<std::size_t>(examples[i].label);
    const auto p = static_cast<std::size_t>(pred[i]);
    ++r.counts[l][p];
    hits += l == p;
  }
  r.accuracy = r.count ? static_cast<double>(hits) / static_cast<double>(r.count) : 0.0;
  return r;
}

template <typename T>
EvalReport probe_eval(const ModelBundle<T>& probe, const Vocab& vocab,
                      const PremiseGenerator& generate,
                      const std::vector<SnliExample>& examples) {
  const auto premises = generate(examples);
  if (premises.size() != examples.size())
    throw std::runtime_error("generator returned the wrong number of premises");
  return score_predictions(examples, probe_predict(probe, vocab, premises, examples));
}

// Probe accuracy on (premise_perm[i], hypothesis_i, label_i). The
// permutation is a seeded uniform shuffle, or the identity on request.
template <typename T>
double random_control(const ModelBundle<T>& probe, const Vocab& vocab,
                      const std::vector<SnliExample>& examples, std::uint64_t seed,
                      bool identity = false) {
  std::vector<std::size_t> perm(examples.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (!identity) {
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
  }
  std::vector<Tokens> premises;
  for (auto j : perm) premises.push_back(examples[j].premise);
  return score_predictions(examples, probe_predict(probe, vocab, premises, examples)).accuracy;
}

// Probe accuracy on the real premises.
template <typename T>
double real_pair_accuracy(const ModelBundle<T>& probe, const Vocab& vocab,
                          const std::vector<SnliExample>& examples) {
  return random_control(probe, vocab, examples, 0, true);
}

struct DiversityResult {
  double bleu_rs = 0;
  double bleu_ss = 0;
  std::size_t count = 0;
  std::size_t failures = 0;
};

// Two independent generations per triplet. SS is the symmetric BLEU of the
// pair; RS scores the first sample against the real premise. Triplets where
// either sample is empty are skipped and counted as failures.
inline DiversityResult diversity_eval(const PremiseGenerator& generate,
                                      const std::vector<SnliExample>& examples,
                                      const BleuFn& bleu = smoothed_bleu<std::string>) {
  const auto s1 = generate(examples);
  const auto s2 = generate(examples);
  if (s1.size() != examples.size() || s2.size() != examples.size())
    throw std::runtime_error("generator returned the wrong number of premises");
  DiversityResult r;
  double rs = 0, ss = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (s1[i].empty() || s2[i].empty() || examples[i].premise.empty()) {
      ++r.failures;
      continue;
    }
    rs += bleu(s1[i], examples[i].premise);
    ss += 0.5 * (bleu(s1[i], s2[i]) + bleu(s2[i], s1[i]));
    ++r.count;
  }
  if (r.count) {
    r.bleu_rs = rs / static_cast<double>(r.count);
    r.bleu_ss = ss / static_cast<double>(r.count);
  }
  return r;
}

inline PremiseGenerator copy_generator() {
  return [](const std::vector<SnliExample>& ex) {
    std::vector<Tokens> out;
    for (const auto& e : ex) out.push_back(e.premise);
    return out;
  };
}

inline PremiseGenerator constant_generator(Tokens sentence) {
  return [sentence](const std::vector<SnliExample>& ex) {
    return std::vector<Tokens>(ex.size(), sentence);
  };
}

// Greedy decode of one fresh prior draw per triplet. `rng` is shared by
// reference and advances with every call.
template <typename T>
PremiseGenerator prior_generator(const ModelBundle<T>& model, const Vocab& vocab,
                                 std::mt19937_64& rng, std::size_t max_len = 30) {
  return [&model, &vocab, &rng, max_len](const std::vector<SnliExample>& ex) {
    std::vector<Tokens> out;
    detail::for_chunks(ex.size(), [&](std::size_t a, std::size_t b) {
      std::vector<Ids> prem, hyp;
      std::vector<Label> labels;
      for (std::size_t i = a; i < b; ++i) {
        prem.push_back({});
        hyp.push_back(vocab.encode(ex[i].hypothesis, false));
        labels.push_back(ex[i].label);
      }
      const Batch batch = batch_from_ids(prem, hyp, labels);
      Tape<T> tape(false);
      const Tensor<T> noise = model.draw_noise(batch.size, rng);
      const Tensor<T> z = model.prior_sample(tape, batch, noise).to_tensor();
      for (const auto& ids : model.decode_greedy(z, max_len)) out.push_back(vocab.decode(ids));
    });
    return out;
  };
}

template <typename T>
PremiseGenerator baseline_generator(const BaselineModel<T>& model, const Vocab& vocab,
                                    std::size_t max_len = 30) {
  return [&model, &vocab, max_len](const std::vector<SnliExample>& ex) {
    std::vector<Tokens> out;
    detail::for_chunks(ex.size(), [&](std::size_t a, std::size_t b) {
      std::vector<Ids> prem, hyp;
      std::vector<Label> labels;
      for (std::size_t i = a; i < b; ++i) {
        prem.push_back({});
        hyp.push_back(vocab.encode(ex[i].hypothesis, false));
        labels.push_back(ex[i].label);
      }
      for (const auto& ids : model.generate(batch_from_ids(prem, hyp, labels), max_len))
        out.push_back(vocab.decode(ids));
    });
    return out;
  };
}

// N prior latents per triplet with the NLL of the real premise under each;
// is_argmin marks the sample the auxiliary loss would pick. Returns rows
// written.
template <typename T>
std::size_t dump_latents(const ModelBundle<T>& model, const Vocab& vocab,
                         const std::vector<SnliExample>& examples, std::size_t n,
                         std::mt19937_64& rng, std::ostream& out) {
  if (n < 1) throw std::invalid_argument("dump_latents: N must be >= 1");
  std::size_t rows = 0;
  detail::for_chunks(examples.size(), [&](std::size_t a, std::size_t b) {
    std::vector<std::size_t> idx(b - a);
    std::iota(idx.begin(), idx.end(), a);
    const Batch batch = make_batch(examples, vocab, idx);
    std::vector<Tensor<T>> noise, latents;
    for (std::size_t i = 0; i < n; ++i) noise.push_back(model.draw_noise(batch.size, rng));
    const auto nlls = prior_sample_nlls<T>(model, batch, noise, &latents);
    for (std::size_t r = 0; r < batch.size; ++r) {
      const auto best = min_over_samples<T>(nlls[r]).first;
      for (std::size_t i = 0; i < n; ++i) {
        const Tensor<T>& z = latents[i];
        std::vector<double> zv(z.data() + r * z.cols(), z.data() + (r + 1) * z.cols());
        nlohmann::json row = {{"triplet", a + r},
                              {"sample", i},
                              {"z", zv},
                              {"nll", static_cast<double>(nlls[r][i])},
                              {"is_argmin", i == best}};
        out << row.dump() << '\n';
        ++rows;
      }
    }
  });
  if (!out) throw IoError("latent dump write failed");
  return rows;
}

template <typename T>
std::size_t dump_latents(const ModelBundle<T>& model, const Vocab& vocab,
                         const std::vector<SnliExample>& examples, std::size_t n,
                         std::mt19937_64& rng, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  return dump_latents(model, vocab, examples, n, rng, out);
}

}  // namespace caae
