#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "caae/data.hpp"
#include "caae/fusion.hpp"
#include "caae/seqnet.hpp"

namespace caae {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 300;  // hidden state, embedding and latent width
  std::size_t layers = 2;
  FusionKind fusion = FusionKind::Mosm;
  std::size_t n_candidates = 4;
  std::size_t noise_width = 300;
  // Uniform init ranges of the recurrent stacks (and their projections) and
  // of the embedding tables.
  double init_range = kInitRange;
  double embed_init_range = kInitRange;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size}, {"hidden", hidden},
            {"layers", layers},         {"fusion", fusion_name(fusion)},
            {"n_candidates", n_candidates}, {"noise_width", noise_width},
            {"init_range", init_range}, {"embed_init_range", embed_init_range},
            {"seed", seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    const auto f = parse_fusion(j.at("fusion").get<std::string>());
    if (!f) throw DataError("unknown fusion in model config");
    c.fusion = *f;
    c.n_candidates = j.at("n_candidates").get<std::size_t>();
    c.noise_width = j.at("noise_width").get<std::size_t>();
    c.init_range = j.value("init_range", kInitRange);
    c.embed_init_range = j.value("embed_init_range", kInitRange);
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

// Batch-major [B x width] ids -> time-major rows (t*B + b).
inline Ids to_time_major(const Ids& ids, std::size_t batch, std::size_t width) {
  Ids out(ids.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < width; ++t) out[t * batch + b] = ids[b * width + t];
  return out;
}

inline Ids label_ids(const std::vector<Label>& labels) {
  Ids out;
  for (auto l : labels) out.push_back(static_cast<int>(l));
  return out;
}

// Builds a padded batch directly from id sequences.
inline Batch batch_from_ids(const std::vector<Ids>& premises, const std::vector<Ids>& hypotheses,
                            const std::vector<Label>& labels) {
  if (premises.size() != hypotheses.size() || premises.size() != labels.size())
    throw std::invalid_argument("batch_from_ids: ragged inputs");
  Batch b;
  b.size = premises.size();
  b.labels = labels;
  for (std::size_t i = 0; i < b.size; ++i) b.source_index.push_back(i);
  detail::pad_rows(premises, b.premise, b.premise_width, b.premise_len);
  detail::pad_rows(hypotheses, b.hypothesis, b.hypothesis_width, b.hypothesis_len);
  return b;
}

template <typename T>
struct SequenceEncoder {
  Embedding<T> embed;
  BiLstm<T> rnn;

  Sequence<T> operator()(Tape<T>& tape, const Ids& ids, std::size_t width,
                         const std::vector<std::size_t>& lengths) const {
    const std::size_t batch = lengths.size();
    for (auto len : lengths)
      if (len == 0) throw ShapeError("cannot encode an empty sentence");
    const Ids tm = to_time_major(ids, batch, width);
    Sequence<T> in{embed(tape, tm), width, lengths};
    return rnn.run(tape, in);
  }
};

template <typename T>
struct DecodeOutput {
  Var<T> nll;     // [B x 1] mean per-token NLL of each sentence
  Var<T> logits;  // [S*B x V] time-major
  Ids targets;    // time-major, -1 at padded positions
};

// RNN_dec plus the output head g(s_t, c_t) = softmax(Linear([s_t, c_t])).
template <typename T>
struct Decoder {
  Embedding<T> embed;
  UniLstm<T> rnn;
  Retriever<T> retrieve;
  Linear<T> out;

  // Teacher forcing: inputs BOS + sentence, targets sentence + EOS.
  DecodeOutput<T> teacher_forced(Tape<T>& tape, Var<T> z, const Ids& ids, std::size_t width,
                                 const std::vector<std::size_t>& lengths) const {
    const std::size_t batch = lengths.size();
    if (z.rows() != batch) throw ShapeError("decoder: z " + z.dims() + " for batch of " +
                                            std::to_string(batch));
    std::size_t steps = 0;
    for (auto len : lengths) steps = std::max(steps, len + 1);
    Ids inputs(steps * batch, Vocab::kPad), targets(steps * batch, -1);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t len = lengths[b];
      inputs[b] = Vocab::kBos;
      for (std::size_t t = 0; t < len; ++t) {
        const int tok = ids[b * width + t];
        inputs[(t + 1) * batch + b] = tok;
        targets[t * batch + b] = tok;
      }
      targets[len * batch + b] = Vocab::kEos;
    }
    auto state = rnn.initial_state(tape, batch);
    std::vector<Var<T>> outs;
    for (std::size_t t = 0; t < steps; ++t) {
      Var<T> x = embed(tape, std::span<const int>(inputs.data() + t * batch, batch));
      outs.push_back(rnn.step(tape, x, state));
    }
    Var<T> s = concat(outs, 0);
    Var<T> c = retrieve(tape, z, s, steps);
    Var<T> logits = out(tape, concat<T>({s, c}, 1));
    Var<T> tok_nll = xent(logits, std::span<const int>(targets));
    std::vector<std::size_t> lens1(lengths);
    for (auto& l : lens1) ++l;
    return {pool_time(Reduce::Mean, tok_nll, std::span<const std::size_t>(lens1)), logits,
            std::move(targets)};
  }

  // Greedy search; each output stops at EOS or after max_len tokens.
  std::vector<Ids> greedy(const Tensor<T>& z, std::size_t max_len) const {
    Tape<T> tape(false);
    const std::size_t batch = z.rows();
    Var<T> zv = tape.constant(z);
    auto state = rnn.initial_state(tape, batch);
    std::vector<Ids> result(batch);
    std::vector<bool> done(batch, false);
    Ids prev(batch, Vocab::kBos);
    for (std::size_t step = 0; step < max_len; ++step) {
      Var<T> x = embed(tape, std::span<const int>(prev));
      Var<T> s = rnn.step(tape, x, state);
      Var<T> logits = out(tape, concat<T>({s, retrieve(tape, zv, s, 1)}, 1));
      const auto v = logits.value();
      const std::size_t vocab = logits.cols();
      bool all_done = true;
      for (std::size_t b = 0; b < batch; ++b) {
        const auto row = v.subspan(b * vocab, vocab);
        const int tok = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        prev[b] = tok;
        if (done[b]) continue;
        if (tok == Vocab::kEos) {
          done[b] = true;
        } else {
          result[b].push_back(tok);
        }
        all_done = all_done && done[b];
      }
      if (all_done) break;
    }
    return result;
  }
};

// Fraction of teacher-forced targets whose argmax prediction is correct.
template <typename T>
std::pair<std::size_t, std::size_t> token_hits(const DecodeOutput<T>& d) {
  const auto v = d.logits.value();
  const std::size_t vocab = d.logits.cols();
  std::size_t hits = 0, total = 0;
  for (std::size_t r = 0; r < d.targets.size(); ++r) {
    if (d.targets[r] < 0) continue;
    const auto row = v.subspan(r * vocab, vocab);
    hits += (std::max_element(row.begin(), row.end()) - row.begin()) == d.targets[r];
    ++total;
  }
  return {hits, total};
}

// Conditional prior p(z | hypothesis, label).
template <typename T>
struct Prior {
  Embedding<T> label;
  Mlp<T> mlp;
  BiLstm<T> refine;
  Compressor<T> compress;
  std::size_t noise_width = 0;

  // One noise row per sentence, shared by all of its time steps.
  Var<T> sample(Tape<T>& tape, const Sequence<T>& hyp, const std::vector<Label>& labels,
                const Tensor<T>& eps) const {
    const std::size_t batch = hyp.batch();
    if (eps.rows() != batch || eps.cols() != noise_width)
      throw ShapeError("prior: noise " + shape_str(eps.shape()) + " for batch " +
                       std::to_string(batch) + ", width " + std::to_string(noise_width));
    const Ids lids = label_ids(labels);
    Var<T> e = tile_rows(label(tape, lids), hyp.steps);
    Var<T> n = tile_rows(tape.constant(eps), hyp.steps);
    Var<T> mixed = mlp(tape, concat<T>({hyp.rows, e, n}, 1));
    return compress(tape, refine.run(tape, {mixed, hyp.steps, hyp.lengths}));
  }
};

template <typename T>
struct Classifier {
  Retriever<T> retrieve;
  Linear<T> combine;
  BiLstm<T> refine;
  Mlp<T> head;

  // Logits over the three labels, [B x 3].
  Var<T> logits(Tape<T>& tape, Var<T> z, const Sequence<T>& hyp) const {
    Var<T> h = hyp.rows;
    Var<T> c = retrieve(tape, z, h, hyp.steps);
    Var<T> feat = concat<T>({h, c, abs(sub(h, c)), mul(h, c)}, 1);
    Sequence<T> refined =
        refine.run(tape, {tanh(combine(tape, feat)), hyp.steps, hyp.lengths});
    Var<T> pooled = concat<T>({pool_time(Reduce::Max, refined.rows, refined.lengths),
                               pool_time(Reduce::Mean, refined.rows, refined.lengths)},
                              1);
    return head(tape, pooled);
  }
};

// Owns every parameter it touches: encoder, retrieval, label embedding.
template <typename T>
struct Discriminator {
  SequenceEncoder<T> encoder;
  Retriever<T> retrieve;
  Embedding<T> label;
  Linear<T> combine;
  BiLstm<T> refine;
  Mlp<T> head;

  Sequence<T> encode(Tape<T>& tape, const Batch& batch) const {
    return encoder(tape, batch.hypothesis, batch.hypothesis_width, batch.hypothesis_len);
  }

  // Logit of "z came from the prior", [B x 1].
  Var<T> logits(Tape<T>& tape, Var<T> z, const Sequence<T>& hyp,
                const std::vector<Label>& labels) const {
    Var<T> h = hyp.rows;
    Var<T> c = retrieve(tape, z, h, hyp.steps);
    const Ids lids = label_ids(labels);
    Var<T> e = tile_rows(label(tape, lids), hyp.steps);
    Sequence<T> refined = refine.run(
        tape, {tanh(combine(tape, concat<T>({h, c, e}, 1))), hyp.steps, hyp.lengths});
    Var<T> pooled = concat<T>({pool_time(Reduce::Max, refined.rows, refined.lengths),
                               pool_time(Reduce::Mean, refined.rows, refined.lengths)},
                              1);
    return head(tape, pooled);
  }
};

// The conditional adversarial autoencoder. Parameter names carry the
// sharing map: everything under "gen." belongs to the autoencoder, prior
// and classifier; everything under "disc." to the discriminator.
template <typename T>
class ModelBundle {
 public:
  explicit ModelBundle(ModelConfig cfg)
      : config_(cfg), store_(std::make_unique<ParamStore<T>>()) {
    if (cfg.vocab_size <= Vocab::kReserved) throw std::invalid_argument("vocab too small");
    std::mt19937_64 rng(cfg.seed);
    auto& s = *store_;
    const std::size_t h = cfg.hidden, l = cfg.layers, nw = cfg.n_candidates;
    const double ir = cfg.init_range, er = cfg.embed_init_range;

    Embedding<T> words(s, "gen.embed", cfg.vocab_size, h, rng, Vocab::kPad, er);
    encoder_ = {words, BiLstm<T>(s, "gen.enc", h, h, l, rng, ir)};
    compress_ = Compressor<T>(s, "gen.compress", cfg.fusion, h, nw, rng);
    retrieve_ = Retriever<T>(s, "gen.retrieve", cfg.fusion, h, nw, rng);
    decoder_ = {words, UniLstm<T>(s, "gen.dec", h, h, l, rng, ir), retrieve_,
                Linear<T>(s, "gen.out", 2 * h, cfg.vocab_size, rng, Init::Glorot)};
    prior_ = {Embedding<T>(s, "gen.prior.label", kNumLabels, h, rng, -1, er),
              Mlp<T>(s, "gen.prior.mlp", 2 * h + cfg.noise_width, h, h, rng, Init::Glorot),
              BiLstm<T>(s, "gen.prior.refine", h, h, l, rng, ir), compress_, cfg.noise_width};
    classifier_ = {retrieve_, Linear<T>(s, "gen.cls.combine", 4 * h, h, rng, Init::Glorot),
                   BiLstm<T>(s, "gen.cls.refine", h, h, l, rng, ir),
                   Mlp<T>(s, "gen.cls.head", 2 * h, h, kNumLabels, rng, Init::Glorot)};

    Embedding<T> dwords(s, "disc.embed", cfg.vocab_size, h, rng, Vocab::kPad, er);
    disc_ = {{dwords, BiLstm<T>(s, "disc.enc", h, h, l, rng, ir)},
             Retriever<T>(s, "disc.retrieve", cfg.fusion, h, nw, rng),
             Embedding<T>(s, "disc.label", kNumLabels, h, rng, -1, er),
             Linear<T>(s, "disc.combine", 3 * h, h, rng, Init::Glorot),
             BiLstm<T>(s, "disc.refine", h, h, l, rng, ir),
             Mlp<T>(s, "disc.head", 2 * h, h, 1, rng, Init::Glorot)};
  }

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& store() { return *store_; }
  const ParamStore<T>& store() const { return *store_; }
  ParamGroup<T> generator_params() { return store_->with_prefix("gen."); }
  ParamGroup<T> discriminator_params() { return store_->with_prefix("disc."); }

  const SequenceEncoder<T>& encoder() const { return encoder_; }
  const Compressor<T>& compressor() const { return compress_; }
  const Retriever<T>& retriever() const { return retrieve_; }
  const Decoder<T>& decoder() const { return decoder_; }
  const Prior<T>& prior() const { return prior_; }
  const Classifier<T>& classifier() const { return classifier_; }
  const Discriminator<T>& discriminator() const { return disc_; }

  Sequence<T> encode_premise_states(Tape<T>& tape, const Batch& b) const {
    return encoder_(tape, b.premise, b.premise_width, b.premise_len);
  }
  Sequence<T> encode_hypothesis(Tape<T>& tape, const Batch& b) const {
    return encoder_(tape, b.hypothesis, b.hypothesis_width, b.hypothesis_len);
  }

  // z = f_compress(RNN_enc(premise)), [B x H].
  Var<T> encode_premise(Tape<T>& tape, const Batch& b) const {
    return compress_(tape, encode_premise_states(tape, b));
  }

  Var<T> prior_sample(Tape<T>& tape, const Sequence<T>& hyp, const std::vector<Label>& labels,
                      const Tensor<T>& eps) const {
    return prior_.sample(tape, hyp, labels, eps);
  }
  Var<T> prior_sample(Tape<T>& tape, const Batch& b, const Tensor<T>& eps) const {
    return prior_sample(tape, encode_hypothesis(tape, b), b.labels, eps);
  }

  Tensor<T> draw_noise(std::size_t batch, std::mt19937_64& rng) const {
    return Tensor<T>::normal({batch, config_.noise_width}, rng);
  }

  DecodeOutput<T> decode(Tape<T>& tape, Var<T> z, const Batch& b) const {
    return decoder_.teacher_forced(tape, z, b.premise, b.premise_width, b.premise_len);
  }

  std::vector<Ids> decode_greedy(const Tensor<T>& z, std::size_t max_len = 30) const {
    return decoder_.greedy(z, max_len);
  }

  Var<T> classify_logits(Tape<T>& tape, Var<T> z, const Sequence<T>& hyp) const {
    return classifier_.logits(tape, z, hyp);
  }

  Var<T> discriminate_logits(Tape<T>& tape, Var<T> z, const Sequence<T>& disc_hyp,
                             const std::vector<Label>& labels) const {
    return disc_.logits(tape, z, disc_hyp, labels);
  }

 private:
  ModelConfig config_;
  std::unique_ptr<ParamStore<T>> store_;
  SequenceEncoder<T> encoder_;
  Compressor<T> compress_;
  Retriever<T> retrieve_;
  Decoder<T> decoder_;
  Prior<T> prior_;
  Classifier<T> classifier_;
  Discriminator<T> disc_;
};

// Deterministic encoder-decoder: z = MLP([f_compress(RNN_enc(hyp)), e_label])
// and the decoder reads g([s_t, z]).
template <typename T>
class BaselineModel {
 public:
  explicit BaselineModel(ModelConfig cfg)
      : config_(cfg), store_(std::make_unique<ParamStore<T>>()) {
    if (cfg.vocab_size <= Vocab::kReserved) throw std::invalid_argument("vocab too small");
    std::mt19937_64 rng(cfg.seed);
    auto& s = *store_;
    const std::size_t h = cfg.hidden, l = cfg.layers;
    const double ir = cfg.init_range, er = cfg.embed_init_range;
    Embedding<T> words(s, "base.embed", cfg.vocab_size, h, rng, Vocab::kPad, er);
    encoder_ = {words, BiLstm<T>(s, "base.enc", h, h, l, rng, ir)};
    compress_ = Compressor<T>(s, "base.compress", cfg.fusion, h, cfg.n_candidates, rng);
    label_ = Embedding<T>(s, "base.label", kNumLabels, h, rng, -1, er);
    mlp_ = Mlp<T>(s, "base.mlp", 2 * h, h, h, rng, Init::Glorot);
    decoder_ = {words, UniLstm<T>(s, "base.dec", h, h, l, rng, ir), Retriever<T>{},
                Linear<T>(s, "base.out", 2 * h, cfg.vocab_size, rng, Init::Glorot)};
  }

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& store() { return *store_; }
  const ParamStore<T>& store() const { return *store_; }
  ParamGroup<T> params() { return store_->all(); }

  Var<T> latent(Tape<T>& tape, const Batch& b) const {
    Var<T> zh = compress_(tape, encoder_(tape, b.hypothesis, b.hypothesis_width,
                                         b.hypothesis_len));
    return mlp_(tape, concat<T>({zh, label_(tape, label_ids(b.labels))}, 1));
  }

  DecodeOutput<T> forward(Tape<T>& tape, const Batch& b) const {
    return decoder_.teacher_forced(tape, latent(tape, b), b.premise, b.premise_width,
                                   b.premise_len);
  }

  // Mean per-token NLL over the batch.
  Var<T> loss(Tape<T>& tape, const Batch& b) const { return mean_all(forward(tape, b).nll); }

  std::vector<Ids> generate(const Batch& b, std::size_t max_len = 30) const {
    Tape<T> tape(false);
    return decoder_.greedy(latent(tape, b).to_tensor(), max_len);
  }

 private:
  ModelConfig config_;
  std::unique_ptr<ParamStore<T>> store_;
  SequenceEncoder<T> encoder_;
  Compressor<T> compress_;
  Embedding<T> label_;
  Mlp<T> mlp_;
  Decoder<T> decoder_;
};

}  // namespace caae
