#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "caae/model.hpp"
#include "caae/optim.hpp"

namespace caae {

struct TrainConfig {
  AdamConfig adam{};
  double clip_norm = 1.0;
  std::size_t epochs = 30;
  double phase_prob = 0.5;  // probability of a generative iteration
  std::size_t aux_n = 1;
  double w_rec = 1.0;
  double w_cls = 1.0;
  double w_adv = 1.0;
  double w_aux = 1.0;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  bool log_wall_time = true;

  void validate() const {
    if (!(phase_prob >= 0 && phase_prob <= 1))
      throw std::invalid_argument("phase_prob must lie in [0, 1]");
    if (aux_n < 1) throw std::invalid_argument("aux_n must be >= 1");
    for (double w : {w_rec, w_cls, w_adv, w_aux})
      if (!(w >= 0)) throw std::invalid_argument("loss weights must be >= 0");
    if (!(clip_norm > 0)) throw std::invalid_argument("clip_norm must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"lr", adam.lr},         {"beta1", adam.beta1},     {"beta2", adam.beta2},
            {"adam_eps", adam.eps},  {"clip_norm", clip_norm},  {"epochs", epochs},
            {"phase_prob", phase_prob}, {"aux_n", aux_n},       {"w_rec", w_rec},
            {"w_cls", w_cls},        {"w_adv", w_adv},          {"w_aux", w_aux},
            {"batch_size", batch_size}, {"seed", seed},         {"log_wall_time", log_wall_time}};
  }
};

enum class Phase { Generative, Discriminative };

inline const char* phase_name(Phase p) {
  return p == Phase::Generative ? "generative" : "discriminative";
}

struct PhaseOutcome {
  Phase phase = Phase::Generative;
  std::optional<double> reconstruction;
  std::optional<double> cls_real;
  std::optional<double> cls_prior;
  std::optional<double> adversarial;
  std::optional<double> auxiliary;
  std::optional<double> discriminator;
  double total = 0;
  double grad_norm = 0;  // before clipping

  nlohmann::json losses_json() const {
    nlohmann::json j = nlohmann::json::object();
    auto put = [&](const char* k, const std::optional<double>& v) {
      if (v) j[k] = *v;
    };
    put("reconstruction", reconstruction);
    put("cls_real", cls_real);
    put("cls_prior", cls_prior);
    put("adversarial", adversarial);
    put("auxiliary", auxiliary);
    put("discriminator", discriminator);
    return j;
  }
};

// Index and value of the smallest entry; ties go to the lowest index.
template <typename T>
std::pair<std::size_t, T> min_over_samples(std::span<const T> values) {
  if (values.empty()) throw std::invalid_argument("min over zero samples");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] < values[best]) best = i;
  return {best, values[best]};
}

// Soft counterpart of the auxiliary loss: -log((1/N) sum_i exp(-L_i)).
inline double log_mean_exp_nll(std::span<const double> nlls) {
  double mn = std::numeric_limits<double>::infinity();
  for (double l : nlls) mn = std::min(mn, l);
  double s = 0;
  for (double l : nlls) s += std::exp(-(l - mn));
  return mn - std::log(s / static_cast<double>(nlls.size()));
}

// Per-sentence NLL of the premise under N prior samples, without gradients.
// Row b of the result holds NLL(premise_b | z_i) for i = 0..N-1.
template <typename T>
std::vector<std::vector<T>> prior_sample_nlls(const ModelBundle<T>& model, const Batch& batch,
                                              std::span<const Tensor<T>> noise,
                                              std::vector<Tensor<T>>* latents = nullptr) {
  Tape<T> tape(false);
  const Sequence<T> hyp = model.encode_hypothesis(tape, batch);
  std::vector<std::vector<T>> out(batch.size, std::vector<T>(noise.size()));
  for (std::size_t i = 0; i < noise.size(); ++i) {
    Var<T> z = model.prior_sample(tape, hyp, batch.labels, noise[i]);
    if (latents) latents->push_back(z.to_tensor());
    const auto nll = model.decode(tape, z, batch).nll.value();
    for (std::size_t b = 0; b < batch.size; ++b) out[b][i] = nll[b];
  }
  return out;
}

// min_i NLL(premise | z_i), z_i from the prior with noise[i]. Only the
// argmin sample of each sentence is rebuilt on `tape`, so gradients reach
// the decoder and the prior through that sample alone. Returns [B x 1].
template <typename T>
Var<T> auxiliary_loss(Tape<T>& tape, const ModelBundle<T>& model, const Batch& batch,
                      const Sequence<T>& hyp, std::span<const Tensor<T>> noise) {
  if (noise.empty()) throw std::invalid_argument("auxiliary loss needs N >= 1");
  if (noise.size() == 1)
    return model.decode(tape, model.prior_sample(tape, hyp, batch.labels, noise[0]), batch).nll;
  const auto nlls = prior_sample_nlls(model, batch, noise);
  Tensor<T> chosen({batch.size, model.config().noise_width});
  for (std::size_t b = 0; b < batch.size; ++b) {
    const auto [idx, val] = min_over_samples<T>(nlls[b]);
    (void)val;
    const Tensor<T>& src = noise[idx];
    std::copy(src.data() + b * src.cols(), src.data() + (b + 1) * src.cols(),
              chosen.data() + b * chosen.cols());
  }
  return model.decode(tape, model.prior_sample(tape, hyp, batch.labels, chosen), batch).nll;
}

template <typename T>
Var<T> mean_xent(Var<T> logits, const std::vector<Label>& labels) {
  const Ids ids = label_ids(labels);
  return mean_all(xent(logits, std::span<const int>(ids)));
}

template <typename T>
Var<T> mean_bce(Var<T> logits, T target) {
  const std::vector<T> tg(logits.rows(), target);
  return mean_all(bce_logits(logits, std::span<const T>(tg)));
}

namespace detail {
inline std::string dump_losses(const PhaseOutcome& o) {
  return std::string(phase_name(o.phase)) + " losses " + o.losses_json().dump();
}
}  // namespace detail

// Owns the two optimizers and the training RNG of one model.
template <typename T>
class Trainer {
 public:
  Trainer(ModelBundle<T>& model, TrainConfig cfg)
      : model_(model), cfg_(cfg), gen_opt_(cfg.adam), disc_opt_(cfg.adam), rng_(cfg.seed) {
    cfg_.validate();
  }

  const TrainConfig& config() const { return cfg_; }
  ModelBundle<T>& model() { return model_; }
  std::mt19937_64& rng() { return rng_; }
  Adam<T>& generator_optimizer() { return gen_opt_; }
  Adam<T>& discriminator_optimizer() { return disc_opt_; }

  std::vector<Tensor<T>> draw_noise(std::size_t batch, std::size_t n) {
    std::vector<Tensor<T>> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(model_.draw_noise(batch, rng_));
    return out;
  }

  PhaseOutcome generative_step(const Batch& batch) {
    auto noise = draw_noise(batch.size, 1);
    auto aux_noise = cfg_.w_aux > 0 ? draw_noise(batch.size, cfg_.aux_n)
                                    : std::vector<Tensor<T>>{};
    return generative_step(batch, noise.front(), aux_noise);
  }

  // Explicit-noise form: `noise` feeds the classifier/adversarial prior
  // sample, `aux_noise` the N auxiliary-loss samples.
  PhaseOutcome generative_step(const Batch& batch, const Tensor<T>& noise,
                               std::span<const Tensor<T>> aux_noise) {
    PhaseOutcome out;
    out.phase = Phase::Generative;
    auto gen = model_.generator_params();
    for (auto* p : gen) p->zero_grad();
    Tape<T> tape;
    tape.freeze(model_.discriminator_params());

    Var<T> z_enc = model_.encode_premise(tape, batch);
    Var<T> rec = mean_all(model_.decode(tape, z_enc, batch).nll);
    out.reconstruction = rec.item();
    Var<T> total = scale(rec, static_cast<T>(cfg_.w_rec));

    const bool need_prior = cfg_.w_cls > 0 || cfg_.w_adv > 0;
    const Sequence<T> hyp = model_.encode_hypothesis(tape, batch);
    std::optional<Var<T>> z_prior;
    if (need_prior) z_prior = model_.prior_sample(tape, hyp, batch.labels, noise);

    if (cfg_.w_cls > 0) {
      Var<T> real = mean_xent(model_.classify_logits(tape, z_enc, hyp), batch.labels);
      Var<T> prior = mean_xent(model_.classify_logits(tape, *z_prior, hyp), batch.labels);
      out.cls_real = real.item();
      out.cls_prior = prior.item();
      total = add(total, scale(add(real, prior), static_cast<T>(cfg_.w_cls)));
    }
    if (cfg_.w_adv > 0) {
      // Generator side wants the encoder's z judged "prior" and the prior's
      // z judged "encoder".
      const Sequence<T> dh = model_.discriminator().encode(tape, batch);
      Var<T> adv = scale(
          add(mean_bce(model_.discriminate_logits(tape, z_enc, dh, batch.labels), T(1)),
              mean_bce(model_.discriminate_logits(tape, *z_prior, dh, batch.labels), T(0))),
          T(0.5));
      out.adversarial = adv.item();
      total = add(total, scale(adv, static_cast<T>(cfg_.w_adv)));
    }
    if (cfg_.w_aux > 0) {
      if (aux_noise.size() != cfg_.aux_n)
        throw std::invalid_argument("generative_step: expected aux_n noise samples");
      Var<T> aux = mean_all(auxiliary_loss(tape, model_, batch, hyp, aux_noise));
      out.auxiliary = aux.item();
      total = add(total, scale(aux, static_cast<T>(cfg_.w_aux)));
    }
    out.total = total.item();
    if (!std::isfinite(out.total))
      throw NumericError("non-finite loss in " + detail::dump_losses(out));
    tape.backward(total);
    finish(out, gen, gen_opt_);
    return out;
  }

  PhaseOutcome discriminative_step(const Batch& batch) {
    auto noise = draw_noise(batch.size, 1);
    return discriminative_step(batch, noise.front());
  }

  PhaseOutcome discriminative_step(const Batch& batch, const Tensor<T>& noise) {
    PhaseOutcome out;
    out.phase = Phase::Discriminative;
    auto disc = model_.discriminator_params();
    for (auto* p : disc) p->zero_grad();
    Tape<T> tape;
    tape.freeze(model_.generator_params());
    Var<T> z_enc = model_.encode_premise(tape, batch);
    Var<T> z_prior = model_.prior_sample(tape, batch, noise);
    const Sequence<T> dh = model_.discriminator().encode(tape, batch);
    Var<T> loss = scale(
        add(mean_bce(model_.discriminate_logits(tape, z_prior, dh, batch.labels), T(1)),
            mean_bce(model_.discriminate_logits(tape, z_enc, dh, batch.labels), T(0))),
        T(0.5));
    out.discriminator = out.total = loss.item();
    if (!std::isfinite(out.total))
      throw NumericError("non-finite loss in " + detail::dump_losses(out));
    tape.backward(loss);
    finish(out, disc, disc_opt_);
    return out;
  }

  // Seeded coin flip between the two phases.
  Phase pick_phase() {
    std::bernoulli_distribution coin(cfg_.phase_prob);
    return coin(rng_) ? Phase::Generative : Phase::Discriminative;
  }

  PhaseOutcome step(const Batch& batch) {
    return pick_phase() == Phase::Generative ? generative_step(batch)
                                             : discriminative_step(batch);
  }

 private:
  void finish(PhaseOutcome& out, const ParamGroup<T>& group, Adam<T>& opt) {
    out.grad_norm = global_grad_norm(group);
    if (!std::isfinite(out.grad_norm))
      throw NumericError("non-finite gradient norm in " + detail::dump_losses(out));
    clip_global_norm(group, cfg_.clip_norm);
    opt.step(group);
  }

  ModelBundle<T>& model_;
  TrainConfig cfg_;
  Adam<T> gen_opt_;
  Adam<T> disc_opt_;
  std::mt19937_64 rng_;
};

// Plain maximum-likelihood trainer for the baseline encoder-decoder.
template <typename T>
class BaselineTrainer {
 public:
  BaselineTrainer(BaselineModel<T>& model, TrainConfig cfg)
      : model_(model), cfg_(cfg), opt_(cfg.adam), rng_(cfg.seed) {
    cfg_.validate();
  }

  PhaseOutcome step(const Batch& batch) {
    PhaseOutcome out;
    auto params = model_.params();
    for (auto* p : params) p->zero_grad();
    Tape<T> tape;
    Var<T> loss = model_.loss(tape, batch);
    out.reconstruction = out.total = loss.item();
    if (!std::isfinite(out.total))
      throw NumericError("non-finite loss in " + detail::dump_losses(out));
    tape.backward(loss);
    out.grad_norm = global_grad_norm(params);
    clip_global_norm(params, cfg_.clip_norm);
    opt_.step(params);
    return out;
  }

  Adam<T>& optimizer() { return opt_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  BaselineModel<T>& model_;
  TrainConfig cfg_;
  Adam<T> opt_;
  std::mt19937_64 rng_;
};

// Supervised classifier training on real (premise, hypothesis, label)
// triplets only; used to build evaluation probes.
template <typename T>
class ClassifierTrainer {
 public:
  ClassifierTrainer(ModelBundle<T>& model, TrainConfig cfg)
      : model_(model), cfg_(cfg), opt_(cfg.adam) {}

  double step(const Batch& batch) {
    ParamGroup<T> params;
    for (auto* p : model_.generator_params())
      if (p->name.rfind("gen.enc", 0) == 0 || p->name.rfind("gen.embed", 0) == 0 ||
          p->name.rfind("gen.compress", 0) == 0 || p->name.rfind("gen.retrieve", 0) == 0 ||
          p->name.rfind("gen.cls", 0) == 0)
        params.push_back(p);
    for (auto* p : params) p->zero_grad();
    Tape<T> tape;
    tape.freeze(model_.discriminator_params());
    Var<T> z = model_.encode_premise(tape, batch);
    Var<T> loss = mean_xent(model_.classify_logits(tape, z, model_.encode_hypothesis(tape, batch)),
                            batch.labels);
    const double v = loss.item();
    if (!std::isfinite(v)) throw NumericError("non-finite probe loss");
    tape.backward(loss);
    clip_global_norm(params, cfg_.clip_norm);
    opt_.step(params);
    return v;
  }

  Adam<T>& optimizer() { return opt_; }

 private:
  ModelBundle<T>& model_;
  TrainConfig cfg_;
  Adam<T> opt_;
};

// Label predictions of classify(encode(premise), hypothesis).
template <typename T>
std::vector<Label> predict_labels(const ModelBundle<T>& model, const Batch& batch) {
  Tape<T> tape(false);
  Var<T> z = model.encode_premise(tape, batch);
  Var<T> logits = model.classify_logits(tape, z, model.encode_hypothesis(tape, batch));
  std::vector<Label> out;
  const auto v = logits.value();
  for (std::size_t b = 0; b < batch.size; ++b) {
    const auto row = v.subspan(b * kNumLabels, kNumLabels);
    out.push_back(static_cast<Label>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

struct ReconstructionStats {
  std::size_t hits = 0;
  std::size_t tokens = 0;
  double nll_sum = 0;
  std::size_t sentences = 0;

  double token_accuracy() const { return tokens ? double(hits) / double(tokens) : 0.0; }
  double mean_nll() const { return sentences ? nll_sum / double(sentences) : 0.0; }
};

// Teacher-forced reconstruction quality of decode(encode(premise)).
template <typename T>
ReconstructionStats reconstruction_stats(const ModelBundle<T>& model,
                                         const std::vector<Batch>& batches) {
  ReconstructionStats s;
  for (const auto& b : batches) {
    Tape<T> tape(false);
    const auto d = model.decode(tape, model.encode_premise(tape, b), b);
    const auto [hits, total] = token_hits(d);
    s.hits += hits;
    s.tokens += total;
    for (T v : d.nll.value()) s.nll_sum += v;
    s.sentences += b.size;
  }
  return s;
}

template <typename T>
double classifier_accuracy(const ModelBundle<T>& model, const std::vector<Batch>& batches) {
  std::size_t hits = 0, total = 0;
  for (const auto& b : batches) {
    const auto pred = predict_labels(model, b);
    for (std::size_t i = 0; i < b.size; ++i) hits += pred[i] == b.labels[i];
    total += b.size;
  }
  return total ? double(hits) / double(total) : 0.0;
}

// One JSON line per iteration of the metrics log.
inline nlohmann::json metrics_line(std::size_t iteration, std::size_t epoch,
                                   const PhaseOutcome& o, double wall_time) {
  return {{"iteration", iteration}, {"epoch", epoch},       {"phase", phase_name(o.phase)},
          {"losses", o.losses_json()}, {"total", o.total}, {"grad_norm", o.grad_norm},
          {"wall_time", wall_time}};
}

}  // namespace caae
