#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "caae/training.hpp"

namespace caae {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  // Per tensor, at most this many coordinates are probed (all when 0).
  std::size_t max_coords = 0;
  std::uint64_t seed = 7;
  std::string fault_op;  // non-empty: corrupt this op's backward rule
  double fault_factor = 1.5;
};

struct GradCheckResult {
  std::string name;
  bool passed = true;
  double max_rel_error = 0;
  std::size_t coords = 0;
  std::string detail;
};

// |analytic - numeric| relative to the larger magnitude, floored at 1e-3 so
// that near-zero gradients are judged on absolute error.
inline double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

inline std::string gc_fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

using LossOnInputs = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Central-difference check of d loss / d input for explicit input tensors.
inline GradCheckResult check_inputs(const std::string& name, std::vector<Tensor<double>> inputs,
                                    const LossOnInputs& loss, const GradCheckOptions& opt = {}) {
  GradCheckResult res;
  res.name = name;
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    if (!opt.fault_op.empty()) tape.inject_fault(opt.fault_op, opt.fault_factor);
    std::vector<Var<double>> vs;
    for (const auto& t : inputs) vs.push_back(tape.leaf(t, true));
    tape.backward(loss(tape, vs));
    for (auto v : vs) {
      const auto g = tape.grad(v);
      analytic.emplace_back(g.begin(), g.end());
    }
  }
  auto eval = [&]() {
    Tape<double> tape(false);
    std::vector<Var<double>> vs;
    for (const auto& t : inputs) vs.push_back(tape.constant(t));
    return loss(tape, vs).item();
  };
  std::mt19937_64 rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> coords(inputs[k].size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords && coords.size() > opt.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords);
    }
    for (auto i : coords) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + opt.step;
      const double up = eval();
      inputs[k][i] = orig - opt.step;
      const double down = eval();
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2 * opt.step);
      const double err = grad_rel_error(analytic[k][i], numeric);
      ++res.coords;
      if (err > opt.rel_tol) res.passed = false;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.detail = "input " + std::to_string(k) + "[" + std::to_string(i) + "] analytic " +
                     gc_fmt(analytic[k][i]) + " numeric " + gc_fmt(numeric);
      }
    }
  }
  return res;
}

using LossOnModel = std::function<Var<double>(Tape<double>&)>;

// Central-difference check of d loss / d parameter for every parameter in
// `params` (sampled coordinates when opt.max_coords > 0).
inline GradCheckResult check_params(const std::string& name, const ParamGroup<double>& params,
                                    const LossOnModel& loss, const GradCheckOptions& opt = {},
                                    const ParamGroup<double>& frozen = {}) {
  GradCheckResult res;
  res.name = name;
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.freeze(frozen);
    if (!opt.fault_op.empty()) tape.inject_fault(opt.fault_op, opt.fault_factor);
    tape.backward(loss(tape));
  }
  auto eval = [&]() {
    Tape<double> tape(false);
    return loss(tape).item();
  };
  std::mt19937_64 rng(opt.seed);
  for (auto* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords && coords.size() > opt.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords);
    }
    for (auto i : coords) {
      const double orig = p->value[i];
      p->value[i] = orig + opt.step;
      const double up = eval();
      p->value[i] = orig - opt.step;
      const double down = eval();
      p->value[i] = orig;
      const double numeric = (up - down) / (2 * opt.step);
      const double err = grad_rel_error(p->grad[i], numeric);
      ++res.coords;
      if (err > opt.rel_tol) res.passed = false;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.detail = p->name + "[" + std::to_string(i) + "] analytic " +
                     gc_fmt(p->grad[i]) + " numeric " + gc_fmt(numeric);
      }
    }
  }
  for (auto* p : params) p->zero_grad();
  return res;
}

// Fixed-seed random weights for the loss readout in op checks.
inline Tensor<double> gc_random(Shape shape, std::mt19937_64& rng) {
  return Tensor<double>::uniform(std::move(shape), -2.0, 2.0, rng);
}

// One check per entry of kDifferentiableOps. Each loss is a random linear
// readout sum(W .* op(inputs)), so every output coordinate matters.
inline std::vector<GradCheckResult> check_all_ops(const GradCheckOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  std::vector<GradCheckResult> out;
  auto readout = [](Tape<double>& t, Var<double> y, std::uint64_t seed) {
    std::mt19937_64 r(seed);
    return sum_all(mul(y, t.constant(gc_random({y.rows(), y.cols()}, r))));
  };
  auto run = [&](const char* name, std::vector<Tensor<double>> in,
                 std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)> f) {
    const std::uint64_t seed = rng();
    out.push_back(check_inputs(
        name, std::move(in),
        [&, f, seed](Tape<double>& t, const std::vector<Var<double>>& v) {
          return readout(t, f(t, v), seed);
        },
        opt));
  };
  // Inputs bounded away from the abs/relu kink.
  auto away_from_zero = [&](Shape s) {
    auto t = gc_random(std::move(s), rng);
    for (auto& v : t.values()) v = v >= 0 ? v + 0.1 : v - 0.1;
    return t;
  };
  // Distinct values so max has a unique argmax.
  auto distinct = [&](Shape s) {
    auto t = gc_random(std::move(s), rng);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.37 * static_cast<double>(i);
    return t;
  };

  run("matmul", {gc_random({3, 4}, rng), gc_random({4, 2}, rng)},
      [](auto&, const auto& v) { return matmul(v[0], v[1]); });
  run("add", {gc_random({2, 3}, rng), gc_random({1, 1}, rng)},
      [](auto&, const auto& v) { return add(v[0], v[1]); });
  run("sub", {gc_random({2, 3}, rng), gc_random({2, 3}, rng)},
      [](auto&, const auto& v) { return sub(v[0], v[1]); });
  run("mul", {gc_random({2, 3}, rng), gc_random({2, 3}, rng)},
      [](auto&, const auto& v) { return mul(v[0], v[1]); });
  run("scale", {gc_random({2, 3}, rng)}, [](auto&, const auto& v) { return scale(v[0], -1.7); });
  run("tanh", {gc_random({2, 3}, rng)}, [](auto&, const auto& v) { return tanh(v[0]); });
  run("sigmoid", {gc_random({2, 3}, rng)}, [](auto&, const auto& v) { return sigmoid(v[0]); });
  run("abs", {away_from_zero({2, 3})}, [](auto&, const auto& v) { return abs(v[0]); });
  run("relu", {away_from_zero({2, 3})}, [](auto&, const auto& v) { return relu(v[0]); });
  run("softmax", {gc_random({2, 4}, rng)}, [](auto&, const auto& v) { return softmax(v[0]); });
  run("reduce_sum", {gc_random({3, 4}, rng)},
      [](auto&, const auto& v) { return reduce(Reduce::Sum, v[0], 0); });
  run("reduce_mean", {gc_random({3, 4}, rng)},
      [](auto&, const auto& v) { return reduce(Reduce::Mean, v[0], 1); });
  run("reduce_max", {distinct({3, 4})},
      [](auto&, const auto& v) { return reduce(Reduce::Max, v[0], 1); });
  run("sum_all", {gc_random({3, 4}, rng)},
      [](auto& t, const auto& v) { return mul(sum_all(v[0]), t.scalar(0.3)); });
  run("mean_all", {gc_random({3, 4}, rng)},
      [](auto& t, const auto& v) { return mul(mean_all(v[0]), t.scalar(0.3)); });
  run("concat", {gc_random({2, 3}, rng), gc_random({2, 2}, rng), gc_random({1, 5}, rng)},
      [](auto&, const auto& v) {
        return concat<double>({concat<double>({v[0], v[1]}, 1), v[2]}, 0);
      });
  run("slice_rows", {gc_random({4, 3}, rng)},
      [](auto&, const auto& v) { return slice_rows(v[0], 1, 2); });
  run("slice_cols", {gc_random({3, 4}, rng)},
      [](auto&, const auto& v) { return slice_cols(v[0], 1, 2); });
  run("add_rowvec", {gc_random({3, 4}, rng), gc_random({1, 4}, rng)},
      [](auto&, const auto& v) { return add_rowvec(v[0], v[1]); });
  run("mul_colvec", {gc_random({3, 4}, rng), gc_random({3, 1}, rng)},
      [](auto&, const auto& v) { return mul_colvec(v[0], v[1]); });
  run("tile_rows", {gc_random({2, 3}, rng)},
      [](auto&, const auto& v) { return tile_rows(v[0], 3); });
  run("embedding", {gc_random({5, 3}, rng)}, [](auto&, const auto& v) {
    static const int ids[] = {2, 0, 4, 2, 1};
    return embedding(v[0], std::span<const int>(ids), 0);
  });
  run("xent", {gc_random({4, 5}, rng)}, [](auto&, const auto& v) {
    static const int tg[] = {1, -1, 4, 0};
    return xent(v[0], std::span<const int>(tg));
  });
  run("bce_logits", {gc_random({4, 1}, rng)}, [](auto&, const auto& v) {
    static const double tg[] = {1, 0, 0, 1};
    return bce_logits(v[0], std::span<const double>(tg));
  });
  run("mix", {gc_random({3, 2}, rng), gc_random({3, 8}, rng)},
      [](auto&, const auto& v) { return mix(v[0], v[1]); });
  run("pool_mean", {gc_random({6, 3}, rng)}, [](auto&, const auto& v) {
    static const std::size_t lens[] = {3, 1};
    return pool_time(Reduce::Mean, v[0], std::span<const std::size_t>(lens));
  });
  run("pool_max", {distinct({6, 3})}, [](auto&, const auto& v) {
    static const std::size_t lens[] = {2, 3};
    return pool_time(Reduce::Max, v[0], std::span<const std::size_t>(lens));
  });
  return out;
}

// Small toy batch used by the end-to-end network checks.
inline Batch gradcheck_batch() {
  return batch_from_ids({{4, 5, 6}, {7, 4}}, {{5, 8}, {6, 7, 9}},
                        {Label::Entailment, Label::Contradiction});
}

inline ModelConfig gradcheck_model_config(FusionKind fusion) {
  ModelConfig c;
  c.vocab_size = 10;
  c.hidden = 3;
  c.layers = 2;
  c.fusion = fusion;
  c.n_candidates = 2;
  c.noise_width = 2;
  c.seed = 11;
  return c;
}

// Fresh weights of order one. At the training init the pooled states of a
// width-3 model are nearly tied across time, and a finite-difference step
// can flip the max-pool argmax.
template <typename T>
void gradcheck_redraw(ParamStore<T>& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (auto* p : store.all())
    for (auto& v : p->value.values()) v = static_cast<T>(u(rng));
}

// End-to-end parameter-gradient checks of every network loss.
inline std::vector<GradCheckResult> check_networks(const GradCheckOptions& opt = {}) {
  std::vector<GradCheckResult> out;
  const Batch batch = gradcheck_batch();
  for (FusionKind fusion : {FusionKind::Mean, FusionKind::Mosm}) {
    const std::string tag = std::string("[") + fusion_name(fusion) + "]";
    ModelBundle<double> m(gradcheck_model_config(fusion));
    gradcheck_redraw(m.store(), opt.seed);
    std::mt19937_64 rng(opt.seed);
    const Tensor<double> eps = m.draw_noise(batch.size, rng);
    std::vector<Tensor<double>> aux;
    for (int i = 0; i < 3; ++i) aux.push_back(m.draw_noise(batch.size, rng));

    out.push_back(check_params(
        "autoencoder_nll" + tag, m.generator_params(),
        [&](Tape<double>& t) { return mean_all(m.decode(t, m.encode_premise(t, batch), batch).nll); },
        opt));
    out.push_back(check_params(
        "classifier_ce" + tag, m.generator_params(),
        [&](Tape<double>& t) {
          const auto hyp = m.encode_hypothesis(t, batch);
          return add(mean_xent(m.classify_logits(t, m.encode_premise(t, batch), hyp), batch.labels),
                     mean_xent(m.classify_logits(t, m.prior_sample(t, hyp, batch.labels, eps), hyp),
                               batch.labels));
        },
        opt));
    out.push_back(check_params(
        "discriminator_bce" + tag, m.store().all(),
        [&](Tape<double>& t) {
          const auto dh = m.discriminator().encode(t, batch);
          return add(mean_bce(m.discriminate_logits(t, m.prior_sample(t, batch, eps), dh,
                                                    batch.labels), 1.0),
                     mean_bce(m.discriminate_logits(t, m.encode_premise(t, batch), dh,
                                                    batch.labels), 0.0));
        },
        opt));
    out.push_back(check_params(
        "auxiliary_loss" + tag, m.generator_params(),
        [&](Tape<double>& t) {
          const auto hyp = m.encode_hypothesis(t, batch);
          return mean_all(auxiliary_loss<double>(t, m, batch, hyp, aux));
        },
        opt));

    BaselineModel<double> base(gradcheck_model_config(fusion));
    gradcheck_redraw(base.store(), opt.seed);
    out.push_back(check_params("baseline_nll" + tag, base.params(),
                               [&](Tape<double>& t) { return base.loss(t, batch); }, opt));
  }
  return out;
}

}  // namespace caae
