#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "caae/autodiff.hpp"
#include "caae/optim.hpp"

namespace caae {

inline constexpr double kInitRange = 0.08;

template <typename T>
Tensor<T> init_uniform(Shape shape, std::mt19937_64& rng, double range = kInitRange) {
  return Tensor<T>::uniform(std::move(shape), T(-range), T(range), rng);
}

// Glorot-uniform, limit sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> init_glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const T lim = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  return Tensor<T>::uniform(std::move(shape), -lim, lim, rng);
}

// Recurrent machinery uses the small uniform range; feed-forward layers
// outside the LSTM stacks use Glorot.
enum class Init { Uniform, Glorot };

template <typename T>
struct Linear {
  Param<T>* weight = nullptr;  // [in x out]
  Param<T>* bias = nullptr;    // [1 x out]

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in,
         std::size_t out, std::mt19937_64& rng, Init init = Init::Uniform,
         double range = kInitRange)
      : weight(&store.create(name + ".W", init == Init::Glorot
                                              ? init_glorot<T>({in, out}, in, out, rng)
                                              : init_uniform<T>({in, out}, rng, range))),
        bias(&store.create(name + ".b", Tensor<T>({1, out}))) {}

  std::size_t in() const { return weight->value.rows(); }
  std::size_t out() const { return weight->value.cols(); }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return affine(x, tape.param(*weight), tape.param(*bias));
  }
};

// Linear -> tanh -> Linear.
template <typename T>
struct Mlp {
  Linear<T> hidden;
  Linear<T> output;

  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, std::size_t in,
      std::size_t width, std::size_t out, std::mt19937_64& rng, Init init = Init::Uniform)
      : hidden(store, name + ".hidden", in, width, rng, init),
        output(store, name + ".out", width, out, rng, init) {}

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return output(tape, tanh(hidden(tape, x)));
  }
};

template <typename T>
struct Embedding {
  Param<T>* table = nullptr;  // [V x d]
  int padding_id = -1;

  Embedding() = default;
  Embedding(ParamStore<T>& store, const std::string& name, std::size_t vocab,
            std::size_t dim, std::mt19937_64& rng, int padding = -1,
            double range = kInitRange)
      : table(&store.create(name, init_uniform<T>({vocab, dim}, rng, range))),
        padding_id(padding) {
    if (padding_id >= 0)
      for (std::size_t c = 0; c < dim; ++c)
        table->value.at(static_cast<std::size_t>(padding_id), c) = T(0);
  }

  std::size_t dim() const { return table->value.cols(); }

  Var<T> operator()(Tape<T>& tape, std::span<const int> ids) const {
    return embedding(tape.param(*table), ids, padding_id);
  }
};

// Gate weights of one LSTM direction. Gate blocks are ordered i, f, g, o.
template <typename T>
struct LstmCell {
  Param<T>* wx = nullptr;    // [in x 4H]
  Param<T>* wh = nullptr;    // [H x 4H]
  Param<T>* bias = nullptr;  // [1 x 4H], forget block starts at 1

  LstmCell() = default;
  LstmCell(ParamStore<T>& store, const std::string& name, std::size_t in,
           std::size_t hidden, std::mt19937_64& rng, double range = kInitRange)
      : wx(&store.create(name + ".Wx", init_uniform<T>({in, 4 * hidden}, rng, range))),
        wh(&store.create(name + ".Wh", init_uniform<T>({hidden, 4 * hidden}, rng, range))),
        bias(&store.create(name + ".b", Tensor<T>({1, 4 * hidden}))) {
    for (std::size_t c = hidden; c < 2 * hidden; ++c) bias->value[c] = T(1);
  }

  std::size_t hidden() const { return wh->value.rows(); }
  std::size_t in() const { return wx->value.rows(); }
};

template <typename T>
struct LstmState {
  Var<T> h;
  Var<T> c;
};

// One cell update given the already-projected input x*Wx ([B x 4H]).
template <typename T>
LstmState<T> lstm_step_projected(Tape<T>& tape, const LstmCell<T>& cell,
                                 Var<T> xw, const LstmState<T>& prev) {
  const std::size_t h = cell.hidden();
  if (xw.cols() != 4 * h || prev.h.cols() != h || prev.c.cols() != h ||
      prev.h.rows() != xw.rows() || prev.c.rows() != xw.rows())
    throw ShapeError("lstm_step: projected input " + xw.dims() + ", state " +
                     prev.h.dims() + "/" + prev.c.dims() + " for hidden " +
                     std::to_string(h));
  Var<T> gates =
      add_rowvec(add(xw, matmul(prev.h, tape.param(*cell.wh))), tape.param(*cell.bias));
  Var<T> i = sigmoid(slice_cols(gates, 0, h));
  Var<T> f = sigmoid(slice_cols(gates, h, h));
  Var<T> g = tanh(slice_cols(gates, 2 * h, h));
  Var<T> o = sigmoid(slice_cols(gates, 3 * h, h));
  Var<T> c = add(mul(f, prev.c), mul(i, g));
  return {mul(o, tanh(c)), c};
}

template <typename T>
LstmState<T> lstm_step(Tape<T>& tape, const LstmCell<T>& cell, Var<T> x,
                       const LstmState<T>& prev) {
  if (x.cols() != cell.in())
    throw ShapeError("lstm_step: input " + x.dims() + " for cell input width " +
                     std::to_string(cell.in()));
  return lstm_step_projected(tape, cell, matmul(x, tape.param(*cell.wx)), prev);
}

template <typename T>
LstmState<T> zero_state(Tape<T>& tape, std::size_t batch, std::size_t hidden) {
  Var<T> z = tape.constant(Tensor<T>::matrix(batch, hidden));
  return {z, z};
}

// Column of 0/1 per stacked row (t*B + b): 1 where t < lengths[b].
template <typename T>
Tensor<T> step_mask(std::size_t steps, std::span<const std::size_t> lengths) {
  const std::size_t batch = lengths.size();
  Tensor<T> m({steps * batch, 1});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t b = 0; b < batch; ++b)
      m[t * batch + b] = t < lengths[b] ? T(1) : T(0);
  return m;
}

// A time-major stack of per-step rows: row t*batch + b.
template <typename T>
struct Sequence {
  Var<T> rows;
  std::size_t steps = 0;
  std::vector<std::size_t> lengths;

  std::size_t batch() const { return lengths.size(); }
};

// Multi-layer bidirectional LSTM. Layer k>0 reads the [fwd; bwd] output of
// layer k-1; the top [fwd; bwd] output is projected back to H.
template <typename T>
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(ParamStore<T>& store, const std::string& name, std::size_t in,
         std::size_t hidden, std::size_t layers, std::mt19937_64& rng,
         double range = kInitRange) {
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t width = l == 0 ? in : 2 * hidden;
      const std::string ln = name + ".l" + std::to_string(l);
      fwd_.emplace_back(store, ln + ".fwd", width, hidden, rng, range);
      bwd_.emplace_back(store, ln + ".bwd", width, hidden, rng, range);
    }
    proj_ = Linear<T>(store, name + ".proj", 2 * hidden, hidden, rng, Init::Uniform, range);
  }

  std::size_t hidden() const { return fwd_.front().hidden(); }
  std::size_t layers() const { return fwd_.size(); }
  std::vector<LstmCell<T>>& forward_cells() { return fwd_; }
  std::vector<LstmCell<T>>& backward_cells() { return bwd_; }
  const Linear<T>& projection() const { return proj_; }

  // [fwd; bwd] states of the top layer, [T*B x 2H]; zero at padded steps.
  Var<T> run_raw(Tape<T>& tape, const Sequence<T>& input) const {
    const std::size_t batch = input.batch(), steps = input.steps;
    bool full = true;
    for (auto len : input.lengths) full = full && len == steps;
    std::vector<Var<T>> masks;
    if (!full) {
      const Tensor<T> m = step_mask<T>(steps, input.lengths);
      for (std::size_t t = 0; t < steps; ++t)
        masks.push_back(tape.constant(Tensor<T>(
            {batch, 1}, std::vector<T>(m.data() + t * batch, m.data() + (t + 1) * batch))));
    }
    Var<T> x = input.rows;
    for (std::size_t l = 0; l < fwd_.size(); ++l) {
      Var<T> hf = run_direction(tape, fwd_[l], x, batch, steps, masks, false);
      Var<T> hb = run_direction(tape, bwd_[l], x, batch, steps, masks, true);
      x = concat<T>({hf, hb}, 1);
    }
    return x;
  }

  Sequence<T> run(Tape<T>& tape, const Sequence<T>& input) const {
    Var<T> out = proj_(tape, run_raw(tape, input));
    bool full = true;
    for (auto len : input.lengths) full = full && len == input.steps;
    if (!full) out = mul_colvec(out, tape.constant(step_mask<T>(input.steps, input.lengths)));
    return {out, input.steps, input.lengths};
  }

 private:
  static Var<T> run_direction(Tape<T>& tape, const LstmCell<T>& cell, Var<T> x,
                              std::size_t batch, std::size_t steps,
                              const std::vector<Var<T>>& masks, bool reverse) {
    Var<T> xw = matmul(x, tape.param(*cell.wx));
    LstmState<T> state = zero_state(tape, batch, cell.hidden());
    std::vector<Var<T>> outs(steps);
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = reverse ? steps - 1 - k : k;
      state = lstm_step_projected(tape, cell, slice_rows(xw, t * batch, batch), state);
      if (!masks.empty()) {
        // Zeroed state at padded steps restarts the reverse pass at each
        // sequence's last real token.
        state.h = mul_colvec(state.h, masks[t]);
        if (reverse) state.c = mul_colvec(state.c, masks[t]);
      }
      outs[t] = state.h;
    }
    return concat(outs, 0);
  }

  std::vector<LstmCell<T>> fwd_;
  std::vector<LstmCell<T>> bwd_;
  Linear<T> proj_;
};

// Multi-layer unidirectional LSTM driven one step at a time.
template <typename T>
class UniLstm {
 public:
  using State = std::vector<LstmState<T>>;

  UniLstm() = default;
  UniLstm(ParamStore<T>& store, const std::string& name, std::size_t in,
          std::size_t hidden, std::size_t layers, std::mt19937_64& rng,
          double range = kInitRange) {
    for (std::size_t l = 0; l < layers; ++l)
      cells_.emplace_back(store, name + ".l" + std::to_string(l), l == 0 ? in : hidden,
                          hidden, rng, range);
  }

  std::size_t hidden() const { return cells_.front().hidden(); }
  std::vector<LstmCell<T>>& cells() { return cells_; }

  State initial_state(Tape<T>& tape, std::size_t batch) const {
    return State(cells_.size(), zero_state(tape, batch, hidden()));
  }

  // Returns the top-layer output s_t; `state` is advanced in place.
  Var<T> step(Tape<T>& tape, Var<T> x, State& state) const {
    if (state.size() != cells_.size())
      throw ShapeError("decoder state has wrong layer count");
    Var<T> in = x;
    for (std::size_t l = 0; l < cells_.size(); ++l) {
      state[l] = lstm_step(tape, cells_[l], in, state[l]);
      in = state[l].h;
    }
    return in;
  }

 private:
  std::vector<LstmCell<T>> cells_;
};

}  // namespace caae
