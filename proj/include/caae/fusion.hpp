#pragma once

#include <optional>
#include <string>

#include "caae/seqnet.hpp"

namespace caae {

enum class FusionKind { Mean, Mosm };

inline const char* fusion_name(FusionKind k) { return k == FusionKind::Mean ? "mean" : "mosm"; }

inline std::optional<FusionKind> parse_fusion(const std::string& s) {
  if (s == "mean") return FusionKind::Mean;
  if (s == "mosm") return FusionKind::Mosm;
  return std::nullopt;
}

enum class Activation { Identity, Tanh };

// Memory Operation Selection Module: a control vector k picks a convex
// combination of N candidate matrices, which is then applied to a value
// vector v:  o = act((sum_i softmax(Omega k)_i W_i) v).
//
// Storage is row-vector oriented: `control` holds Omega transposed
// ([d_k x N]) and `candidates` holds the transposed W_i side by side
// ([d_v x N*d_o]), so one matmul evaluates v W_i for every candidate.
template <typename T>
struct MosmLayer {
  Param<T>* control = nullptr;
  Param<T>* candidates = nullptr;
  Activation activation = Activation::Identity;
  std::size_t count = 0;

  MosmLayer() = default;
  MosmLayer(ParamStore<T>& store, const std::string& name, std::size_t value_dim,
            std::size_t key_dim, std::size_t out_dim, std::size_t n_candidates,
            Activation act, std::mt19937_64& rng)
      : control(&store.create(name + ".Omega", init_uniform<T>({key_dim, n_candidates}, rng))),
        candidates(&store.create(name + ".W",
                                 init_glorot<T>({value_dim, n_candidates * out_dim}, value_dim,
                                                 out_dim, rng))),
        activation(act),
        count(n_candidates) {
    if (n_candidates == 0) throw std::invalid_argument("MOSM needs at least one candidate");
  }

  std::size_t value_dim() const { return candidates->value.rows(); }
  std::size_t key_dim() const { return control->value.rows(); }
  std::size_t out_dim() const { return candidates->value.cols() / count; }

  // Candidate W_i in column-vector orientation, [d_o x d_v].
  Tensor<T> candidate(std::size_t i) const {
    const std::size_t dv = value_dim(), d = out_dim();
    Tensor<T> w({d, dv});
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < dv; ++c) w.at(r, c) = candidates->value.at(c, i * d + r);
    return w;
  }

  // Selection weights softmax(Omega k) for one control vector.
  std::vector<T> selection(std::span<const T> key) const {
    Tape<T> tape(false);
    Var<T> k = tape.constant(Tensor<T>::row(std::vector<T>(key.begin(), key.end())));
    Var<T> g = softmax(matmul(k, tape.param(*control)));
    return {g.value().begin(), g.value().end()};
  }

  // The mixed matrix sum_i gamma_i W_i, [d_o x d_v].
  Tensor<T> mixed_weight(std::span<const T> key) const {
    const auto gamma = selection(key);
    Tensor<T> w({out_dim(), value_dim()});
    for (std::size_t i = 0; i < count; ++i) {
      const Tensor<T> wi = candidate(i);
      for (std::size_t j = 0; j < w.size(); ++j) w[j] += gamma[i] * wi[j];
    }
    return w;
  }

  // Row-batched application: v [R x d_v], k [R x d_k] -> [R x d_o].
  Var<T> operator()(Tape<T>& tape, Var<T> v, Var<T> k) const {
    if (v.cols() != value_dim() || k.cols() != key_dim() || v.rows() != k.rows())
      throw ShapeError("mosm: value " + v.dims() + " / key " + k.dims() +
                       " for layer d_v=" + std::to_string(value_dim()) +
                       " d_k=" + std::to_string(key_dim()));
    Var<T> gamma = softmax(matmul(k, tape.param(*control)));
    Var<T> o = mix(gamma, matmul(v, tape.param(*candidates)));
    return activation == Activation::Tanh ? tanh(o) : o;
  }
};

// f_compress: folds a masked hidden-state sequence into one vector per row.
template <typename T>
struct Compressor {
  FusionKind kind = FusionKind::Mean;
  MosmLayer<T> mosm;  // used when kind == Mosm; identity inner activation

  Compressor() = default;
  Compressor(ParamStore<T>& store, const std::string& name, FusionKind k,
             std::size_t width, std::size_t n_candidates, std::mt19937_64& rng)
      : kind(k) {
    if (k == FusionKind::Mosm)
      mosm = MosmLayer<T>(store, name, width, width, width, n_candidates,
                          Activation::Identity, rng);
  }

  Var<T> operator()(Tape<T>& tape, const Sequence<T>& seq) const {
    if (kind == FusionKind::Mean) return pool_time(Reduce::Mean, seq.rows, seq.lengths);
    return tanh(pool_time(Reduce::Mean, mosm(tape, seq.rows, seq.rows), seq.lengths));
  }
};

// f_retrieve: context for each stacked key row from the latent z.
template <typename T>
struct Retriever {
  FusionKind kind = FusionKind::Mean;
  MosmLayer<T> mosm;  // tanh inner activation

  Retriever() = default;
  Retriever(ParamStore<T>& store, const std::string& name, FusionKind k,
            std::size_t width, std::size_t n_candidates, std::mt19937_64& rng)
      : kind(k) {
    if (k == FusionKind::Mosm)
      mosm = MosmLayer<T>(store, name, width, width, width, n_candidates,
                          Activation::Tanh, rng);
  }

  // z [B x d]; keys [steps*B x d_k] time-major -> [steps*B x d].
  Var<T> operator()(Tape<T>& tape, Var<T> z, Var<T> keys, std::size_t steps) const {
    if (keys.rows() != steps * z.rows())
      throw ShapeError("retrieve: keys " + keys.dims() + " for " + std::to_string(steps) +
                       " steps of z " + z.dims());
    Var<T> tiled = steps == 1 ? z : tile_rows(z, steps);
    if (kind == FusionKind::Mean) return tiled;
    return mosm(tape, tiled, keys);
  }
};

}  // namespace caae
