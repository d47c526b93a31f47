#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "caae/autodiff.hpp"

namespace caae {

template <typename T>
using ParamGroup = std::vector<Param<T>*>;

// Owns every parameter of a model. Addresses are stable for the store's
// lifetime, so groups can hold raw pointers.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Param<T>& create(const std::string& name, Tensor<T> value) {
    if (index_.contains(name))
      throw std::invalid_argument("duplicate parameter name " + name);
    params_.emplace_back(name, std::move(value));
    index_.emplace(name, &params_.back());
    return params_.back();
  }

  Param<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }
  const Param<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }

  ParamGroup<T> all() {
    ParamGroup<T> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  // Parameters whose name starts with `prefix`, in creation order.
  ParamGroup<T> with_prefix(const std::string& prefix) {
    ParamGroup<T> out;
    for (auto& p : params_)
      if (p.name.rfind(prefix, 0) == 0) out.push_back(&p);
    return out;
  }

  std::size_t size() const { return params_.size(); }
  std::deque<Param<T>>& params() { return params_; }
  const std::deque<Param<T>>& params() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Param<T>> params_;
  std::map<std::string, Param<T>*> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers for one parameter tensor.
template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

// One bias-corrected Adam update in place. `t` is the step number after
// incrementing (t >= 1).
template <typename T>
void adam_update(std::span<T> values, std::span<const T> grads,
                 AdamMoments<T>& moments, long t, const AdamConfig& cfg) {
  if (values.size() != grads.size())
    throw ShapeError("adam: parameter/gradient size mismatch");
  if (moments.m.size() != values.size()) {
    moments.m.assign(values.size(), T(0));
    moments.v.assign(values.size(), T(0));
  }
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double g = grads[i];
    const double m = b1 * moments.m[i] + (1.0 - b1) * g;
    const double v = b2 * moments.v[i] + (1.0 - b2) * g * g;
    moments.m[i] = static_cast<T>(m);
    moments.v[i] = static_cast<T>(v);
    const double mhat = m / c1;
    const double vhat = v / c2;
    values[i] = static_cast<T>(values[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  void step(const ParamGroup<T>& group) {
    ++t_;
    for (Param<T>* p : group) {
      if (p->grad.size() != p->value.size())
        throw ShapeError("adam: gradient of " + p->name + " has wrong size");
      adam_update<T>(std::span<T>(p->value.values()), std::span<const T>(p->grad),
                     moments_[p->name], t_, cfg_);
    }
  }

  // Checkpoint access.
  std::map<std::string, AdamMoments<T>>& moments() { return moments_; }
  void set_steps(long t) { t_ = t; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, AdamMoments<T>> moments_;
};

template <typename T>
double global_grad_norm(const ParamGroup<T>& group) {
  double sq = 0;
  for (const Param<T>* p : group)
    for (T g : p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sq);
}

// Scales every gradient in the group by max_norm / norm when the global L2
// norm exceeds max_norm. Returns the applied scale (1 when untouched).
template <typename T>
double clip_global_norm(const ParamGroup<T>& group, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip: max_norm must be > 0");
  const double norm = global_grad_norm(group);
  if (!(norm > max_norm)) return 1.0;
  const double s = max_norm / norm;
  for (Param<T>* p : group)
    for (T& g : p->grad) g = static_cast<T>(g * s);
  return s;
}

}  // namespace caae
