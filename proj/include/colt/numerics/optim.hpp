#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "colt/numerics/tensor.hpp"

namespace colt {

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& p : params) {
    auto t = p.tensor;
    t.zero_grad();
  }
}

template <class T>
double grad_norm(const ParamList<T>& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (T g : p.tensor.grad()) s += double(g) * double(g);
  return std::sqrt(s);
}

// Rescales all gradients so their global L2 norm is at most max_norm.
template <class T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / (norm + 1e-12));
    for (const auto& p : params) {
      auto t = p.tensor;
      if (t.has_grad())
        for (T& g : t.grad_mut()) g *= f;
    }
  }
  return norm;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  long step = 0;

  static AdamState for_shapes(std::span<const std::size_t> sizes) {
    AdamState s;
    for (auto n : sizes) {
      s.m.emplace_back(n, T(0));
      s.v.emplace_back(n, T(0));
    }
    return s;
  }
};

// One decoupled-weight-decay Adam update on `params` given matching `grads`.
template <class T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::vector<T>> grads, AdamState<T>& state,
               double lr, const AdamConfig& cfg = {}) {
  if (!(lr >= 0.0)) throw std::invalid_argument("adam_step: learning rate must be nonnegative");
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
    throw ShapeError("adam_step", "parameter, gradient and moment counts differ");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].size() != params[i].numel() || state.m[i].size() != params[i].numel() ||
        state.v[i].size() != params[i].numel())
      throw ShapeError("adam_step", "buffer size mismatch for parameter " + std::to_string(i) + " of shape " +
                                        shape_str(params[i].shape()));
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    const auto& g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = double(g[j]);
      m[j] = static_cast<T>(cfg.beta1 * double(m[j]) + (1.0 - cfg.beta1) * gj);
      v[j] = static_cast<T>(cfg.beta2 * double(v[j]) + (1.0 - cfg.beta2) * gj * gj);
      const double mhat = double(m[j]) / bc1;
      const double vhat = double(v[j]) / bc2;
      double pj = double(p[j]);
      if (cfg.weight_decay != 0.0) pj -= lr * cfg.weight_decay * pj;
      p[j] = static_cast<T>(pj - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

// Owns moment buffers for a fixed parameter list and reads gradients from
// the parameters themselves.
template <class T>
class AdamW {
 public:
  AdamW(ParamList<T> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    std::vector<std::size_t> sizes;
    for (const auto& p : params_) sizes.push_back(p.tensor.numel());
    state_ = AdamState<T>::for_shapes(sizes);
  }

  void step(double lr) {
    std::vector<Tensor<T>> ts;
    std::vector<std::vector<T>> gs;
    ts.reserve(params_.size());
    gs.reserve(params_.size());
    for (const auto& p : params_) {
      ts.push_back(p.tensor);
      if (p.tensor.has_grad())
        gs.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
      else
        gs.emplace_back(p.tensor.numel(), T(0));
    }
    adam_step<T>(ts, gs, state_, lr, cfg_);
  }

  void zero_grad() { zero_grads(params_); }
  long steps() const { return state_.step; }
  const ParamList<T>& params() const { return params_; }

 private:
  ParamList<T> params_;
  AdamConfig cfg_;
  AdamState<T> state_;
};

}  // namespace colt
