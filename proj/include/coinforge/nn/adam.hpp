#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace coinforge::nn {

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& parameter)
      : std::runtime_error("non-finite gradient in parameter " + parameter), parameter_(parameter) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moments per parameter plus the step counter.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  long long step = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, std::span<const Tensor<T>> params) : config(cfg) {
    for (const auto& p : params) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    }
  }
};

// One bias-corrected Adam update. All gradients are checked before any
// parameter changes, so a rejected step leaves the state untouched.
template <typename T>
void adam_step(AdamState<T>& state, std::span<Tensor<T>> params, std::span<const Tensor<T>> grads,
               std::span<const std::string> names) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(grads[i], params[i].shape(), "adam gradient");
    for (const T g : grads[i].data()) {
      if (!std::isfinite(g)) throw NonFiniteGradient(i < names.size() ? names[i] : "#" + std::to_string(i));
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T step_size = static_cast<T>(c.learning_rate / correction1);
  const T inv_correction2 = static_cast<T>(1.0 / correction2);
  const T eps = static_cast<T>(c.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* theta = params[i].raw();
    T* m = state.m[i].raw();
    T* v = state.v[i].raw();
    const T* g = grads[i].raw();
    const std::size_t n = params[i].size();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (T{1} - b1) * g[j];
      v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
      theta[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_correction2) + eps);
    }
  }
}

}  // namespace coinforge::nn
