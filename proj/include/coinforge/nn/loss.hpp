#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "tensor.hpp"

namespace coinforge::nn {

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // d(mean loss)/d(logits)
};

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits, 2, "softmax logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.raw() + i * c;
    const T peak = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j] - peak));
    for (std::size_t j = 0; j < c; ++j) p[i * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - peak)) / sum);
  }
  return p;
}

// Mean cross-entropy of softmax(logits) against integer labels, with the
// max-subtracted log-sum-exp.
template <typename T>
LossResult<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_xent logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_xent: label count does not match batch");
  LossResult<T> r{0.0, Tensor<T>(logits.shape())};
  if (n == 0) return r;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ShapeError("softmax_xent: label " + std::to_string(labels[i]) + " out of range");
    }
    const T* row = logits.raw() + i * c;
    const double peak = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - peak);
    const double log_sum = std::log(sum);
    r.loss += log_sum - (row[labels[i]] - peak);
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(row[j] - peak - log_sum);
      const double target = static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0;
      r.grad[i * c + j] = static_cast<T>((p - target) / static_cast<double>(n));
    }
  }
  r.loss /= static_cast<double>(n);
  return r;
}

}  // namespace coinforge::nn
