#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "../raster.hpp"
#include "adam.hpp"
#include "model.hpp"

namespace coinforge::nn {

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(int epoch)
      : std::runtime_error("training diverged (non-finite loss) in epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

// Grayscale 8-bit images of one size with integer labels, stored
// contiguously.
struct ImageSet {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }

  void add(const Raster& img, int label) {
    if (img.channels() != 1) throw ShapeError("image set holds grayscale images only");
    if (labels.empty() && height == 0) {
      height = static_cast<std::size_t>(img.height());
      width = static_cast<std::size_t>(img.width());
    }
    if (static_cast<std::size_t>(img.height()) != height || static_cast<std::size_t>(img.width()) != width) {
      throw ShapeError("image set: all images must share one size");
    }
    pixels.insert(pixels.end(), img.data().begin(), img.data().end());
    labels.push_back(label);
  }
};

// Batch of images scaled from [0, 255] to [0, 1], as [N, 1, H, W].
template <typename T = float>
Tensor<T> make_batch(const ImageSet& set, std::span<const std::size_t> indices) {
  const std::size_t plane = set.height * set.width;
  Tensor<T> x({indices.size(), 1, set.height, set.width});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::uint8_t* src = set.pixels.data() + indices[b] * plane;
    T* dst = x.raw() + b * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>(src[i]) / T{255};
  }
  for (const T v : x.data()) {
    if (!(v >= T{0} && v <= T{1})) throw std::logic_error("normalized input outside [0, 1]");
  }
  return x;
}

template <typename T>
std::vector<int> predict(const Network<T>& net, const ImageSet& set, std::size_t batch_size = 64) {
  std::vector<int> out;
  out.reserve(set.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    idx.resize(std::min(batch_size, set.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto p = net.predict(make_batch<T>(set, idx));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

inline double accuracy_of(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  std::vector<int> test_predictions;
};

struct TrainOptions {
  int epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  AdamConfig adam;
  // Called after each epoch; returning false stops training early.
  std::function<bool(const EpochRecord&, const Network<float>&)> on_epoch;
};

struct TrainResult {
  Network<float> model;
  double initial_test_accuracy = 0.0;
  std::vector<int> initial_predictions;
  std::vector<EpochRecord> epochs;
};

// Mini-batch Adam on mean cross-entropy, single precision. Shuffling and
// initialization derive from options.seed only.
inline TrainResult train(const ModelConfig& config, const ImageSet& train_set, const ImageSet& test_set,
                         const TrainOptions& options) {
  if (train_set.size() == 0 || test_set.size() == 0) throw std::invalid_argument("train and test sets must be nonempty");
  if (options.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (options.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  const Shape image_shape{1, train_set.height, train_set.width};
  if (config.input != image_shape || test_set.height != train_set.height || test_set.width != train_set.width) {
    throw ShapeError("image size does not match model input " + shape_string(config.input));
  }
  for (const auto* set : {&train_set, &test_set}) {
    for (int label : set->labels) {
      if (label < 0 || static_cast<std::size_t>(label) >= config.num_classes) {
        throw std::invalid_argument("label " + std::to_string(label) + " outside the model's classes");
      }
    }
  }

  TrainResult result{Network<float>(config), 0.0, {}, {}};
  Network<float>& net = result.model;
  net.initialize(options.seed);
  AdamState<float> adam(options.adam, net.params());
  coinforge::detail::Rng order_rng(options.seed ^ 0x9E3779B97F4A7C15ULL);

  result.initial_predictions = predict(net, test_set);
  result.initial_test_accuracy = accuracy_of(result.initial_predictions, test_set.labels);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> batch_labels;
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t count = std::min(options.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      batch_labels.clear();
      for (auto i : idx) batch_labels.push_back(train_set.labels[i]);
      const auto logits = net.forward_train(make_batch<float>(train_set, idx));
      const auto loss = softmax_xent(logits, batch_labels);
      if (!std::isfinite(loss.loss)) throw TrainingDiverged(epoch);
      net.backward(loss.grad);
      adam_step<float>(adam, net.params(), net.grads(), net.param_names());
      loss_sum += loss.loss * static_cast<double>(count);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.test_predictions = predict(net, test_set);
    rec.test_accuracy = accuracy_of(rec.test_predictions, test_set.labels);
    result.epochs.push_back(std::move(rec));
    if (options.on_epoch && !options.on_epoch(result.epochs.back(), net)) break;
  }
  return result;
}

}  // namespace coinforge::nn
