#pragma once

// Sequential CNN described by a list of layer specs.

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "../detail/numeric.hpp"
#include "layers.hpp"
#include "loss.hpp"

namespace coinforge::nn {

struct ConvSpec {
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool operator==(const ConvSpec&) const = default;
};
struct PoolSpec {
  std::size_t window = 2;
  bool operator==(const PoolSpec&) const = default;
};
struct ReluSpec {
  bool operator==(const ReluSpec&) const = default;
};
struct FlattenSpec {
  bool operator==(const FlattenSpec&) const = default;
};
struct DenseSpec {
  std::size_t units = 1;
  bool operator==(const DenseSpec&) const = default;
};

using LayerSpec = std::variant<ConvSpec, PoolSpec, ReluSpec, FlattenSpec, DenseSpec>;

struct ModelConfig {
  std::string name = "custom";
  Shape input = {1, 150, 150};  // channels, height, width
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 6;

  // Per-sample output shape of every layer. Throws ShapeError when the
  // chain is inconsistent or does not end in dense(num_classes).
  std::vector<Shape> shape_chain() const {
    if (input.size() != 3 || shape_size(input) == 0) throw ShapeError("model input must be (channels, height, width)");
    std::vector<Shape> out;
    Shape cur = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string where = "layer " + std::to_string(i) + ": ";
      std::visit(
          [&](const auto& spec) {
            using S = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<S, ConvSpec>) {
              if (cur.size() != 3) throw ShapeError(where + "conv needs an image input");
              if (spec.kernel < 1 || spec.stride < 1 || spec.out_channels < 1) throw ShapeError(where + "bad conv spec");
              if (cur[1] < spec.kernel || cur[2] < spec.kernel) throw ShapeError(where + "input smaller than kernel");
              cur = {spec.out_channels, (cur[1] - spec.kernel) / spec.stride + 1, (cur[2] - spec.kernel) / spec.stride + 1};
            } else if constexpr (std::is_same_v<S, PoolSpec>) {
              if (cur.size() != 3) throw ShapeError(where + "maxpool needs an image input");
              if (spec.window < 1 || cur[1] < spec.window || cur[2] < spec.window) throw ShapeError(where + "bad pool window");
              cur = {cur[0], cur[1] / spec.window, cur[2] / spec.window};
            } else if constexpr (std::is_same_v<S, FlattenSpec>) {
              cur = {shape_size(cur)};
            } else if constexpr (std::is_same_v<S, DenseSpec>) {
              if (cur.size() != 1) throw ShapeError(where + "dense needs a flattened input");
              if (spec.units < 1) throw ShapeError(where + "dense needs at least one unit");
              cur = {spec.units};
            }
          },
          layers[i]);
      out.push_back(cur);
    }
    if (layers.empty() || !std::holds_alternative<DenseSpec>(layers.back()) ||
        std::get<DenseSpec>(layers.back()).units != num_classes) {
      throw ShapeError("model must end in dense(" + std::to_string(num_classes) + ")");
    }
    return out;
  }

  bool operator==(const ModelConfig&) const = default;
};

// conv(8,3,1)-relu-maxpool(2)-conv(16,3,1)-relu-maxpool(2)-flatten-dense(64)-relu-dense(classes)
inline ModelConfig coinnet_s(std::size_t num_classes = 6, Shape input = {1, 150, 150}) {
  ModelConfig c;
  c.name = "coinnet-s";
  c.input = std::move(input);
  c.num_classes = num_classes;
  c.layers = {ConvSpec{8, 3, 1}, ReluSpec{}, PoolSpec{2},      ConvSpec{16, 3, 1}, ReluSpec{},
              PoolSpec{2},       FlattenSpec{}, DenseSpec{64}, ReluSpec{},         DenseSpec{num_classes}};
  c.shape_chain();
  return c;
}

inline ModelConfig model_by_name(const std::string& name, std::size_t num_classes, Shape input = {1, 150, 150}) {
  if (name == "coinnet-s") return coinnet_s(num_classes, std::move(input));
  throw std::invalid_argument("unknown model '" + name + "'");
}

template <typename T>
class Network {
 public:
  explicit Network(ModelConfig config) : config_(std::move(config)) {
    const auto chain = config_.shape_chain();
    Shape in = config_.input;
    for (std::size_t i = 0; i < config_.layers.size(); ++i) {
      if (const auto* conv = std::get_if<ConvSpec>(&config_.layers[i])) {
        add_params(i, {conv->out_channels, in[0], conv->kernel, conv->kernel}, "conv");
      } else if (const auto* dense = std::get_if<DenseSpec>(&config_.layers[i])) {
        add_params(i, {dense->units, in[0]}, "dense");
      } else {
        param_base_.push_back(-1);
      }
      in = chain[i];
    }
    while (split_ < config_.layers.size() && !std::holds_alternative<FlattenSpec>(config_.layers[split_])) ++split_;
    if (split_ == config_.layers.size()) split_ = 0;
  }

  const ModelConfig& config() const { return config_; }
  std::vector<Tensor<T>>& params() { return params_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  const std::vector<Tensor<T>>& grads() const { return grads_; }
  const std::vector<std::string>& param_names() const { return names_; }

  // He-uniform weights, zero biases.
  void initialize(std::uint64_t seed) {
    coinforge::detail::Rng rng(seed);
    for (std::size_t p = 0; p < params_.size(); p += 2) {
      auto& w = params_[p];
      const std::size_t fan_in = w.size() / w.dim(0);
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-limit, limit));
      params_[p + 1].fill(T{0});
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    check_input(x);
    return run(split_, config_.layers.size(), features(x), nullptr);
  }

  // Forward pass that keeps what backward() needs. Layers before the first
  // flatten run one sample at a time and are recomputed during backward(),
  // which keeps their large activations in cache.
  Tensor<T> forward_train(const Tensor<T>& x) {
    check_input(x);
    batch_input_ = x;
    head_ = Cache{};
    return run(split_, config_.layers.size(), features(x), &head_);
  }

  // Overwrites grads() with d(loss)/d(params) given d(loss)/d(logits);
  // returns d(loss)/d(input).
  Tensor<T> backward(const Tensor<T>& grad_logits, bool need_input_grad = false) {
    if (head_.inputs.size() != config_.layers.size() - split_) throw std::logic_error("backward() without forward_train()");
    for (auto& g : grads_) g.fill(T{0});
    Tensor<T> g = back(split_, config_.layers.size(), head_, grad_logits, split_ > 0 || need_input_grad);
    if (split_ == 0) return g;
    const std::size_t n = batch_input_.dim(0), plane = shape_size(config_.input);
    const std::size_t width = g.size() / n;
    Shape one = config_.input;
    one.insert(one.begin(), 1);
    Tensor<T> dx = need_input_grad ? Tensor<T>(batch_input_.shape()) : Tensor<T>();
    Cache cache;
    for (std::size_t s = 0; s < n; ++s) {
      Tensor<T> xs(one, std::vector<T>(batch_input_.raw() + s * plane, batch_input_.raw() + (s + 1) * plane));
      cache = Cache{};
      const Tensor<T> out = run(0, split_, xs, &cache);
      Tensor<T> gs(out.shape(), std::vector<T>(g.raw() + s * width, g.raw() + (s + 1) * width));
      const Tensor<T> d = back(0, split_, cache, gs, need_input_grad);
      if (need_input_grad) std::copy(d.raw(), d.raw() + plane, dx.raw() + s * plane);
    }
    return dx;
  }

  // Argmax of the logits per sample; ties go to the lowest class index.
  std::vector<int> predict(const Tensor<T>& x) const {
    const Tensor<T> logits = forward(x);
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = logits.raw() + i * c;
      out[i] = static_cast<int>(std::max_element(row, row + c) - row);
    }
    return out;
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out(config_);
    for (std::size_t p = 0; p < params_.size(); ++p) out.params()[p] = params_[p].template cast<U>();
    return out;
  }

 private:
  void add_params(std::size_t layer, Shape weight_shape, const std::string& kind) {
    param_base_.push_back(static_cast<int>(params_.size()));
    const std::string prefix = kind + std::to_string(layer);
    const std::size_t units = weight_shape[0];
    params_.emplace_back(weight_shape);
    params_.emplace_back(Shape{units});
    grads_.emplace_back(weight_shape);
    grads_.emplace_back(Shape{units});
    names_.push_back(prefix + ".weight");
    names_.push_back(prefix + ".bias");
  }

  std::size_t base(std::size_t layer) const { return static_cast<std::size_t>(param_base_[layer]); }

  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != config_.input) {
      throw ShapeError("network input must be [N," + shape_string(config_.input).substr(1) + ", got " +
                       shape_string(x.shape()));
    }
  }

  struct Cache {
    std::vector<Tensor<T>> inputs;
    std::vector<std::vector<std::size_t>> argmax;
  };

  // Output of the per-sample prefix for every sample, stacked.
  Tensor<T> features(const Tensor<T>& x) const {
    if (split_ == 0) return x;
    const std::size_t n = x.dim(0), plane = shape_size(config_.input);
    Shape one = config_.input;
    one.insert(one.begin(), 1);
    Tensor<T> out;
    for (std::size_t s = 0; s < n; ++s) {
      Tensor<T> xs(one, std::vector<T>(x.raw() + s * plane, x.raw() + (s + 1) * plane));
      const Tensor<T> f = run(0, split_, xs, nullptr);
      if (s == 0) {
        Shape shape = f.shape();
        shape[0] = n;
        out = Tensor<T>(shape);
      }
      std::copy(f.raw(), f.raw() + f.size(), out.raw() + s * f.size());
    }
    return out;
  }

  Tensor<T> run(std::size_t lo, std::size_t hi, Tensor<T> x, Cache* cache) const {
    for (std::size_t i = lo; i < hi; ++i) {
      std::vector<std::size_t> argmax;
      Tensor<T> y = apply(i, x, cache ? &argmax : nullptr);
      if (cache) {
        cache->inputs.push_back(std::move(x));
        cache->argmax.push_back(std::move(argmax));
      }
      x = std::move(y);
    }
    return x;
  }

  // Accumulates parameter gradients of layers [lo, hi) into grads_.
  Tensor<T> back(std::size_t lo, std::size_t hi, const Cache& cache, Tensor<T> g, bool need_dx_at_lo) {
    auto add = [](Tensor<T>& acc, const Tensor<T>& v) {
      T* a = acc.raw();
      const T* b = v.raw();
      for (std::size_t q = 0; q < acc.size(); ++q) a[q] += b[q];
    };
    for (std::size_t i = hi; i-- > lo;) {
      const Tensor<T>& x = cache.inputs[i - lo];
      const bool want_dx = i > lo || need_dx_at_lo;
      std::visit(
          [&](const auto& spec) {
            using S = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<S, ConvSpec>) {
              auto pg = conv2d_backward(x, params_[base(i)], spec.stride, g, want_dx);
              add(grads_[base(i)], pg.weight);
              add(grads_[base(i) + 1], pg.bias);
              g = std::move(pg.input);
            } else if constexpr (std::is_same_v<S, DenseSpec>) {
              auto pg = dense_backward(x, params_[base(i)], g, want_dx);
              add(grads_[base(i)], pg.weight);
              add(grads_[base(i) + 1], pg.bias);
              g = std::move(pg.input);
            } else if constexpr (std::is_same_v<S, PoolSpec>) {
              g = maxpool_backward(x.shape(), cache.argmax[i - lo], g);
            } else if constexpr (std::is_same_v<S, ReluSpec>) {
              g = relu_backward(x, g);
            } else {
              g = g.reshaped(x.shape());
            }
          },
          config_.layers[i]);
    }
    return g;
  }

  Tensor<T> apply(std::size_t i, const Tensor<T>& x, std::vector<std::size_t>* argmax) const {
    return std::visit(
        [&](const auto& spec) -> Tensor<T> {
          using S = std::decay_t<decltype(spec)>;
          if constexpr (std::is_same_v<S, ConvSpec>) {
            return conv2d_forward(x, params_[base(i)], params_[base(i) + 1], spec.stride);
          } else if constexpr (std::is_same_v<S, DenseSpec>) {
            return dense_forward(x, params_[base(i)], params_[base(i) + 1]);
          } else if constexpr (std::is_same_v<S, PoolSpec>) {
            auto r = maxpool_forward(x, spec.window);
            if (argmax) *argmax = std::move(r.argmax);
            return std::move(r.output);
          } else if constexpr (std::is_same_v<S, ReluSpec>) {
            return relu_forward(x);
          } else {
            return x.reshaped({x.dim(0), x.size() / x.dim(0)});
          }
        },
        config_.layers[i]);
  }

  ModelConfig config_;
  std::vector<int> param_base_;
  std::vector<Tensor<T>> params_;
  std::vector<Tensor<T>> grads_;
  std::vector<std::string> names_;
  std::size_t split_ = 0;
  Tensor<T> batch_input_;
  Cache head_;
};

}  // namespace coinforge::nn
