#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "coinforge/nn/checkpoint.hpp"
#include "coinforge/nn/train.hpp"
#include "gradcheck.hpp"

using namespace coinforge;
using namespace coinforge::nn;

namespace {

// Quadruple loop over (sample, filter, output row, output column).
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, std::size_t s) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), f = w.dim(0), k = w.dim(2);
  const std::size_t ho = (h - k) / s + 1, wo = (wd - k) / s + 1;
  Tensor<double> y({n, f, ho, wo});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < f; ++o) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = b[o];
          for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                acc += w[((o * c + ci) * k + ky) * k + kx] * x[((i * c + ci) * h + oy * s + ky) * wd + ox * s + kx];
              }
            }
          }
          y[((i * f + o) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }
  return y;
}

void expect_near(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << i;
}

// Two classes told apart by where a Gaussian blob sits, 16x16.
ImageSet blob_set(int per_class, std::uint64_t seed) {
  coinforge::detail::Rng rng(seed);
  ImageSet set;
  for (int i = 0; i < per_class * 2; ++i) {
    const int label = i % 2;
    const double cx = (label ? 11.0 : 4.5) + rng.uniform(-1, 1);
    const double cy = (label ? 11.0 : 4.5) + rng.uniform(-1, 1);
    Raster img(16, 16, 1);
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        const double v = 20 + 200 * std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / 8.0) + rng.normal() * 5;
        img.at(x, y) = coinforge::detail::round_to_u8(v);
      }
    }
    set.add(img, label);
  }
  return set;
}

}  // namespace

TEST(Tensor, Basics) {
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.reshaped({3, 2}).dim(0), 3u);
  EXPECT_THROW(t.reshaped({4}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  EXPECT_EQ(shape_string({1, 150, 150}), "[1,150,150]");
}

TEST(Conv, IdentityKernel) {
  coinforge::detail::Rng rng(1);
  const auto x = gradcheck::random_tensor({2, 1, 5, 7}, rng);
  const Tensor<double> w({1, 1, 1, 1}, 1.0), b({1}, 0.0);
  EXPECT_EQ(conv2d_forward(x, w, b, 1), x);
}

TEST(Conv, OnesKernelOnConstant) {
  const Tensor<double> x({1, 1, 6, 6}, 2.5), w({1, 1, 3, 3}, 1.0), b({1}, 0.0);
  const auto y = conv2d_forward(x, w, b, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 22.5);
}

TEST(Conv, MatchesLoopOracle) {
  coinforge::detail::Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t c = gradcheck::pick(rng, 1, 5), k = gradcheck::pick(rng, 1, 4), s = gradcheck::pick(rng, 1, 3);
    const std::size_t f = gradcheck::pick(rng, 1, 6), n = gradcheck::pick(rng, 1, 3);
    const auto x = gradcheck::random_tensor({n, c, k + gradcheck::pick(rng, 0, 9), k + gradcheck::pick(rng, 0, 9)}, rng);
    const auto w = gradcheck::random_tensor({f, c, k, k}, rng);
    const auto b = gradcheck::random_tensor({f}, rng);
    expect_near(conv2d_forward(x, w, b, s), conv_oracle(x, w, b, s), 1e-12);
  }
}

TEST(Conv, FloatPathsAgree) {
  coinforge::detail::Rng rng(3);
  // 16 input channels with a 3x3 kernel go through im2col; 1 channel does not.
  for (std::size_t c : {1u, 16u}) {
    const auto x = gradcheck::random_tensor({2, c, 12, 12}, rng);
    const auto w = gradcheck::random_tensor({8, c, 3, 3}, rng);
    const auto b = gradcheck::random_tensor({8}, rng);
    const auto yf = conv2d_forward(x.cast<float>(), w.cast<float>(), b.cast<float>(), 1);
    expect_near(yf.cast<double>(), conv_oracle(x, w, b, 1), 1e-4);
  }
}

TEST(Conv, ShapeErrors) {
  const Tensor<double> x({1, 2, 5, 5}), w({1, 3, 3, 3}), b({1});
  EXPECT_THROW(conv2d_forward(x, w, b, 1), ShapeError);
  EXPECT_THROW(conv2d_forward(Tensor<double>({1, 3, 2, 2}), w, b, 1), ShapeError);
  EXPECT_THROW(conv2d_forward(Tensor<double>({1, 3, 5, 5}), w, Tensor<double>({2}), 1), ShapeError);
  EXPECT_THROW(conv2d_forward(Tensor<double>({1, 3, 5, 5}), w, b, 0), ShapeError);
}

TEST(Dense, MatchesLoops) {
  coinforge::detail::Rng rng(4);
  const auto x = gradcheck::random_tensor({3, 5}, rng);
  const auto w = gradcheck::random_tensor({4, 5}, rng);
  const auto b = gradcheck::random_tensor({4}, rng);
  const auto y = dense_forward(x, w, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t u = 0; u < 4; ++u) {
      double acc = b[u];
      for (std::size_t d = 0; d < 5; ++d) acc += w[u * 5 + d] * x[i * 5 + d];
      EXPECT_NEAR(y[i * 4 + u], acc, 1e-12);
    }
  }
  EXPECT_THROW(dense_forward(x, Tensor<double>({4, 6}), b), ShapeError);
}

TEST(MaxPool, ForwardAndRouting) {
  const Tensor<double> x({1, 1, 2, 4}, std::vector<double>{1, 5, 2, 2, 3, 4, 2, 2});
  const auto r = maxpool_forward(x, 2);
  EXPECT_EQ(r.output.data()[0], 5);
  EXPECT_EQ(r.output.data()[1], 2);
  EXPECT_EQ(r.argmax[0], 1u);
  EXPECT_EQ(r.argmax[1], 2u);  // tie goes to the first cell
  const auto dx = maxpool_backward(x.shape(), r.argmax, Tensor<double>({1, 1, 1, 2}, std::vector<double>{7, 9}));
  EXPECT_EQ(dx.data()[1], 7);
  EXPECT_EQ(dx.data()[2], 9);
  EXPECT_EQ(dx.data()[0] + dx.data()[3] + dx.data()[4], 0);
  EXPECT_EQ(maxpool_forward(Tensor<double>({1, 1, 5, 5}), 2).output.shape(), (Shape{1, 1, 2, 2}));
}

TEST(Relu, Backward) {
  const Tensor<double> x({4}, std::vector<double>{-1, 0, 0.5, 3});
  const Tensor<double> g({4}, std::vector<double>{10, 20, 30, 40});
  const auto dx = relu_backward(x, g);
  EXPECT_EQ(dx.data()[0], 0);
  EXPECT_EQ(dx.data()[1], 0);
  EXPECT_EQ(dx.data()[2], 30);
  EXPECT_EQ(dx.data()[3], 40);
  EXPECT_EQ(relu_forward(x).data()[0], 0);
}

TEST(Loss, UniformLogits) {
  const Tensor<double> logits({2, 6}, 0.3);
  const std::vector<int> labels = {0, 5};
  EXPECT_NEAR(softmax_xent(logits, labels).loss, std::log(6.0), 1e-12);
  EXPECT_NEAR(softmax_xent(logits, labels).loss, 1.791759, 1e-6);
}

TEST(Loss, Saturation) {
  Tensor<double> logits({1, 6}, 0.0);
  logits[2] = 50;
  const std::vector<int> labels = {2};
  EXPECT_LT(softmax_xent(logits, labels).loss, 1e-8);
}

TEST(Loss, LargeLogitsStayFinite) {
  const Tensor<float> logits({1, 3}, std::vector<float>{1000.f, -1000.f, 0.f});
  const std::vector<int> labels = {1};
  const auto r = softmax_xent(logits, labels);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 2000.0, 1e-3);
  const auto p = softmax(logits);
  EXPECT_NEAR(p[0], 1.0f, 1e-6);
}

TEST(Loss, RowSumsAndSign) {
  coinforge::detail::Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> logits({4, 6});
    for (auto& v : logits.data()) v = rng.uniform(-20.0, 20.0);
    std::vector<int> labels(4);
    for (auto& l : labels) l = static_cast<int>(rng.below(6));
    const auto r = softmax_xent(logits, labels);
    const auto p = softmax(logits);
    EXPECT_GE(r.loss, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
      double gsum = 0.0, psum = 0.0;
      for (std::size_t j = 0; j < 6; ++j) gsum += r.grad[i * 6 + j], psum += p[i * 6 + j];
      EXPECT_NEAR(gsum, 0.0, 1e-12);
      EXPECT_NEAR(psum, 1.0, 1e-12);
    }
  }
}

TEST(Loss, LabelOutOfRange) {
  const Tensor<double> logits({1, 3});
  const std::vector<int> bad = {3};
  EXPECT_THROW(softmax_xent(logits, bad), ShapeError);
  const std::vector<int> neg = {-1};
  EXPECT_THROW(softmax_xent(logits, neg), ShapeError);
}

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<Tensor<double>> params = {Tensor<double>({3}, 0.7)};
  const std::vector<Tensor<double>> grads = {Tensor<double>({3}, 0.0)};
  AdamState<double> state(AdamConfig{}, params);
  const std::vector<std::string> names = {"w"};
  adam_step<double>(state, params, grads, names);
  EXPECT_EQ(params[0], Tensor<double>({3}, 0.7));
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor<double>> params = {Tensor<double>({1}, 2.0)};
  const std::vector<Tensor<double>> grads = {Tensor<double>({1}, 1.0)};
  AdamState<double> state(AdamConfig{}, params);
  const std::vector<std::string> names = {"w"};
  adam_step<double>(state, params, grads, names);
  EXPECT_NEAR(params[0][0] - 2.0, -0.001, 1e-6);
}

TEST(Adam, FirstStepIgnoresGradientScale) {
  const std::vector<std::string> names = {"w"};
  double step[2];
  for (int k = 0; k < 2; ++k) {
    std::vector<Tensor<double>> params = {Tensor<double>({1}, 0.0)};
    AdamState<double> state(AdamConfig{}, params);
    const std::vector<Tensor<double>> grads = {Tensor<double>({1}, -0.25 * (k + 1))};
    adam_step<double>(state, params, grads, names);
    step[k] = params[0][0];
  }
  EXPECT_GT(step[0], 0.0);
  EXPECT_GT(step[1], 0.0);
  EXPECT_NEAR(step[0], step[1], 1e-9);
}

TEST(Adam, MatchesHandRecurrence) {
  std::vector<Tensor<double>> params = {Tensor<double>({1}, 0.0)};
  AdamState<double> state(AdamConfig{0.01, 0.8, 0.9, 1e-8}, params);
  const std::vector<std::string> names = {"w"};
  double m = 0, v = 0, theta = 0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 0.3 * t - 1.0;
    const std::vector<Tensor<double>> grads = {Tensor<double>({1}, g)};
    adam_step<double>(state, params, grads, names);
    m = 0.8 * m + 0.2 * g;
    v = 0.9 * v + 0.1 * g * g;
    theta -= 0.01 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.9, t))) + 1e-8);
    EXPECT_NEAR(params[0][0], theta, 1e-12);
  }
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  std::vector<Tensor<double>> params = {Tensor<double>({2}, 1.0), Tensor<double>({1}, 1.0)};
  std::vector<Tensor<double>> grads = {Tensor<double>({2}, 0.5), Tensor<double>({1}, NAN)};
  AdamState<double> state(AdamConfig{}, params);
  const std::vector<std::string> names = {"dense0.weight", "dense0.bias"};
  try {
    adam_step<double>(state, params, grads, names);
    FAIL();
  } catch (const NonFiniteGradient& e) {
    EXPECT_NE(std::string(e.what()).find("dense0.bias"), std::string::npos);
  }
  EXPECT_EQ(state.step, 0);
  EXPECT_EQ(params[0], Tensor<double>({2}, 1.0));
}

TEST(GradCheck, Conv) { EXPECT_LE(gradcheck::conv2d(8, 101).worst, gradcheck::kTolerance); }
TEST(GradCheck, Dense) { EXPECT_LE(gradcheck::dense(8, 102).worst, gradcheck::kTolerance); }
TEST(GradCheck, MaxPool) { EXPECT_LE(gradcheck::maxpool(8, 103).worst, gradcheck::kTolerance); }
TEST(GradCheck, Relu) { EXPECT_LE(gradcheck::relu(8, 104).worst, gradcheck::kTolerance); }
TEST(GradCheck, SoftmaxXent) { EXPECT_LE(gradcheck::softmax_xent(8, 105).worst, gradcheck::kTolerance); }
TEST(GradCheck, Network) { EXPECT_LE(gradcheck::network(6, 106).worst, gradcheck::kTolerance); }

TEST(GradCheck, DetectsWrongGradient) {
  coinforge::detail::Rng rng(5);
  gradcheck::Tensor x = gradcheck::random_tensor({4}, rng);
  gradcheck::Tensor wrong = x;  // d/dx of sum(x^2) is 2x, not x
  gradcheck::Result r;
  gradcheck::compare(
      x, wrong,
      [&] {
        double s = 0;
        for (double v : x.data()) s += v * v;
        return s;
      },
      r);
  EXPECT_GT(r.worst, 0.1);
}

TEST(Model, CoinnetShapes) {
  const auto cfg = coinnet_s(6);
  const auto chain = cfg.shape_chain();
  EXPECT_EQ(chain[0], (Shape{8, 148, 148}));
  EXPECT_EQ(chain[2], (Shape{8, 74, 74}));
  EXPECT_EQ(chain[5], (Shape{16, 36, 36}));
  EXPECT_EQ(chain[6], (Shape{20736}));
  EXPECT_EQ(chain.back(), (Shape{6}));
  const Network<float> net(cfg);
  EXPECT_EQ(net.params().size(), 8u);
  EXPECT_EQ(net.params()[4].shape(), (Shape{64, 20736}));
  EXPECT_EQ(coinnet_s(3).shape_chain().back(), (Shape{3}));
  EXPECT_THROW(model_by_name("resnet50", 6), std::invalid_argument);
}

TEST(Model, BadChains) {
  ModelConfig c;
  c.input = {1, 4, 4};
  c.num_classes = 2;
  c.layers = {ConvSpec{2, 5, 1}, FlattenSpec{}, DenseSpec{2}};
  EXPECT_THROW(c.shape_chain(), ShapeError);
  c.layers = {DenseSpec{2}};
  EXPECT_THROW(c.shape_chain(), ShapeError);
  c.layers = {FlattenSpec{}, DenseSpec{3}};
  EXPECT_THROW(c.shape_chain(), ShapeError);
  c.layers = {FlattenSpec{}, DenseSpec{2}};
  EXPECT_NO_THROW(c.shape_chain());
}

TEST(Model, HeUniformInit) {
  Network<float> net(coinnet_s(6, {1, 20, 20}));
  net.initialize(9);
  for (std::size_t p = 0; p < net.params().size(); p += 2) {
    const auto& w = net.params()[p];
    const double limit = std::sqrt(6.0 / static_cast<double>(w.size() / w.dim(0)));
    double lo = 0, hi = 0;
    for (float v : w.data()) lo = std::min<double>(lo, v), hi = std::max<double>(hi, v);
    EXPECT_LE(hi, limit);
    EXPECT_GE(lo, -limit);
    EXPECT_GT(hi, 0.5 * limit);
    for (float v : net.params()[p + 1].data()) EXPECT_EQ(v, 0.0f);
  }
  Network<float> again(coinnet_s(6, {1, 20, 20}));
  again.initialize(9);
  EXPECT_EQ(again.params(), net.params());
}

TEST(Model, BatchEqualsPerItem) {
  coinforge::detail::Rng rng(6);
  Network<double> net(coinnet_s(6, {1, 24, 20}));
  net.initialize(1);
  const auto x = gradcheck::random_tensor({5, 1, 24, 20}, rng, 0, 1);
  const auto batch = net.forward(x);
  const auto preds = net.predict(x);
  for (std::size_t i = 0; i < 5; ++i) {
    const Tensor<double> xi({1, 1, 24, 20}, std::vector<double>(x.raw() + i * 480, x.raw() + (i + 1) * 480));
    const auto yi = net.forward(xi);
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(yi[c], batch[i * 6 + c], 1e-12);
    EXPECT_EQ(net.predict(xi)[0], preds[i]);
  }
  EXPECT_EQ(net.forward_train(x), batch);
}

TEST(Model, PredictTiesGoLow) {
  ModelConfig c;
  c.input = {1, 1, 2};
  c.num_classes = 3;
  c.layers = {FlattenSpec{}, DenseSpec{3}};
  Network<double> net(c);
  net.params()[0].fill(0.0);
  net.params()[1] = Tensor<double>({3}, std::vector<double>{1, 1, 1});
  EXPECT_EQ(net.predict(Tensor<double>({1, 1, 1, 2}))[0], 0);
  net.params()[1] = Tensor<double>({3}, std::vector<double>{0, 2, 2});
  EXPECT_EQ(net.predict(Tensor<double>({1, 1, 1, 2}))[0], 1);
  net.params()[1] = Tensor<double>({3}, std::vector<double>{0, 1, 9});
  EXPECT_EQ(net.predict(Tensor<double>({1, 1, 1, 2}))[0], 2);
}

TEST(Model, RejectsWrongInput) {
  Network<float> net(coinnet_s(6, {1, 20, 20}));
  EXPECT_THROW(net.forward(Tensor<float>({1, 1, 21, 20})), ShapeError);
  EXPECT_THROW(net.backward(Tensor<float>({1, 6})), std::logic_error);
}

TEST(Checkpoint, RoundTrip) {
  Network<float> net(coinnet_s(3, {1, 30, 26}));
  net.initialize(4);
  std::stringstream ss;
  write_checkpoint(ss, net);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "CFNN");
  const Network<float> back = read_checkpoint(ss);
  EXPECT_EQ(back.params(), net.params());
  EXPECT_EQ(back.config().layers, net.config().layers);
  EXPECT_EQ(back.config().input, net.config().input);
  std::stringstream again;
  write_checkpoint(again, back);
  EXPECT_EQ(again.str(), bytes);
}

TEST(Checkpoint, Corruption) {
  Network<float> net(coinnet_s(6, {1, 20, 20}));
  std::stringstream ss;
  write_checkpoint(ss, net);
  const std::string bytes = ss.str();
  auto read = [](std::string b) {
    std::istringstream is(b);
    return read_checkpoint(is);
  };
  EXPECT_THROW(read("XXXX" + bytes.substr(4)), CheckpointError);
  std::string version = bytes;
  version[4] = 2;
  EXPECT_THROW(read(version), CheckpointError);
  EXPECT_THROW(read(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  EXPECT_THROW(read(bytes.substr(0, 30)), CheckpointError);
}

TEST(Train, SeparableBlobs) {
  const ImageSet set = blob_set(40, 3);
  TrainOptions o;
  o.epochs = 50;
  o.batch_size = 16;
  o.seed = 2;
  int reached = 0;
  o.on_epoch = [&](const EpochRecord& r, const Network<float>&) {
    if (r.test_accuracy == 1.0) reached = r.epoch;
    return reached == 0;
  };
  const auto result = train(coinnet_s(2, {1, 16, 16}), set, set, o);
  EXPECT_GT(reached, 0) << "never reached full train accuracy";
  EXPECT_EQ(accuracy_of(predict(result.model, set), set.labels), 1.0);
}

TEST(Train, Deterministic) {
  const ImageSet set = blob_set(10, 4);
  TrainOptions o;
  o.epochs = 3;
  o.batch_size = 7;
  o.seed = 5;
  const auto a = train(coinnet_s(2, {1, 16, 16}), set, set, o);
  const auto b = train(coinnet_s(2, {1, 16, 16}), set, set, o);
  ASSERT_EQ(a.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(a.epochs[e].train_loss, b.epochs[e].train_loss);
    EXPECT_EQ(a.epochs[e].test_predictions, b.epochs[e].test_predictions);
  }
  EXPECT_EQ(a.model.params(), b.model.params());
}

TEST(Train, ZeroEpochs) {
  const ImageSet set = blob_set(5, 5);
  TrainOptions o;
  o.epochs = 0;
  o.seed = 8;
  const auto r = train(coinnet_s(2, {1, 16, 16}), set, set, o);
  EXPECT_TRUE(r.epochs.empty());
  Network<float> init(coinnet_s(2, {1, 16, 16}));
  init.initialize(8);
  EXPECT_EQ(r.model.params(), init.params());
  EXPECT_EQ(r.initial_test_accuracy, accuracy_of(predict(init, set), set.labels));
}

TEST(Train, Errors) {
  const ImageSet set = blob_set(2, 6);
  TrainOptions o;
  EXPECT_THROW(train(coinnet_s(2, {1, 20, 20}), set, set, o), ShapeError);
  EXPECT_THROW(train(coinnet_s(2, {1, 16, 16}), ImageSet{}, set, o), std::invalid_argument);
  ImageSet bad = set;
  bad.labels[0] = 2;
  EXPECT_THROW(train(coinnet_s(2, {1, 16, 16}), bad, set, o), std::invalid_argument);
}
