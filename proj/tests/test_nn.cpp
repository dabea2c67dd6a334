#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "ptl/error.hpp"
#include "ptl/nn/checkpoint.hpp"
#include "ptl/nn/layers.hpp"
#include "ptl/nn/loss.hpp"
#include "ptl/nn/optim.hpp"

using namespace ptl;
using namespace ptl::nn;
using ptl::test::dot;
using ptl::test::gradient_error;
using ptl::test::random_tensor;

namespace {

constexpr double kTol = 1e-6;

/// Checks input and (optionally) parameter gradients of a layer under the
/// scalar loss <forward(x), r>.
template <class Layer>
void check_layer(Layer& layer, Tensor x, std::vector<Parameter*> params, Rng& rng, bool train = true) {
  const Tensor probe = layer.forward(x, train);
  layer.clear();
  const Tensor r = random_tensor(probe.shape(), rng);
  for (auto* p : params) p->zero_grad();
  layer.forward(x, train);
  const Tensor dx = layer.backward(r);
  auto loss = [&] {
    const double v = dot(layer.forward(x, train), r);
    layer.clear();
    return v;
  };
  if (!dx.empty()) CHECK(gradient_error(x, dx, loss) < kTol);
  for (auto* p : params) {
    const Tensor g = p->grad;
    CHECK(gradient_error(p->value, g, loss) < kTol);
  }
}

}  // namespace

TEST_CASE("conv2d gradients") {
  Rng rng(1);
  for (int kernel : {1, 3})
    for (int stride : {1, 2, 4}) {
      CAPTURE(kernel);
      CAPTURE(stride);
      Conv2d conv("c", 3, 4, kernel, stride, rng);
      for (auto& v : conv.bias.value.values()) v = uniform01(rng);
      check_layer(conv, random_tensor({2, 3, 8, 8}, rng), {&conv.weight, &conv.bias}, rng);
    }
}

TEST_CASE("conv2d matches a direct convolution") {
  Rng rng(2);
  Conv2d conv("c", 2, 3, 3, 2, rng);
  for (auto& v : conv.bias.value.values()) v = uniform01(rng);
  const Tensor x = random_tensor({1, 2, 5, 5}, rng);
  const Tensor y = conv.forward(x, false);
  REQUIRE(y.shape() == std::vector<int>{1, 3, 3, 3});
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = conv.bias.value[o];
        for (int c = 0; c < 2; ++c)
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              const int yi = 2 * i + ki - 1, xj = 2 * j + kj - 1;
              if (yi < 0 || yi >= 5 || xj < 0 || xj >= 5) continue;
              s += conv.weight.value[((o * 2 + c) * 3 + ki) * 3 + kj] * x.at(0, c, yi, xj);
            }
        CHECK(y.at(0, o, i, j) == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("shared conv weights accumulate gradients from both uses") {
  Rng rng(3);
  Conv2d conv("c", 2, 2, 3, 1, rng);
  Tensor a = random_tensor({1, 2, 6, 6}, rng), b = random_tensor({1, 2, 6, 6}, rng);
  const Tensor ra = random_tensor({1, 2, 6, 6}, rng), rb = random_tensor({1, 2, 6, 6}, rng);
  conv.weight.zero_grad();
  conv.forward(a, true);
  conv.forward(b, true);
  const Tensor db = conv.backward(rb);  // last in, first out
  const Tensor da = conv.backward(ra);
  auto loss = [&] { return dot(conv.forward(a, false), ra) + dot(conv.forward(b, false), rb); };
  const Tensor gw = conv.weight.grad;
  CHECK(gradient_error(conv.weight.value, gw, loss) < kTol);
  CHECK(gradient_error(a, da, loss) < kTol);
  CHECK(gradient_error(b, db, loss) < kTol);
}

TEST_CASE("frozen conv skips parameter gradients and can drop input gradients") {
  Rng rng(4);
  Conv2d conv("c", 2, 2, 3, 1, rng);
  conv.weight.trainable = conv.bias.trainable = false;
  conv.weight.zero_grad();
  conv.forward(random_tensor({1, 2, 4, 4}, rng), true);
  CHECK_FALSE(conv.backward(random_tensor({1, 2, 4, 4}, rng)).empty());
  for (double g : conv.weight.grad.values()) CHECK(g == 0.0);
  conv.set_input_grad(false);
  conv.forward(random_tensor({1, 2, 4, 4}, rng), true);
  CHECK(conv.backward(random_tensor({1, 2, 4, 4}, rng)).empty());
}

TEST_CASE("batch norm gradients in training mode") {
  Rng rng(5);
  BatchNorm2d bn("bn", 3);
  for (auto& v : bn.gamma.value.values()) v = 0.5 + uniform01(rng);
  for (auto& v : bn.beta.value.values()) v = uniform01(rng);
  check_layer(bn, random_tensor({4, 3, 3, 3}, rng), {&bn.gamma, &bn.beta}, rng, true);
}

TEST_CASE("batch norm inference uses running statistics") {
  Rng rng(6);
  BatchNorm2d bn("bn", 2);
  bn.running_mean = Tensor({2}, {1.0, -1.0});
  bn.running_var = Tensor({2}, {4.0, 0.25});
  const Tensor x = random_tensor({1, 2, 2, 2}, rng);
  const Tensor y = bn.forward(x, false);
  CHECK(y.at(0, 0, 1, 1) == doctest::Approx((x.at(0, 0, 1, 1) - 1.0) / std::sqrt(4.0 + 1e-3)));
  CHECK(y.at(0, 1, 0, 1) == doctest::Approx((x.at(0, 1, 0, 1) + 1.0) / std::sqrt(0.25 + 1e-3)));
}

TEST_CASE("batch norm running averages use momentum 0.99") {
  BatchNorm2d bn("bn", 1);
  Tensor x({2, 1, 1, 1}, {1.0, 3.0});
  bn.forward(x, true);
  CHECK(bn.running_mean[0] == doctest::Approx(0.01 * 2.0));
  CHECK(bn.running_var[0] == doctest::Approx(0.99 + 0.01 * 1.0));  // biased batch variance
}

TEST_CASE("relu, pooling and upsampling gradients") {
  Rng rng(7);
  ReLU relu;
  check_layer(relu, random_tensor({2, 2, 5, 5}, rng), {}, rng);
  MaxPool2d pool;
  check_layer(pool, random_tensor({2, 2, 6, 6}, rng), {}, rng);
  CHECK(pool.forward(random_tensor({1, 1, 5, 5}, rng), false).shape() == std::vector<int>{1, 1, 2, 2});
  Upsample up(4);
  check_layer(up, random_tensor({1, 2, 3, 3}, rng), {}, rng);
}

TEST_CASE("softmax gradient and normalisation") {
  Rng rng(8);
  ChannelSoftmax sm;
  const Tensor x = random_tensor({2, 3, 4, 4}, rng);
  const Tensor p = sm.forward(x, false);
  for (int y = 0; y < 4; ++y) CHECK(p.at(1, 0, y, 2) + p.at(1, 1, y, 2) + p.at(1, 2, y, 2) == doctest::Approx(1.0));
  check_layer(sm, x, {}, rng);
}

TEST_CASE("spatial dropout drops whole maps and rescales survivors") {
  SpatialDropout drop(0.75, 9);
  Tensor x({4, 16, 3, 3}, 1.0);
  const Tensor y = drop.forward(x, true);
  int kept = 0;
  for (int n = 0; n < 4; ++n)
    for (int c = 0; c < 16; ++c) {
      const double v = y.at(n, c, 0, 0);
      CHECK((v == 0.0 || v == doctest::Approx(4.0)));
      for (int i = 0; i < 9; ++i) CHECK(y.plane(n, c)[i] == v);
      kept += v > 0;
    }
  CHECK(kept > 0);
  CHECK(kept < 40);
  const Tensor g = drop.backward(Tensor(x.shape(), 1.0));
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == y[i]);
  const Tensor z = drop.forward(x, false);
  for (double v : z.values()) CHECK(v == 1.0);
}

TEST_CASE("mse loss value and gradient") {
  Rng rng(10);
  Tensor pred = random_tensor({2, 1, 3, 3}, rng);
  const Tensor target = random_tensor({2, 1, 3, 3}, rng);
  const auto r = mse_loss(pred, target);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  CHECK(r.value == doctest::Approx(s / pred.size()));
  CHECK(gradient_error(pred, r.grad, [&] { return mse_loss(pred, target).value; }) < kTol);
  CHECK_THROWS(mse_loss(pred, Tensor({1, 1, 3, 3})));
}

namespace {

Tensor one_pixel(double p0, double p1, double p2) { return Tensor({1, 3, 1, 1}, {p0, p1, p2}); }

}  // namespace

TEST_CASE("focal loss reference values") {
  const Tensor target = one_pixel(1, 0, 0);
  CHECK(focal_loss(one_pixel(0.7, 0.2, 0.1), target, 2.0).value == doctest::Approx(0.032100744954485914).epsilon(1e-12));
  CHECK(focal_loss(one_pixel(0.2, 0.5, 0.3), target, 2.0).value == doctest::Approx(1.0300402639578242).epsilon(1e-12));
  CHECK(cross_entropy(one_pixel(0.7, 0.2, 0.1), target) == doctest::Approx(0.35667494393873238).epsilon(1e-12));
}

TEST_CASE("focal loss with zero focusing is cross entropy") {
  Rng rng(11);
  ChannelSoftmax sm;
  const Tensor probs = sm.forward(random_tensor({3, 3, 4, 4}, rng, 2.0), false);
  Tensor target({3, 3, 4, 4});
  for (int n = 0; n < 3; ++n)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) target.at(n, (n + x + y) % 3, y, x) = 1.0;
  CHECK(focal_loss(probs, target, 0.0).value == doctest::Approx(cross_entropy(probs, target)).epsilon(1e-12));
}

TEST_CASE("focal loss gradient, alone and through softmax") {
  Rng rng(12);
  ChannelSoftmax sm;
  Tensor logits = random_tensor({2, 3, 3, 3}, rng);
  Tensor target({2, 3, 3, 3});
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) target.at(n, (x + 2 * y + n) % 3, y, x) = 1.0;
  for (double gamma : {0.0, 2.0}) {
    Tensor probs = sm.forward(logits, false);
    const auto r = focal_loss(probs, target, gamma);
    CHECK(gradient_error(probs, r.grad, [&] { return focal_loss(probs, target, gamma).value; }) < kTol);
    sm.forward(logits, true);
    const Tensor dlogits = sm.backward(r.grad);
    CHECK(gradient_error(logits, dlogits, [&] { return focal_loss(sm.forward(logits, false), target, gamma).value; }) <
          kTol);
  }
}

TEST_CASE("adam first step moves each parameter by lr against its gradient") {
  Parameter p("w", Tensor({3}, {1.0, 2.0, 3.0}));
  p.grad = Tensor({3}, {0.5, -2.0, 0.0});
  AdamState s;
  std::vector<Parameter*> ps = {&p};
  adam_step(ps, s, 0.1);
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(2.1).epsilon(1e-6));
  CHECK(p.value[2] == doctest::Approx(3.0));
  CHECK(s.step == 1);
  Parameter frozen("f", Tensor({1}, {1.0}));
  frozen.trainable = false;
  frozen.grad[0] = 1.0;
  std::vector<Parameter*> fs = {&frozen};
  AdamState fstate;
  adam_step(fs, fstate, 0.1);
  CHECK(frozen.value[0] == 1.0);
}

TEST_CASE("cosine warm restart schedule") {
  LrSchedule s;  // 1e-6 .. 1e-4, cycles 5, 7.5, 11.25, peaks decay by 0.9
  CHECK(lr_at(s, 0) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(s, 2.5) == doctest::Approx(5.05e-5).epsilon(1e-12));
  CHECK(lr_at(s, 4.999999) == doctest::Approx(1e-6).epsilon(1e-6));
  CHECK(lr_at(s, 5) == doctest::Approx(9e-5).epsilon(1e-12));
  CHECK(lr_at(s, 8.75) == doctest::Approx(4.55e-5).epsilon(1e-12));
  CHECK(lr_at(s, 12.5) == doctest::Approx(8.1e-5).epsilon(1e-12));
  CHECK(lr_at(s, 20) == doctest::Approx(2.1e-5).epsilon(1e-12));
  CHECK_THROWS(lr_at(s, -1));
}

TEST_CASE("checkpoint round trip is exact for f32 values") {
  Rng rng(13);
  Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({5}, rng);
  Parameter pa("a", a), pb("b", b);
  std::vector<Parameter*> ps = {&pa, &pb};
  round_to_f32(ps);
  const auto bytes = encode_checkpoint({{"a", &pa.value}, {"b", &pb.value}}, {{"model", "test"}});
  const auto ck = decode_checkpoint(bytes);
  CHECK(ck.metadata.at("model") == "test");
  CHECK(ck.tensors.at("a").shape() == std::vector<int>{2, 3, 4});
  for (std::size_t i = 0; i < pa.value.size(); ++i) CHECK(ck.tensors.at("a")[i] == pa.value[i]);
  for (std::size_t i = 0; i < pb.value.size(); ++i) CHECK(ck.tensors.at("b")[i] == pb.value[i]);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  CHECK_THROWS_AS(decode_checkpoint("xx"), DataError);
  const auto dir = ptl::test::temp_dir("ckpt");
  save_checkpoint((dir / "c.ckpt").string(), {{"b", &pb.value}});
  CHECK(load_checkpoint((dir / "c.ckpt").string()).tensors.at("b")[4] == pb.value[4]);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), DataError);
}

TEST_CASE("tensor helpers") {
  Rng rng(14);
  const Tensor a = random_tensor({2, 1, 2, 2}, rng), b = random_tensor({2, 3, 2, 2}, rng);
  const Tensor* parts[] = {&a, &b};
  const Tensor c = concat_channels(parts);
  CHECK(c.shape() == std::vector<int>{2, 4, 2, 2});
  CHECK(c.at(1, 0, 1, 1) == a.at(1, 0, 1, 1));
  CHECK(c.at(1, 3, 0, 1) == b.at(1, 2, 0, 1));
  const int widths[] = {1, 3};
  const auto back = split_channels(c, widths);
  CHECK(back[1].values()[5] == b.values()[5]);
  const Tensor items[] = {a.sample(0), a.sample(1)};
  CHECK(stack(items).values()[7] == a.values()[7]);
}
