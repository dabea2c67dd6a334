#include <doctest.h>

#include "helpers.hpp"
#include "ptl/error.hpp"
#include "ptl/models.hpp"
#include "ptl/nn/loss.hpp"
#include "ptl/nn/optim.hpp"

using namespace ptl;
using nn::Tensor;
using ptl::test::dot;
using ptl::test::gradient_error;
using ptl::test::random_tensor;

namespace {

BackboneConfig tiny() {
  BackboneConfig c;
  c.input_size = 16;
  c.encoder_blocks = 4;
  c.base_channels = 2;
  c.multiscale_channels = 3;
  return c;
}

void clear(AetModel& m) {
  m.backbone.clear();
  m.head.clear();
}

}  // namespace

TEST_CASE("config validation and widths") {
  BackboneConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.encoder_width(0) == 16);
  CHECK(c.encoder_width(3) == 128);
  CHECK(c.encoder_width(5) == 128);
  c.input_size = 60;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.input_size = 64;
  c.encoder_blocks = 7;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.encoder_blocks = 5;
  c.input_size = 96;
  CHECK_NOTHROW(c.validate());
  CHECK(BackboneConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("every branch lands on 1/8 resolution") {
  for (int blocks : {3, 4, 5}) {
    CAPTURE(blocks);
    BackboneConfig c;
    c.encoder_blocks = blocks;
    c.base_channels = 2;
    c.multiscale_channels = 2;
    c.input_size = 32;
    Rng rng(1);
    Backbone b(c, rng);
    const auto sizes = b.branch_output_sizes();
    CHECK(sizes.size() == static_cast<std::size_t>(blocks));
    for (int s : sizes) CHECK(s == 4);
    const Tensor y = b.forward(random_tensor({2, 3, 32, 32}, rng), false);
    CHECK(y.shape() == std::vector<int>{2, b.output_channels(), 32, 32});
  }
}

TEST_CASE("freeze stage names") {
  const auto c = tiny();
  const auto names = freeze_stage_names(c);
  CHECK(names == std::vector<std::string>{"none", "block1_pool", "block2_pool", "block3_pool", "block4_pool",
                                          "concatenate"});
  for (const auto& n : names) CHECK(FreezeStage::parse(n, c).name() == n);
  CHECK_THROWS_AS(FreezeStage::parse("block5_pool", c), std::invalid_argument);
  CHECK_THROWS_AS(FreezeStage::parse("block0_pool", c), std::invalid_argument);
  CHECK_THROWS_AS(FreezeStage::parse("decoder", c), std::invalid_argument);
}

TEST_CASE("AET gradient through the shared backbone") {
  Rng rng(2);
  AetModel m(tiny(), 3);
  Tensor a = random_tensor({2, 3, 16, 16}, rng), b = random_tensor({2, 3, 16, 16}, rng);
  const Tensor target = random_tensor({2, 1, 16, 16}, rng);
  auto loss = [&] {
    const double v = nn::mse_loss(m.forward(a, b, true), target).value;
    clear(m);
    return v;
  };
  auto params = m.parameters();
  nn::zero_grads(params);
  m.backward(nn::mse_loss(m.forward(a, b, true), target).grad);
  // Encoder, a branch, the decoder and the head.
  for (const std::string name : {"enc1_1.conv.weight", "enc4_2.conv.weight", "branch3_a.conv.weight", "dec2_a.conv.weight",
                           "dec3_b.bn.gamma", "head.weight"}) {
    CAPTURE(name);
    nn::Parameter* p = nullptr;
    for (auto* q : params)
      if (q->name == name) p = q;
    REQUIRE(p);
    const Tensor g = p->grad;
    CHECK(gradient_error(p->value, g, loss, 24, 1e-6) < 1e-4);
  }
}

TEST_CASE("PTC gradient with dropout disabled") {
  Rng rng(4);
  PtcModel m(tiny(), 5);
  m.dropout = nn::SpatialDropout(0.0, 1);
  Tensor x = random_tensor({3, 3, 16, 16}, rng);
  Tensor target({3, 3, 16, 16});
  for (int n = 0; n < 3; ++n)
    for (int y = 0; y < 16; ++y)
      for (int i = 0; i < 16; ++i) target.at(n, (n + y / 4) % 3, y, i) = 1.0;
  auto loss = [&] {
    const double v = nn::focal_loss(m.forward(x, true), target).value;
    m.backbone.clear();
    m.head.clear();
    m.softmax.clear();
    m.dropout.clear();
    return v;
  };
  auto params = m.parameters();
  nn::zero_grads(params);
  m.backward(nn::focal_loss(m.forward(x, true), target).grad);
  for (auto* p : params) {
    if (p->name != "enc2_1.conv.weight" && p->name != "head.weight" && p->name != "branch1_c.bn.beta") continue;
    CAPTURE(p->name);
    const Tensor g = p->grad;
    CHECK(gradient_error(p->value, g, loss, 24, 1e-6) < 1e-4);
  }
}

TEST_CASE("PTC outputs are per-pixel distributions") {
  PtcModel m(tiny(), 1);
  Rng rng(1);
  const Tensor p = m.predict(random_tensor({1, 3, 16, 16}, rng));
  CHECK(p.shape() == std::vector<int>{1, 3, 16, 16});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) CHECK(p.at(0, 0, y, x) + p.at(0, 1, y, x) + p.at(0, 2, y, x) == doctest::Approx(1.0));
}

TEST_CASE("freezing keeps weights and running statistics fixed") {
  Rng rng(6);
  AetModel aet(tiny(), 7);
  for (const auto& stage : freeze_stage_names(tiny())) {
    CAPTURE(stage);
    PtcModel m = build_ptc_from_aet(aet, stage, 8);
    const PtcModel before = m;
    auto params = m.parameters();
    nn::AdamState adam;
    for (int step = 0; step < 2; ++step) {
      nn::zero_grads(params);
      const Tensor x = random_tensor({3, 3, 16, 16}, rng);
      Tensor target({3, 3, 16, 16});
      for (int n = 0; n < 3; ++n) target.plane(n, n)[0] = 1.0;
      for (int n = 0; n < 3; ++n)
        for (int i = 1; i < 256; ++i) target.plane(n, 2)[i] = 1.0;
      m.backward(nn::focal_loss(m.forward(x, true), target).grad);
      nn::adam_step(params, adam, 1e-2);
    }
    const auto fs = FreezeStage::parse(stage, tiny());
    const auto a = before.state(), b = m.state();
    REQUIRE(a.size() == b.size());
    int frozen_changed = 0, trainable_changed = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::string& name = a[i].name;
      bool frozen = false;
      if (name.starts_with("enc")) frozen = std::stoi(name.substr(3, name.find('_') - 3)) <= fs.encoder_blocks;
      if (name.starts_with("branch")) frozen = fs.branches;
      const bool changed = a[i].tensor->values()[0] != b[i].tensor->values()[0] ||
                           a[i].tensor->values()[a[i].tensor->size() - 1] != b[i].tensor->values()[b[i].tensor->size() - 1];
      if (frozen && changed) ++frozen_changed;
      if (!frozen && changed) ++trainable_changed;
    }
    CHECK(frozen_changed == 0);
    CHECK(trainable_changed > 0);
  }
}

TEST_CASE("PTC built from AET copies the backbone") {
  AetModel aet(tiny(), 9);
  const PtcModel m = build_ptc_from_aet(aet, "block2_pool", 10);
  CHECK(m.backbone.freeze().encoder_blocks == 2);
  const auto a = aet.backbone.state(), b = m.backbone.state();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].tensor->values()[0] == b[i].tensor->values()[0]);
  CHECK(m.head.weight.value.shape() == std::vector<int>{3, aet.backbone.output_channels(), 3, 3});
  CHECK_THROWS(build_ptc_from_aet(aet, "block9_pool", 10));
}

TEST_CASE("checkpoints reload to identical predictions") {
  const auto dir = ptl::test::temp_dir("models");
  Rng rng(11);
  const Tensor x = random_tensor({1, 3, 16, 16}, rng), y = random_tensor({1, 3, 16, 16}, rng);
  AetModel aet(tiny(), 12);
  aet.save((dir / "aet.ckpt").string());
  const AetModel aet2 = AetModel::load((dir / "aet.ckpt").string());
  const Tensor pa = aet.predict(x, y), pb = aet2.predict(x, y);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);

  PtcModel ptc = build_ptc_from_aet(aet, "block1_pool", 13);
  ptc.save((dir / "ptc.ckpt").string());
  const PtcModel ptc2 = PtcModel::load((dir / "ptc.ckpt").string());
  CHECK(ptc2.backbone.freeze().name() == "block1_pool");
  const Tensor qa = ptc.predict(x), qb = ptc2.predict(x);
  for (std::size_t i = 0; i < qa.size(); ++i) CHECK(qa[i] == qb[i]);

  CHECK_THROWS_AS(PtcModel::load((dir / "aet.ckpt").string()), DataError);
  CHECK_THROWS_AS(AetModel::load((dir / "ptc.ckpt").string()), DataError);
}

TEST_CASE("parameter counts scale with width") {
  auto c = tiny();
  AetModel small(c, 1);
  c.base_channels = 4;
  AetModel big(c, 1);
  CHECK(parameter_count(small.parameters()) < parameter_count(big.parameters()));
}
