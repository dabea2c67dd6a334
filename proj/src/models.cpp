#include "ptl/models.hpp"

#include <algorithm>
#include <stdexcept>

#include "ptl/datagen.hpp"
#include "ptl/error.hpp"

namespace ptl {

using nn::Tensor;

// ---------------------------------------------------------------- config

void BackboneConfig::validate() const {
  if (input_size <= 0 || encoder_blocks <= 0 || base_channels <= 0 || multiscale_channels <= 0 || branch_channels <= 0 ||
      convs_per_block <= 0)
    throw std::invalid_argument("BackboneConfig: all sizes must be positive");
  const int levels = std::max(encoder_blocks, 3);
  if (levels > 20 || input_size % (1 << levels) != 0)
    throw std::invalid_argument("BackboneConfig: input_size " + std::to_string(input_size) + " not divisible by 2^" +
                                std::to_string(levels));
}

int BackboneConfig::encoder_width(int level) const { return base_channels << std::min(level, 3); }

int BackboneConfig::decoder_width(int block) const { return encoder_width(2 - block); }

int BackboneConfig::branch_stride(int level) const { return level <= 2 ? 1 << (2 - level) : 1; }

int BackboneConfig::branch_upsample(int level) const { return level <= 2 ? 1 : 1 << (level - 2); }

nlohmann::json BackboneConfig::to_json() const {
  return {{"input_size", input_size},
          {"encoder_blocks", encoder_blocks},
          {"base_channels", base_channels},
          {"multiscale_channels", multiscale_channels},
          {"branch_channels", branch_channels},
          {"convs_per_block", convs_per_block}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.input_size = j.value("input_size", c.input_size);
  c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.multiscale_channels = j.value("multiscale_channels", c.multiscale_channels);
  c.branch_channels = j.value("branch_channels", c.branch_channels);
  c.convs_per_block = j.value("convs_per_block", c.convs_per_block);
  c.validate();
  return c;
}

std::string FreezeStage::name() const {
  if (branches) return "concatenate";
  if (encoder_blocks == 0) return "none";
  return "block" + std::to_string(encoder_blocks) + "_pool";
}

FreezeStage FreezeStage::parse(const std::string& name, const BackboneConfig& config) {
  if (name == "none") return {};
  if (name == "concatenate") return {config.encoder_blocks, true};
  if (name.size() > 10 && name.starts_with("block") && name.ends_with("_pool")) {
    const std::string digits = name.substr(5, name.size() - 10);
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      const int k = std::stoi(digits);
      if (k >= 1 && k <= config.encoder_blocks) return {k, false};
    }
  }
  throw std::invalid_argument("unknown freeze stage '" + name + "'");
}

std::vector<std::string> freeze_stage_names(const BackboneConfig& config) {
  std::vector<std::string> names{"none"};
  for (int k = 1; k <= config.encoder_blocks; ++k) names.push_back("block" + std::to_string(k) + "_pool");
  names.push_back("concatenate");
  return names;
}

// ---------------------------------------------------------------- ConvBlock

ConvBlock::ConvBlock(const std::string& n, int in, int out, int kernel, int stride, Rng& rng)
    : name(n), conv(n + ".conv", in, out, kernel, stride, rng), bn(n + ".bn", out) {}

Tensor ConvBlock::forward(const Tensor& x, bool train) {
  return relu.forward(bn.forward(conv.forward(x, train), train), train);
}

Tensor ConvBlock::backward(const Tensor& grad) { return conv.backward(bn.backward(relu.backward(grad))); }

void ConvBlock::clear() {
  conv.clear();
  bn.clear();
  relu.clear();
}

// ---------------------------------------------------------------- Backbone

Backbone::Backbone(const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  int in = 3;
  for (int l = 0; l < config_.encoder_blocks; ++l) {
    const int w = config_.encoder_width(l);
    std::vector<ConvBlock> block;
    for (int j = 0; j < config_.convs_per_block; ++j) {
      block.emplace_back("enc" + std::to_string(l + 1) + "_" + std::to_string(j + 1), in, w, 3, 1, rng);
      in = w;
    }
    encoder_.push_back(std::move(block));
    pools_.emplace_back();
  }
  const int ms = config_.multiscale_channels;
  for (int l = 0; l < config_.encoder_blocks; ++l) {
    const std::string n = "branch" + std::to_string(l + 1);
    Branch b;
    b.strided = ConvBlock(n + "_a", config_.encoder_width(l), ms, 3, config_.branch_stride(l), rng);
    b.mix = ConvBlock(n + "_b", ms, ms, 1, 1, rng);
    b.out = ConvBlock(n + "_c", ms, config_.branch_channels, 1, 1, rng);
    b.up = nn::Upsample(config_.branch_upsample(l));
    branches_.push_back(std::move(b));
  }
  in = config_.branch_channels * config_.encoder_blocks;
  for (int d = 0; d < 3; ++d) {
    const int w = config_.decoder_width(d);
    const std::string n = "dec" + std::to_string(d + 1);
    DecoderBlock b;
    b.conv3 = ConvBlock(n + "_a", in, w, 3, 1, rng);
    b.conv1 = ConvBlock(n + "_b", w, w, 1, 1, rng);
    decoder_.push_back(std::move(b));
    in = w;
  }
  apply_input_grads();
}

void Backbone::apply_input_grads() {
  for (int l = 0; l < config_.encoder_blocks; ++l) {
    const bool first_trainable = l == freeze_.encoder_blocks;
    for (std::size_t j = 0; j < encoder_[l].size(); ++j)
      encoder_[l][j].conv.set_input_grad(!(j == 0 && (l == 0 || first_trainable)));
    branches_[l].strided.conv.set_input_grad(l >= freeze_.encoder_blocks);
  }
  decoder_[0].conv3.conv.set_input_grad(!freeze_.branches);
}

void Backbone::set_freeze(const FreezeStage& stage) {
  if (stage.encoder_blocks < 0 || stage.encoder_blocks > config_.encoder_blocks ||
      (stage.branches && stage.encoder_blocks != config_.encoder_blocks))
    throw std::invalid_argument("Backbone: invalid freeze stage");
  freeze_ = stage;
  for (int l = 0; l < config_.encoder_blocks; ++l) {
    const bool frozen = l < stage.encoder_blocks;
    for (auto& b : encoder_[l])
      for (auto* p : {&b.conv.weight, &b.conv.bias, &b.bn.gamma, &b.bn.beta}) p->trainable = !frozen;
    for (auto* b : {&branches_[l].strided, &branches_[l].mix, &branches_[l].out})
      for (auto* p : {&b->conv.weight, &b->conv.bias, &b->bn.gamma, &b->bn.beta}) p->trainable = !stage.branches;
  }
  apply_input_grads();
}

Tensor Backbone::forward(const Tensor& x, bool train) {
  const int s = config_.input_size;
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != s || x.dim(3) != s)
    throw std::invalid_argument("Backbone: expected [N, 3, " + std::to_string(s) + ", " + std::to_string(s) + "], got " +
                                nn::shape_string(x.shape()));
  std::vector<Tensor> pooled;
  Tensor h = x;
  for (int l = 0; l < config_.encoder_blocks; ++l) {
    const bool t = train && l >= freeze_.encoder_blocks;
    for (auto& b : encoder_[l]) h = b.forward(h, t);
    h = pools_[l].forward(h, t);
    pooled.push_back(h);
  }
  const bool tb = train && !freeze_.branches;
  std::vector<Tensor> outs;
  for (int l = 0; l < config_.encoder_blocks; ++l) {
    auto& br = branches_[l];
    Tensor b = br.out.forward(br.mix.forward(br.strided.forward(pooled[l], tb), tb), tb);
    if (br.up.factor() > 1) b = br.up.forward(b, tb);
    outs.push_back(std::move(b));
  }
  std::vector<const Tensor*> parts;
  for (const auto& o : outs) parts.push_back(&o);
  h = nn::concat_channels(parts);
  for (auto& d : decoder_) h = d.conv1.forward(d.conv3.forward(d.up.forward(h, train), train), train);
  return h;
}

void Backbone::backward(const Tensor& grad) {
  Tensor g = grad;
  for (auto it = decoder_.rbegin(); it != decoder_.rend(); ++it) {
    g = it->conv3.backward(it->conv1.backward(g));
    if (g.empty()) return;  // nothing trainable below the decoder
    g = it->up.backward(g);
  }
  const std::vector<int> widths(static_cast<std::size_t>(config_.encoder_blocks), config_.branch_channels);
  auto parts = nn::split_channels(g, widths);
  std::vector<Tensor> gpool(parts.size());
  for (int l = config_.encoder_blocks - 1; l >= 0; --l) {
    auto& br = branches_[l];
    Tensor gb = std::move(parts[l]);
    if (br.up.factor() > 1) gb = br.up.backward(gb);
    gpool[l] = br.strided.backward(br.mix.backward(br.out.backward(gb)));
  }
  Tensor gh;
  for (int l = config_.encoder_blocks - 1; l >= freeze_.encoder_blocks; --l) {
    Tensor total = std::move(gpool[l]);
    if (!gh.empty())
      for (std::size_t i = 0; i < total.size(); ++i) total[i] += gh[i];
    gh = pools_[l].backward(total);
    for (auto it = encoder_[l].rbegin(); it != encoder_[l].rend(); ++it) gh = it->backward(gh);
  }
}

std::vector<ConvBlock*> Backbone::all_blocks() {
  std::vector<ConvBlock*> out;
  for (auto& block : encoder_)
    for (auto& b : block) out.push_back(&b);
  for (auto& br : branches_)
    for (auto* b : {&br.strided, &br.mix, &br.out}) out.push_back(b);
  for (auto& d : decoder_)
    for (auto* b : {&d.conv3, &d.conv1}) out.push_back(b);
  return out;
}

std::vector<nn::Parameter*> Backbone::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto* b : all_blocks())
    for (auto* p : {&b->conv.weight, &b->conv.bias, &b->bn.gamma, &b->bn.beta}) out.push_back(p);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Backbone::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto* b : all_blocks()) {
    for (auto* p : {&b->conv.weight, &b->conv.bias, &b->bn.gamma, &b->bn.beta}) out.emplace_back(p->name, &p->value);
    out.emplace_back(b->name + ".bn.running_mean", &b->bn.running_mean);
    out.emplace_back(b->name + ".bn.running_var", &b->bn.running_var);
  }
  return out;
}

std::vector<nn::NamedTensor> Backbone::state() const {
  std::vector<nn::NamedTensor> out;
  for (auto& [name, t] : const_cast<Backbone*>(this)->named_tensors()) out.push_back({name, t});
  return out;
}

void Backbone::load_state(const std::map<std::string, Tensor>& tensors) {
  for (auto& [name, t] : named_tensors()) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint lacks tensor '" + name + "'");
    if (!it->second.same_shape(*t))
      throw DataError("checkpoint tensor '" + name + "' has shape " + nn::shape_string(it->second.shape()) + ", expected " +
                      nn::shape_string(t->shape()));
    *t = it->second;
  }
}

void Backbone::clear() {
  for (auto* b : all_blocks()) b->clear();
  for (auto& p : pools_) p.clear();
  for (auto& br : branches_) br.up.clear();
  for (auto& d : decoder_) d.up.clear();
}

std::vector<int> Backbone::branch_output_sizes() const {
  std::vector<int> out;
  int s = config_.input_size;
  for (int l = 0; l < config_.encoder_blocks; ++l) {
    s /= 2;
    out.push_back(branches_[l].strided.conv.output_size(s) * config_.branch_upsample(l));
  }
  return out;
}

// ---------------------------------------------------------------- helpers

namespace {

void load_head(nn::Conv2d& head, const nn::Checkpoint& ckpt) {
  for (auto* p : {&head.weight, &head.bias}) {
    const auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end() || !it->second.same_shape(p->value))
      throw DataError("checkpoint head tensor '" + p->name + "' missing or misshapen");
    p->value = it->second;
  }
}

BackboneConfig config_from(const nn::Checkpoint& ckpt, const char* kind) {
  const auto model = ckpt.metadata.find("model");
  if (model == ckpt.metadata.end() || model->second != kind)
    throw DataError(std::string("checkpoint is not a ") + kind + " model");
  const auto cfg = ckpt.metadata.find("config");
  if (cfg == ckpt.metadata.end()) throw DataError("checkpoint lacks a config block");
  try {
    return BackboneConfig::from_json(nlohmann::json::parse(cfg->second));
  } catch (const std::exception& e) {
    throw DataError(std::string("bad checkpoint config: ") + e.what());
  }
}

}  // namespace

std::size_t parameter_count(std::vector<nn::Parameter*> params) {
  std::size_t n = 0;
  for (auto* p : params) n += p->value.size();
  return n;
}

// ---------------------------------------------------------------- AET

AetModel::AetModel(const BackboneConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  backbone = Backbone(config, rng);
  head = nn::Conv2d("head", 2 * backbone.output_channels(), 1, 3, 1, rng);
}

Tensor AetModel::forward(const Tensor& original, const Tensor& transformed, bool train) {
  nn::require_same_shape(original, transformed, "AetModel inputs");
  const Tensor a = backbone.forward(original, train);
  const Tensor b = backbone.forward(transformed, train);
  const Tensor* parts[] = {&a, &b};
  return head.forward(nn::concat_channels(parts), train);
}

void AetModel::backward(const Tensor& grad) {
  const int w = backbone.output_channels();
  const int widths[] = {w, w};
  auto g = nn::split_channels(head.backward(grad), widths);
  backbone.backward(g[1]);
  backbone.backward(g[0]);
}

Tensor AetModel::predict(const Tensor& original, const Tensor& transformed) const {
  AetModel copy = *this;
  return copy.forward(original, transformed, false);
}

void AetModel::zero_head() {
  head.weight.value.fill(0);
  head.bias.value.fill(0);
}

std::vector<nn::Parameter*> AetModel::parameters() {
  auto out = backbone.parameters();
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

std::vector<nn::NamedTensor> AetModel::state() const {
  auto out = backbone.state();
  out.push_back({head.weight.name, &head.weight.value});
  out.push_back({head.bias.name, &head.bias.value});
  return out;
}

void AetModel::save(const std::string& path, std::map<std::string, std::string> metadata) const {
  metadata["model"] = "aet";
  metadata["config"] = config().to_json().dump();
  nn::save_checkpoint(path, state(), metadata);
}

AetModel AetModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  AetModel m(config_from(ckpt, "aet"), 0);
  m.backbone.load_state(ckpt.tensors);
  load_head(m.head, ckpt);
  return m;
}

AetModel AetModel::load(const std::string& path) { return from_checkpoint(nn::load_checkpoint(path)); }

// ---------------------------------------------------------------- PTC

PtcModel::PtcModel(const BackboneConfig& config, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0));
  backbone = Backbone(config, rng);
  Rng head_rng(derive_seed(seed, 2));
  head = nn::Conv2d("head", backbone.output_channels(), kNumClasses, 3, 1, head_rng);
  dropout = nn::SpatialDropout(kDropoutRate, derive_seed(seed, 1));
}

Tensor PtcModel::forward(const Tensor& x, bool train) {
  return softmax.forward(head.forward(dropout.forward(backbone.forward(x, train), train), train), train);
}

void PtcModel::backward(const Tensor& grad) {
  backbone.backward(dropout.backward(head.backward(softmax.backward(grad))));
}

Tensor PtcModel::predict(const Tensor& x) const {
  PtcModel copy = *this;
  return copy.forward(x, false);
}

std::vector<nn::Parameter*> PtcModel::parameters() {
  auto out = backbone.parameters();
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

std::vector<nn::NamedTensor> PtcModel::state() const {
  auto out = backbone.state();
  out.push_back({head.weight.name, &head.weight.value});
  out.push_back({head.bias.name, &head.bias.value});
  return out;
}

void PtcModel::save(const std::string& path, std::map<std::string, std::string> metadata) const {
  metadata["model"] = "ptc";
  metadata["config"] = config().to_json().dump();
  metadata["freeze"] = backbone.freeze().name();
  nn::save_checkpoint(path, state(), metadata);
}

PtcModel PtcModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  const BackboneConfig config = config_from(ckpt, "ptc");
  PtcModel m(config, 0);
  m.backbone.load_state(ckpt.tensors);
  load_head(m.head, ckpt);
  const auto f = ckpt.metadata.find("freeze");
  if (f != ckpt.metadata.end()) m.set_freeze(FreezeStage::parse(f->second, config));
  return m;
}

PtcModel PtcModel::load(const std::string& path) { return from_checkpoint(nn::load_checkpoint(path)); }

PtcModel build_ptc_from_aet(const AetModel& aet, const std::string& freeze_stage, std::uint64_t seed) {
  const FreezeStage stage = FreezeStage::parse(freeze_stage, aet.config());
  PtcModel m(aet.config(), seed);
  m.backbone = aet.backbone;
  m.backbone.clear();
  m.set_freeze(stage);
  return m;
}

}  // namespace ptl
