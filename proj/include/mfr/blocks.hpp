#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mfr/nn_ops.hpp"

namespace mfr {

// Named handle onto a learnable tensor; copies share the underlying storage.
template <typename S>
struct ParamRef {
  std::string name;
  Tensor<S> tensor;
};

// Non-learnable persistent state (BN running stats). The state pointer lets a
// checkpoint load mark the owning normalizer as initialized.
template <typename S>
struct BufferRef {
  std::string name;
  ArrayX<S>* array;
  BatchNormState<S>* state;
};

template <typename S>
struct Conv {
  Tensor<S> weight, bias;
  int stride = 1, padding = 0;

  void init(int c_out, int c_in, int k, int stride_, int padding_, Rng& rng) {
    stride = stride_;
    padding = padding_;
    const S std = std::sqrt(S(2) / static_cast<S>(c_in * k * k));
    weight = Tensor<S>::randn({c_out, c_in, k, k}, rng, std);
    bias = Tensor<S>::zeros({c_out});
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
  }
  Tensor<S> forward(const Tensor<S>& x, Tape<S>* tape) const {
    return conv2d(x, weight, bias, stride, padding, tape);
  }
  void params(std::vector<ParamRef<S>>& out, const std::string& p) const {
    out.push_back({p + ".weight", weight});
    out.push_back({p + ".bias", bias});
  }
};

template <typename S>
struct BatchNorm {
  Tensor<S> gamma, beta;
  BatchNormState<S> state;
  S eps = S(1e-5);

  void init(int c) {
    gamma = Tensor<S>::ones({c});
    beta = Tensor<S>::zeros({c});
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
    state = BatchNormState<S>(c);
  }
  Tensor<S> forward(const Tensor<S>& x, Mode mode, Tape<S>* tape) {
    return batch_norm2d(x, gamma, beta, state, mode, eps, tape);
  }
  void params(std::vector<ParamRef<S>>& out, const std::string& p) const {
    out.push_back({p + ".gamma", gamma});
    out.push_back({p + ".beta", beta});
  }
  void buffers(std::vector<BufferRef<S>>& out, const std::string& p) {
    out.push_back({p + ".running_mean", &state.running_mean, &state});
    out.push_back({p + ".running_var", &state.running_var, &state});
  }
};

template <typename S>
struct PRelu {
  Tensor<S> slope;

  void init(int c, S a0 = S(0.25)) {
    slope = Tensor<S>::filled({c}, a0);
    slope.set_requires_grad(true);
  }
  Tensor<S> forward(const Tensor<S>& x, Tape<S>* tape) const { return prelu(x, slope, tape); }
  void params(std::vector<ParamRef<S>>& out, const std::string& p) const {
    out.push_back({p + ".slope", slope});
  }
};

template <typename S>
struct Linear {
  Tensor<S> weight, bias;

  void init(int m, int n, Rng& rng) {
    weight = Tensor<S>::randn({m, n}, rng, std::sqrt(S(2) / static_cast<S>(n)));
    bias = Tensor<S>::zeros({m});
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
  }
  Tensor<S> forward(const Tensor<S>& x, Tape<S>* tape) const {
    return fully_connected(x, weight, bias, tape);
  }
  void params(std::vector<ParamRef<S>>& out, const std::string& p) const {
    out.push_back({p + ".weight", weight});
    out.push_back({p + ".bias", bias});
  }
};

// Two parallel downsampling branches, each conv -> BN -> PReLU, summed.
// C1: avg-pool k2 s2 then conv k2 s2. C2: space_to_depth then conv k3 s2 p1.
template <typename S>
struct StemUnit {
  Conv<S> c1_conv, c2_conv;
  BatchNorm<S> c1_bn, c2_bn;
  PRelu<S> c1_prelu, c2_prelu;

  void init(int c_in, int c_out, Rng& rng) {
    c1_conv.init(c_out, c_in, 2, 2, 0, rng);
    c1_bn.init(c_out);
    c1_prelu.init(c_out);
    c2_conv.init(c_out, 4 * c_in, 3, 2, 1, rng);
    c2_bn.init(c_out);
    c2_prelu.init(c_out);
  }
  Tensor<S> forward(const Tensor<S>& x, Mode mode, Tape<S>* tape) {
    if (x.rank() != 4 || x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
      throw DimensionError("stem: spatial dims must be divisible by 4, got " + shape_str(x.shape()));
    Tensor<S> b1 = c1_prelu.forward(
        c1_bn.forward(c1_conv.forward(avg_pool2d(x, 2, 2, tape), tape), mode, tape), tape);
    Tensor<S> b2 = c2_prelu.forward(
        c2_bn.forward(c2_conv.forward(space_to_depth(x, tape), tape), mode, tape), tape);
    return add(b1, b2, tape);
  }
  void params(std::vector<ParamRef<S>>& out, const std::string& p) const {
    c1_conv.params(out, p + ".c1.conv");
    c1_bn.params(out, p + ".c1.bn");
    c1_prelu.params(out, p + ".c1.prelu");
    c2_conv.params(out, p + ".c2.conv");
    c2_bn.params(out, p + ".c2.bn");
    c2_prelu.params(out, p + ".c2.prelu");
  }
  void buffers(std::vector<BufferRef<S>>& out, const std::string& p) {
    c1_bn.buffers(out, p + ".c1.bn");
    c2_bn.buffers(out, p + ".c2.bn");
  }
};

struct DropBlockConfig {
  double drop_prob = 0.1;
  int block_size = 3;

  void validate() const {
    if (drop_prob < 0 || drop_prob >= 1)
      throw ParameterError("dropblock drop_prob must be in [0,1)");
    if (block_size <= 0 || block_size % 2 == 0)
      throw ParameterError("dropblock block_size must be odd and positive");
  }
};

// Structured dropout: Bernoulli seeds in the valid region grow into zeroed
// block_size x block_size squares; survivors are rescaled per feature map.
template <typename S>
Tensor<S> dropblock_forward(const Tensor<S>& x, const DropBlockConfig& cfg, Mode mode, Rng& rng,
                            Tape<S>* tape = nullptr) {
  cfg.validate();
  if (mode == Mode::eval || cfg.drop_prob == 0) return x;
  detail::check_4d(x, "dropblock");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int bs = cfg.block_size;
  if (bs > h || bs > w)
    throw DimensionError("dropblock: block_size exceeds feature map side");
  const int vh = h - bs + 1, vw = w - bs + 1;
  const double gamma = cfg.drop_prob / (bs * bs) * (static_cast<double>(h) * w) /
                       (static_cast<double>(vh) * vw);

  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  auto mask = std::make_shared<ArrayX<S>>(x.size());
  mask->setOnes();
  for (std::int64_t pc = 0; pc < static_cast<std::int64_t>(b) * c; ++pc) {
    S* mp = mask->data() + pc * plane;
    for (int y0 = 0; y0 < vh; ++y0)
      for (int x0 = 0; x0 < vw; ++x0)
        if (uniform_unit(rng) < gamma)
          for (int dy = 0; dy < bs; ++dy)
            for (int dx = 0; dx < bs; ++dx) mp[static_cast<std::int64_t>(y0 + dy) * w + x0 + dx] = S(0);
    std::int64_t kept = 0;
    for (std::int64_t i = 0; i < plane; ++i) kept += mp[i] != S(0);
    if (kept > 0 && kept < plane) {
      const S scale = static_cast<S>(plane) / static_cast<S>(kept);
      for (std::int64_t i = 0; i < plane; ++i) mp[i] *= scale;
    }
  }

  Tensor<S> out = Tensor<S>::zeros(x.shape());
  out.data() = x.data() * (*mask);
  if (tape && tape->tracks(x)) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(oi, [=] { detail::accumulate<S>(xi, oi->grad * (*mask)); });
  }
  return out;
}

// Squeeze-and-excitation: global pool, bottleneck MLP, sigmoid channel gates.
template <typename S>
struct SEBlock {
  Linear<S> fc1, fc2;

  void init(int c, int reduction, Rng& rng) {
    if (reduction <= 0 || c % reduction != 0)
      throw ParameterError("se: channel count " + std::to_string(c) +
                           " not divisible by reduction " + std::to_string(reduction));
    fc1.init(c / reduction, c, rng);
    fc2.init(c, c / reduction, rng);
  }
  Tensor<S> forward(const Tensor<S>& x, Tape<S>* tape) const {
    Tensor<S> s = global_avg_pool(x, tape);
    s = relu(fc1.forward(s, tape), tape);
    s = sigmoid(fc2.forward(s, tape), tape);
    return channel_scale(x, s, tape);
  }
  void params(std::vector<ParamRef<S>>& out, const std::string& p) const {
    fc1.params(out, p + ".fc1");
    fc2.params(out, p + ".fc2");
  }
};

// Basic two-conv residual block. Order: conv-BN-PReLU-conv-BN, optional SE on
// the branch, shortcut add, optional DropBlock, final PReLU.
template <typename S>
struct ResidualBlock {
  Conv<S> conv1, conv2;
  BatchNorm<S> bn1, bn2;
  PRelu<S> pr1, pr_out;
  bool has_down = false;
  Conv<S> down_conv;
  BatchNorm<S> down_bn;
  bool use_se = false;
  SEBlock<S> se;

  void init(int c_in, int c_out, int stride, bool se_enabled, int se_reduction, Rng& rng) {
    if (stride != 1 && stride != 2) throw ParameterError("residual block stride must be 1 or 2");
    conv1.init(c_out, c_in, 3, stride, 1, rng);
    bn1.init(c_out);
    pr1.init(c_out);
    conv2.init(c_out, c_out, 3, 1, 1, rng);
    bn2.init(c_out);
    pr_out.init(c_out);
    has_down = stride != 1 || c_in != c_out;
    if (has_down) {
      down_conv.init(c_out, c_in, 1, stride, 0, rng);
      down_bn.init(c_out);
    }
    use_se = se_enabled;
    if (use_se) se.init(c_out, se_reduction, rng);
  }
  Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng& rng, Tape<S>* tape,
                    const DropBlockConfig* db) {
    Tensor<S> h = pr1.forward(bn1.forward(conv1.forward(x, tape), mode, tape), tape);
    h = bn2.forward(conv2.forward(h, tape), mode, tape);
    if (use_se) h = se.forward(h, tape);
    Tensor<S> sc = has_down ? down_bn.forward(down_conv.forward(x, tape), mode, tape) : x;
    Tensor<S> y = add(h, sc, tape);
    if (db != nullptr) y = dropblock_forward(y, *db, mode, rng, tape);
    return pr_out.forward(y, tape);
  }
  void params(std::vector<ParamRef<S>>& out, const std::string& p) const {
    conv1.params(out, p + ".conv1");
    bn1.params(out, p + ".bn1");
    pr1.params(out, p + ".pr1");
    conv2.params(out, p + ".conv2");
    bn2.params(out, p + ".bn2");
    if (has_down) {
      down_conv.params(out, p + ".downsample.conv");
      down_bn.params(out, p + ".downsample.bn");
    }
    if (use_se) se.params(out, p + ".se");
    pr_out.params(out, p + ".pr_out");
  }
  void buffers(std::vector<BufferRef<S>>& out, const std::string& p) {
    bn1.buffers(out, p + ".bn1");
    bn2.buffers(out, p + ".bn2");
    if (has_down) down_bn.buffers(out, p + ".downsample.bn");
  }
};

struct BackboneConfig {
  int in_channels = 3;
  int input_size = 112;
  int stem_out = 64;
  std::vector<int> widths;
  std::vector<int> blocks;
  std::vector<int> strides;
  bool se_enabled = true;
  int se_reduction = 16;
  std::vector<int> dropblock_stages;
  DropBlockConfig dropblock;
  int embedding_dim = 512;

  static BackboneConfig toy() {
    BackboneConfig c;
    c.stem_out = 16;
    c.widths = {16, 32, 64};
    c.blocks = {1, 1, 1};
    c.strides = {1, 2, 2};
    c.dropblock_stages = {1, 2};
    return c;
  }
  static BackboneConfig resnet34() {
    BackboneConfig c;
    c.widths = {64, 128, 256, 512};
    c.blocks = {3, 4, 6, 3};
    c.strides = {1, 2, 2, 2};
    c.dropblock_stages = {2, 3};
    return c;
  }
  void validate() const {
    if (widths.empty() || widths.size() != blocks.size() || widths.size() != strides.size())
      throw ConfigError("backbone: widths, blocks, and strides must be non-empty and equal length");
    for (int s : strides)
      if (s != 1 && s != 2) throw ConfigError("backbone: stage strides must be 1 or 2");
    for (int n : blocks)
      if (n < 1) throw ConfigError("backbone: each stage needs at least one block");
    if (embedding_dim != 512) throw ConfigError("backbone: embedding_dim is fixed at 512");
    if (input_size != 112) throw ConfigError("backbone: input size is fixed at 112");
    const int n = static_cast<int>(widths.size());
    for (int st : dropblock_stages)
      if (st < n - 2 || st >= n)
        throw ConfigError("backbone: dropblock stages must lie in the last two stages");
    dropblock.validate();
  }
};

// Stem, residual stages, flatten, 512-d FC head with feature BN.
template <typename S>
struct Backbone {
  BackboneConfig cfg;
  StemUnit<S> stem;
  std::vector<std::vector<ResidualBlock<S>>> stages;
  Linear<S> head_fc;
  BatchNorm<S> head_bn;

  void init(const BackboneConfig& config, Rng& rng) {
    cfg = config;
    cfg.validate();
    stem.init(cfg.in_channels, cfg.stem_out, rng);
    int c_in = cfg.stem_out;
    int side = cfg.input_size / 4;
    stages.clear();
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      std::vector<ResidualBlock<S>> stage(cfg.blocks[i]);
      for (int j = 0; j < cfg.blocks[i]; ++j) {
        const int stride = j == 0 ? cfg.strides[i] : 1;
        stage[j].init(c_in, cfg.widths[i], stride, cfg.se_enabled, cfg.se_reduction, rng);
        c_in = cfg.widths[i];
        if (stride == 2) side = (side + 1) / 2;
      }
      stages.push_back(std::move(stage));
    }
    head_fc.init(cfg.embedding_dim, c_in * side * side, rng);
    head_bn.init(cfg.embedding_dim);
  }

  Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng& rng, Tape<S>* tape = nullptr) {
    if (x.rank() != 4 || x.dim(1) != cfg.in_channels || x.dim(2) != cfg.input_size ||
        x.dim(3) != cfg.input_size)
      throw DimensionError("backbone: expected [b," + std::to_string(cfg.in_channels) + "," +
                           std::to_string(cfg.input_size) + "," + std::to_string(cfg.input_size) +
                           "] input, got " + shape_str(x.shape()));
    Tensor<S> h = stem.forward(x, mode, tape);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const bool db = std::find(cfg.dropblock_stages.begin(), cfg.dropblock_stages.end(),
                                static_cast<int>(i)) != cfg.dropblock_stages.end();
      for (auto& block : stages[i])
        h = block.forward(h, mode, rng, tape, db ? &cfg.dropblock : nullptr);
    }
    Tensor<S> e = head_fc.forward(flatten(h, tape), tape);
    return head_bn.forward(e, mode, tape);
  }

  std::vector<ParamRef<S>> params() const {
    std::vector<ParamRef<S>> out;
    stem.params(out, "stem");
    for (std::size_t i = 0; i < stages.size(); ++i)
      for (std::size_t j = 0; j < stages[i].size(); ++j)
        stages[i][j].params(out, "stage" + std::to_string(i) + ".block" + std::to_string(j));
    head_fc.params(out, "head.fc");
    head_bn.params(out, "head.bn");
    return out;
  }
  std::vector<BufferRef<S>> buffers() {
    std::vector<BufferRef<S>> out;
    stem.buffers(out, "stem");
    for (std::size_t i = 0; i < stages.size(); ++i)
      for (std::size_t j = 0; j < stages[i].size(); ++j)
        stages[i][j].buffers(out, "stage" + std::to_string(i) + ".block" + std::to_string(j));
    head_bn.buffers(out, "head.bn");
    return out;
  }
};

}  // namespace mfr
