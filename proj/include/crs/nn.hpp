#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crs/feature_set.hpp"
#include "crs/model_spec.hpp"
#include "crs/ops.hpp"

namespace crs {

/// Named trainable tensor. `decay` marks participation in weight decay
/// (conv/linear weights only; never biases or batchnorm affine params).
template <typename T>
struct ParameterT {
  std::string name;
  TensorT<T> value;
  bool decay = true;
};

using Parameter = ParameterT<float>;

template <typename T>
struct Conv2dLayer {
  ParameterT<T> weight;  // [Cout, Cin, K, K]
  std::optional<ParameterT<T>> bias;
  int stride = 1;
  int padding = 1;

  TensorT<T> forward(const TensorT<T>& x) const {
    return conv2d(x, weight.value, bias ? &bias->value : nullptr, stride, padding);
  }
};

template <typename T>
struct BatchNorm2dLayer {
  ParameterT<T> gamma, beta;
  TensorT<T> running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  TensorT<T> forward(const TensorT<T>& x, bool training) {
    return batchnorm2d(x, gamma.value, beta.value, running_mean, running_var, training, eps,
                       momentum);
  }
};

template <typename T>
struct LinearLayer {
  ParameterT<T> weight;  // [F, G]
  ParameterT<T> bias;

  TensorT<T> forward(const TensorT<T>& x) const { return linear(x, weight.value, bias.value); }
};

/// Condense -> conv -> ReLU -> conv -> sigmoid -> expand -> gate.
/// `window` global means the condensed map is 1x1 and the gate broadcasts
/// per channel (the SENet special case).
template <typename T>
TensorT<T> stac_forward(const TensorT<T>& y, const Conv2dLayer<T>& c1, const Conv2dLayer<T>& c2,
                        Scale window) {
  const int H = y.dim(2), W = y.dim(3);
  TensorT<T> pooled = window.global ? global_avg_pool(y) : avg_pool2d(y, window.window);
  TensorT<T> a = relu(c1.forward(pooled));
  TensorT<T> gate = sigmoid(c2.forward(a));
  if (gate.dim(2) == 1 && gate.dim(3) == 1) return mul_elementwise(y, gate);
  return mul_elementwise(y, upsample_to(gate, H, W));
}

template <typename T>
struct AttentionModule {
  AttentionSpec spec;  // resolved
  Conv2dLayer<T> conv1, conv2;

  TensorT<T> forward(const TensorT<T>& y) const {
    return stac_forward(y, conv1, conv2, spec.window);
  }
};

/// Channel attention with global context; identical to a STAC module whose
/// condenser window is global (1x1 kernels, no bottleneck).
template <typename T>
TensorT<T> senet_forward(const TensorT<T>& y, const Conv2dLayer<T>& c1,
                         const Conv2dLayer<T>& c2) {
  return stac_forward(y, c1, c2, Scale::global_scale());
}

template <typename T>
struct ResidualBlock {
  Conv2dLayer<T> conv1;
  BatchNorm2dLayer<T> bn1;
  Conv2dLayer<T> conv2;
  BatchNorm2dLayer<T> bn2;
  std::optional<Conv2dLayer<T>> proj;  // 1x1 stride-2 projection on downsampling blocks
  std::optional<BatchNorm2dLayer<T>> proj_bn;
  std::optional<AttentionModule<T>> attention;

  TensorT<T> forward(const TensorT<T>& x, bool training) {
    TensorT<T> main = bn2.forward(conv2.forward(relu(bn1.forward(conv1.forward(x), training))),
                                  training);
    TensorT<T> skip = proj ? proj_bn->forward(proj->forward(x), training) : x;
    const bool standard = attention && attention->spec.placement == Placement::standard;
    if (standard) main = attention->forward(main);
    TensorT<T> out = relu(add(skip, main));
    if (attention && !standard) out = attention->forward(out);
    return out;
  }
};

/// A built network. Training mode mutates batchnorm running stats and
/// parameter grads and belongs to a single trainer thread; eval-mode
/// forwards touch no shared mutable state and are safe concurrently.
template <typename T>
struct ModelT {
  ModelSpec spec;  // resolved
  Conv2dLayer<T> neck;
  BatchNorm2dLayer<T> neck_bn;
  std::vector<ResidualBlock<T>> blocks;
  std::vector<int> block_stage;  // stage index (0-based) per block
  LinearLayer<T> classifier;
  bool training = true;

  void set_training(bool on) { training = on; }

  std::vector<ParameterT<T>*> parameters() {
    std::vector<ParameterT<T>*> out;
    auto conv = [&](Conv2dLayer<T>& c) {
      out.push_back(&c.weight);
      if (c.bias) out.push_back(&*c.bias);
    };
    auto bn = [&](BatchNorm2dLayer<T>& b) {
      out.push_back(&b.gamma);
      out.push_back(&b.beta);
    };
    conv(neck);
    bn(neck_bn);
    for (ResidualBlock<T>& blk : blocks) {
      conv(blk.conv1);
      bn(blk.bn1);
      conv(blk.conv2);
      bn(blk.bn2);
      if (blk.proj) {
        conv(*blk.proj);
        bn(*blk.proj_bn);
      }
      if (blk.attention) {
        conv(blk.attention->conv1);
        conv(blk.attention->conv2);
      }
    }
    out.push_back(&classifier.weight);
    out.push_back(&classifier.bias);
    return out;
  }

  std::vector<std::pair<std::string, TensorT<T>*>> buffers() {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    auto bn = [&](const std::string& prefix, BatchNorm2dLayer<T>& b) {
      out.emplace_back(prefix + ".running_mean", &b.running_mean);
      out.emplace_back(prefix + ".running_var", &b.running_var);
    };
    bn("neck.bn", neck_bn);
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = block_prefix(static_cast<int>(i));
      bn(p + ".bn1", blocks[i].bn1);
      bn(p + ".bn2", blocks[i].bn2);
      if (blocks[i].proj_bn) bn(p + ".proj_bn", *blocks[i].proj_bn);
    }
    return out;
  }

  long param_count() {
    long n = 0;
    for (ParameterT<T>* p : parameters()) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (ParameterT<T>* p : parameters()) p->value.zero_grad();
  }

  std::string block_prefix(int block_index) const {
    const int stage = block_stage[static_cast<size_t>(block_index)];
    int in_stage = 0;
    for (int b = 0; b < block_index; ++b)
      if (block_stage[static_cast<size_t>(b)] == stage) ++in_stage;
    return strf("stage%d.block%d", stage + 1, in_stage + 1);
  }

  /// Tap layout: 0=input, 1=neck, 2..1+B=block outputs, 2+B=gap, 3+B=logits.
  int tap_count() const { return static_cast<int>(blocks.size()) + 4; }

  std::vector<std::pair<int, int>> stage_tap_ranges() const {
    std::vector<std::pair<int, int>> ranges(spec.stages.size(), {0, 0});
    int tap = 2;
    for (size_t s = 0; s < spec.stages.size(); ++s) {
      ranges[s] = {tap, tap + spec.stages[s].num_blocks};
      tap += spec.stages[s].num_blocks;
    }
    return ranges;
  }

  void check_input(const TensorT<T>& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != spec.input_channels ||
        batch.dim(2) != spec.input_size || batch.dim(3) != spec.input_size)
      throw ShapeError(strf("model expects input [N,%d,%d,%d], got %s", spec.input_channels,
                            spec.input_size, spec.input_size,
                            shape_str(batch.shape()).c_str()));
  }

  TensorT<T> forward(const TensorT<T>& batch) {
    check_input(batch);
    TensorT<T> x = relu(neck_bn.forward(neck.forward(batch), training));
    for (ResidualBlock<T>& blk : blocks) x = blk.forward(x, training);
    TensorT<T> pooled = global_avg_pool(x);
    TensorT<T> flat = reshape(pooled, {pooled.dim(0), pooled.dim(1)});
    return classifier.forward(flat);
  }

  /// Eval-mode forward that also returns detached float copies of every tap.
  std::pair<TensorT<T>, std::vector<FeatureTap>> forward_with_taps(const TensorT<T>& batch) {
    if (training)
      throw ValueError("tap capture requires eval mode (batchnorm running stats frozen)");
    check_input(batch);
    std::vector<FeatureTap> taps;
    auto capture = [&](const std::string& name, const TensorT<T>& t) {
      FeatureTap tap;
      tap.layer_index = static_cast<int>(taps.size());
      tap.name = name;
      Tensor f(t.shape());
      const T* src = t.data();
      float* dst = f.data();
      const long n = t.numel();
      for (long i = 0; i < n; ++i) dst[i] = static_cast<float>(src[i]);
      tap.features = std::move(f);
      taps.push_back(std::move(tap));
    };

    capture("input", batch);
    TensorT<T> x = relu(neck_bn.forward(neck.forward(batch), training));
    capture("neck", x);
    for (size_t i = 0; i < blocks.size(); ++i) {
      x = blocks[i].forward(x, training);
      capture(block_prefix(static_cast<int>(i)), x);
    }
    TensorT<T> pooled = global_avg_pool(x);
    TensorT<T> flat = reshape(pooled, {pooled.dim(0), pooled.dim(1)});
    capture("gap", flat);
    TensorT<T> logits = classifier.forward(flat);
    capture("logits", logits);
    return {std::move(logits), std::move(taps)};
  }
};

using Model = ModelT<float>;

namespace detail {

template <typename T>
TensorT<T> init_normal(Rng& rng, Shape shape, double stddev) {
  TensorT<T> t(shape);
  T* d = t.data();
  const long n = t.numel();
  for (long i = 0; i < n; ++i) d[i] = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
Conv2dLayer<T> make_conv(Rng& rng, const std::string& name, int cin, int cout, int k, int stride,
                         bool with_bias) {
  Conv2dLayer<T> c;
  const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  c.weight = {name + ".weight", init_normal<T>(rng, {cout, cin, k, k}, stddev), true};
  c.weight.value.set_requires_grad(true);
  if (with_bias) {
    c.bias = ParameterT<T>{name + ".bias", TensorT<T>({cout}), false};
    c.bias->value.set_requires_grad(true);
  }
  c.stride = stride;
  c.padding = (k - 1) / 2;
  return c;
}

template <typename T>
BatchNorm2dLayer<T> make_bn(const std::string& name, int c) {
  BatchNorm2dLayer<T> bn;
  bn.gamma = {name + ".gamma", TensorT<T>({c}, T(1)), false};
  bn.beta = {name + ".beta", TensorT<T>({c}), false};
  bn.gamma.value.set_requires_grad(true);
  bn.beta.value.set_requires_grad(true);
  bn.running_mean = TensorT<T>({c}, T(0));
  bn.running_var = TensorT<T>({c}, T(1));
  return bn;
}

template <typename T>
AttentionModule<T> make_attention(Rng& rng, const std::string& block_name,
                                  const AttentionSpec& spec, int channels) {
  AttentionModule<T> m;
  m.spec = spec;
  const std::string base = block_name + "." + attention_kind_str(spec.kind);
  m.conv1 = make_conv<T>(rng, base + ".c1", channels, channels, spec.k1, 1, true);
  m.conv2 = make_conv<T>(rng, base + ".c2", channels, channels, spec.k2, 1, true);
  return m;
}

}  // namespace detail

/// Materializes a ModelSpec: 3x3 conv neck + BN + ReLU, stages of
/// conv-BN-ReLU-conv-BN residual blocks (stride-2 first conv and 1x1
/// projection skip when entering stages 2+), global average pool and a
/// linear classifier. Weights use fan-in-scaled normal init; attention conv
/// biases start at zero so gates open at 0.5.
template <typename T>
ModelT<T> build_model_t(const ModelSpec& raw_spec, uint64_t seed = 0) {
  ModelSpec spec = raw_spec.resolved();
  ModelT<T> model;
  model.spec = spec;
  Rng rng(seed);

  model.neck = detail::make_conv<T>(rng, "neck.conv", spec.input_channels,
                                    spec.stages.front().channels, 3, 1, false);
  model.neck_bn = detail::make_bn<T>("neck.bn", spec.stages.front().channels);

  int in_channels = spec.stages.front().channels;
  for (size_t s = 0; s < spec.stages.size(); ++s) {
    const StageSpec& stage = spec.stages[s];
    for (int b = 0; b < stage.num_blocks; ++b) {
      const std::string name = strf("stage%zu.block%d", s + 1, b + 1);
      const bool downsample = (b == 0 && s > 0);
      const int stride = downsample ? 2 : 1;
      ResidualBlock<T> blk;
      blk.conv1 = detail::make_conv<T>(rng, name + ".conv1", in_channels, stage.channels, 3,
                                       stride, false);
      blk.bn1 = detail::make_bn<T>(name + ".bn1", stage.channels);
      blk.conv2 = detail::make_conv<T>(rng, name + ".conv2", stage.channels, stage.channels, 3,
                                       1, false);
      blk.bn2 = detail::make_bn<T>(name + ".bn2", stage.channels);
      if (downsample || in_channels != stage.channels) {
        blk.proj = detail::make_conv<T>(rng, name + ".proj", in_channels, stage.channels, 1,
                                        stride, false);
        blk.proj_bn = detail::make_bn<T>(name + ".proj_bn", stage.channels);
      }
      if (stage.attention.kind != AttentionKind::none)
        blk.attention = detail::make_attention<T>(rng, name, stage.attention, stage.channels);
      model.blocks.push_back(std::move(blk));
      model.block_stage.push_back(static_cast<int>(s));
      in_channels = stage.channels;
    }
  }

  const int feat = spec.stages.back().channels;
  LinearLayer<T> fc;
  fc.weight = {"fc.weight",
               detail::init_normal<T>(rng, {feat, spec.num_classes}, std::sqrt(2.0 / feat)),
               true};
  fc.bias = {"fc.bias", TensorT<T>({spec.num_classes}), false};
  fc.weight.value.set_requires_grad(true);
  fc.bias.value.set_requires_grad(true);
  model.classifier = std::move(fc);
  return model;
}

inline Model build_model(const ModelSpec& spec, uint64_t seed = 0) {
  return build_model_t<float>(spec, seed);
}

}  // namespace crs
