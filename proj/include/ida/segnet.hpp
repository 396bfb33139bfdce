#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ida/data.hpp"
#include "ida/nn.hpp"

namespace ida {

/// Cascaded two-stage U-Net ("W-Net"). Stage 2 sees the image concatenated
/// with stage-1 logits; features are tapped at the stage-2 bottleneck.
struct NetworkConfig {
  int depth = 4;           // encoder levels per stage, bottleneck included
  int base_channels = 8;   // channels at full resolution, doubled per level
  int num_classes = 2;
  Size2 input_size{384, 384};

  int feature_dim() const { return base_channels << (depth - 1); }
  int level_channels(int level) const { return base_channels << level; }
  Size2 tap_size() const { return {input_size.width >> (depth - 1), input_size.height >> (depth - 1)}; }

  void validate() const {
    if (depth < 2) throw ConfigError("network depth must be >= 2");
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    const int f = 1 << (depth - 1);
    if (input_size.width % f != 0 || input_size.height % f != 0)
      throw ConfigError("input size must be divisible by 2^(depth-1)");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

template <typename T>
struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<T> values;
};

/// Ordered named parameters of one network plus its update counter.
template <typename T>
struct ModelState {
  NetworkConfig config;
  std::vector<NamedArray<T>> params;
  std::uint64_t iteration = 0;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.values.size();
    return n;
  }
};

template <typename T>
using Gradients = std::vector<std::vector<T>>;

template <typename T>
Gradients<T> zero_gradients(const ModelState<T>& s) {
  Gradients<T> g(s.params.size());
  for (std::size_t i = 0; i < s.params.size(); ++i) g[i].assign(s.params[i].values.size(), T{});
  return g;
}

template <typename T>
bool same_structure(const ModelState<T>& a, const ModelState<T>& b) {
  if (!(a.config == b.config) || a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].name != b.params[i].name || a.params[i].shape != b.params[i].shape) return false;
  return true;
}

/// Probabilities are L x H x W (softmax over L at each pixel); features are
/// feature_dim x h x w.
template <typename T>
struct ForwardOutput {
  Tensor3<T> probabilities;
  Tensor3<T> features;
};

namespace detail {

struct ConvSpec {
  int cin = 0, cout = 0, k = 3;
  std::size_t weight = 0, bias = 0;
};

struct StageLayout {
  std::vector<std::array<ConvSpec, 2>> enc;  // enc[l], l = 0..depth-1
  std::vector<std::array<ConvSpec, 2>> dec;  // dec[l], l = 0..depth-2
  ConvSpec head;
};

struct WNetLayout {
  std::array<StageLayout, 2> stages;
};

/// Parameter order: stage, encoder levels, decoder levels (top-down), head.
/// `visit(name, cin, cout, k)` is called per conv in that order.
template <typename Visit>
void for_each_conv(const NetworkConfig& cfg, Visit&& visit) {
  for (int s = 0; s < 2; ++s) {
    const std::string pre = "stage" + std::to_string(s + 1) + ".";
    const int in_ch = s == 0 ? 1 : 1 + cfg.num_classes;
    for (int l = 0; l < cfg.depth; ++l) {
      const int cin = l == 0 ? in_ch : cfg.level_channels(l - 1);
      const int c = cfg.level_channels(l);
      visit(s, pre + "enc" + std::to_string(l) + ".conv0", cin, c, 3);
      visit(s, pre + "enc" + std::to_string(l) + ".conv1", c, c, 3);
    }
    for (int l = cfg.depth - 2; l >= 0; --l) {
      const int c = cfg.level_channels(l);
      visit(s, pre + "dec" + std::to_string(l) + ".conv0", cfg.level_channels(l + 1) + c, c, 3);
      visit(s, pre + "dec" + std::to_string(l) + ".conv1", c, c, 3);
    }
    visit(s, pre + "head", cfg.level_channels(0), cfg.num_classes, 1);
  }
}

inline WNetLayout make_layout(const NetworkConfig& cfg) {
  WNetLayout lay;
  for (auto& st : lay.stages) {
    st.enc.resize(cfg.depth);
    st.dec.resize(cfg.depth - 1);
  }
  std::size_t next = 0;
  std::array<int, 2> enc_seen{0, 0}, dec_seen{0, 0};
  for_each_conv(cfg, [&](int s, const std::string& name, int cin, int cout, int k) {
    ConvSpec spec{cin, cout, k, next, next + 1};
    next += 2;
    auto& st = lay.stages[s];
    if (name.find(".enc") != std::string::npos) {
      const int idx = enc_seen[s]++;
      st.enc[idx / 2][idx % 2] = spec;
    } else if (name.find(".dec") != std::string::npos) {
      const int idx = dec_seen[s]++;
      st.dec[cfg.depth - 2 - idx / 2][idx % 2] = spec;
    } else {
      st.head = spec;
    }
  });
  return lay;
}

template <typename T>
std::span<const T> pview(const ModelState<T>& s, std::size_t i) {
  return {s.params[i].values.data(), s.params[i].values.size()};
}

template <typename T>
std::span<T> gview(Gradients<T>& g, std::size_t i) {
  return {g[i].data(), g[i].size()};
}

template <typename T>
struct ConvTrace {
  Tensor3<T> input;
  std::vector<T> col;
  Tensor3<T> output;  // post-activation for hidden convs, raw for heads
};

template <typename T>
struct StageTrace {
  std::vector<std::array<ConvTrace<T>, 2>> enc, dec;
  std::vector<std::vector<std::uint32_t>> pool;  // pool[l]: pooling enc[l] output
  ConvTrace<T> head;
};

template <typename T>
void conv_act(const ModelState<T>& s, const ConvSpec& c, const Tensor3<T>& in, ConvTrace<T>& tr, bool act,
              bool keep) {
  Tensor3<T> out;
  std::vector<T> col;
  nn::conv_forward(pview(s, c.weight), pview(s, c.bias), c.cout, c.k, in, out, col);
  if (act) nn::leaky_relu_inplace(out);
  if (keep) {
    tr.input = in;
    tr.col = std::move(col);
  }
  tr.output = std::move(out);
}

/// Forward one U-Net stage. With keep == false only outputs needed for
/// subsequent layers are retained.
template <typename T>
void stage_forward(const ModelState<T>& s, const StageLayout& L, const Tensor3<T>& input, StageTrace<T>& tr,
                   bool keep) {
  const int D = static_cast<int>(L.enc.size());
  tr.enc.assign(D, {});
  tr.dec.assign(D - 1, {});
  tr.pool.assign(D, {});
  for (int l = 0; l < D; ++l) {
    Tensor3<T> x = l == 0 ? input : nn::maxpool2(tr.enc[l - 1][1].output, tr.pool[l - 1]);
    conv_act(s, L.enc[l][0], x, tr.enc[l][0], true, keep);
    conv_act(s, L.enc[l][1], tr.enc[l][0].output, tr.enc[l][1], true, keep);
  }
  const Tensor3<T>* cur = &tr.enc[D - 1][1].output;
  for (int l = D - 2; l >= 0; --l) {
    Tensor3<T> cat = nn::concat_channels(nn::upsample2(*cur), tr.enc[l][1].output);
    conv_act(s, L.dec[l][0], cat, tr.dec[l][0], true, keep);
    conv_act(s, L.dec[l][1], tr.dec[l][0].output, tr.dec[l][1], true, keep);
    cur = &tr.dec[l][1].output;
  }
  conv_act(s, L.head, *cur, tr.head, false, keep);
}

template <typename T>
void conv_act_backward(const ModelState<T>& s, const ConvSpec& c, const ConvTrace<T>& tr, Tensor3<T> dout, bool act,
                       Gradients<T>& g, Tensor3<T>* din) {
  if (act) nn::leaky_relu_backward_inplace(tr.output, dout);
  nn::conv_backward(pview(s, c.weight), c.cout, c.k, tr.input, tr.col, dout, gview(g, c.weight), gview(g, c.bias),
                    din);
}

/// Backward one stage given d(logits) and an optional gradient on the
/// bottleneck output. Returns d(input).
template <typename T>
Tensor3<T> stage_backward(const ModelState<T>& s, const StageLayout& L, const StageTrace<T>& tr,
                          const Tensor3<T>& dlogits, const Tensor3<T>* dbottleneck, Gradients<T>& g) {
  const int D = static_cast<int>(L.enc.size());
  std::vector<Tensor3<T>> d_enc(D);
  for (int l = 0; l < D; ++l) {
    const auto& o = tr.enc[l][1].output;
    d_enc[l] = Tensor3<T>(o.channels, o.height, o.width);
  }

  const auto& top = D >= 2 ? tr.dec[0][1].output : tr.enc[0][1].output;
  Tensor3<T> dcur(top.channels, top.height, top.width);
  conv_act_backward(s, L.head, tr.head, dlogits, false, g, &dcur);

  for (int l = 0; l <= D - 2; ++l) {
    const auto& a = tr.dec[l][0];
    Tensor3<T> da(a.output.channels, a.output.height, a.output.width);
    conv_act_backward(s, L.dec[l][1], tr.dec[l][1], std::move(dcur), true, g, &da);
    Tensor3<T> dcat(a.input.channels, a.input.height, a.input.width);
    conv_act_backward(s, L.dec[l][0], a, std::move(da), true, g, &dcat);
    const int up_ch = a.input.channels - tr.enc[l][1].output.channels;
    const auto& below = l + 1 <= D - 2 ? tr.dec[l + 1][1].output : tr.enc[D - 1][1].output;
    Tensor3<T> dup(up_ch, a.input.height, a.input.width);
    nn::concat_backward(dcat, &dup, &d_enc[l], up_ch);
    dcur = Tensor3<T>(below.channels, below.height, below.width);
    nn::upsample2_backward(dup, dcur);
  }
  for (std::size_t i = 0; i < dcur.data.size(); ++i) d_enc[D - 1].data[i] += dcur.data[i];
  if (dbottleneck)
    for (std::size_t i = 0; i < dbottleneck->data.size(); ++i) d_enc[D - 1].data[i] += dbottleneck->data[i];

  Tensor3<T> dinput;
  for (int l = D - 1; l >= 0; --l) {
    const auto& a = tr.enc[l][0];
    Tensor3<T> da(a.output.channels, a.output.height, a.output.width);
    conv_act_backward(s, L.enc[l][1], tr.enc[l][1], std::move(d_enc[l]), true, g, &da);
    Tensor3<T> dx(a.input.channels, a.input.height, a.input.width);
    conv_act_backward(s, L.enc[l][0], a, std::move(da), true, g, &dx);
    if (l > 0)
      nn::maxpool2_backward(tr.pool[l - 1], dx, d_enc[l - 1]);
    else
      dinput = std::move(dx);
  }
  return dinput;
}

}  // namespace detail

/// Per-image cache of a training forward pass.
template <typename T>
struct Trace {
  detail::StageTrace<T> stage1, stage2;
  Tensor3<T> probabilities;
};

/// He-normal weights, zero biases.
template <typename T>
ModelState<T> init_model(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState<T> s;
  s.config = cfg;
  Rng rng(seed);
  detail::for_each_conv(cfg, [&](int, const std::string& name, int cin, int cout, int k) {
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / (cin * k * k)));
    NamedArray<T> w{name + ".weight", {cout, cin, k, k}, {}};
    w.values.resize(static_cast<std::size_t>(cout) * cin * k * k);
    for (auto& v : w.values) v = static_cast<T>(nd(rng));
    s.params.push_back(std::move(w));
    s.params.push_back({name + ".bias", {cout}, std::vector<T>(cout, T{})});
  });
  return s;
}

template <typename T>
Plane<T> convert_plane(const Image& img) {
  Plane<T> p(img.width, img.height);
  std::transform(img.data.begin(), img.data.end(), p.data.begin(), [](float v) { return static_cast<T>(v); });
  return p;
}

namespace detail {

template <typename T>
ForwardOutput<T> wnet_forward(const ModelState<T>& s, const Plane<T>& image, Trace<T>& tr, bool keep) {
  const auto& cfg = s.config;
  if (image.width != cfg.input_size.width || image.height != cfg.input_size.height)
    throw ShapeError("forward: image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     ", network expects " + std::to_string(cfg.input_size.width) + "x" +
                     std::to_string(cfg.input_size.height));
  const auto lay = make_layout(cfg);
  if (s.params.size() != static_cast<std::size_t>(4 * (4 * cfg.depth - 1)))
    throw ShapeError("forward: parameter list does not match network config");

  Tensor3<T> x(1, image.height, image.width);
  x.data = image.data;
  stage_forward(s, lay.stages[0], x, tr.stage1, keep);
  Tensor3<T> in2 = nn::concat_channels(x, tr.stage1.head.output);
  stage_forward(s, lay.stages[1], in2, tr.stage2, keep);

  ForwardOutput<T> out;
  out.probabilities = nn::softmax_channels(tr.stage2.head.output);
  out.features = tr.stage2.enc.back()[1].output;
  if (!nn::all_finite(out.probabilities.data) || !nn::all_finite(out.features.data))
    throw NumericError("forward: non-finite activations");
  if (keep) tr.probabilities = out.probabilities;
  return out;
}

}  // namespace detail

/// Inference pass: no intermediate state is retained.
template <typename T>
ForwardOutput<T> forward(const ModelState<T>& s, const Plane<T>& image) {
  Trace<T> tr;
  return detail::wnet_forward(s, image, tr, false);
}

template <typename T>
ForwardOutput<T> forward(const ModelState<T>& s, const Image& image)
  requires(!std::is_same_v<T, float>)
{
  return forward(s, convert_plane<T>(image));
}

/// Training pass: keeps everything backward() needs in `trace`.
template <typename T>
ForwardOutput<T> forward_train(const ModelState<T>& s, const Plane<T>& image, Trace<T>& trace) {
  return detail::wnet_forward(s, image, trace, true);
}

/// Accumulate parameter gradients given dL/d(probabilities) and, optionally,
/// dL/d(features).
template <typename T>
void backward(const ModelState<T>& s, const Trace<T>& tr, const Tensor3<T>& d_probabilities,
              const Tensor3<T>* d_features, Gradients<T>& grads) {
  const auto lay = detail::make_layout(s.config);
  const Tensor3<T> dlogits2 = nn::softmax_backward(tr.probabilities, d_probabilities);
  const Tensor3<T> din2 = detail::stage_backward(s, lay.stages[1], tr.stage2, dlogits2, d_features, grads);
  // din2 = [d image ; d stage-1 logits]
  Tensor3<T> dlogits1(s.config.num_classes, din2.height, din2.width);
  nn::concat_backward(din2, static_cast<Tensor3<T>*>(nullptr), &dlogits1, 1);
  detail::stage_backward(s, lay.stages[0], tr.stage1, dlogits1, static_cast<const Tensor3<T>*>(nullptr), grads);
}

/// Argmax class per pixel; ties resolve to the lowest class index.
template <typename T>
LabelMap argmax_labels(const Tensor3<T>& probs) {
  LabelMap out(probs.width, probs.height);
  const std::size_t n = probs.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    for (int c = 1; c < probs.channels; ++c)
      if (probs.data[c * n + i] > probs.data[best * n + i]) best = c;
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

template <typename T>
LabelMap pseudo_label(const ModelState<T>& teacher, const Plane<T>& image) {
  return argmax_labels(forward(teacher, image).probabilities);
}

/// teacher <- lambda * teacher + (1 - lambda) * student, per parameter.
template <typename T>
void ema_update(ModelState<T>& teacher, const ModelState<T>& student, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("ema_update: lambda must be in [0,1]");
  if (!same_structure(teacher, student)) throw ShapeError("ema_update: teacher/student structure mismatch");
  const T a = static_cast<T>(lambda);
  const T b = static_cast<T>(1.0 - lambda);
  for (std::size_t i = 0; i < teacher.params.size(); ++i) {
    auto& t = teacher.params[i].values;
    const auto& s = student.params[i].values;
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = a * t[j] + b * s[j];
  }
  ++teacher.iteration;
}

/// Foreground probability plane (class 1) of an L x H x W map.
template <typename T>
Plane<T> foreground_plane(const Tensor3<T>& probs) {
  Plane<T> p(probs.width, probs.height);
  std::copy(probs.channel(kVessel), probs.channel(kVessel) + probs.plane_size(), p.data.begin());
  return p;
}

/// Resize to the network size, forward, bilinearly upsample the class
/// probabilities to the original resolution and renormalize per pixel.
template <typename T>
std::vector<Tensor3<T>> predict_dataset(const ModelState<T>& s, const std::vector<ImageSample>& samples,
                                        const PreprocessConfig& pre) {
  std::vector<Tensor3<T>> out;
  out.reserve(samples.size());
  PreprocessConfig eval_pre = pre;
  eval_pre.train_size = s.config.input_size;
  for (const auto& sample : samples) {
    const ImageSample g = to_grayscale(sample, pre);
    const ImageSample r = resize_whole(g, eval_pre);
    const auto fo = forward(s, convert_plane<T>(to_plane(r)));
    Tensor3<T> up(fo.probabilities.channels, sample.height(), sample.width());
    for (int c = 0; c < up.channels; ++c) {
      Plane<T> ch(fo.probabilities.width, fo.probabilities.height);
      std::copy(fo.probabilities.channel(c), fo.probabilities.channel(c) + ch.size(), ch.data.begin());
      const Plane<T> big = resize_bilinear(ch, sample.width(), sample.height());
      std::copy(big.data.begin(), big.data.end(), up.channel(c));
    }
    const std::size_t n = up.plane_size();
    for (std::size_t i = 0; i < n; ++i) {
      T sum{0};
      for (int c = 0; c < up.channels; ++c) sum += up.data[c * n + i];
      for (int c = 0; c < up.channels; ++c) up.data[c * n + i] /= sum;
    }
    out.push_back(std::move(up));
  }
  return out;
}

}  // namespace ida
