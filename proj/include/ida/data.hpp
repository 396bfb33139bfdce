#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ida/core.hpp"

namespace ida {

enum class Domain { source, target };

inline const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

/// One image with an optional label plane. Pixels are C x H x W in [0,1];
/// C is 3 before grayscale conversion and 1 afterwards.
struct ImageSample {
  Tensor3<float> pixels;
  std::optional<LabelMap> label;
  Domain domain = Domain::source;
  std::string id;

  int width() const { return pixels.width; }
  int height() const { return pixels.height; }
  int channels() const { return pixels.channels; }
};

struct AugmentConfig {
  bool horizontal_flip = true;
  bool vertical_flip = true;
  bool color_jitter = true;
  float brightness = 0.1f;  // additive offset drawn from [-b, b]
  float contrast = 0.1f;    // multiplicative scale drawn from [1-c, 1+c] around the image mean
};

struct PreprocessConfig {
  Size2 train_size{384, 384};
  std::array<float, 3> grayscale_weights{0.299f, 0.587f, 0.114f};
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const {
    if (train_size.width <= 0 || train_size.height <= 0) throw ConfigError("train_size must be positive");
    if (augment.brightness < 0 || augment.contrast < 0) throw ConfigError("jitter amplitudes must be >= 0");
    const float s = grayscale_weights[0] + grayscale_weights[1] + grayscale_weights[2];
    if (std::abs(s - 1.0f) > 1e-4f) throw ConfigError("grayscale weights must sum to 1");
  }
};

/// Which preprocessing path feeds the "whole" and "patch" slots of a quad.
enum class InputStrategy { patch, whole, both };

/// Four W x H grayscale planes: resized and cropped source, resized and cropped target.
struct QuadBatch {
  Image sr, sp, tr, tp;
  LabelMap y_sr, y_sp;
};

inline Image to_plane(const ImageSample& s) {
  if (s.pixels.channels != 1) throw ShapeError("to_plane: expected a single-channel sample");
  Image out(s.pixels.width, s.pixels.height);
  out.data = s.pixels.data;
  return out;
}

inline ImageSample from_plane(const Image& img, std::optional<LabelMap> label, Domain d, std::string id) {
  ImageSample s;
  s.pixels = Tensor3<float>(1, img.height, img.width);
  s.pixels.data = img.data;
  s.label = std::move(label);
  s.domain = d;
  s.id = std::move(id);
  return s;
}

/// Bilinear resample with half-pixel centers (no antialiasing).
template <typename T>
Plane<T> resize_bilinear(const Plane<T>& src, int out_w, int out_h) {
  if (src.width == out_w && src.height == out_h) return src;
  Plane<T> dst(out_w, out_h);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = (1 - wx) * src(y0, x0) + wx * src(y0, x1);
      const double bot = (1 - wx) * src(y1, x0) + wx * src(y1, x1);
      dst(y, x) = static_cast<T>((1 - wy) * top + wy * bot);
    }
  }
  return dst;
}

template <typename T>
Plane<T> resize_nearest(const Plane<T>& src, int out_w, int out_h) {
  if (src.width == out_w && src.height == out_h) return src;
  Plane<T> dst(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * src.height / out_h), src.height - 1);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * src.width / out_w), src.width - 1);
      dst(y, x) = src(sy, sx);
    }
  }
  return dst;
}

namespace detail {

inline Plane<float> channel_plane(const Tensor3<float>& t, int c) {
  Plane<float> p(t.width, t.height);
  std::copy(t.channel(c), t.channel(c) + t.plane_size(), p.data.begin());
  return p;
}

inline void set_channel(Tensor3<float>& t, int c, const Plane<float>& p) {
  std::copy(p.data.begin(), p.data.end(), t.channel(c));
}

inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

template <typename T>
Plane<T> crop(const Plane<T>& src, int x0, int y0, int w, int h) {
  Plane<T> out(w, h);
  for (int y = 0; y < h; ++y)
    std::copy_n(src.data.begin() + static_cast<std::size_t>(y0 + y) * src.width + x0, w,
                out.data.begin() + static_cast<std::size_t>(y) * w);
  return out;
}

template <typename T>
Plane<T> reflect_pad(const Plane<T>& src, int w, int h) {
  Plane<T> out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(y, x) = src(reflect101(y, src.height), reflect101(x, src.width));
  return out;
}

}  // namespace detail

/// Resize the whole image to the training size: bilinear for pixels,
/// nearest-neighbor for the label.
inline ImageSample resize_whole(const ImageSample& s, const PreprocessConfig& cfg) {
  if (s.pixels.data.empty()) throw ShapeError("resize_whole: empty image");
  if (s.width() < 2 || s.height() < 2) throw ShapeError("resize_whole: degenerate input " + s.id);
  const auto [W, H] = cfg.train_size;
  ImageSample out;
  out.domain = s.domain;
  out.id = s.id;
  out.pixels = Tensor3<float>(s.channels(), H, W);
  for (int c = 0; c < s.channels(); ++c)
    detail::set_channel(out.pixels, c, resize_bilinear(detail::channel_plane(s.pixels, c), W, H));
  if (s.label) out.label = resize_nearest(*s.label, W, H);
  return out;
}

/// Random W x H window with uniform offsets. Images smaller than the window
/// are reflect-padded first.
inline ImageSample random_crop(const ImageSample& s, const PreprocessConfig& cfg, Rng& rng) {
  const auto [W, H] = cfg.train_size;
  const int pw = std::max(W, s.width());
  const int ph = std::max(H, s.height());
  std::uniform_int_distribution<int> dx(0, pw - W), dy(0, ph - H);
  const int x0 = dx(rng);
  const int y0 = dy(rng);
  ImageSample out;
  out.domain = s.domain;
  out.id = s.id;
  out.pixels = Tensor3<float>(s.channels(), H, W);
  for (int c = 0; c < s.channels(); ++c) {
    auto p = detail::channel_plane(s.pixels, c);
    if (pw != s.width() || ph != s.height()) p = detail::reflect_pad(p, pw, ph);
    detail::set_channel(out.pixels, c, detail::crop(p, x0, y0, W, H));
  }
  if (s.label) {
    auto l = *s.label;
    if (pw != s.width() || ph != s.height()) l = detail::reflect_pad(l, pw, ph);
    out.label = detail::crop(l, x0, y0, W, H);
  }
  return out;
}

inline ImageSample to_grayscale(const ImageSample& s, const PreprocessConfig& cfg) {
  if (s.channels() == 1) return s;
  if (s.channels() != 3) throw ShapeError("to_grayscale: expected 1 or 3 channels");
  ImageSample out;
  out.domain = s.domain;
  out.id = s.id;
  out.label = s.label;
  out.pixels = Tensor3<float>(1, s.height(), s.width());
  const auto& w = cfg.grayscale_weights;
  const std::size_t n = s.pixels.plane_size();
  const float* r = s.pixels.channel(0);
  const float* g = s.pixels.channel(1);
  const float* b = s.pixels.channel(2);
  for (std::size_t i = 0; i < n; ++i)
    out.pixels.data[i] = std::clamp(w[0] * r[i] + w[1] * g[i] + w[2] * b[i], 0.0f, 1.0f);
  return out;
}

inline ImageSample flip_horizontal(ImageSample s) {
  auto flip = [](auto& data, int w, int h) {
    for (int y = 0; y < h; ++y) std::reverse(data.begin() + static_cast<std::size_t>(y) * w,
                                             data.begin() + static_cast<std::size_t>(y + 1) * w);
  };
  for (int c = 0; c < s.channels(); ++c) {
    auto p = detail::channel_plane(s.pixels, c);
    flip(p.data, p.width, p.height);
    detail::set_channel(s.pixels, c, p);
  }
  if (s.label) flip(s.label->data, s.label->width, s.label->height);
  return s;
}

inline ImageSample flip_vertical(ImageSample s) {
  auto flip = [](auto& data, int w, int h) {
    for (int y = 0; y < h / 2; ++y)
      std::swap_ranges(data.begin() + static_cast<std::size_t>(y) * w,
                       data.begin() + static_cast<std::size_t>(y + 1) * w,
                       data.begin() + static_cast<std::size_t>(h - 1 - y) * w);
  };
  for (int c = 0; c < s.channels(); ++c) {
    auto p = detail::channel_plane(s.pixels, c);
    flip(p.data, p.width, p.height);
    detail::set_channel(s.pixels, c, p);
  }
  if (s.label) flip(s.label->data, s.label->width, s.label->height);
  return s;
}

/// Random flips (shared by pixels and label), then brightness/contrast jitter
/// on pixels only. Each random draw is consumed regardless of the flags so a
/// given seed walks the same rng sequence.
inline ImageSample augment(const ImageSample& s, const PreprocessConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  const bool hflip = u01(rng) < 0.5f;
  const bool vflip = u01(rng) < 0.5f;
  const float b = (2 * u01(rng) - 1) * cfg.augment.brightness;
  const float c = 1 + (2 * u01(rng) - 1) * cfg.augment.contrast;

  ImageSample out = s;
  if (cfg.augment.horizontal_flip && hflip) out = flip_horizontal(std::move(out));
  if (cfg.augment.vertical_flip && vflip) out = flip_vertical(std::move(out));
  if (cfg.augment.color_jitter) {
    auto& d = out.pixels.data;
    double mean = 0;
    for (float v : d) mean += v;
    mean /= static_cast<double>(d.size());
    for (float& v : d) v = std::clamp(static_cast<float>((v - mean) * c + mean + b), 0.0f, 1.0f);
  }
  return out;
}

/// Draw two source and two target images (with replacement) and run the
/// whole-resize / random-crop paths, grayscale and augmentation on all four.
inline QuadBatch sample_quad(const std::vector<ImageSample>& source, const std::vector<ImageSample>& target,
                             const PreprocessConfig& cfg, Rng& rng,
                             InputStrategy input = InputStrategy::both) {
  if (source.empty() || target.empty()) throw ConfigError("sample_quad: empty dataset");
  std::uniform_int_distribution<std::size_t> ds(0, source.size() - 1), dt(0, target.size() - 1);
  const std::size_t i = ds(rng), j = ds(rng), k = dt(rng), l = dt(rng);

  auto whole_path = [&](const ImageSample& s) { return resize_whole(s, cfg); };
  auto patch_path = [&](const ImageSample& s) { return random_crop(s, cfg, rng); };
  auto first = [&](const ImageSample& s) {
    return input == InputStrategy::patch ? patch_path(s) : whole_path(s);
  };
  auto second = [&](const ImageSample& s) {
    return input == InputStrategy::whole ? whole_path(s) : patch_path(s);
  };

  ImageSample sr = first(source[i]);
  ImageSample sp = second(source[j]);
  ImageSample tr = first(target[k]);
  ImageSample tp = second(target[l]);
  if (!sr.label || !sp.label) throw ConfigError("sample_quad: source samples must be labeled");

  auto finish = [&](const ImageSample& s) { return augment(to_grayscale(s, cfg), cfg, rng); };
  sr = finish(sr);
  sp = finish(sp);
  tr = finish(tr);
  tp = finish(tp);

  QuadBatch q;
  q.sr = to_plane(sr);
  q.sp = to_plane(sp);
  q.tr = to_plane(tr);
  q.tp = to_plane(tp);
  q.y_sr = *sr.label;
  q.y_sp = *sp.label;
  return q;
}

}  // namespace ida
