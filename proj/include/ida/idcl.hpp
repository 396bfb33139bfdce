#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "ida/segnet.hpp"

namespace ida {

/// Class prototypes: raw (unnormalized) mean feature vectors, one per class.
struct PrototypeBank {
  std::vector<std::vector<double>> vectors;
  std::uint64_t iteration = 0;
  double last_w_t2s = 0.0;
  double last_w_s2t = 0.0;

  int num_classes() const { return static_cast<int>(vectors.size()); }
  int dim() const { return vectors.empty() ? 0 : static_cast<int>(vectors.front().size()); }

  friend bool operator==(const PrototypeBank&, const PrototypeBank&) = default;
};

struct ContrastConfig {
  double delta = 0.1;   // angular margin on the positive pair, radians
  double tau = 1.0;     // temperature
  double th_t2s = 0.9;  // confidence margin thresholds for the update weights
  double th_s2t = 0.7;
  bool mean_over_pixels = true;  // false: sum over pixels

  void validate() const {
    if (!(tau > 0)) throw ConfigError("tau must be > 0");
    if (!(delta >= 0 && delta < std::numbers::pi / 2)) throw ConfigError("delta must be in [0, pi/2)");
    if (th_t2s < 0 || th_t2s > 1 || th_s2t < 0 || th_s2t > 1) throw ConfigError("thresholds must be in [0,1]");
  }
};

/// Mean feature of one class in a batch and the number of contributing pixels.
struct ClassStat {
  std::vector<double> mean;
  std::size_t count = 0;
};

/// Nearest-neighbor downsampling of a label plane to the feature grid.
inline LabelMap downsample_labels(const LabelMap& labels, Size2 feature_size) {
  return resize_nearest(labels, feature_size.width, feature_size.height);
}

/// Mean feature over all pixels of class r across the batch.
template <typename T>
ClassStat batch_class_prototype(std::span<const Tensor3<T>> features, std::span<const LabelMap> labels_ds, int r) {
  if (features.size() != labels_ds.size()) throw ShapeError("batch_class_prototype: batch size mismatch");
  ClassStat st;
  if (features.empty()) return st;
  const int d = features.front().channels;
  st.mean.assign(d, 0.0);
  for (std::size_t b = 0; b < features.size(); ++b) {
    const auto& f = features[b];
    const auto& y = labels_ds[b];
    if (f.width != y.width || f.height != y.height || f.channels != d)
      throw ShapeError("batch_class_prototype: feature/label shape mismatch");
    const std::size_t n = f.plane_size();
    for (std::size_t j = 0; j < n; ++j) {
      if (y.data[j] != r) continue;
      ++st.count;
      for (int c = 0; c < d; ++c) st.mean[c] += static_cast<double>(f.data[c * n + j]);
    }
  }
  if (st.count > 0)
    for (auto& v : st.mean) v /= static_cast<double>(st.count);
  return st;
}

/// Prototypes from the source set: class-wise mean of bottleneck features
/// over all source images. Classes with no pixels take the global mean.
template <typename T>
PrototypeBank init_prototypes(const ModelState<T>& model, const std::vector<ImageSample>& source,
                              const PreprocessConfig& pre) {
  if (source.empty()) throw ConfigError("init_prototypes: empty source set");
  const auto& cfg = model.config;
  PreprocessConfig p = pre;
  p.train_size = cfg.input_size;
  const int L = cfg.num_classes, d = cfg.feature_dim();
  std::vector<std::vector<double>> sums(L, std::vector<double>(d, 0.0));
  std::vector<std::size_t> counts(L, 0);
  std::vector<double> global(d, 0.0);
  std::size_t global_count = 0;
  for (const auto& s : source) {
    if (!s.label) throw ConfigError("init_prototypes: source sample without label: " + s.id);
    const ImageSample r = resize_whole(to_grayscale(s, p), p);
    const auto fo = forward(model, convert_plane<T>(to_plane(r)));
    const LabelMap y = downsample_labels(*r.label, cfg.tap_size());
    const std::size_t n = fo.features.plane_size();
    for (std::size_t j = 0; j < n; ++j) {
      const int cls = y.data[j];
      if (cls >= L) continue;
      ++counts[cls];
      ++global_count;
      for (int c = 0; c < d; ++c) {
        const double v = static_cast<double>(fo.features.data[c * n + j]);
        sums[cls][c] += v;
        global[c] += v;
      }
    }
  }
  PrototypeBank bank;
  bank.vectors.resize(L);
  for (int r = 0; r < L; ++r) {
    bank.vectors[r].resize(d);
    for (int c = 0; c < d; ++c)
      bank.vectors[r][c] = counts[r] ? sums[r][c] / static_cast<double>(counts[r])
                                     : global[c] / static_cast<double>(std::max<std::size_t>(global_count, 1));
  }
  return bank;
}

/// Fraction of pixels whose top-1 minus top-2 class probability exceeds th.
template <typename T>
double confidence_weight(std::span<const Tensor3<T>> probs, double th) {
  std::size_t total = 0, confident = 0;
  for (const auto& p : probs) {
    const std::size_t n = p.plane_size();
    total += n;
    for (std::size_t i = 0; i < n; ++i) {
      double top1 = -1, top2 = -1;
      for (int c = 0; c < p.channels; ++c) {
        const double v = static_cast<double>(p.data[c * n + i]);
        if (v > top1) {
          top2 = top1;
          top1 = v;
        } else if (v > top2) {
          top2 = v;
        }
      }
      if (std::abs(top1 - top2) > th) ++confident;
    }
  }
  return total ? static_cast<double>(confident) / static_cast<double>(total) : 0.0;
}

/// Two-step convex update per class: first toward the source-like batch
/// prototype with w_t2s, then toward the target-like one with w_s2t. A
/// direction that saw no pixels of a class skips its step for that class.
inline PrototypeBank update_prototypes(PrototypeBank bank, const std::vector<ClassStat>& t2s,
                                       const std::vector<ClassStat>& s2t, double w_t2s, double w_s2t) {
  const int L = bank.num_classes();
  if (static_cast<int>(t2s.size()) != L || static_cast<int>(s2t.size()) != L)
    throw ShapeError("update_prototypes: class count mismatch");
  for (int r = 0; r < L; ++r) {
    auto& c = bank.vectors[r];
    if (t2s[r].count > 0)
      for (std::size_t k = 0; k < c.size(); ++k) c[k] = (1 - w_t2s) * c[k] + w_t2s * t2s[r].mean[k];
    if (s2t[r].count > 0)
      for (std::size_t k = 0; k < c.size(); ++k) c[k] = (1 - w_s2t) * c[k] + w_s2t * s2t[r].mean[k];
  }
  ++bank.iteration;
  bank.last_w_t2s = w_t2s;
  bank.last_w_s2t = w_s2t;
  return bank;
}

/// c.f / (|c| |f|) clamped to [-1, 1]; 0 when either vector has zero norm.
inline double cosine_similarity(std::span<const double> c, std::span<const double> f) {
  if (c.size() != f.size()) throw ShapeError("cosine_similarity: dimension mismatch");
  double dot = 0, nc = 0, nf = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    dot += c[i] * f[i];
    nc += c[i] * c[i];
    nf += f[i] * f[i];
  }
  if (nc == 0 || nf == 0) return 0.0;
  return std::clamp(dot / (std::sqrt(nc) * std::sqrt(nf)), -1.0, 1.0);
}

/// Per-pixel margin contrastive term given the positive and negative
/// similarities:
///   -log( e^{cos(theta+delta)/tau} / (e^{cos(theta+delta)/tau} + sum_neg e^{cos/tau}) )
/// with theta = acos(cos_pos) and theta+delta clamped to [0, pi].
/// Optionally returns d/d(cos_pos) and d/d(cos_neg[i]).
inline double contrastive_term(double cos_pos, std::span<const double> cos_neg, double delta, double tau,
                               double* d_pos = nullptr, std::span<double> d_neg = {}) {
  const double s = std::clamp(cos_pos, -1.0, 1.0);
  const double theta = std::acos(s);
  const double shifted = theta + delta;
  const bool saturated = shifted >= std::numbers::pi;
  const double a = saturated ? -1.0 : std::cos(shifted);

  double mx = a / tau;
  for (double c : cos_neg) mx = std::max(mx, c / tau);
  double z = std::exp(a / tau - mx);
  for (double c : cos_neg) z += std::exp(c / tau - mx);
  const double loss = -(a / tau - mx) + std::log(z);

  if (d_pos) {
    const double p_pos = std::exp(a / tau - mx) / z;
    double da_ds = 0.0;
    if (!saturated) {
      // d/ds cos(acos(s) + delta) = cos(delta) + s sin(delta) / sqrt(1 - s^2)
      const double sd = std::sin(delta);
      da_ds = std::cos(delta);
      if (sd != 0.0) da_ds += s * sd / std::max(std::sqrt(1 - s * s), 1e-6);
    }
    *d_pos = (p_pos - 1.0) / tau * da_ds;
    for (std::size_t i = 0; i < cos_neg.size() && i < d_neg.size(); ++i)
      d_neg[i] = std::exp(cos_neg[i] / tau - mx) / z / tau;
  }
  return loss;
}

/// Contrastive loss of one feature map (d x h x w) against the bank, using
/// `labels_ds` (h x w) as the positive class per pixel. Prototypes are
/// constants; gradients (times `scale`) go to the features only.
template <typename T>
double contrastive_loss(const Tensor3<T>& features, const LabelMap& labels_ds, const PrototypeBank& bank,
                        const ContrastConfig& cfg, Tensor3<T>* grad = nullptr, double scale = 1.0) {
  if (features.width != labels_ds.width || features.height != labels_ds.height)
    throw ShapeError("contrastive_loss: feature/label shape mismatch");
  if (features.channels != bank.dim()) throw ShapeError("contrastive_loss: feature dim != prototype dim");
  const int L = bank.num_classes(), d = features.channels;
  const std::size_t n = features.plane_size();

  std::vector<double> cnorm(L);
  for (int r = 0; r < L; ++r) {
    double s = 0;
    for (double v : bank.vectors[r]) s += v * v;
    cnorm[r] = std::sqrt(s);
  }

  const double norm = cfg.mean_over_pixels ? 1.0 / static_cast<double>(n) : 1.0;
  std::vector<double> f(d), cos(L), cos_neg(L - 1), d_neg(L - 1);
  double total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    double fnorm2 = 0;
    for (int c = 0; c < d; ++c) {
      f[c] = static_cast<double>(features.data[c * n + j]);
      fnorm2 += f[c] * f[c];
    }
    if (!std::isfinite(fnorm2)) throw NumericError("contrastive_loss: non-finite features");
    const double fnorm = std::sqrt(fnorm2);
    for (int r = 0; r < L; ++r) cos[r] = cosine_similarity(bank.vectors[r], f);
    const int y = labels_ds.data[j];
    for (int r = 0, k = 0; r < L; ++r)
      if (r != y) cos_neg[k++] = cos[r];
    double d_pos = 0;
    total += contrastive_term(cos[y], cos_neg, cfg.delta, cfg.tau, grad ? &d_pos : nullptr, d_neg);

    if (!grad || fnorm == 0) continue;
    // d cos_r / d f = c_r / (|c_r||f|) - cos_r f / |f|^2
    for (int r = 0, k = 0; r < L; ++r) {
      const double dl = r == y ? d_pos : d_neg[k++];
      if (cnorm[r] == 0 || dl == 0) continue;
      const double a = dl / (cnorm[r] * fnorm), b = dl * cos[r] / fnorm2;
      for (int c = 0; c < d; ++c)
        grad->data[c * n + j] += static_cast<T>(scale * norm * (a * bank.vectors[r][c] - b * f[c]));
    }
  }
  return total * norm;
}

}  // namespace ida
