#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ida/core.hpp"

namespace ida {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  double accuracy() const { return total() ? static_cast<double>(tp + tn) / static_cast<double>(total()) : 0.0; }
  double sensitivity() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  double specificity() const { return tn + fp ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0; }
  /// 2tp / (2tp + fp + fn); 1 when both masks are empty.
  double dice() const {
    const auto den = 2 * tp + fp + fn;
    return den ? 2.0 * static_cast<double>(tp) / static_cast<double>(den) : 1.0;
  }
};

template <typename T>
BinaryMask binarize(const Plane<T>& probs, double threshold = 0.5) {
  BinaryMask m(probs.width, probs.height);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = static_cast<double>(probs.data[i]) >= threshold ? 1 : 0;
  return m;
}

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double dice(const BinaryMask& pred, const BinaryMask& gt) { return confusion(pred, gt).dice(); }

/// Rank-based (Mann-Whitney) AUC with midranks for ties. Empty when gt has
/// a single class.
template <typename T>
std::optional<double> auc(const Plane<T>& scores, const BinaryMask& gt) {
  require_same_shape(scores, gt, "auc");
  const std::size_t n = scores.size();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores.data[a] < scores.data[b]; });
  double rank_sum_pos = 0;
  std::uint64_t npos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores.data[order[j]] == scores.data[order[i]]) ++j;
    const double midrank = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
    for (std::size_t k = i; k < j; ++k)
      if (gt.data[order[k]]) {
        rank_sum_pos += midrank;
        ++npos;
      }
    i = j;
  }
  const std::uint64_t nneg = n - npos;
  if (npos == 0 || nneg == 0) return std::nullopt;
  const double u = rank_sum_pos - static_cast<double>(npos) * (static_cast<double>(npos) + 1) / 2.0;
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

/// Zhang-Suen thinning to a one-pixel-wide skeleton (pixels outside the
/// plane count as background).
inline BinaryMask skeletonize(const BinaryMask& in) {
  const int W = in.width, H = in.height;
  BinaryMask img(W, H);
  for (std::size_t i = 0; i < in.size(); ++i) img.data[i] = in.data[i] ? 1 : 0;
  auto at = [&](int y, int x) -> int { return (y < 0 || x < 0 || y >= H || x >= W) ? 0 : img(y, x); };
  std::vector<std::size_t> to_clear;
  for (bool changed = true; changed;) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      to_clear.clear();
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          if (!img(y, x)) continue;
          // neighbors P2..P9 clockwise from north
          const std::array<int, 8> p{at(y - 1, x), at(y - 1, x + 1), at(y, x + 1), at(y + 1, x + 1),
                                     at(y + 1, x), at(y + 1, x - 1), at(y, x - 1), at(y - 1, x - 1)};
          const int b = std::accumulate(p.begin(), p.end(), 0);
          if (b < 2 || b > 6) continue;
          int a = 0;
          for (int k = 0; k < 8; ++k) a += (p[k] == 0 && p[(k + 1) % 8] == 1);
          if (a != 1) continue;
          if (pass == 0) {
            if (p[0] * p[2] * p[4] != 0 || p[2] * p[4] * p[6] != 0) continue;
          } else {
            if (p[0] * p[2] * p[6] != 0 || p[0] * p[4] * p[6] != 0) continue;
          }
          to_clear.push_back(static_cast<std::size_t>(y) * W + x);
        }
      for (auto i : to_clear) img.data[i] = 0;
      changed = changed || !to_clear.empty();
    }
  }
  return img;
}

/// Centerline Dice: harmonic mean of |skel(pred) & gt| / |skel(pred)| and
/// |skel(gt) & pred| / |skel(gt)|. A ratio with an empty skeleton is 1 when
/// the other mask is empty as well and 0 otherwise.
inline double cl_dice(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "cl_dice");
  const BinaryMask sp = skeletonize(pred), sg = skeletonize(gt);
  auto ratio = [](const BinaryMask& skel, const BinaryMask& other) {
    std::size_t s = 0, hit = 0;
    for (std::size_t i = 0; i < skel.size(); ++i)
      if (skel.data[i]) {
        ++s;
        hit += other.data[i] != 0;
      }
    if (s == 0) return count_nonzero(other) == 0 ? 1.0 : 0.0;
    return static_cast<double>(hit) / static_cast<double>(s);
  };
  const double tprec = ratio(sp, gt), tsens = ratio(sg, pred);
  return tprec + tsens > 0 ? 2 * tprec * tsens / (tprec + tsens) : 0.0;
}

/// Connected components of pixels equal to `value` (4- or 8-connectivity).
inline int count_components(const BinaryMask& m, std::uint8_t value, int connectivity) {
  const int W = m.width, H = m.height;
  std::vector<std::uint8_t> seen(m.size(), 0);
  std::vector<std::pair<int, int>> stack;
  int comps = 0;
  for (int y0 = 0; y0 < H; ++y0)
    for (int x0 = 0; x0 < W; ++x0) {
      const std::size_t i0 = static_cast<std::size_t>(y0) * W + x0;
      if (seen[i0] || (m.data[i0] != 0) != (value != 0)) continue;
      ++comps;
      seen[i0] = 1;
      stack.assign(1, {y0, x0});
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dx == 0 && dy == 0) || (connectivity == 4 && dx != 0 && dy != 0)) continue;
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || nx < 0 || ny >= H || nx >= W) continue;
            const std::size_t j = static_cast<std::size_t>(ny) * W + nx;
            if (seen[j] || (m.data[j] != 0) != (value != 0)) continue;
            seen[j] = 1;
            stack.push_back({ny, nx});
          }
      }
    }
  return comps;
}

/// Euler number of the foreground under 8-connectivity via 2x2 bit-quad
/// counts over the zero-padded mask: E = (n1 - n3 - 2 nd) / 4.
inline int euler_number8(const BinaryMask& m) {
  const int W = m.width, H = m.height;
  auto at = [&](int y, int x) -> int { return (y < 0 || x < 0 || y >= H || x >= W) ? 0 : (m(y, x) != 0); };
  int n1 = 0, n3 = 0, nd = 0;
  for (int y = -1; y < H; ++y)
    for (int x = -1; x < W; ++x) {
      const int a = at(y, x), b = at(y, x + 1), c = at(y + 1, x), d = at(y + 1, x + 1);
      const int s = a + b + c + d;
      if (s == 1) ++n1;
      else if (s == 3) ++n3;
      else if (s == 2 && a == d) ++nd;
    }
  return (n1 - n3 - 2 * nd) / 4;
}

struct BettiNumbers {
  int b0 = 0, b1 = 0;
};

/// beta0 = 8-connected foreground components; beta1 = beta0 - Euler number.
inline BettiNumbers betti_numbers(const BinaryMask& m) {
  BettiNumbers b;
  b.b0 = count_components(m, 1, 8);
  b.b1 = b.b0 - euler_number8(m);
  return b;
}

inline constexpr int kBettiPatch = 64;

/// |d beta0| + |d beta1| for each patch of a row-major tiling (edge tiles may
/// be smaller).
inline std::vector<int> betti_patch_errors(const BinaryMask& pred, const BinaryMask& gt, int patch = kBettiPatch) {
  require_same_shape(pred, gt, "betti_matching_error");
  std::vector<int> errs;
  for (int y0 = 0; y0 < pred.height; y0 += patch)
    for (int x0 = 0; x0 < pred.width; x0 += patch) {
      const int w = std::min(patch, pred.width - x0), h = std::min(patch, pred.height - y0);
      BinaryMask a(w, h), b(w, h);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          a(y, x) = pred(y0 + y, x0 + x);
          b(y, x) = gt(y0 + y, x0 + x);
        }
      const auto ba = betti_numbers(a), bb = betti_numbers(b);
      errs.push_back(std::abs(ba.b0 - bb.b0) + std::abs(ba.b1 - bb.b1));
    }
  return errs;
}

/// Patch-wise Betti-number discrepancy: mean over 64x64 tiles of
/// |d beta0| + |d beta1|. An approximation of barcode-matched Betti error
/// that shares its zero set and sensitivity to spurious components and loops.
inline double betti_matching_error(const BinaryMask& pred, const BinaryMask& gt, int patch = kBettiPatch) {
  const auto errs = betti_patch_errors(pred, gt, patch);
  if (errs.empty()) return 0.0;
  return static_cast<double>(std::accumulate(errs.begin(), errs.end(), 0)) / static_cast<double>(errs.size());
}

inline constexpr std::array<const char*, 7> kMetricNames{"auc", "acc", "se", "sp", "dice", "cldice", "bm"};

struct ImageMetrics {
  std::string id;
  std::array<double, 7> values{};  // ordered as kMetricNames; auc may be NaN (single-class gt)
};

template <typename T>
ImageMetrics image_metrics(const std::string& id, const Plane<T>& fg_prob, const BinaryMask& gt,
                           double threshold = 0.5) {
  const BinaryMask pred = binarize(fg_prob, threshold);
  const auto c = confusion(pred, gt);
  ImageMetrics m;
  m.id = id;
  m.values = {auc(fg_prob, gt).value_or(std::nan("")), c.accuracy(), c.sensitivity(), c.specificity(), c.dice(),
              cl_dice(pred, gt), betti_matching_error(pred, gt)};
  return m;
}

struct MeanStd {
  double mean = 0, std = 0;
  std::size_t n = 0;
};

/// Mean and population standard deviation, skipping NaNs.
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  double s = 0;
  for (double x : xs)
    if (!std::isnan(x)) {
      s += x;
      ++r.n;
    }
  if (r.n == 0) return {std::nan(""), std::nan(""), 0};
  r.mean = s / static_cast<double>(r.n);
  double v = 0;
  for (double x : xs)
    if (!std::isnan(x)) v += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(v / static_cast<double>(r.n));
  return r;
}

struct EvalReport {
  std::vector<ImageMetrics> per_image;
  std::array<MeanStd, 7> summary{};

  double mean(std::size_t metric) const { return summary[metric].mean; }
  double dice() const { return summary[4].mean; }
};

inline EvalReport aggregate(std::vector<ImageMetrics> per_image) {
  EvalReport r;
  r.per_image = std::move(per_image);
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
    std::vector<double> xs;
    xs.reserve(r.per_image.size());
    for (const auto& m : r.per_image) xs.push_back(m.values[k]);
    r.summary[k] = mean_std(xs);
  }
  return r;
}

}  // namespace ida
