#pragma once

#include <cmath>

#include "ida/core.hpp"

// Masked supervised and consistency losses over L x H x W probability maps.
// Each loss optionally accumulates `scale * dLoss/dprobs` into `grad`.
namespace ida {

inline constexpr double kLogFloor = 1e-7;
inline constexpr double kDiceSmooth = 1.0;

struct LossWeights {
  double beta1 = 1.0;  // source-like contrastive term
  double beta2 = 1.0;  // target-like contrastive term
  double gamma = 1.0;  // consistency term

  void validate() const {
    for (double w : {beta1, beta2, gamma})
      if (!std::isfinite(w) || w < 0) throw ConfigError("loss weights must be finite and >= 0");
  }
};

struct LossReport {
  double cls = 0, dice = 0, idcl_t2s = 0, idcl_s2t = 0, con = 0, total = 0;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

namespace detail {

template <typename T>
void check_loss_inputs(const Tensor3<T>& probs, const LabelMap& target, const BinaryMask& region) {
  if (probs.width != target.width || probs.height != target.height || !target.same_shape(region))
    throw ShapeError("masked loss: shape mismatch");
}

}  // namespace detail

/// Mean of -log p[target] over region pixels (probabilities floored at 1e-7);
/// 0 for an empty region.
template <typename T>
double masked_cross_entropy(const Tensor3<T>& probs, const LabelMap& target, const BinaryMask& region,
                            Tensor3<T>* grad = nullptr, double scale = 1.0) {
  detail::check_loss_inputs(probs, target, region);
  const std::size_t n = probs.plane_size();
  const std::size_t count = count_nonzero(region);
  if (count == 0) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!region.data[i]) continue;
    const std::size_t idx = target.data[i] * n + i;
    const double p = static_cast<double>(probs.data[idx]);
    sum -= std::log(std::max(p, kLogFloor));
    if (grad && p > kLogFloor) grad->data[idx] += static_cast<T>(-scale / (p * static_cast<double>(count)));
  }
  return sum / static_cast<double>(count);
}

/// Soft Dice loss on the foreground channel restricted to region:
/// 1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps), eps = 1; 0 for an empty region.
template <typename T>
double masked_dice(const Tensor3<T>& probs, const LabelMap& target, const BinaryMask& region,
                   Tensor3<T>* grad = nullptr, double scale = 1.0) {
  detail::check_loss_inputs(probs, target, region);
  const std::size_t n = probs.plane_size();
  if (count_nonzero(region) == 0) return 0.0;
  const T* pf = probs.channel(kVessel);
  double inter = 0, psum = 0, tsum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!region.data[i]) continue;
    const double t = target.data[i] == kVessel ? 1.0 : 0.0;
    inter += pf[i] * t;
    psum += pf[i];
    tsum += t;
  }
  const double num = 2 * inter + kDiceSmooth;
  const double den = psum + tsum + kDiceSmooth;
  if (grad) {
    T* g = grad->channel(kVessel);
    for (std::size_t i = 0; i < n; ++i) {
      if (!region.data[i]) continue;
      const double t = target.data[i] == kVessel ? 1.0 : 0.0;
      g[i] += static_cast<T>(-scale * (2 * t * den - num) / (den * den));
    }
  }
  return 1.0 - num / den;
}

/// Mean squared difference over region pixels and all channels. The teacher
/// map is a constant: gradients flow to the student map only.
template <typename T>
double masked_consistency(const Tensor3<T>& student, const Tensor3<T>& teacher, const BinaryMask& region,
                          Tensor3<T>* grad = nullptr, double scale = 1.0) {
  if (student.channels != teacher.channels || student.width != teacher.width || student.height != teacher.height ||
      student.width != region.width || student.height != region.height)
    throw ShapeError("masked_consistency: shape mismatch");
  const std::size_t n = student.plane_size();
  const std::size_t count = count_nonzero(region) * static_cast<std::size_t>(student.channels);
  if (count == 0) return 0.0;
  double sum = 0;
  for (int c = 0; c < student.channels; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      if (!region.data[i]) continue;
      const double d = static_cast<double>(student.data[c * n + i]) - static_cast<double>(teacher.data[c * n + i]);
      sum += d * d;
      if (grad) grad->data[c * n + i] += static_cast<T>(scale * 2 * d / static_cast<double>(count));
    }
  return sum / static_cast<double>(count);
}

/// cls + dice + beta1 * idcl_t2s + beta2 * idcl_s2t + gamma * con.
inline LossReport total_loss(LossReport parts, const LossWeights& w) {
  for (double v : {parts.cls, parts.dice, parts.idcl_t2s, parts.idcl_s2t, parts.con})
    if (!std::isfinite(v)) throw NumericError("total_loss: non-finite loss component");
  parts.total = parts.cls + parts.dice + w.beta1 * parts.idcl_t2s + w.beta2 * parts.idcl_s2t + w.gamma * parts.con;
  return parts;
}

}  // namespace ida
