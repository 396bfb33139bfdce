#pragma once

#include <array>
#include <string>
#include <string_view>

#include "ida/data.hpp"

namespace ida {

enum class MaskKind { cutmix, classmix };
enum class PatchSource { sp, tp };

struct PatchBox {
  int x0 = 0, y0 = 0, size = 0;
  friend bool operator==(const PatchBox&, const PatchBox&) = default;
};

/// Binary mixing plane. For cutmix the ones form exactly `box`; for classmix
/// they are a subset of it.
struct MixMask {
  BinaryMask plane;
  MaskKind kind = MaskKind::cutmix;
  PatchBox box;
  PatchSource source_of_ones = PatchSource::sp;
};

/// Direction of one intermediate image. `t2s` pastes target content into a
/// source image; `s2t` pastes source content into a target image.
enum class MixDirection { t2s, s2t };

/// Translation strategies; each names the two intermediate images built per
/// quad. The default pastes source vessels into the target (ClassMix) and a
/// target square into the source (CutMix).
enum class TranslationStrategy {
  s2t_cut,
  t2s_cut,
  s2t_class,
  t2s_class,
  bi_cut,
  bi_class,
  bat_cut_class,  // S2T CutMix + T2S ClassMix
  bat_class_cut,  // S2T ClassMix + T2S CutMix
};

inline constexpr std::array<std::pair<TranslationStrategy, std::string_view>, 8> kStrategyNames{{
    {TranslationStrategy::s2t_cut, "s2t_cut"},
    {TranslationStrategy::t2s_cut, "t2s_cut"},
    {TranslationStrategy::s2t_class, "s2t_class"},
    {TranslationStrategy::t2s_class, "t2s_class"},
    {TranslationStrategy::bi_cut, "bi_cut"},
    {TranslationStrategy::bi_class, "bi_class"},
    {TranslationStrategy::bat_cut_class, "bat_cut_class"},
    {TranslationStrategy::bat_class_cut, "bat_class_cut"},
}};

inline std::string_view to_string(TranslationStrategy s) {
  for (const auto& [k, v] : kStrategyNames)
    if (k == s) return v;
  return "?";
}

inline TranslationStrategy parse_translation_strategy(std::string_view name) {
  for (const auto& [k, v] : kStrategyNames)
    if (v == name) return k;
  throw ConfigError("unknown translation strategy '" + std::string(name) + "'");
}

struct MixRecipe {
  MixDirection direction;
  MaskKind kind;
};

/// The two (direction, mask kind) recipes a strategy uses. Slot 0 plays the
/// role of the source-like image and slot 1 the target-like image in the
/// default strategy; unidirectional strategies fill both slots the same way.
inline std::array<MixRecipe, 2> strategy_recipes(TranslationStrategy s) {
  using D = MixDirection;
  using K = MaskKind;
  switch (s) {
    case TranslationStrategy::s2t_cut: return {{{D::s2t, K::cutmix}, {D::s2t, K::cutmix}}};
    case TranslationStrategy::t2s_cut: return {{{D::t2s, K::cutmix}, {D::t2s, K::cutmix}}};
    case TranslationStrategy::s2t_class: return {{{D::s2t, K::classmix}, {D::s2t, K::classmix}}};
    case TranslationStrategy::t2s_class: return {{{D::t2s, K::classmix}, {D::t2s, K::classmix}}};
    case TranslationStrategy::bi_cut: return {{{D::t2s, K::cutmix}, {D::s2t, K::cutmix}}};
    case TranslationStrategy::bi_class: return {{{D::t2s, K::classmix}, {D::s2t, K::classmix}}};
    case TranslationStrategy::bat_cut_class: return {{{D::t2s, K::classmix}, {D::s2t, K::cutmix}}};
    case TranslationStrategy::bat_class_cut: return {{{D::t2s, K::cutmix}, {D::s2t, K::classmix}}};
  }
  throw ConfigError("unknown translation strategy");
}

/// One m x m square of ones at a uniformly drawn position fully inside W x H.
inline MixMask make_cutmix_mask(int width, int height, int m, Rng& rng) {
  if (m <= 0 || m >= std::min(width, height))
    throw ConfigError("make_cutmix_mask: need 0 < m < min(W, H), got m=" + std::to_string(m));
  std::uniform_int_distribution<int> dx(0, width - m), dy(0, height - m);
  MixMask mask;
  mask.kind = MaskKind::cutmix;
  mask.box = {dx(rng), dy(rng), m};
  mask.plane = BinaryMask(width, height, 0);
  for (int y = mask.box.y0; y < mask.box.y0 + m; ++y)
    std::fill_n(mask.plane.data.begin() + static_cast<std::size_t>(y) * width + mask.box.x0, m, std::uint8_t{1});
  return mask;
}

/// Keep only the foreground (vessel) pixels of `labels` inside the cutmix square.
inline MixMask make_classmix_mask(const MixMask& cut, const LabelMap& labels,
                                  PatchSource source_of_ones = PatchSource::sp) {
  if (cut.kind != MaskKind::cutmix) throw ConfigError("make_classmix_mask: expects a cutmix mask");
  require_same_shape(cut.plane, labels, "make_classmix_mask");
  MixMask out = cut;
  out.kind = MaskKind::classmix;
  out.source_of_ones = source_of_ones;
  for (std::size_t i = 0; i < out.plane.size(); ++i)
    out.plane.data[i] = static_cast<std::uint8_t>(cut.plane.data[i] && labels.data[i] == kVessel);
  return out;
}

/// patch where mask is 1, base elsewhere.
template <typename T>
Plane<T> compose(const Plane<T>& base, const Plane<T>& patch, const BinaryMask& mask) {
  require_same_shape(base, patch, "compose");
  require_same_shape(base, mask, "compose");
  Plane<T> out = base;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask.data[i]) out.data[i] = patch.data[i];
  return out;
}

inline Image compose_image(const Image& base, const Image& patch, const MixMask& mask) {
  return compose(base, patch, mask.plane);
}

inline LabelMap compose_label(const LabelMap& base_label, const LabelMap& patch_label, const MixMask& mask) {
  return compose(base_label, patch_label, mask.plane);
}

/// One mixed training image with its synthetic label. `supervised` marks
/// pixels carrying a ground-truth source label; `consistency` marks pixels
/// compared against the teacher's prediction on `teacher_view`.
struct IntermediateImage {
  MixDirection direction = MixDirection::t2s;
  Image image;
  LabelMap label;
  MixMask mask;
  BinaryMask supervised;
  BinaryMask consistency;
  int teacher_view = 0;  // 0 -> x_tr, 1 -> x_tp
};

/// Slot 0 is x_t2s and slot 1 is x_s2t under the default strategy.
struct IntermediatePair {
  std::array<IntermediateImage, 2> slots;

  const IntermediateImage& t2s() const { return slots[0]; }
  const IntermediateImage& s2t() const { return slots[1]; }
};

inline BinaryMask invert(const BinaryMask& m) {
  BinaryMask out = m;
  for (auto& v : out.data) v = static_cast<std::uint8_t>(!v);
  return out;
}

/// Build one intermediate image in the given direction.
///
/// t2s: x = x_tp * M + x_sr * (1 - M), label = pseudo_tp * M + y_sr * (1 - M);
///      ground truth outside M, teacher consistency (vs. x_tp) inside M.
/// s2t: x = x_sp * M + x_tr * (1 - M), label = y_sp * M + pseudo_tr * (1 - M);
///      ground truth inside M, teacher consistency (vs. x_tr) outside M.
///
/// For ClassMix, M keeps the vessel pixels of the pasted content: y_sp for
/// s2t, the pseudo-label of x_tp for t2s.
inline IntermediateImage make_intermediate(const QuadBatch& q, const LabelMap& pseudo_tr, const LabelMap& pseudo_tp,
                                           MixRecipe recipe, int m, Rng& rng) {
  require_same_shape(q.tr, pseudo_tr, "make_intermediate");
  require_same_shape(q.tp, pseudo_tp, "make_intermediate");
  IntermediateImage out;
  out.direction = recipe.direction;
  MixMask cut = make_cutmix_mask(q.sr.width, q.sr.height, m, rng);
  if (recipe.direction == MixDirection::t2s) {
    cut.source_of_ones = PatchSource::tp;
    out.mask = recipe.kind == MaskKind::cutmix ? cut : make_classmix_mask(cut, pseudo_tp, PatchSource::tp);
    out.image = compose_image(q.sr, q.tp, out.mask);
    out.label = compose_label(q.y_sr, pseudo_tp, out.mask);
    out.supervised = invert(out.mask.plane);
    out.consistency = out.mask.plane;
    out.teacher_view = 1;
  } else {
    cut.source_of_ones = PatchSource::sp;
    out.mask = recipe.kind == MaskKind::cutmix ? cut : make_classmix_mask(cut, q.y_sp, PatchSource::sp);
    out.image = compose_image(q.tr, q.sp, out.mask);
    out.label = compose_label(pseudo_tr, q.y_sp, out.mask);
    out.supervised = out.mask.plane;
    out.consistency = invert(out.mask.plane);
    out.teacher_view = 0;
  }
  return out;
}

/// Both intermediate images for one quad. Each slot draws its own square.
inline IntermediatePair make_intermediate_batch(const QuadBatch& q, const LabelMap& pseudo_tr,
                                                const LabelMap& pseudo_tp, int m, TranslationStrategy strategy,
                                                Rng& rng) {
  const auto recipes = strategy_recipes(strategy);
  IntermediatePair pair;
  for (int s = 0; s < 2; ++s) pair.slots[s] = make_intermediate(q, pseudo_tr, pseudo_tp, recipes[s], m, rng);
  return pair;
}

}  // namespace ida
