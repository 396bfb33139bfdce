#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ida/config.hpp"
#include "ida/evaluate.hpp"
#include "ida/idcl.hpp"
#include "ida/losses.hpp"
#include "ida/mrat.hpp"
#include "ida/optim.hpp"
#include "ida/segnet.hpp"

namespace ida {

struct TrainData {
  std::vector<ImageSample> source_train;
  std::vector<ImageSample> source_val;    // pretraining early stopping only
  std::vector<ImageSample> target_train;  // unlabeled
  std::vector<ImageSample> target_eval;   // labeled, reporting only
};

struct StepRecord {
  std::uint64_t iteration = 0;
  LossReport loss;
  double w_t2s = 0, w_s2t = 0;
  double pseudo_fg = 0;  // vessel fraction of the teacher's target pseudo-labels
  double lr = 0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EvalRecord {
  std::uint64_t iteration = 0;
  double dice = 0;
  double cl_dice = 0;

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct History {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;

  friend bool operator==(const History&, const History&) = default;
};

/// Everything that evolves during adaptation.
template <typename T>
struct TrainerState {
  ModelState<T> student, teacher;
  PrototypeBank bank;
  AdamState<T> adam;
  Rng rng;
  std::uint64_t iteration = 0;
  History history;
};

/// Everything that evolves during pretraining. `best` is the snapshot with
/// the highest source-validation Dice so far.
template <typename T>
struct PretrainState {
  ModelState<T> model, best;
  PrototypeBank bank;  // running source prototypes for the contrastive variant
  AdamState<T> adam;
  Rng rng;
  std::uint64_t iteration = 0;
  double best_score = -1;
  std::uint64_t best_iteration = 0;
  History history;
};

template <typename State>
struct LoopHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EvalRecord&)> on_eval;
  std::function<void(const State&)> on_checkpoint;
};

namespace detail {

/// One student input with its synthetic label and loss regions.
struct StreamImage {
  Image image;
  LabelMap label;
  BinaryMask supervised, consistency;
  std::size_t quad = 0;
  int teacher_view = 0;
};

template <typename T>
struct StudentPass {
  Trace<T> trace;
  ForwardOutput<T> out;
  Tensor3<T> dprobs, dfeatures;
};

template <typename T>
void check_finite(const Gradients<T>& g) {
  for (const auto& v : g)
    if (!nn::all_finite(v)) throw NumericError("non-finite gradient");
}

inline ImageSample prepare(const ImageSample& s, bool whole, const PreprocessConfig& pre, Rng& rng) {
  ImageSample out = whole ? resize_whole(s, pre) : random_crop(s, pre, rng);
  return augment(to_grayscale(out, pre), pre, rng);
}

/// Mean feature per class over one stream, labels downsampled to the tap.
template <typename T>
std::vector<ClassStat> stream_stats(const std::vector<StudentPass<T>>& passes, const std::vector<LabelMap>& yds,
                                    int num_classes) {
  std::vector<Tensor3<T>> feats;
  for (const auto& p : passes) feats.push_back(p.out.features);
  std::vector<ClassStat> stats;
  for (int r = 0; r < num_classes; ++r)
    stats.push_back(batch_class_prototype<T>(std::span<const Tensor3<T>>(feats), std::span<const LabelMap>(yds), r));
  return stats;
}

template <typename T>
std::vector<Tensor3<T>> stream_probs(const std::vector<StudentPass<T>>& passes) {
  std::vector<Tensor3<T>> p;
  for (const auto& s : passes) p.push_back(s.out.probabilities);
  return p;
}

}  // namespace detail

/// One adaptation step on `quads` (half-batch of quads, two student images
/// each). Order: teacher pseudo-labels, intermediate images, student passes,
/// prototype update and contrastive terms, supervised and consistency terms,
/// AdamW on the student, EMA into the teacher.
///
/// Without MRAT the two streams are the plain source image with its ground
/// truth and the plain target image with its pseudo-label (self-training).
template <typename T>
StepRecord adapt_step(TrainerState<T>& st, std::span<const QuadBatch> quads, const RunConfig& cfg) {
  const std::size_t half = quads.size();
  if (half == 0) throw ConfigError("adapt_step: empty batch");
  const std::size_t B = 2 * half;
  const int L = cfg.network.num_classes;

  std::vector<std::array<Tensor3<T>, 2>> tprobs(half);
  std::vector<std::array<LabelMap, 2>> pseudo(half);
  double pseudo_fg = 0;
  for (std::size_t q = 0; q < half; ++q) {
    tprobs[q][0] = forward(st.teacher, convert_plane<T>(quads[q].tr)).probabilities;
    tprobs[q][1] = forward(st.teacher, convert_plane<T>(quads[q].tp)).probabilities;
    for (int v = 0; v < 2; ++v) {
      pseudo[q][v] = argmax_labels(tprobs[q][v]);
      pseudo_fg += static_cast<double>(count_nonzero(pseudo[q][v])) / static_cast<double>(pseudo[q][v].size());
    }
  }
  pseudo_fg /= static_cast<double>(2 * half);

  std::array<std::vector<detail::StreamImage>, 2> streams;
  for (std::size_t q = 0; q < half; ++q) {
    const auto& qb = quads[q];
    if (cfg.toggles.mrat) {
      const auto pair = make_intermediate_batch(qb, pseudo[q][0], pseudo[q][1], cfg.m, cfg.strategy, st.rng);
      for (int s = 0; s < 2; ++s) {
        const auto& im = pair.slots[s];
        streams[s].push_back({im.image, im.label, im.supervised, im.consistency, q, im.teacher_view});
      }
    } else {
      const BinaryMask all(qb.sr.width, qb.sr.height, 1), none(qb.sr.width, qb.sr.height, 0);
      streams[0].push_back({qb.sr, qb.y_sr, all, none, q, 0});
      streams[1].push_back({qb.tr, pseudo[q][0], all, none, q, 0});
    }
  }

  std::array<std::vector<detail::StudentPass<T>>, 2> passes;
  std::array<std::vector<LabelMap>, 2> yds;
  for (int s = 0; s < 2; ++s)
    for (const auto& im : streams[s]) {
      detail::StudentPass<T> p;
      p.out = forward_train(st.student, convert_plane<T>(im.image), p.trace);
      p.dprobs = Tensor3<T>(p.out.probabilities.channels, p.out.probabilities.height, p.out.probabilities.width);
      p.dfeatures = Tensor3<T>(p.out.features.channels, p.out.features.height, p.out.features.width);
      yds[s].push_back(downsample_labels(im.label, {p.out.features.width, p.out.features.height}));
      passes[s].push_back(std::move(p));
    }

  StepRecord rec;
  LossReport parts;
  if (cfg.toggles.idcl) {
    const auto p0 = detail::stream_probs(passes[0]), p1 = detail::stream_probs(passes[1]);
    rec.w_t2s = confidence_weight<T>(std::span<const Tensor3<T>>(p0), cfg.contrast.th_t2s);
    rec.w_s2t = confidence_weight<T>(std::span<const Tensor3<T>>(p1), cfg.contrast.th_s2t);
    st.bank = update_prototypes(st.bank, detail::stream_stats(passes[0], yds[0], L),
                                detail::stream_stats(passes[1], yds[1], L), rec.w_t2s, rec.w_s2t);
    const std::array<double, 2> beta{cfg.weights.beta1, cfg.weights.beta2};
    std::array<double, 2> idcl{0, 0};
    for (int s = 0; s < 2; ++s)
      for (std::size_t i = 0; i < passes[s].size(); ++i) {
        auto& p = passes[s][i];
        idcl[s] += contrastive_loss(p.out.features, yds[s][i], st.bank, cfg.contrast, &p.dfeatures,
                                    beta[s] / static_cast<double>(half));
      }
    parts.idcl_t2s = idcl[0] / static_cast<double>(half);
    parts.idcl_s2t = idcl[1] / static_cast<double>(half);
  }

  const double inv_b = 1.0 / static_cast<double>(B);
  for (int s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < passes[s].size(); ++i) {
      auto& p = passes[s][i];
      const auto& im = streams[s][i];
      parts.cls += masked_cross_entropy(p.out.probabilities, im.label, im.supervised, &p.dprobs, inv_b) * inv_b;
      parts.dice += masked_dice(p.out.probabilities, im.label, im.supervised, &p.dprobs, inv_b) * inv_b;
      parts.con += masked_consistency(p.out.probabilities, tprobs[im.quad][im.teacher_view], im.consistency,
                                      &p.dprobs, cfg.weights.gamma * inv_b) *
                   inv_b;
    }
  rec.loss = total_loss(parts, cfg.weights);

  auto grads = zero_gradients(st.student);
  for (int s = 0; s < 2; ++s)
    for (auto& p : passes[s])
      backward(st.student, p.trace, p.dprobs, cfg.toggles.idcl ? &p.dfeatures : nullptr, grads);
  detail::check_finite(grads);

  rec.lr = scheduled_lr(cfg.optimizer, st.iteration, cfg.iterations);
  adamw_step(st.student, grads, st.adam, cfg.optimizer, rec.lr);
  ema_update(st.teacher, st.student, cfg.ema_lambda);
  ++st.iteration;
  rec.iteration = st.iteration;
  rec.pseudo_fg = pseudo_fg;
  return rec;
}

/// Student and teacher both start from the pretrained weights; prototypes
/// from the pretrained model's source features.
template <typename T>
TrainerState<T> init_trainer(const ModelState<T>& pretrained, const TrainData& data, const RunConfig& cfg) {
  TrainerState<T> st;
  st.student = pretrained;
  st.teacher = pretrained;
  st.student.iteration = st.teacher.iteration = 0;
  if (cfg.toggles.idcl) st.bank = init_prototypes(pretrained, data.source_train, cfg.preprocess);
  st.adam = make_adam_state(st.student);
  st.rng.seed(derive_seed(cfg.seed, 1));
  return st;
}

template <typename T>
EvalRecord evaluate_record(const ModelState<T>& m, const std::vector<ImageSample>& eval, const RunConfig& cfg,
                           std::uint64_t iteration) {
  const auto rep = evaluate_dataset(m, eval, cfg.preprocess);
  return {iteration, rep.dice(), rep.mean(5)};
}

struct LoopReport {
  std::vector<std::string> warnings;
};

/// Run steps until cfg.iterations. Evaluation on target_eval (teacher) runs
/// every eval_every steps and after the last one; it never feeds training.
template <typename T>
LoopReport adapt_loop(TrainerState<T>& st, const TrainData& data, const RunConfig& cfg,
                      const LoopHooks<TrainerState<T>>& hooks = {}) {
  cfg.validate();
  LoopReport report;
  if (!cfg.toggles.self_training) {
    if (cfg.iterations > 0) report.warnings.push_back("self_training disabled: adaptation skipped");
    return report;
  }
  if (data.source_train.empty() || data.target_train.empty())
    throw ConfigError("adapt_loop: source and target training sets must be non-empty");
  std::uint64_t degenerate = 0, steps = 0;
  auto eval_now = [&] {
    if (data.target_eval.empty()) return;
    const auto e = evaluate_record(st.teacher, data.target_eval, cfg, st.iteration);
    st.history.evals.push_back(e);
    if (hooks.on_eval) hooks.on_eval(e);
  };
  while (st.iteration < cfg.iterations) {
    std::vector<QuadBatch> quads;
    for (int q = 0; q < cfg.half_batch(); ++q)
      quads.push_back(sample_quad(data.source_train, data.target_train, cfg.preprocess, st.rng, cfg.input));
    const auto rec = adapt_step(st, std::span<const QuadBatch>(quads), cfg);
    st.history.steps.push_back(rec);
    ++steps;
    if (rec.pseudo_fg == 0) ++degenerate;
    if (hooks.on_step) hooks.on_step(rec);
    const bool last = st.iteration == cfg.iterations;
    if ((cfg.eval_every > 0 && st.iteration % cfg.eval_every == 0) || last) eval_now();
    if (hooks.on_checkpoint && ((cfg.checkpoint_every > 0 && st.iteration % cfg.checkpoint_every == 0) || last))
      hooks.on_checkpoint(st);
  }
  if (steps > 0 && static_cast<double>(degenerate) > 0.95 * static_cast<double>(steps))
    report.warnings.push_back("teacher pseudo-labels were all background in " + std::to_string(degenerate) + " of " +
                              std::to_string(steps) + " steps (degenerate adaptation)");
  return report;
}

template <typename T>
PretrainState<T> init_pretrain(const RunConfig& cfg) {
  PretrainState<T> st;
  st.model = init_model<T>(cfg.network, derive_seed(cfg.seed, 0));
  st.best = st.model;
  st.adam = make_adam_state(st.model);
  st.rng.seed(derive_seed(cfg.seed, 2));
  st.bank.vectors.assign(cfg.network.num_classes, std::vector<double>(cfg.network.feature_dim(), 0.0));
  return st;
}

/// One supervised pretraining step on half-batch (x_sr, x_sp) pairs.
/// self_cut pastes a square of x_sp into x_sr; vcl adds a contrastive term
/// against running source prototypes (batch class means, carried over for
/// classes absent from the batch).
template <typename T>
StepRecord pretrain_step(PretrainState<T>& st, const std::vector<ImageSample>& source, const RunConfig& cfg,
                         PretrainStrategy strategy) {
  const bool self_cut = strategy == PretrainStrategy::self_cut || strategy == PretrainStrategy::self_cut_vcl;
  const bool vcl = strategy == PretrainStrategy::vcl || strategy == PretrainStrategy::self_cut_vcl;
  const int half = cfg.half_batch();
  const int L = cfg.network.num_classes;
  std::uniform_int_distribution<std::size_t> pick(0, source.size() - 1);

  std::vector<Image> images;
  std::vector<LabelMap> labels;
  for (int q = 0; q < half; ++q) {
    const std::size_t i = pick(st.rng), j = pick(st.rng);
    const bool whole_first = cfg.input != InputStrategy::patch;
    const bool whole_second = cfg.input == InputStrategy::whole;
    ImageSample sr = detail::prepare(source[i], whole_first, cfg.preprocess, st.rng);
    ImageSample sp = detail::prepare(source[j], whole_second, cfg.preprocess, st.rng);
    Image xr = to_plane(sr);
    LabelMap yr = *sr.label;
    const Image xp = to_plane(sp);
    if (self_cut) {
      const MixMask M = make_cutmix_mask(xr.width, xr.height, cfg.m, st.rng);
      xr = compose_image(xr, xp, M);
      yr = compose_label(yr, *sp.label, M);
    }
    images.push_back(std::move(xr));
    labels.push_back(std::move(yr));
    images.push_back(xp);
    labels.push_back(*sp.label);
  }

  const std::size_t B = images.size();
  const double inv_b = 1.0 / static_cast<double>(B);
  std::vector<detail::StudentPass<T>> passes(B);
  std::vector<LabelMap> yds;
  LossReport parts;
  for (std::size_t i = 0; i < B; ++i) {
    auto& p = passes[i];
    p.out = forward_train(st.model, convert_plane<T>(images[i]), p.trace);
    p.dprobs = Tensor3<T>(p.out.probabilities.channels, p.out.probabilities.height, p.out.probabilities.width);
    p.dfeatures = Tensor3<T>(p.out.features.channels, p.out.features.height, p.out.features.width);
    const BinaryMask all(images[i].width, images[i].height, 1);
    parts.cls += masked_cross_entropy(p.out.probabilities, labels[i], all, &p.dprobs, inv_b) * inv_b;
    parts.dice += masked_dice(p.out.probabilities, labels[i], all, &p.dprobs, inv_b) * inv_b;
    yds.push_back(downsample_labels(labels[i], {p.out.features.width, p.out.features.height}));
  }
  if (vcl) {
    const auto stats = detail::stream_stats(passes, yds, L);
    const std::vector<ClassStat> none(L);
    st.bank = update_prototypes(st.bank, stats, none, 1.0, 0.0);
    for (std::size_t i = 0; i < B; ++i)
      parts.idcl_t2s += contrastive_loss(passes[i].out.features, yds[i], st.bank, cfg.contrast, &passes[i].dfeatures,
                                         cfg.weights.beta1 * inv_b) *
                        inv_b;
  }
  StepRecord rec;
  rec.loss = total_loss(parts, cfg.weights);
  auto grads = zero_gradients(st.model);
  for (auto& p : passes) backward(st.model, p.trace, p.dprobs, vcl ? &p.dfeatures : nullptr, grads);
  detail::check_finite(grads);
  rec.lr = scheduled_lr(cfg.optimizer, st.iteration, cfg.pretrain_iterations);
  adamw_step(st.model, grads, st.adam, cfg.optimizer, rec.lr);
  ++st.iteration;
  rec.iteration = st.iteration;
  return rec;
}

/// Supervised source training for cfg.pretrain_iterations steps, keeping the
/// snapshot with the best source-validation Dice (the final state when no
/// validation images are given).
template <typename T>
void pretrain(PretrainState<T>& st, const TrainData& data, const RunConfig& cfg, PretrainStrategy strategy,
              const LoopHooks<PretrainState<T>>& hooks = {}) {
  cfg.validate();
  if (data.source_train.empty()) throw ConfigError("pretrain: empty source training set");
  for (const auto& s : data.source_train)
    if (!s.label) throw ConfigError("pretrain: unlabeled source sample " + s.id);
  auto validate_now = [&] {
    if (data.source_val.empty()) {
      st.best = st.model;
      st.best_iteration = st.iteration;
      return;
    }
    const auto e = evaluate_record(st.model, data.source_val, cfg, st.iteration);
    st.history.evals.push_back(e);
    if (hooks.on_eval) hooks.on_eval(e);
    if (e.dice > st.best_score) {
      st.best_score = e.dice;
      st.best = st.model;
      st.best_iteration = st.iteration;
    }
  };
  if (st.iteration == 0 && st.history.evals.empty()) validate_now();
  while (st.iteration < cfg.pretrain_iterations) {
    const auto rec = pretrain_step(st, data.source_train, cfg, strategy);
    st.history.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    const bool last = st.iteration == cfg.pretrain_iterations;
    if ((cfg.eval_every > 0 && st.iteration % cfg.eval_every == 0) || last) validate_now();
    if (hooks.on_checkpoint && ((cfg.checkpoint_every > 0 && st.iteration % cfg.checkpoint_every == 0) || last))
      hooks.on_checkpoint(st);
  }
}

/// Strategy actually used for pretraining under the toggles.
inline PretrainStrategy effective_pretrain_strategy(const RunConfig& cfg) {
  return cfg.toggles.pretraining ? cfg.pretrain_strategy : PretrainStrategy::random;
}

}  // namespace ida
