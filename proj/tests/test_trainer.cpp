#include <gtest/gtest.h>

#include "desk.hpp"

using namespace ida;

namespace {

desk::DeskOptions tiny() {
  desk::DeskOptions o;
  o.image_size = 40;
  o.train_size = 32;
  o.depth = 2;
  o.base_channels = 4;
  o.m = 8;
  o.pretrain_iterations = 4;
  o.iterations = 3;
  o.eval_every = 2;
  o.n_source = 8;
  o.n_source_val = 2;
  o.n_target_train = 6;
  o.n_target_eval = 3;
  o.data_seed = 77;
  return o;
}

const TrainData& data() {
  static const TrainData d = desk::make_desk_data(tiny());
  return d;
}

RunConfig config(std::uint64_t seed = 1) {
  auto c = desk::desk_config(tiny(), seed);
  c.batch_size = 2;
  return c;
}

template <typename T>
bool same_params(const ModelState<T>& a, const ModelState<T>& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].values != b.params[i].values) return false;
  return true;
}

ModelState<float> pretrained() { return init_model<float>(config().network, 5); }

std::vector<QuadBatch> quads(const RunConfig& cfg, Rng& rng) {
  std::vector<QuadBatch> q;
  for (int i = 0; i < cfg.half_batch(); ++i)
    q.push_back(sample_quad(data().source_train, data().target_train, cfg.preprocess, rng, cfg.input));
  return q;
}

}  // namespace

TEST(AdaptStep, TotalIsWeightedSumOfParts) {
  auto cfg = config();
  cfg.weights = {0.7, 1.3, 0.9};
  auto st = init_trainer(pretrained(), data(), cfg);
  Rng rng(3);
  for (int t = 0; t < 2; ++t) {
    const auto q = quads(cfg, rng);
    const auto rec = adapt_step(st, std::span<const QuadBatch>(q), cfg);
    const auto& l = rec.loss;
    EXPECT_EQ(l.total, l.cls + l.dice + 0.7 * l.idcl_t2s + 1.3 * l.idcl_s2t + 0.9 * l.con);
    EXPECT_GT(l.cls, 0.0);
    EXPECT_GT(l.idcl_t2s, 0.0);
    EXPECT_GT(l.idcl_s2t, 0.0);
    EXPECT_GE(rec.w_t2s, 0.0);
    EXPECT_LE(rec.w_s2t, 1.0);
    EXPECT_EQ(rec.iteration, static_cast<std::uint64_t>(t + 1));
  }
  EXPECT_EQ(st.bank.iteration, 2u);
}

TEST(AdaptStep, TeacherOnlyMovesThroughEma) {
  auto cfg = config();
  cfg.ema_lambda = 1.0;
  const auto pre = pretrained();
  auto st = init_trainer(pre, data(), cfg);
  Rng rng(4);
  for (int t = 0; t < 3; ++t) {
    const auto q = quads(cfg, rng);
    adapt_step(st, std::span<const QuadBatch>(q), cfg);
  }
  EXPECT_TRUE(same_params(st.teacher, pre));
  EXPECT_FALSE(same_params(st.student, pre));
}

TEST(AdaptStep, TeacherFollowsEmaOfStudent) {
  auto cfg = config();
  cfg.ema_lambda = 0.75;
  auto st = init_trainer(pretrained(), data(), cfg);
  const auto t0 = st.teacher;
  Rng rng(5);
  const auto q = quads(cfg, rng);
  adapt_step(st, std::span<const QuadBatch>(q), cfg);
  for (std::size_t i = 0; i < t0.params.size(); ++i)
    for (std::size_t k = 0; k < t0.params[i].values.size(); ++k) {
      const double expect = 0.75 * t0.params[i].values[k] + 0.25 * st.student.params[i].values[k];
      ASSERT_NEAR(st.teacher.params[i].values[k], expect, 1e-6);
    }
}

TEST(AdaptStep, SelfTrainingOnlyHasNoMixedTerms) {
  auto cfg = config();
  cfg.toggles.mrat = false;
  cfg.toggles.idcl = false;
  auto st = init_trainer(pretrained(), data(), cfg);
  EXPECT_EQ(st.bank.num_classes(), 0);
  Rng rng(6);
  const auto q = quads(cfg, rng);
  const auto rec = adapt_step(st, std::span<const QuadBatch>(q), cfg);
  EXPECT_EQ(rec.loss.idcl_t2s, 0.0);
  EXPECT_EQ(rec.loss.idcl_s2t, 0.0);
  EXPECT_EQ(rec.loss.con, 0.0);
  EXPECT_GT(rec.loss.cls, 0.0);
}

TEST(AdaptLoop, ZeroIterationsReturnsPretrained) {
  auto cfg = config();
  cfg.iterations = 0;
  const auto pre = pretrained();
  auto st = init_trainer(pre, data(), cfg);
  const auto rep = adapt_loop(st, data(), cfg);
  EXPECT_TRUE(rep.warnings.empty());
  EXPECT_TRUE(same_params(st.teacher, pre));
  EXPECT_TRUE(same_params(st.student, pre));
  EXPECT_TRUE(st.history.steps.empty());
}

TEST(AdaptLoop, SelfTrainingOffSkipsAdaptation) {
  auto cfg = config();
  cfg.toggles = {false, false, false, true};
  const auto pre = pretrained();
  auto st = init_trainer(pre, data(), cfg);
  const auto rep = adapt_loop(st, data(), cfg);
  EXPECT_EQ(rep.warnings.size(), 1u);
  EXPECT_TRUE(same_params(st.teacher, pre));
  cfg.toggles.mrat = true;
  EXPECT_THROW(adapt_loop(st, data(), cfg), ConfigError);
}

TEST(AdaptLoop, HooksEvalScheduleAndDeterminism) {
  const auto cfg = config(9);
  const auto pre = pretrained();
  auto a = init_trainer(pre, data(), cfg), b = init_trainer(pre, data(), cfg);
  std::vector<std::uint64_t> evals, ckpts;
  int steps = 0;
  LoopHooks<TrainerState<float>> hooks;
  hooks.on_step = [&](const StepRecord&) { ++steps; };
  hooks.on_eval = [&](const EvalRecord& e) { evals.push_back(e.iteration); };
  hooks.on_checkpoint = [&](const TrainerState<float>& s) { ckpts.push_back(s.iteration); };
  adapt_loop(a, data(), cfg, hooks);
  adapt_loop(b, data(), cfg);
  EXPECT_EQ(steps, 3);
  EXPECT_EQ(evals, (std::vector<std::uint64_t>{2, 3}));
  EXPECT_EQ(ckpts, (std::vector<std::uint64_t>{3}));
  EXPECT_TRUE(same_params(a.student, b.student));
  EXPECT_TRUE(same_params(a.teacher, b.teacher));
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.bank, b.bank);

  auto c = init_trainer(pre, data(), config(10));
  adapt_loop(c, data(), config(10));
  EXPECT_FALSE(same_params(a.student, c.student));
}

TEST(AdaptLoop, EvaluationDoesNotAffectTraining) {
  auto cfg = config();
  auto no_eval = data();
  no_eval.target_eval.clear();
  const auto pre = pretrained();
  auto a = init_trainer(pre, data(), cfg), b = init_trainer(pre, no_eval, cfg);
  adapt_loop(a, data(), cfg);
  adapt_loop(b, no_eval, cfg);
  EXPECT_TRUE(same_params(a.student, b.student));
  EXPECT_EQ(a.history.steps, b.history.steps);
  EXPECT_TRUE(b.history.evals.empty());
}

TEST(Pretrain, KeepsBestValidationSnapshot) {
  auto cfg = config();
  cfg.pretrain_iterations = 6;
  cfg.eval_every = 2;
  for (auto s : {PretrainStrategy::random, PretrainStrategy::self_cut_vcl}) {
    auto st = init_pretrain<float>(cfg);
    pretrain(st, data(), cfg, s);
    ASSERT_EQ(st.history.evals.size(), 4u);  // 0, 2, 4, 6
    EXPECT_EQ(st.history.evals.front().iteration, 0u);
    double best = -1;
    std::uint64_t at = 0;
    for (const auto& e : st.history.evals)
      if (e.dice > best) {
        best = e.dice;
        at = e.iteration;
      }
    EXPECT_EQ(st.best_score, best);
    EXPECT_EQ(st.best_iteration, at);
    const auto again = evaluate_record(st.best, data().source_val, cfg, 0);
    EXPECT_EQ(again.dice, best);
    EXPECT_EQ(st.history.steps.size(), 6u);
  }
}

TEST(Pretrain, VclMaintainsPrototypeBank) {
  auto cfg = config();
  auto st = init_pretrain<float>(cfg);
  pretrain_step(st, data().source_train, cfg, PretrainStrategy::vcl);
  EXPECT_EQ(st.bank.iteration, 1u);
  double norm = 0;
  for (double v : st.bank.vectors[0]) norm += v * v;
  EXPECT_GT(norm, 0.0);
  auto plain = init_pretrain<float>(cfg);
  const auto rec = pretrain_step(plain, data().source_train, cfg, PretrainStrategy::random);
  EXPECT_EQ(plain.bank.iteration, 0u);
  EXPECT_EQ(rec.loss.idcl_t2s, 0.0);
}

TEST(Pretrain, ToggleOffMeansRandomStrategy) {
  auto cfg = config();
  EXPECT_EQ(effective_pretrain_strategy(cfg), PretrainStrategy::self_cut_vcl);
  cfg.toggles.pretraining = false;
  EXPECT_EQ(effective_pretrain_strategy(cfg), PretrainStrategy::random);
}

TEST(Pretrain, RejectsUnlabeledSource) {
  auto d = data();
  d.source_train[0].label.reset();
  auto st = init_pretrain<float>(config());
  EXPECT_THROW(pretrain(st, d, config(), PretrainStrategy::random), ConfigError);
}
