#include <gtest/gtest.h>

#include <filesystem>

#include <unistd.h>

#include "desk.hpp"
#include "ida/checkpoint.hpp"

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
  o.iterations = 4;
  o.eval_every = 2;
  o.n_source = 6;
  o.n_source_val = 2;
  o.n_target_train = 4;
  o.n_target_eval = 2;
  o.data_seed = 31;
  return o;
}

const TrainData& data() {
  static const TrainData d = desk::make_desk_data(tiny());
  return d;
}

RunConfig config() {
  auto c = desk::desk_config(tiny(), 3);
  c.batch_size = 2;
  return c;
}

template <typename T>
bool same_params(const ModelState<T>& a, const ModelState<T>& b) {
  if (a.params.size() != b.params.size() || a.iteration != b.iteration) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].values != b.params[i].values || a.params[i].shape != b.params[i].shape ||
        a.params[i].name != b.params[i].name)
      return false;
  return true;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ida_ckpt_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir / name;
}

Checkpoint<float> trained_checkpoint() {
  const auto cfg = config();
  auto st = init_trainer(init_model<float>(cfg.network, 2), data(), cfg);
  auto short_cfg = cfg;
  short_cfg.iterations = 2;
  adapt_loop(st, data(), short_cfg);
  return make_checkpoint(st, cfg);
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto c = trained_checkpoint();
  const auto path = scratch("a.ckpt");
  save_checkpoint(c, path);
  const auto back = load_checkpoint<float>(path);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(c));
  EXPECT_TRUE(same_params(back.student, c.student));
  EXPECT_TRUE(same_params(back.teacher, c.teacher));
  EXPECT_EQ(back.bank, c.bank);
  EXPECT_EQ(back.adam, c.adam);
  EXPECT_EQ(back.history, c.history);
  EXPECT_EQ(to_json(back.config), to_json(c.config));
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
}

TEST(Checkpoint, RejectsCorruptionVersionAndScalarSize) {
  const auto buf = serialize_checkpoint(trained_checkpoint());
  auto flipped = buf;
  flipped[buf.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_checkpoint<float>(flipped), FormatError);

  auto version = buf;
  version[8] = 2;
  EXPECT_THROW(deserialize_checkpoint<float>(version), FormatError);
  try {
    deserialize_checkpoint<float>(version);
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  EXPECT_THROW(deserialize_checkpoint<double>(buf), FormatError);
  EXPECT_THROW(deserialize_checkpoint<float>(buf.substr(0, buf.size() - 9)), FormatError);
  EXPECT_THROW(deserialize_checkpoint<float>("not a checkpoint at all"), FormatError);
  EXPECT_THROW(load_checkpoint<float>(scratch("missing.ckpt")), ConfigError);
}

TEST(Checkpoint, PhaseIsChecked) {
  const auto c = trained_checkpoint();
  EXPECT_THROW(pretrain_state_from(c), ConfigError);
  EXPECT_NO_THROW(trainer_state_from(c));
}

TEST(Resume, AdaptationContinuesBitwise) {
  const auto cfg = config();
  const auto pre = init_model<float>(cfg.network, 2);

  auto straight = init_trainer(pre, data(), cfg);
  adapt_loop(straight, data(), cfg);

  auto half_cfg = cfg;
  half_cfg.iterations = 2;
  auto first = init_trainer(pre, data(), cfg);
  adapt_loop(first, data(), half_cfg);
  const auto path = scratch("resume.ckpt");
  save_checkpoint(make_checkpoint(first, cfg), path);
  auto resumed = trainer_state_from(load_checkpoint<float>(path));
  adapt_loop(resumed, data(), cfg);

  EXPECT_EQ(resumed.iteration, straight.iteration);
  EXPECT_TRUE(same_params(resumed.student, straight.student));
  EXPECT_TRUE(same_params(resumed.teacher, straight.teacher));
  EXPECT_EQ(resumed.bank, straight.bank);
  EXPECT_EQ(resumed.adam, straight.adam);
  EXPECT_EQ(resumed.history.steps, straight.history.steps);
}

TEST(Resume, PretrainingContinuesBitwise) {
  const auto cfg = config();
  auto straight = init_pretrain<float>(cfg);
  pretrain(straight, data(), cfg, PretrainStrategy::self_cut_vcl);

  auto half_cfg = cfg;
  half_cfg.pretrain_iterations = 2;
  auto first = init_pretrain<float>(cfg);
  pretrain(first, data(), half_cfg, PretrainStrategy::self_cut_vcl);
  auto resumed = pretrain_state_from(deserialize_checkpoint<float>(serialize_checkpoint(make_checkpoint(first, cfg))));
  pretrain(resumed, data(), cfg, PretrainStrategy::self_cut_vcl);

  EXPECT_TRUE(same_params(resumed.model, straight.model));
  EXPECT_TRUE(same_params(resumed.best, straight.best));
  EXPECT_EQ(resumed.best_score, straight.best_score);
  EXPECT_EQ(resumed.best_iteration, straight.best_iteration);
  EXPECT_EQ(resumed.history, straight.history);
}

TEST(Rng, StateRoundTrip) {
  Rng a(42);
  a.discard(17);
  Rng b = rng_from_string(rng_to_string(a));
  EXPECT_EQ(a(), b());
  EXPECT_THROW(rng_from_string("garbage"), FormatError);
}
