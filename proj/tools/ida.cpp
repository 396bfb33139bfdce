// ida: synthetic data, pretraining, adaptation and evaluation from the shell.
//
// Data root layout used by pretrain/adapt:
//   <data>/source/train  labeled
//   <data>/source/val    labeled, optional
//   <data>/target/train  unlabeled
//   <data>/target/test   labeled, optional (evaluation only)
// Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ida/checkpoint.hpp"
#include "ida/dataset_io.hpp"
#include "ida/evaluate.hpp"
#include "ida/synthetic.hpp"

namespace fs = std::filesystem;
using namespace ida;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json_atomic(const fs::path& path, const Json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

/// Options shared by the training commands; every field left unset keeps
/// the layered config value.
struct CommonOptions {
  std::string config_file;
  std::vector<std::string> sets;  // key=value
  std::string data, out;
  std::optional<std::uint64_t> seed, iterations, eval_every, checkpoint_every;
  std::optional<int> batch_size, train_size;
  std::optional<double> lr;
  std::string resume;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--data", o.data, "data root (source/ and target/ splits)")->required();
  cmd->add_option("--out", o.out, "run directory")->required();
  cmd->add_option("--config", o.config_file, "flat JSON config file");
  cmd->add_option("--set", o.sets, "override any config key: key=value (repeatable)");
  cmd->add_option("--seed", o.seed);
  cmd->add_option("--iterations", o.iterations, "training steps");
  cmd->add_option("--eval-every", o.eval_every);
  cmd->add_option("--checkpoint-every", o.checkpoint_every);
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--train-size", o.train_size, "network input side length");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--resume", o.resume, "continue from a checkpoint of the same phase");
}

Json common_flags(const CommonOptions& o, const std::string& iterations_key) {
  Json f = Json::object();
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    f[s.substr(0, eq)] = parse_scalar(s.substr(eq + 1));
  }
  if (o.seed) f["seed"] = *o.seed;
  if (o.iterations) f[iterations_key] = *o.iterations;
  if (o.eval_every) f["eval_every"] = *o.eval_every;
  if (o.checkpoint_every) f["checkpoint_every"] = *o.checkpoint_every;
  if (o.batch_size) f["batch_size"] = *o.batch_size;
  if (o.train_size) f["train_size"] = *o.train_size;
  if (o.lr) f["optimizer.lr"] = *o.lr;
  return f;
}

std::vector<ImageSample> load_split(const fs::path& root, Domain d, Split s, bool required) {
  if (!fs::exists(root / "images")) {
    if (required) throw ConfigError("missing dataset directory " + (root / "images").string());
    return {};
  }
  auto res = load_dataset(root, d, s);
  for (const auto& w : res.warnings) spdlog::warn("{}", w);
  for (const auto& r : res.rejected) spdlog::warn("rejected {}", r);
  if (required && res.samples.empty()) throw ConfigError("no usable images in " + root.string());
  spdlog::info("loaded {} images from {}", res.samples.size(), root.string());
  return std::move(res.samples);
}

/// Per-step and per-evaluation CSV logs, appended as training runs.
class RunLog {
 public:
  explicit RunLog(const fs::path& dir, bool append)
      : steps_(dir / "steps.csv", append ? std::ios::app : std::ios::trunc),
        evals_(dir / "evals.csv", append ? std::ios::app : std::ios::trunc) {
    if (!steps_ || !evals_) throw ConfigError("cannot write logs in " + dir.string());
    if (!append) {
      steps_ << "iteration,total,cls,dice,idcl_t2s,idcl_s2t,con,w_t2s,w_s2t,pseudo_fg,lr\n";
      evals_ << "iteration,dice,cldice\n";
    }
    steps_ << std::setprecision(10);
    evals_ << std::setprecision(10);
  }

  void step(const StepRecord& r) {
    const auto& l = r.loss;
    steps_ << r.iteration << ',' << l.total << ',' << l.cls << ',' << l.dice << ',' << l.idcl_t2s << ','
           << l.idcl_s2t << ',' << l.con << ',' << r.w_t2s << ',' << r.w_s2t << ',' << r.pseudo_fg << ',' << r.lr
           << '\n';
    if (r.iteration % 50 == 0)
      spdlog::info("step {} loss {:.4f} (cls {:.4f} dice {:.4f} con {:.4f} idcl {:.4f}/{:.4f})", r.iteration, l.total,
                   l.cls, l.dice, l.con, l.idcl_t2s, l.idcl_s2t);
  }

  void eval(const EvalRecord& e) {
    evals_ << e.iteration << ',' << e.dice << ',' << e.cl_dice << '\n';
    evals_.flush();
    spdlog::info("eval @{}: dice {:.4f} cldice {:.4f}", e.iteration, e.dice, e.cl_dice);
  }

 private:
  std::ofstream steps_, evals_;
};

Json manifest(const std::string& command, const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
              const Json& inputs, const Json& outputs) {
  return {{"command", command},   {"version", kToolVersion}, {"config", to_json(cfg)}, {"seeds", seeds},
          {"inputs", inputs},     {"outputs", outputs},      {"start", utc_now()}};
}

void finish(const fs::path& dir, const Json& extra = Json::object()) {
  Json s = extra;
  s["end"] = utc_now();
  s["status"] = "completed";
  write_json_atomic(dir / "status.json", s);
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  std::string out;
  int n = 0, n_val = 4, n_eval = 20, size = 192;
  std::uint64_t seed = 0;
};

struct DomainStats {
  double mean_intensity = 0, vessel_fraction = 0, contrast = 0;
};

DomainStats domain_stats(const std::vector<ImageSample>& xs) {
  DomainStats s;
  const PreprocessConfig pre;
  for (const auto& x : xs) {
    const auto g = to_grayscale(x, pre);
    double fg = 0, bg = 0, all = 0;
    std::size_t nf = 0;
    for (std::size_t i = 0; i < g.pixels.data.size(); ++i) {
      const double v = g.pixels.data[i];
      all += v;
      if (x.label->data[i]) {
        fg += v;
        ++nf;
      } else {
        bg += v;
      }
    }
    const std::size_t n = g.pixels.data.size();
    s.mean_intensity += all / n;
    s.vessel_fraction += static_cast<double>(nf) / n;
    if (nf > 0 && nf < n) s.contrast += bg / (n - nf) - fg / nf;
  }
  const double k = xs.empty() ? 1.0 : static_cast<double>(xs.size());
  s.mean_intensity /= k;
  s.vessel_fraction /= k;
  s.contrast /= k;
  return s;
}

int cmd_synth(const SynthOptions& o) {
  if (o.n <= 0) throw ConfigError("--n must be positive");
  if (o.n_val < 0 || o.n_eval < 0) throw ConfigError("--n-val and --n-eval must be >= 0");
  DomainStyle src = retina_like_style(), tgt = cam_like_style();
  src.size = tgt.size = {o.size, o.size};
  const fs::path root = o.out;
  Rng rs(derive_seed(o.seed, 100)), rt(derive_seed(o.seed, 200)), re(derive_seed(o.seed, 300));
  auto source = generate_synthetic_domain(src, o.n + o.n_val, rs, Domain::source, "src");
  auto target = generate_synthetic_domain(tgt, o.n, rt, Domain::target, "tgt");
  auto eval = generate_synthetic_domain(tgt, o.n_eval, re, Domain::target, "tev");

  const DomainStats ss = domain_stats(source), ts = domain_stats(target);
  const std::vector<ImageSample> val(source.end() - o.n_val, source.end());
  source.resize(static_cast<std::size_t>(o.n));
  for (auto& t : target) t.label.reset();

  for (const auto& d : {"source/train", "source/val", "target/train", "target/test"}) fs::remove_all(root / d);
  save_dataset(root / "source" / "train", source);
  if (!val.empty()) save_dataset(root / "source" / "val", val);
  save_dataset(root / "target" / "train", target);
  if (!eval.empty()) save_dataset(root / "target" / "test", eval);

  std::printf("%-8s %6s %10s %10s %10s\n", "domain", "images", "mean", "vessels", "contrast");
  std::printf("%-8s %6d %10.4f %10.4f %10.4f\n", "source", o.n + o.n_val, ss.mean_intensity, ss.vessel_fraction,
              ss.contrast);
  std::printf("%-8s %6d %10.4f %10.4f %10.4f\n", "target", o.n + o.n_eval, ts.mean_intensity, ts.vessel_fraction,
              ts.contrast);
  std::printf("mean intensity gap %.4f\n", std::abs(ss.mean_intensity - ts.mean_intensity));
  return 0;
}

// ---------------------------------------------------------------- pretrain

int cmd_pretrain(const CommonOptions& o, const std::string& strategy_name) {
  Json flags = common_flags(o, "pretrain_iterations");
  if (!strategy_name.empty()) flags["pretrain_strategy"] = strategy_name;
  const RunConfig cfg = resolve_config(RunConfig{}, o.config_file, flags);
  const PretrainStrategy strategy = effective_pretrain_strategy(cfg);
  const fs::path data = o.data, out = o.out;

  TrainData d;
  d.source_train = load_split(data / "source" / "train", Domain::source, Split::train, true);
  d.source_val = load_split(data / "source" / "val", Domain::source, Split::val, false);
  fs::create_directories(out);

  PretrainState<float> st = o.resume.empty() ? init_pretrain<float>(cfg)
                                             : pretrain_state_from(load_checkpoint<float>(o.resume));
  write_json_atomic(out / "manifest.json",
                    manifest("pretrain", cfg, {cfg.seed},
                             {{"data", data.string()}, {"strategy", to_string(strategy)}, {"resume", o.resume}},
                             {{"checkpoint", (out / "checkpoint.ckpt").string()}, {"steps", "steps.csv"},
                              {"evals", "evals.csv"}}));
  write_json_atomic(out / "config.json", to_json(cfg));

  RunLog log(out, !o.resume.empty());
  LoopHooks<PretrainState<float>> hooks;
  hooks.on_step = [&](const StepRecord& r) { log.step(r); };
  hooks.on_eval = [&](const EvalRecord& e) { log.eval(e); };
  hooks.on_checkpoint = [&](const PretrainState<float>& s) {
    save_checkpoint(make_checkpoint(s, cfg), out / "checkpoint.ckpt");
  };
  spdlog::info("pretraining ({}) for {} steps", to_string(strategy), cfg.pretrain_iterations);
  pretrain(st, d, cfg, strategy, hooks);
  save_checkpoint(make_checkpoint(st, cfg), out / "checkpoint.ckpt");
  finish(out, {{"best_iteration", st.best_iteration}, {"best_source_val_dice", st.best_score}});
  spdlog::info("best source-val dice {:.4f} at step {}", st.best_score, st.best_iteration);
  return 0;
}

// ---------------------------------------------------------------- adapt

struct AdaptOptions {
  std::string pretrained, strategy, input;
  std::optional<int> m;
  std::optional<double> th_t2s, th_s2t, beta1, beta2, gamma;
  bool no_mrat = false, no_idcl = false;
  int seeds = 1;
};

int cmd_adapt(const CommonOptions& o, const AdaptOptions& a) {
  Json flags = common_flags(o, "iterations");
  if (!a.strategy.empty()) flags["strategy"] = a.strategy;
  if (!a.input.empty()) flags["input"] = a.input;
  if (a.m) flags["m"] = *a.m;
  if (a.th_t2s) flags["th_t2s"] = *a.th_t2s;
  if (a.th_s2t) flags["th_s2t"] = *a.th_s2t;
  if (a.gamma) flags["gamma"] = *a.gamma;
  if (a.no_mrat) flags["toggles.mrat"] = false;
  if (a.no_idcl) {
    flags["toggles.idcl"] = false;
    if (a.beta1 || a.beta2) spdlog::warn("--no-idcl given: --beta1/--beta2 are ignored");
  } else {
    if (a.beta1) flags["beta1"] = *a.beta1;
    if (a.beta2) flags["beta2"] = *a.beta2;
  }
  if (a.seeds < 1) throw ConfigError("--seeds must be >= 1");
  if (a.seeds > 1 && !o.resume.empty()) throw ConfigError("--resume works with a single seed");
  const RunConfig base = resolve_config(RunConfig{}, o.config_file, flags);
  const fs::path data = o.data, out = o.out;

  TrainData d;
  d.source_train = load_split(data / "source" / "train", Domain::source, Split::train, true);
  d.target_train = load_split(data / "target" / "train", Domain::target, Split::train, true);
  d.target_eval = load_split(data / "target" / "test", Domain::target, Split::test, false);

  std::optional<ModelState<float>> pretrained;
  if (!a.pretrained.empty()) {
    const auto c = load_checkpoint<float>(a.pretrained);
    pretrained = c.teacher;
    if (!(pretrained->config == base.network))
      throw ConfigError("pretrained network shape does not match the run config (depth/base/train_size)");
  } else if (o.resume.empty()) {
    spdlog::warn("no --pretrained checkpoint: adapting from random initialization");
  }

  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < a.seeds; ++k) seeds.push_back(base.seed + static_cast<std::uint64_t>(k));
  fs::create_directories(out);
  write_json_atomic(out / "manifest.json",
                    manifest("adapt", base, seeds,
                             {{"data", data.string()}, {"pretrained", a.pretrained}, {"resume", o.resume}},
                             {{"runs", a.seeds > 1 ? "seed_<k>/" : "."}, {"summary", "summary.json"}}));
  write_json_atomic(out / "config.json", to_json(base));

  std::vector<EvalReport> reports;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    RunConfig cfg = base;
    cfg.seed = cfg.preprocess.seed = seeds[k];
    const fs::path dir = seeds.size() > 1 ? out / ("seed_" + std::to_string(seeds[k])) : out;
    fs::create_directories(dir);
    TrainerState<float> st;
    if (!o.resume.empty()) {
      st = trainer_state_from(load_checkpoint<float>(o.resume));
    } else {
      const ModelState<float> start = pretrained ? *pretrained : init_model<float>(cfg.network, derive_seed(cfg.seed, 0));
      st = init_trainer(start, d, cfg);
    }
    RunLog log(dir, !o.resume.empty());
    LoopHooks<TrainerState<float>> hooks;
    hooks.on_step = [&](const StepRecord& r) { log.step(r); };
    hooks.on_eval = [&](const EvalRecord& e) { log.eval(e); };
    hooks.on_checkpoint = [&](const TrainerState<float>& s) {
      save_checkpoint(make_checkpoint(s, cfg), dir / "checkpoint.ckpt");
    };
    spdlog::info("seed {}: adapting for {} steps", cfg.seed, cfg.iterations);
    const auto rep = adapt_loop(st, d, cfg, hooks);
    for (const auto& w : rep.warnings) spdlog::warn("{}", w);
    save_checkpoint(make_checkpoint(st, cfg), dir / "checkpoint.ckpt");
    if (!d.target_eval.empty()) {
      reports.push_back(evaluate_dataset(st.teacher, d.target_eval, cfg.preprocess));
      write_metrics_csv(reports.back(), dir / "metrics.csv");
      spdlog::info("seed {}: target dice {:.4f}", cfg.seed, reports.back().dice());
    }
  }
  if (!reports.empty()) {
    Json s = summary_json(aggregate_seeds(reports));
    s["seeds"] = seeds;
    write_json_atomic(out / "summary.json", s);
    const auto agg = aggregate_seeds(reports);
    std::printf("target over %zu seed(s):", reports.size());
    for (std::size_t i = 0; i < kMetricNames.size(); ++i)
      std::printf(" %s %.4f±%.4f", kMetricNames[i], agg[i].mean, agg[i].std);
    std::printf("\n");
  }
  finish(out);
  return 0;
}

// ---------------------------------------------------------------- evaluate

int cmd_evaluate(const std::string& checkpoint, const std::string& data_dir, const std::string& out_dir,
                 bool dump) {
  const auto c = load_checkpoint<float>(checkpoint);
  const fs::path out = out_dir;
  const auto samples = load_split(data_dir, Domain::target, Split::test, true);
  fs::create_directories(out);
  std::vector<Tensor3<float>> preds;
  const auto rep = evaluate_dataset(c.teacher, samples, c.config.preprocess, dump ? &preds : nullptr);
  write_metrics_csv(rep, out / "metrics.csv");
  Json s = summary_json(rep.summary);
  s["checkpoint"] = checkpoint;
  s["data"] = data_dir;
  s["images"] = rep.per_image.size();
  write_json_atomic(out / "summary.json", s);
  if (dump) {
    fs::create_directories(out / "predictions");
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const auto fg = foreground_plane(preds[i]);
      write_plane(out / "predictions" / (samples[i].id + "_prob.png"), fg);
      write_mask(out / "predictions" / (samples[i].id + "_mask.png"), binarize(fg));
    }
  }
  for (std::size_t i = 0; i < kMetricNames.size(); ++i)
    std::printf("%-7s %.4f ± %.4f\n", kMetricNames[i], rep.summary[i].mean, rep.summary[i].std);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intermediate-domain adaptation for vessel segmentation"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "generate synthetic source and target datasets");
  synth->add_option("--out", so.out, "output root")->required();
  synth->add_option("--n", so.n, "training images per domain")->required();
  synth->add_option("--n-val", so.n_val, "extra labeled source images for validation");
  synth->add_option("--n-eval", so.n_eval, "labeled target images for evaluation");
  synth->add_option("--size", so.size, "image side length");
  synth->add_option("--seed", so.seed);

  CommonOptions po;
  std::string pstrategy;
  auto* pre = app.add_subcommand("pretrain", "supervised source pretraining");
  add_common(pre, po);
  pre->add_option("--strategy", pstrategy, "random | self_cut | vcl | self_cut+vcl");

  CommonOptions ao;
  AdaptOptions aa;
  auto* adapt = app.add_subcommand("adapt", "teacher-student adaptation to the target domain");
  add_common(adapt, ao);
  adapt->add_option("--pretrained", aa.pretrained, "pretraining checkpoint");
  adapt->add_option("--strategy", aa.strategy, "translation strategy, e.g. bat_class_cut");
  adapt->add_option("--input", aa.input, "patch | whole | both");
  adapt->add_option("--m", aa.m, "mixing square side");
  adapt->add_option("--th-t2s", aa.th_t2s);
  adapt->add_option("--th-s2t", aa.th_s2t);
  adapt->add_option("--beta1", aa.beta1);
  adapt->add_option("--beta2", aa.beta2);
  adapt->add_option("--gamma", aa.gamma);
  adapt->add_flag("--no-mrat", aa.no_mrat);
  adapt->add_flag("--no-idcl", aa.no_idcl);
  adapt->add_option("--seeds", aa.seeds, "independent runs with consecutive seeds");

  std::string ckpt, edata, eout;
  bool dump = false;
  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on a labeled dataset");
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--data", edata, "directory with images/ and masks/")->required();
  ev->add_option("--out", eout)->required();
  ev->add_flag("--dump-preds", dump, "write probability maps and masks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  // Logs go to stderr; stdout carries only the tables and paths callers may parse.
  spdlog::set_default_logger(spdlog::stderr_color_mt("ida"));
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*synth) return cmd_synth(so);
    if (*pre) return cmd_pretrain(po, pstrategy);
    if (*adapt) return cmd_adapt(ao, aa);
    if (*ev) return cmd_evaluate(ckpt, edata, eout, dump);
  } catch (const NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return 3;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const FormatError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const ShapeError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("unexpected error: {}", e.what());
    return 1;
  }
  return 0;
}
