#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ida/data.hpp"
#include "ida/idcl.hpp"
#include "ida/losses.hpp"
#include "ida/mrat.hpp"
#include "ida/optim.hpp"
#include "ida/segnet.hpp"

namespace ida {

using Json = nlohmann::json;

enum class PretrainStrategy { random, self_cut, vcl, self_cut_vcl };

inline std::string to_string(PretrainStrategy s) {
  switch (s) {
    case PretrainStrategy::random: return "random";
    case PretrainStrategy::self_cut: return "self_cut";
    case PretrainStrategy::vcl: return "vcl";
    case PretrainStrategy::self_cut_vcl: return "self_cut+vcl";
  }
  return "?";
}

inline PretrainStrategy parse_pretrain_strategy(const std::string& s) {
  for (auto p : {PretrainStrategy::random, PretrainStrategy::self_cut, PretrainStrategy::vcl,
                 PretrainStrategy::self_cut_vcl})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown pretrain strategy '" + s + "' (random, self_cut, vcl, self_cut+vcl)");
}

inline std::string to_string(InputStrategy s) {
  return s == InputStrategy::patch ? "patch" : s == InputStrategy::whole ? "whole" : "both";
}

inline InputStrategy parse_input_strategy(const std::string& s) {
  if (s == "patch") return InputStrategy::patch;
  if (s == "whole") return InputStrategy::whole;
  if (s == "both") return InputStrategy::both;
  throw ConfigError("unknown input strategy '" + s + "' (patch, whole, both)");
}

/// Ablation switches. Pretraining selects the configured pretrain strategy;
/// off means plain supervised ("random") pretraining.
struct ComponentToggles {
  bool self_training = true;
  bool mrat = true;
  bool idcl = true;
  bool pretraining = true;

  friend bool operator==(const ComponentToggles&, const ComponentToggles&) = default;
};

struct RunConfig {
  OptimizerConfig optimizer;
  int batch_size = 4;
  double ema_lambda = 0.99;
  int m = 128;
  ContrastConfig contrast;
  LossWeights weights;
  std::uint64_t iterations = 2000;
  std::uint64_t pretrain_iterations = 2000;
  std::uint64_t eval_every = 200;
  std::uint64_t checkpoint_every = 0;  // 0: only at the end
  std::uint64_t seed = 0;
  TranslationStrategy strategy = TranslationStrategy::bat_class_cut;
  PretrainStrategy pretrain_strategy = PretrainStrategy::self_cut_vcl;
  InputStrategy input = InputStrategy::both;
  ComponentToggles toggles;
  NetworkConfig network{4, 8, 2, {384, 384}};
  PreprocessConfig preprocess;
  bool determinism = true;

  int half_batch() const { return batch_size / 2; }

  void validate() const {
    optimizer.validate();
    contrast.validate();
    weights.validate();
    network.validate();
    preprocess.validate();
    if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch_size must be even and >= 2");
    if (!(ema_lambda >= 0 && ema_lambda <= 1)) throw ConfigError("ema_lambda must be in [0,1]");
    const auto [W, H] = network.input_size;
    if (m <= 0 || m >= std::min(W, H)) throw ConfigError("m must satisfy 0 < m < min(W, H)");
    if (!(preprocess.train_size == network.input_size)) throw ConfigError("train_size must equal network.input_size");
    if (!toggles.self_training && (toggles.mrat || toggles.idcl))
      throw ConfigError("mrat and idcl need the teacher: enable self_training");
  }
};

namespace detail {

struct Field {
  std::function<Json(const RunConfig&)> get;
  std::function<void(RunConfig&, const Json&)> set;
};

template <typename T>
T as(const Json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "': wrong value type " + j.dump());
  }
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = [] {
    std::map<std::string, Field> m;
    auto num = [&m](const std::string& k, auto member) {
      using V = std::remove_reference_t<decltype(std::declval<RunConfig&>().*member)>;
      m[k] = {[member](const RunConfig& c) { return Json(c.*member); },
              [member, k](RunConfig& c, const Json& j) { c.*member = as<V>(j, k); }};
    };
    auto fn = [&m](const std::string& k, auto get, auto set) { m[k] = {get, set}; };

    fn("optimizer.kind", [](const RunConfig& c) { return Json(c.optimizer.kind); },
       [](RunConfig& c, const Json& j) { c.optimizer.kind = as<std::string>(j, "optimizer.kind"); });
    fn("optimizer.lr", [](const RunConfig& c) { return Json(c.optimizer.lr); },
       [](RunConfig& c, const Json& j) { c.optimizer.lr = as<double>(j, "optimizer.lr"); });
    fn("optimizer.beta1", [](const RunConfig& c) { return Json(c.optimizer.beta1); },
       [](RunConfig& c, const Json& j) { c.optimizer.beta1 = as<double>(j, "optimizer.beta1"); });
    fn("optimizer.beta2", [](const RunConfig& c) { return Json(c.optimizer.beta2); },
       [](RunConfig& c, const Json& j) { c.optimizer.beta2 = as<double>(j, "optimizer.beta2"); });
    fn("optimizer.weight_decay", [](const RunConfig& c) { return Json(c.optimizer.weight_decay); },
       [](RunConfig& c, const Json& j) { c.optimizer.weight_decay = as<double>(j, "optimizer.weight_decay"); });
    fn("optimizer.poly_decay", [](const RunConfig& c) { return Json(c.optimizer.poly_decay); },
       [](RunConfig& c, const Json& j) { c.optimizer.poly_decay = as<bool>(j, "optimizer.poly_decay"); });

    num("batch_size", &RunConfig::batch_size);
    num("ema_lambda", &RunConfig::ema_lambda);
    num("m", &RunConfig::m);
    num("iterations", &RunConfig::iterations);
    num("pretrain_iterations", &RunConfig::pretrain_iterations);
    num("eval_every", &RunConfig::eval_every);
    num("checkpoint_every", &RunConfig::checkpoint_every);
    num("seed", &RunConfig::seed);
    num("determinism", &RunConfig::determinism);

    fn("delta", [](const RunConfig& c) { return Json(c.contrast.delta); },
       [](RunConfig& c, const Json& j) { c.contrast.delta = as<double>(j, "delta"); });
    fn("tau", [](const RunConfig& c) { return Json(c.contrast.tau); },
       [](RunConfig& c, const Json& j) { c.contrast.tau = as<double>(j, "tau"); });
    fn("th_t2s", [](const RunConfig& c) { return Json(c.contrast.th_t2s); },
       [](RunConfig& c, const Json& j) { c.contrast.th_t2s = as<double>(j, "th_t2s"); });
    fn("th_s2t", [](const RunConfig& c) { return Json(c.contrast.th_s2t); },
       [](RunConfig& c, const Json& j) { c.contrast.th_s2t = as<double>(j, "th_s2t"); });
    fn("idcl_mean_over_pixels", [](const RunConfig& c) { return Json(c.contrast.mean_over_pixels); },
       [](RunConfig& c, const Json& j) { c.contrast.mean_over_pixels = as<bool>(j, "idcl_mean_over_pixels"); });
    fn("beta1", [](const RunConfig& c) { return Json(c.weights.beta1); },
       [](RunConfig& c, const Json& j) { c.weights.beta1 = as<double>(j, "beta1"); });
    fn("beta2", [](const RunConfig& c) { return Json(c.weights.beta2); },
       [](RunConfig& c, const Json& j) { c.weights.beta2 = as<double>(j, "beta2"); });
    fn("gamma", [](const RunConfig& c) { return Json(c.weights.gamma); },
       [](RunConfig& c, const Json& j) { c.weights.gamma = as<double>(j, "gamma"); });

    fn("strategy", [](const RunConfig& c) { return Json(std::string(to_string(c.strategy))); },
       [](RunConfig& c, const Json& j) { c.strategy = parse_translation_strategy(as<std::string>(j, "strategy")); });
    fn("pretrain_strategy", [](const RunConfig& c) { return Json(to_string(c.pretrain_strategy)); },
       [](RunConfig& c, const Json& j) {
         c.pretrain_strategy = parse_pretrain_strategy(as<std::string>(j, "pretrain_strategy"));
       });
    fn("input", [](const RunConfig& c) { return Json(to_string(c.input)); },
       [](RunConfig& c, const Json& j) { c.input = parse_input_strategy(as<std::string>(j, "input")); });

    fn("toggles.self_training", [](const RunConfig& c) { return Json(c.toggles.self_training); },
       [](RunConfig& c, const Json& j) { c.toggles.self_training = as<bool>(j, "toggles.self_training"); });
    fn("toggles.mrat", [](const RunConfig& c) { return Json(c.toggles.mrat); },
       [](RunConfig& c, const Json& j) { c.toggles.mrat = as<bool>(j, "toggles.mrat"); });
    fn("toggles.idcl", [](const RunConfig& c) { return Json(c.toggles.idcl); },
       [](RunConfig& c, const Json& j) { c.toggles.idcl = as<bool>(j, "toggles.idcl"); });
    fn("toggles.pretraining", [](const RunConfig& c) { return Json(c.toggles.pretraining); },
       [](RunConfig& c, const Json& j) { c.toggles.pretraining = as<bool>(j, "toggles.pretraining"); });

    fn("network.depth", [](const RunConfig& c) { return Json(c.network.depth); },
       [](RunConfig& c, const Json& j) { c.network.depth = as<int>(j, "network.depth"); });
    fn("network.base_channels", [](const RunConfig& c) { return Json(c.network.base_channels); },
       [](RunConfig& c, const Json& j) { c.network.base_channels = as<int>(j, "network.base_channels"); });
    // one key drives both the network input and the preprocessing size
    fn("train_size", [](const RunConfig& c) { return Json(c.network.input_size.width); },
       [](RunConfig& c, const Json& j) {
         const int s = as<int>(j, "train_size");
         c.network.input_size = {s, s};
         c.preprocess.train_size = {s, s};
       });
    fn("augment.horizontal_flip", [](const RunConfig& c) { return Json(c.preprocess.augment.horizontal_flip); },
       [](RunConfig& c, const Json& j) { c.preprocess.augment.horizontal_flip = as<bool>(j, "augment.horizontal_flip"); });
    fn("augment.vertical_flip", [](const RunConfig& c) { return Json(c.preprocess.augment.vertical_flip); },
       [](RunConfig& c, const Json& j) { c.preprocess.augment.vertical_flip = as<bool>(j, "augment.vertical_flip"); });
    fn("augment.color_jitter", [](const RunConfig& c) { return Json(c.preprocess.augment.color_jitter); },
       [](RunConfig& c, const Json& j) { c.preprocess.augment.color_jitter = as<bool>(j, "augment.color_jitter"); });
    fn("augment.brightness", [](const RunConfig& c) { return Json(c.preprocess.augment.brightness); },
       [](RunConfig& c, const Json& j) { c.preprocess.augment.brightness = as<float>(j, "augment.brightness"); });
    fn("augment.contrast", [](const RunConfig& c) { return Json(c.preprocess.augment.contrast); },
       [](RunConfig& c, const Json& j) { c.preprocess.augment.contrast = as<float>(j, "augment.contrast"); });
    return m;
  }();
  return f;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& [name, _] : detail::fields()) k.push_back(name);
  return k;
}

/// Flat JSON object with every key.
inline Json to_json(const RunConfig& c) {
  Json j = Json::object();
  for (const auto& [name, f] : detail::fields()) j[name] = f.get(c);
  return j;
}

/// Apply the keys present in a flat object; unknown keys are errors.
inline void apply_json(RunConfig& c, const Json& j) {
  if (!j.is_object()) throw ConfigError("config must be a flat JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = detail::fields().find(key);
    if (it == detail::fields().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(c, value);
  }
}

/// Parse a scalar given as text: JSON literal when it parses, string otherwise.
inline Json parse_scalar(const std::string& text) {
  const Json j = Json::parse(text, nullptr, false);
  return j.is_discarded() ? Json(text) : j;
}

/// IDA_<KEY> with dots replaced by underscores and letters uppercased.
inline std::string env_name(const std::string& key) {
  std::string e = "IDA_";
  for (char ch : key) e += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return e;
}

inline Json env_overrides() {
  Json j = Json::object();
  for (const auto& key : config_keys())
    if (const char* v = std::getenv(env_name(key).c_str())) j[key] = parse_scalar(v);
  return j;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  const Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
  return j;
}

/// defaults < file < environment < flags.
inline RunConfig resolve_config(RunConfig base, const std::string& file, const Json& flags) {
  if (!file.empty()) apply_json(base, read_json_file(file));
  apply_json(base, env_overrides());
  apply_json(base, flags);
  base.preprocess.seed = base.seed;
  base.validate();
  return base;
}

inline RunConfig config_from_json(const Json& j) {
  RunConfig c;
  apply_json(c, j);
  c.preprocess.seed = c.seed;
  return c;
}

}  // namespace ida
