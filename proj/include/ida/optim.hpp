#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ida/segnet.hpp"

namespace ida {

struct OptimizerConfig {
  std::string kind = "adamw";
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 5e-4;
  double eps = 1e-8;
  bool poly_decay = false;  // lr * (1 - t/T)^power when set
  double poly_power = 0.9;

  void validate() const {
    if (kind != "adamw") throw ConfigError("optimizer.kind: only 'adamw' is supported");
    if (!(lr > 0)) throw ConfigError("optimizer.lr must be > 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("optimizer betas must be in [0,1)");
    if (weight_decay < 0) throw ConfigError("optimizer.weight_decay must be >= 0");
  }
};

/// First and second moment estimates, one vector per parameter array.
template <typename T>
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

template <typename T>
AdamState<T> make_adam_state(const ModelState<T>& s) {
  AdamState<T> st;
  for (const auto& p : s.params) {
    st.m.emplace_back(p.values.size(), 0.0);
    st.v.emplace_back(p.values.size(), 0.0);
  }
  return st;
}

inline double scheduled_lr(const OptimizerConfig& cfg, std::uint64_t step, std::uint64_t total) {
  if (!cfg.poly_decay || total == 0) return cfg.lr;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return cfg.lr * std::pow(1.0 - frac, cfg.poly_power);
}

/// One AdamW step with decoupled weight decay, bias-corrected moments.
template <typename T>
void adamw_step(ModelState<T>& s, const Gradients<T>& g, AdamState<T>& st, const OptimizerConfig& cfg, double lr) {
  if (g.size() != s.params.size() || st.m.size() != s.params.size()) throw ShapeError("adamw_step: size mismatch");
  ++st.step;
  const double bc1 = 1 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    auto& w = s.params[i].values;
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[i][j]);
      if (!std::isfinite(gj)) throw NumericError("adamw_step: non-finite gradient in " + s.params[i].name);
      m[j] = cfg.beta1 * m[j] + (1 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1 - cfg.beta2) * gj * gj;
      const double mh = m[j] / bc1, vh = v[j] / bc2;
      double wj = static_cast<double>(w[j]);
      wj -= lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * wj);
      w[j] = static_cast<T>(wj);
    }
  }
  ++s.iteration;
}

}  // namespace ida
