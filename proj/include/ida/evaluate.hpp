#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "ida/metrics.hpp"
#include "ida/segnet.hpp"

namespace ida {

/// Predict every labeled sample at the network size, upsample to the
/// original resolution and score at threshold 0.5.
template <typename T>
EvalReport evaluate_dataset(const ModelState<T>& model, const std::vector<ImageSample>& samples,
                            const PreprocessConfig& pre, std::vector<Tensor3<T>>* predictions = nullptr) {
  auto probs = predict_dataset(model, samples, pre);
  std::vector<ImageMetrics> per;
  per.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].label) throw ConfigError("evaluate_dataset: sample without label: " + samples[i].id);
    per.push_back(image_metrics(samples[i].id, foreground_plane(probs[i]), *samples[i].label));
  }
  if (predictions) *predictions = std::move(probs);
  return aggregate(std::move(per));
}

/// Mean of per-seed means and their spread, metric by metric.
inline std::array<MeanStd, 7> aggregate_seeds(const std::vector<EvalReport>& runs) {
  std::array<MeanStd, 7> out{};
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
    std::vector<double> xs;
    for (const auto& r : runs) xs.push_back(r.summary[k].mean);
    out[k] = mean_std(xs);
  }
  return out;
}

inline std::string format_metric(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline void write_metrics_csv(const EvalReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "id";
  for (auto n : kMetricNames) out << ',' << n;
  out << '\n';
  for (const auto& m : r.per_image) {
    out << m.id;
    for (double v : m.values) out << ',' << format_metric(v);
    out << '\n';
  }
}

inline nlohmann::json summary_json(const std::array<MeanStd, 7>& s) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
    nlohmann::json e;
    e["mean"] = std::isnan(s[k].mean) ? nlohmann::json(nullptr) : nlohmann::json(s[k].mean);
    e["std"] = std::isnan(s[k].std) ? nlohmann::json(nullptr) : nlohmann::json(s[k].std);
    e["n"] = s[k].n;
    j[kMetricNames[k]] = e;
  }
  return j;
}

inline void write_summary_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace ida
