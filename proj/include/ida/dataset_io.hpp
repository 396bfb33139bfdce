#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ida/data.hpp"

namespace ida {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct LoadResult {
  std::vector<ImageSample> samples;
  std::vector<std::string> rejected;  // "<id>: <reason>"
  std::vector<std::string> warnings;
};

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".tif" || ext == ".tiff" || ext == ".jpg" || ext == ".jpeg" ||
         ext == ".bmp" || ext == ".gif" || ext == ".ppm" || ext == ".pgm";
}

inline std::map<std::string, std::filesystem::path> index_by_stem(const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out.emplace(e.path().stem().string(), e.path());
  return out;
}

}  // namespace detail

/// Read an 8-bit image into [0,1] floats, RGB channel order for color inputs.
inline Tensor3<float> read_image(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw ConfigError("cannot read image " + path.string());
  if (m.depth() != CV_8U) m.convertTo(m, CV_8U, m.depth() == CV_16U ? 1.0 / 257.0 : 255.0);
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  const int c = m.channels() == 1 ? 1 : 3;
  Tensor3<float> t(c, m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      if (c == 1) {
        t.at(0, y, x) = row[x] / 255.0f;
      } else {
        t.at(0, y, x) = row[3 * x + 2] / 255.0f;
        t.at(1, y, x) = row[3 * x + 1] / 255.0f;
        t.at(2, y, x) = row[3 * x + 0] / 255.0f;
      }
    }
  }
  return t;
}

/// Read an 8-bit mask and binarize at 127 (values > 127 are foreground).
inline LabelMap read_mask(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw ConfigError("cannot read mask " + path.string());
  LabelMap l(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) l(y, x) = row[x] > 127 ? kVessel : kBackground;
  }
  return l;
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline void write_image(const std::filesystem::path& path, const Tensor3<float>& t) {
  cv::Mat m(t.height, t.width, t.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < t.height; ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < t.width; ++x) {
      if (t.channels == 1) {
        row[x] = to_byte(t.at(0, y, x));
      } else {
        row[3 * x + 2] = to_byte(t.at(0, y, x));
        row[3 * x + 1] = to_byte(t.at(1, y, x));
        row[3 * x + 0] = to_byte(t.at(2, y, x));
      }
    }
  }
  if (!cv::imwrite(path.string(), m)) throw ConfigError("cannot write " + path.string());
}

inline void write_plane(const std::filesystem::path& path, const Image& p) {
  Tensor3<float> t(1, p.height, p.width);
  t.data = p.data;
  write_image(path, t);
}

/// Label / binary planes are written as 0/255.
inline void write_mask(const std::filesystem::path& path, const Plane<std::uint8_t>& m) {
  cv::Mat out(m.height, m.width, CV_8UC1);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) out.at<std::uint8_t>(y, x) = m(y, x) ? 255 : 0;
  if (!cv::imwrite(path.string(), out)) throw ConfigError("cannot write " + path.string());
}

inline bool split_is_labeled(Domain d, Split s) { return !(d == Domain::target && s == Split::train); }

/// Load `<root>/images` (and `<root>/masks` for labeled splits), matching
/// files by basename. Results are sorted by id.
inline LoadResult load_dataset(const std::filesystem::path& root, Domain domain, Split split) {
  namespace fs = std::filesystem;
  const fs::path images = root / "images";
  const fs::path masks = root / "masks";
  if (!fs::is_directory(images)) throw ConfigError("missing directory " + images.string());
  const bool labeled = split_is_labeled(domain, split);
  if (labeled && !fs::is_directory(masks)) throw ConfigError("missing directory " + masks.string());

  LoadResult res;
  const auto image_files = detail::index_by_stem(images);
  const auto mask_files = labeled ? detail::index_by_stem(masks) : std::map<std::string, fs::path>{};
  if (image_files.empty()) res.warnings.push_back("no images found in " + images.string());

  for (const auto& [stem, path] : image_files) {
    ImageSample s;
    s.id = stem;
    s.domain = domain;
    try {
      s.pixels = read_image(path);
    } catch (const ConfigError& e) {
      res.rejected.push_back(stem + ": " + e.what());
      continue;
    }
    if (labeled) {
      auto it = mask_files.find(stem);
      if (it == mask_files.end()) {
        res.rejected.push_back(stem + ": no matching mask");
        continue;
      }
      LabelMap l = read_mask(it->second);
      if (l.width != s.width() || l.height != s.height()) {
        res.rejected.push_back(stem + ": image/mask shape mismatch");
        continue;
      }
      s.label = std::move(l);
    }
    res.samples.push_back(std::move(s));
  }
  return res;
}

/// Write samples in the `images/` + `masks/` layout read by load_dataset.
inline void save_dataset(const std::filesystem::path& root, const std::vector<ImageSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  bool any_label = std::any_of(samples.begin(), samples.end(), [](const auto& s) { return s.label.has_value(); });
  if (any_label) fs::create_directories(root / "masks");
  for (const auto& s : samples) {
    write_image(root / "images" / (s.id + ".png"), s.pixels);
    if (s.label) write_mask(root / "masks" / (s.id + ".png"), *s.label);
  }
}

}  // namespace ida
