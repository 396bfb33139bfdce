#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ida {

/// Bad configuration, missing inputs, or invalid arguments supplied by a user.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two arrays that must agree on shape do not.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A loss, activation or parameter became NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Serialized artifact failed version or integrity checks.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Deterministic per-worker seed derived from a global seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index) {
  std::uint64_t z = global_seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct Size2 {
  int width = 0;
  int height = 0;
  friend bool operator==(const Size2&, const Size2&) = default;
};

/// Row-major single-channel 2-D array.
template <typename T>
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  T& operator()(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& operator()(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  Size2 shape() const { return {width, height}; }

  template <typename U>
  bool same_shape(const Plane<U>& o) const {
    return width == o.width && height == o.height;
  }

  friend bool operator==(const Plane&, const Plane&) = default;
};

/// Channel-major (C x H x W) dense array.
template <typename T>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  T& at(int c, int y, int x) { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  const T& at(int c, int y, int x) const {
    return data[c * plane_size() + static_cast<std::size_t>(y) * width + x];
  }
  T* channel(int c) { return data.data() + c * plane_size(); }
  const T* channel(int c) const { return data.data() + c * plane_size(); }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;
};

using Image = Plane<float>;
using LabelMap = Plane<std::uint8_t>;
using BinaryMask = Plane<std::uint8_t>;

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kVessel = 1;

template <typename T, typename U>
void require_same_shape(const Plane<T>& a, const Plane<U>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height) + ")");
  }
}

template <typename T>
std::size_t count_nonzero(const Plane<T>& p) {
  return static_cast<std::size_t>(std::count_if(p.data.begin(), p.data.end(), [](T v) { return v != T{}; }));
}

}  // namespace ida
