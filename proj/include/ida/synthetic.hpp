#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "ida/data.hpp"

namespace ida {

/// Appearance and growth parameters of a procedural vessel domain.
/// Corruption terms (shading, texture, noise, blur) are all additive on top
/// of a two-color base rendering; with all four at zero an image holds
/// exactly two colors.
struct DomainStyle {
  std::string name = "custom";
  Size2 size{192, 192};
  std::array<float, 3> background_rgb{0.8f, 0.5f, 0.3f};
  std::array<float, 3> vessel_rgb{0.4f, 0.15f, 0.1f};
  float thickness_min = 1.0f;  // vessel diameter in pixels
  float thickness_max = 3.0f;
  int branch_count = 3;           // trees started before density top-up
  float branch_probability = 0.03f;
  float turn_sigma = 0.12f;       // radians per step
  float target_density = 0.10f;   // expected foreground fraction
  float shading = 0.0f;           // radial illumination amplitude (bright center)
  float texture_sigma = 0.0f;     // low-frequency background texture amplitude
  int texture_cells = 12;         // texture grid resolution
  float noise_sigma = 0.0f;       // white noise
  int blur_radius = 0;            // box-blur radius in pixels

  void validate() const {
    if (size.width < 8 || size.height < 8) throw ConfigError("synthetic size too small");
    if (thickness_min <= 0 || thickness_max < thickness_min) throw ConfigError("bad thickness range");
    if (target_density <= 0 || target_density >= 1) throw ConfigError("target_density must be in (0,1)");
    if (noise_sigma < 0 || texture_sigma < 0 || blur_radius < 0) throw ConfigError("negative corruption");
  }
};

/// Fundus-like: dark thin vessels on a bright, radially shaded disc.
inline DomainStyle retina_like_style() {
  DomainStyle s;
  s.name = "retina-like";
  s.background_rgb = {0.86f, 0.46f, 0.24f};
  s.vessel_rgb = {0.50f, 0.16f, 0.08f};
  s.thickness_min = 1.2f;
  s.thickness_max = 3.5f;
  s.branch_count = 3;
  s.branch_probability = 0.035f;
  s.turn_sigma = 0.10f;
  s.target_density = 0.10f;
  s.shading = 0.25f;
  s.texture_sigma = 0.015f;
  s.noise_sigma = 0.02f;
  s.blur_radius = 1;
  return s;
}

/// Membrane-like: lower-contrast, thicker and more tortuous vessels on a
/// mottled background.
inline DomainStyle cam_like_style() {
  DomainStyle s;
  s.name = "cam-like";
  s.background_rgb = {0.78f, 0.50f, 0.42f};
  s.vessel_rgb = {0.62f, 0.30f, 0.26f};
  s.thickness_min = 1.5f;
  s.thickness_max = 5.0f;
  s.branch_count = 4;
  s.branch_probability = 0.045f;
  s.turn_sigma = 0.16f;
  s.target_density = 0.14f;
  s.shading = 0.05f;
  s.texture_sigma = 0.08f;
  s.texture_cells = 10;
  s.noise_sigma = 0.035f;
  s.blur_radius = 1;
  return s;
}

namespace detail {

/// Returns the number of pixels newly set to vessel.
inline std::size_t stamp_disc(LabelMap& lbl, double cx, double cy, double radius) {
  const int r = static_cast<int>(std::ceil(radius));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - r);
  const int x1 = std::min(lbl.width - 1, static_cast<int>(std::floor(cx)) + r + 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - r);
  const int y1 = std::min(lbl.height - 1, static_cast<int>(std::floor(cy)) + r + 1);
  const double r2 = std::max(radius * radius, 0.25);
  std::size_t added = 0;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r2 && lbl(y, x) != kVessel) {
        lbl(y, x) = kVessel;
        ++added;
      }
    }
  return added;
}

struct Branch {
  double x, y, heading, thickness;
  int generation;
  int children = 0;
};

/// Random-walk tree: each step advances one pixel, jitters the heading and
/// may spawn a thinner child at an oblique angle. Growth stops once the mask
/// holds `budget` vessel pixels; `count` is the running vessel pixel count.
inline void grow_tree(LabelMap& lbl, const DomainStyle& st, Rng& rng, std::size_t& count, std::size_t budget) {
  const double W = lbl.width, H = lbl.height;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> turn(0.0, st.turn_sigma);

  // Roots enter from a random border point heading roughly inward.
  double x, y;
  const int side = static_cast<int>(u01(rng) * 4) % 4;
  const double t = u01(rng);
  switch (side) {
    case 0: x = t * W; y = 0; break;
    case 1: x = W - 1; y = t * H; break;
    case 2: x = t * W; y = H - 1; break;
    default: x = 0; y = t * H; break;
  }
  const double to_center = std::atan2(H / 2 - y + (u01(rng) - 0.5) * H * 0.6, W / 2 - x + (u01(rng) - 0.5) * W * 0.6);

  std::vector<Branch> stack{{x, y, to_center, st.thickness_max, 0}};
  const double max_len = 1.5 * (W + H);
  // Breadth-first so every tree gets its trunk before any budget goes to twigs.
  for (std::size_t head = 0; head < stack.size() && count < budget; ++head) {
    Branch b = stack[head];
    for (double len = 0; len < max_len && count < budget; len += 1.0) {
      if (b.x < -2 || b.y < -2 || b.x > W + 1 || b.y > H + 1) break;
      count += stamp_disc(lbl, b.x, b.y, b.thickness / 2);
      b.heading += turn(rng);
      b.x += std::cos(b.heading);
      b.y += std::sin(b.heading);
      b.thickness = std::max<double>(st.thickness_min, b.thickness * 0.9985);
      if (b.generation < 3 && b.children < 3 && u01(rng) < st.branch_probability) {
        ++b.children;
        const double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
        const double angle = (0.45 + 0.6 * u01(rng)) * sign;
        const double child_t = std::max<double>(st.thickness_min, b.thickness * 0.7);
        stack.push_back({b.x, b.y, b.heading + angle, child_t, b.generation + 1});
      }
    }
  }
}

inline Plane<float> box_blur(const Plane<float>& p, int r) {
  if (r <= 0) return p;
  Plane<float> tmp(p.width, p.height), out(p.width, p.height);
  const float norm = 1.0f / static_cast<float>(2 * r + 1);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      float s = 0;
      for (int k = -r; k <= r; ++k) s += p(y, reflect101(x + k, p.width));
      tmp(y, x) = s * norm;
    }
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      float s = 0;
      for (int k = -r; k <= r; ++k) s += tmp(reflect101(y + k, p.height), x);
      out(y, x) = s * norm;
    }
  return out;
}

}  // namespace detail

/// Draw a vessel tree mask for one image. The target density is split into
/// equal per-tree budgets over `branch_count` trees; extra trees top up
/// whatever short trees (leaving the frame early) did not fill.
inline LabelMap generate_vessel_mask(const DomainStyle& st, Rng& rng) {
  LabelMap lbl(st.size.width, st.size.height);
  const auto target = static_cast<std::size_t>(std::llround(st.target_density * static_cast<double>(lbl.size())));
  const int trees = std::max(1, st.branch_count);
  std::size_t count = 0;
  for (int i = 0; i < trees; ++i) {
    const std::size_t budget = target * static_cast<std::size_t>(i + 1) / static_cast<std::size_t>(trees);
    detail::grow_tree(lbl, st, rng, count, budget);
  }
  for (int extra = 0; count < target && extra < 64; ++extra) detail::grow_tree(lbl, st, rng, count, target);
  return lbl;
}

inline ImageSample render_vessel_image(const LabelMap& lbl, const DomainStyle& st, Rng& rng, Domain domain,
                                       std::string id) {
  const int W = lbl.width, H = lbl.height;
  std::normal_distribution<float> gauss(0.0f, 1.0f);

  // Coarse random grid, bilinearly upsampled, gives low-frequency mottling.
  Plane<float> coarse(st.texture_cells, st.texture_cells);
  for (auto& v : coarse.data) v = gauss(rng);
  const Plane<float> texture = resize_bilinear(coarse, W, H);

  ImageSample s;
  s.domain = domain;
  s.id = std::move(id);
  s.label = lbl;
  s.pixels = Tensor3<float>(3, H, W);
  const double cx = W / 2.0, cy = H / 2.0, rmax = std::hypot(cx, cy);
  for (int c = 0; c < 3; ++c) {
    Plane<float> ch(W, H);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const float base = lbl(y, x) ? st.vessel_rgb[c] : st.background_rgb[c];
        float v = base;
        if (st.shading != 0) {
          const double r = std::hypot(x + 0.5 - cx, y + 0.5 - cy) / rmax;
          v *= static_cast<float>(1.0 + st.shading * (0.5 - r));
        }
        if (st.texture_sigma != 0) v += st.texture_sigma * texture(y, x);
        ch(y, x) = v;
      }
    if (st.noise_sigma != 0)
      for (auto& v : ch.data) v += st.noise_sigma * gauss(rng);
    ch = detail::box_blur(ch, st.blur_radius);
    for (auto& v : ch.data) v = std::clamp(v, 0.0f, 1.0f);
    std::copy(ch.data.begin(), ch.data.end(), s.pixels.channel(c));
  }
  return s;
}

/// n procedurally drawn vessel images with their tree masks.
inline std::vector<ImageSample> generate_synthetic_domain(const DomainStyle& st, int n, Rng& rng,
                                                          Domain domain = Domain::source,
                                                          const std::string& prefix = "img") {
  if (n < 0) throw ConfigError("generate_synthetic_domain: n must be >= 0");
  st.validate();
  std::vector<ImageSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::string id = std::to_string(i);
    id = prefix + "_" + std::string(id.size() < 4 ? 4 - id.size() : 0, '0') + id;
    LabelMap lbl = generate_vessel_mask(st, rng);
    out.push_back(render_vessel_image(lbl, st, rng, domain, id));
  }
  return out;
}

}  // namespace ida
