#include <gtest/gtest.h>

#include <set>

#include "ida/synthetic.hpp"

using namespace ida;

namespace {

DomainStyle small(DomainStyle s) {
  s.size = {96, 96};
  return s;
}

double mean_gray(const std::vector<ImageSample>& xs) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& x : xs) {
    const auto g = to_grayscale(x, PreprocessConfig{});
    for (float v : g.pixels.data) s += v;
    n += g.pixels.data.size();
  }
  return s / static_cast<double>(n);
}

}  // namespace

TEST(Synthetic, ZeroCountIsEmptyNegativeIsError) {
  Rng rng(1);
  EXPECT_TRUE(generate_synthetic_domain(retina_like_style(), 0, rng).empty());
  EXPECT_THROW(generate_synthetic_domain(retina_like_style(), -1, rng), ConfigError);
}

TEST(Synthetic, NoCorruptionGivesTwoIntensities) {
  auto st = small(cam_like_style());
  st.noise_sigma = 0;
  st.blur_radius = 0;
  st.shading = 0;
  st.texture_sigma = 0;
  Rng rng(2);
  const auto xs = generate_synthetic_domain(st, 3, rng);
  for (const auto& x : xs) {
    const auto g = to_grayscale(x, PreprocessConfig{});
    std::set<float> values(g.pixels.data.begin(), g.pixels.data.end());
    EXPECT_EQ(values.size(), 2u);
  }
}

TEST(Synthetic, DensityWithinHalfOfTarget) {
  for (auto st : {small(retina_like_style()), small(cam_like_style())}) {
    Rng rng(3);
    const auto xs = generate_synthetic_domain(st, 50, rng);
    double f = 0;
    for (const auto& x : xs) f += static_cast<double>(count_nonzero(*x.label)) / static_cast<double>(x.label->size());
    f /= static_cast<double>(xs.size());
    EXPECT_GT(f, 0.5 * st.target_density) << st.name;
    EXPECT_LT(f, 1.5 * st.target_density) << st.name;
  }
}

TEST(Synthetic, DeterministicPerSeed) {
  Rng a(4), b(4), c(5);
  const auto x = generate_synthetic_domain(small(retina_like_style()), 2, a);
  const auto y = generate_synthetic_domain(small(retina_like_style()), 2, b);
  const auto z = generate_synthetic_domain(small(retina_like_style()), 2, c);
  EXPECT_EQ(x[1].pixels.data, y[1].pixels.data);
  EXPECT_EQ(x[1].label->data, y[1].label->data);
  EXPECT_NE(x[1].label->data, z[1].label->data);
  EXPECT_EQ(x[0].id, "img_0000");
}

TEST(Synthetic, PresetsDifferInAppearance) {
  Rng a(6), b(6);
  const auto r = generate_synthetic_domain(small(retina_like_style()), 10, a);
  const auto c = generate_synthetic_domain(small(cam_like_style()), 10, b);
  EXPECT_GT(std::abs(mean_gray(r) - mean_gray(c)), 0.02);
  for (const auto& x : r) {
    EXPECT_EQ(x.channels(), 3);
    for (float v : x.pixels.data) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Synthetic, VesselsDarkerThanBackground) {
  for (auto st : {small(retina_like_style()), small(cam_like_style())}) {
    Rng rng(7);
    const auto x = generate_synthetic_domain(st, 1, rng)[0];
    const auto g = to_grayscale(x, PreprocessConfig{});
    double fg = 0, bg = 0;
    std::size_t nf = 0, nb = 0;
    for (std::size_t i = 0; i < g.pixels.data.size(); ++i)
      if (x.label->data[i]) {
        fg += g.pixels.data[i];
        ++nf;
      } else {
        bg += g.pixels.data[i];
        ++nb;
      }
    EXPECT_LT(fg / nf, bg / nb) << st.name;
  }
}
