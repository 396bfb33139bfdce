#include <gtest/gtest.h>

#include <numbers>

#include "gradcheck.hpp"
#include "ida/losses.hpp"

using namespace ida;

namespace {

Tensor3<double> random_probs(int W, int H, Rng& rng) {
  std::uniform_real_distribution<double> u(0.01, 0.99);
  Tensor3<double> p(2, H, W);
  const std::size_t n = p.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    p.data[n + i] = u(rng);
    p.data[i] = 1 - p.data[n + i];
  }
  return p;
}

LabelMap random_labels(int W, int H, Rng& rng) {
  std::bernoulli_distribution b(0.4);
  LabelMap l(W, H);
  for (auto& v : l.data) v = b(rng);
  return l;
}

BinaryMask random_region(int W, int H, Rng& rng) {
  std::bernoulli_distribution b(0.5);
  BinaryMask m(W, H);
  for (auto& v : m.data) v = b(rng);
  return m;
}

}  // namespace

TEST(CrossEntropy, UniformIsLogTwo) {
  Tensor3<double> p(2, 4, 4, 0.5);
  LabelMap y(4, 4);
  y.data[3] = 1;
  EXPECT_NEAR(masked_cross_entropy(p, y, BinaryMask(4, 4, 1)), std::numbers::ln2, 1e-12);
  EXPECT_NEAR(masked_cross_entropy(p, y, BinaryMask(4, 4, 1)), 0.69314718, 1e-8);
}

TEST(CrossEntropy, PerfectPredictionNearZeroAndEmptyRegionZero) {
  LabelMap y(3, 3);
  y.data = {0, 1, 1, 0, 0, 1, 0, 1, 0};
  Tensor3<double> p(2, 3, 3);
  for (std::size_t i = 0; i < 9; ++i) {
    p.data[i] = y.data[i] == 0;
    p.data[9 + i] = y.data[i] == 1;
  }
  EXPECT_LT(masked_cross_entropy(p, y, BinaryMask(3, 3, 1)), 1e-6);
  Rng rng(1);
  EXPECT_EQ(masked_cross_entropy(random_probs(3, 3, rng), y, BinaryMask(3, 3, 0)), 0.0);
}

TEST(CrossEntropy, MatchesBruteForce) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_probs(9, 7, rng);
    const auto y = random_labels(9, 7, rng);
    const auto r = random_region(9, 7, rng);
    double s = 0;
    int n = 0;
    for (int yy = 0; yy < 7; ++yy)
      for (int x = 0; x < 9; ++x)
        if (r(yy, x)) {
          s += -std::log(p.at(y(yy, x), yy, x));
          ++n;
        }
    EXPECT_NEAR(masked_cross_entropy(p, y, r), n ? s / n : 0.0, 1e-9);
  }
}

TEST(Dice, HandFormulaOnFourPixels) {
  Tensor3<double> p(2, 2, 2);
  const double fg[4] = {0.9, 0.2, 0.6, 0.1};
  for (int i = 0; i < 4; ++i) {
    p.data[4 + i] = fg[i];
    p.data[i] = 1 - fg[i];
  }
  LabelMap y(2, 2);
  y.data = {1, 0, 1, 0};
  BinaryMask r(2, 2, 1);
  const double inter = 0.9 + 0.6, ps = 0.9 + 0.2 + 0.6 + 0.1, ts = 2;
  EXPECT_NEAR(masked_dice(p, y, r), 1 - (2 * inter + 1) / (ps + ts + 1), 1e-12);
  r.data[1] = 0;  // drop a background pixel from the region
  EXPECT_NEAR(masked_dice(p, y, r), 1 - (2 * inter + 1) / (ps - 0.2 + ts + 1), 1e-12);
}

TEST(Dice, ExactMatchIsZeroDisjointApproachesOne) {
  LabelMap y(8, 8);
  for (int i = 0; i < 32; ++i) y.data[i] = 1;
  Tensor3<double> p(2, 8, 8), q(2, 8, 8);
  for (std::size_t i = 0; i < 64; ++i) {
    p.data[64 + i] = y.data[i];
    p.data[i] = 1 - y.data[i];
    q.data[64 + i] = 1 - y.data[i];
    q.data[i] = y.data[i];
  }
  EXPECT_NEAR(masked_dice(p, y, BinaryMask(8, 8, 1)), 0.0, 1e-12);
  EXPECT_NEAR(masked_dice(q, y, BinaryMask(8, 8, 1)), 1 - 1.0 / 65.0, 1e-12);
}

TEST(Dice, MatchesBruteForce) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_probs(6, 5, rng);
    const auto y = random_labels(6, 5, rng);
    const auto r = random_region(6, 5, rng);
    double inter = 0, ps = 0, ts = 0;
    bool any = false;
    for (int yy = 0; yy < 5; ++yy)
      for (int x = 0; x < 6; ++x)
        if (r(yy, x)) {
          any = true;
          inter += p.at(1, yy, x) * y(yy, x);
          ps += p.at(1, yy, x);
          ts += y(yy, x);
        }
    EXPECT_NEAR(masked_dice(p, y, r), any ? 1 - (2 * inter + 1) / (ps + ts + 1) : 0.0, 1e-9);
  }
}

TEST(Consistency, HalfShiftIsMeanOverChannels) {
  // On the simplex both channels move by 0.5: (0.25 + 0.25) / 2.
  Tensor3<double> a(2, 4, 4), b(2, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) {
    a.data[i] = 0.8;
    a.data[16 + i] = 0.2;
    b.data[i] = 0.3;
    b.data[16 + i] = 0.7;
  }
  EXPECT_NEAR(masked_consistency(a, b, BinaryMask(4, 4, 1)), 0.25, 1e-12);
  EXPECT_EQ(masked_consistency(a, a, BinaryMask(4, 4, 1)), 0.0);
  EXPECT_EQ(masked_consistency(a, b, BinaryMask(4, 4, 0)), 0.0);

  // Only one channel moved: (0.25 + 0) / 2.
  auto c = a;
  for (std::size_t i = 0; i < 16; ++i) c.data[i] = 0.3;
  EXPECT_NEAR(masked_consistency(a, c, BinaryMask(4, 4, 1)), 0.125, 1e-12);
}

TEST(Consistency, MatchesBruteForce) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto a = random_probs(5, 5, rng), b = random_probs(5, 5, rng);
    const auto r = random_region(5, 5, rng);
    double s = 0;
    int n = 0;
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x)
          if (r(y, x)) {
            s += (a.at(c, y, x) - b.at(c, y, x)) * (a.at(c, y, x) - b.at(c, y, x));
            ++n;
          }
    EXPECT_NEAR(masked_consistency(a, b, r), n ? s / n : 0.0, 1e-9);
  }
}

TEST(MaskedLosses, RegionLocality) {
  Rng rng(5);
  auto p = random_probs(8, 8, rng);
  const auto q = random_probs(8, 8, rng);
  auto y = random_labels(8, 8, rng);
  const auto r = random_region(8, 8, rng);
  const double ce = masked_cross_entropy(p, y, r), di = masked_dice(p, y, r), co = masked_consistency(p, q, r);
  for (std::size_t i = 0; i < r.size(); ++i)
    if (!r.data[i]) {
      p.data[64 + i] = 0.5;
      p.data[i] = 0.5;
      y.data[i] = 1 - y.data[i];
    }
  EXPECT_EQ(masked_cross_entropy(p, y, r), ce);
  EXPECT_EQ(masked_dice(p, y, r), di);
  EXPECT_EQ(masked_consistency(p, q, r), co);
}

TEST(MaskedLosses, ShapeMismatchRejected) {
  Tensor3<double> p(2, 4, 4, 0.5);
  EXPECT_THROW(masked_cross_entropy(p, LabelMap(4, 3), BinaryMask(4, 4, 1)), ShapeError);
  EXPECT_THROW(masked_consistency(p, Tensor3<double>(2, 4, 5), BinaryMask(4, 4, 1)), ShapeError);
}

TEST(MaskedLosses, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  const auto p = random_probs(6, 6, rng);
  const auto q = random_probs(6, 6, rng);
  const auto y = random_labels(6, 6, rng);
  const auto r = random_region(6, 6, rng);
  auto f = [&](const Tensor3<double>& x) {
    return masked_cross_entropy(x, y, r) + masked_dice(x, y, r) + 0.7 * masked_consistency(x, q, r);
  };
  Tensor3<double> g(2, 6, 6);
  masked_cross_entropy(p, y, r, &g);
  masked_dice(p, y, r, &g);
  masked_consistency(p, q, r, &g, 0.7);
  EXPECT_LT(oracle::check_tensor_gradient(p, g, f), 1e-4);
}

TEST(TotalLoss, WeightedSumAndLinearity) {
  LossReport parts{0.3, 0.2, 0.11, 0.07, 0.05, 0};
  const auto r = total_loss(parts, {1, 1, 1});
  EXPECT_NEAR(r.total, 0.3 + 0.2 + 0.11 + 0.07 + 0.05, 1e-12);
  const auto r2 = total_loss(parts, {2, 1, 1});
  EXPECT_NEAR(r2.total - r.total, 0.11, 1e-14);
  const auto r3 = total_loss(parts, {1, 3, 1});
  EXPECT_NEAR(r3.total - r.total, 2 * 0.07, 1e-14);
  const auto r4 = total_loss(parts, {1, 1, 0});
  EXPECT_NEAR(r.total - r4.total, 0.05, 1e-14);
  EXPECT_EQ(total_loss(LossReport{}, {1, 1, 1}).total, 0.0);
  for (double b1 : {0.0, 0.5, 2.0})
    for (double g : {0.0, 1.0, 3.0}) {
      const auto t = total_loss(parts, {b1, 1.5, g});
      EXPECT_EQ(t.total, 0.3 + 0.2 + b1 * 0.11 + 1.5 * 0.07 + g * 0.05);
    }
}

TEST(TotalLoss, NonFinitePartIsFatal) {
  LossReport parts;
  parts.con = std::nan("");
  EXPECT_THROW(total_loss(parts, {}), NumericError);
  EXPECT_THROW(LossWeights({-1, 1, 1}).validate(), ConfigError);
}
