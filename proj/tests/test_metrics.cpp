#include <gtest/gtest.h>

#include "ida/metrics.hpp"

using namespace ida;

namespace {

BinaryMask random_mask(int w, int h, Rng& rng, double p = 0.3) {
  std::bernoulli_distribution b(p);
  BinaryMask m(w, h);
  for (auto& v : m.data) v = b(rng);
  return m;
}

BinaryMask disc(int size, int cx, int cy, double r_in, double r_out) {
  BinaryMask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      m(y, x) = d <= r_out && d >= r_in;
    }
  return m;
}

// Holes of an 8-connected foreground are 4-connected background regions that
// do not touch the border; pad by one so the outside is a single region.
int holes_by_flood_fill(const BinaryMask& m) {
  BinaryMask p(m.width + 2, m.height + 2);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) p(y + 1, x + 1) = m(y, x);
  return count_components(p, 0, 4) - 1;
}

}  // namespace

TEST(Confusion, BruteForceOnRandomPairs) {
  Rng rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 100; ++t) {
    const auto pred = random_mask(16, 16, rng, u(rng)), gt = random_mask(16, 16, rng, u(rng));
    int tp = 0, fp = 0, tn = 0, fn = 0;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const int p = pred(y, x), g = gt(y, x);
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
        tn += !p && !g;
      }
    const auto c = confusion(pred, gt);
    ASSERT_EQ(c.tp, static_cast<std::uint64_t>(tp));
    ASSERT_EQ(c.fp, static_cast<std::uint64_t>(fp));
    ASSERT_EQ(c.tn, static_cast<std::uint64_t>(tn));
    ASSERT_EQ(c.fn, static_cast<std::uint64_t>(fn));
    EXPECT_EQ(c.accuracy(), (tp + tn) / 256.0);
    if (tp + fn) EXPECT_EQ(c.sensitivity(), static_cast<double>(tp) / (tp + fn));
    if (tn + fp) EXPECT_EQ(c.specificity(), static_cast<double>(tn) / (tn + fp));
    if (tp + fp + fn) EXPECT_EQ(c.dice(), 2.0 * tp / (2 * tp + fp + fn));
  }
}

TEST(Confusion, EmptyMasksAndShapes) {
  const BinaryMask z(8, 8);
  EXPECT_EQ(dice(z, z), 1.0);
  EXPECT_EQ(confusion(z, z).accuracy(), 1.0);
  EXPECT_THROW(confusion(z, BinaryMask(8, 7)), ShapeError);
}

TEST(Binarize, ThresholdIsInclusive) {
  Plane<double> p(3, 1);
  p.data = {0.49, 0.5, 0.51};
  EXPECT_EQ(binarize(p).data, (std::vector<std::uint8_t>{0, 1, 1}));
}

TEST(Auc, MatchesPairwiseOracle) {
  Rng rng(2);
  std::uniform_int_distribution<int> level(0, 9);
  for (int t = 0; t < 50; ++t) {
    const auto gt = random_mask(12, 10, rng, 0.3);
    Plane<float> s(12, 10);
    // coarse levels force plenty of ties
    for (auto& v : s.data) v = static_cast<float>(level(rng)) / 9.0f;
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = 0; j < s.size(); ++j)
        if (gt.data[i] && !gt.data[j]) {
          pairs += 1;
          wins += s.data[i] > s.data[j] ? 1.0 : s.data[i] == s.data[j] ? 0.5 : 0.0;
        }
    const auto a = auc(s, gt);
    ASSERT_TRUE(a.has_value());
    EXPECT_NEAR(*a, wins / pairs, 1e-9);
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  const auto gt = random_mask(20, 20, rng, 0.2);
  Plane<double> s(20, 20), t(20, 20);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s.data[i] = u(rng);
    t.data[i] = std::exp(3 * s.data[i]) - 7;
  }
  EXPECT_NEAR(*auc(s, gt), *auc(t, gt), 1e-12);
}

TEST(Auc, PerfectInvertedAndSingleClass) {
  BinaryMask gt(4, 1);
  gt.data = {0, 0, 1, 1};
  Plane<double> s(4, 1);
  s.data = {0.1, 0.2, 0.8, 0.9};
  EXPECT_EQ(*auc(s, gt), 1.0);
  s.data = {0.9, 0.8, 0.2, 0.1};
  EXPECT_EQ(*auc(s, gt), 0.0);
  s.data = {0.5, 0.5, 0.5, 0.5};
  EXPECT_EQ(*auc(s, gt), 0.5);
  EXPECT_FALSE(auc(s, BinaryMask(4, 1, 1)).has_value());
}

TEST(Skeleton, LineIsUnchangedThickBarThins) {
  BinaryMask line(20, 9);
  for (int x = 2; x < 18; ++x) line(4, x) = 1;
  EXPECT_EQ(skeletonize(line), line);
  BinaryMask bar(20, 9);
  for (int y = 3; y < 6; ++y)
    for (int x = 2; x < 18; ++x) bar(y, x) = 1;
  const auto sk = skeletonize(bar);
  EXPECT_GT(count_nonzero(sk), 0u);
  for (int x = 0; x < 20; ++x) {
    int col = 0;
    for (int y = 0; y < 9; ++y) col += sk(y, x);
    EXPECT_LE(col, 1) << x;
  }
  EXPECT_EQ(count_components(sk, 1, 8), 1);
}

TEST(ClDice, IdentityDilatedAndDisjoint) {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto m = random_mask(32, 32, rng, 0.4);
    EXPECT_EQ(cl_dice(m, m), 1.0);
  }
  BinaryMask line(32, 16), thick(32, 16), other(32, 16);
  for (int x = 4; x < 28; ++x) {
    line(8, x) = 1;
    for (int y = 7; y <= 9; ++y) thick(y, x) = 1;
    other(2, x) = 1;
  }
  // The thick bar's skeleton lies inside the line, and the line lies inside the bar.
  EXPECT_GT(cl_dice(line, thick), 0.9);
  EXPECT_EQ(cl_dice(line, other), 0.0);
  const BinaryMask z(32, 16);
  EXPECT_EQ(cl_dice(z, z), 1.0);
  EXPECT_EQ(cl_dice(z, line), 0.0);
}

TEST(Betti, DiscAnnulusAndComponents) {
  const auto d = disc(40, 20, 20, 0, 10);
  const auto a = disc(40, 20, 20, 4, 10);
  EXPECT_EQ(betti_numbers(d).b0, 1);
  EXPECT_EQ(betti_numbers(d).b1, 0);
  EXPECT_EQ(betti_numbers(a).b0, 1);
  EXPECT_EQ(betti_numbers(a).b1, 1);
  BinaryMask diag(4, 4);
  diag(0, 0) = diag(1, 1) = diag(2, 2) = 1;  // 8-connected: one component
  EXPECT_EQ(betti_numbers(diag).b0, 1);
  EXPECT_EQ(betti_numbers(diag).b1, 0);
}

TEST(Betti, HolesAgreeWithFloodFillOracle) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const auto m = random_mask(14, 11, rng, 0.3 + 0.4 * (t % 3) / 2.0);
    const auto b = betti_numbers(m);
    ASSERT_EQ(b.b0, count_components(m, 1, 8));
    ASSERT_EQ(b.b1, holes_by_flood_fill(m)) << t;
  }
}

TEST(BettiMatching, ZeroOnIdentity) {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    const auto m = random_mask(100, 70, rng, 0.4);
    EXPECT_EQ(betti_matching_error(m, m), 0.0);
  }
}

TEST(BettiMatching, PlantedComponentAndHoleEachCountOne) {
  BinaryMask gt(64, 64);
  for (int x = 5; x < 60; ++x) gt(30, x) = 1;
  auto extra = gt;
  extra(10, 10) = extra(10, 11) = 1;
  auto errs = betti_patch_errors(extra, gt);
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_EQ(errs[0], 1);

  const auto solid = disc(64, 32, 32, 0, 12);
  const auto ring = disc(64, 32, 32, 5, 12);
  errs = betti_patch_errors(ring, solid);
  EXPECT_EQ(errs[0], 1);
  EXPECT_EQ(betti_matching_error(ring, solid), 1.0);
}

TEST(BettiMatching, MeanOverTiles) {
  // 128x64 -> two tiles; the planted component sits in the right one
  BinaryMask gt(128, 64), pred(128, 64);
  pred(5, 100) = 1;
  const auto errs = betti_patch_errors(pred, gt);
  ASSERT_EQ(errs.size(), 2u);
  EXPECT_EQ(errs[0], 0);
  EXPECT_EQ(errs[1], 1);
  EXPECT_EQ(betti_matching_error(pred, gt), 0.5);
}

TEST(ImageMetrics, OrderAndPerfectPrediction) {
  Rng rng(7);
  const auto gt = random_mask(32, 32, rng, 0.3);
  Plane<float> p(32, 32);
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = gt.data[i] ? 0.9f : 0.1f;
  const auto m = image_metrics("a", p, gt);
  EXPECT_EQ(m.id, "a");
  for (int k : {0, 1, 2, 3, 4, 5}) EXPECT_EQ(m.values[k], 1.0) << kMetricNames[k];
  EXPECT_EQ(m.values[6], 0.0);
  EXPECT_TRUE(std::isnan(image_metrics("b", p, BinaryMask(32, 32)).values[0]));
}

TEST(Aggregate, PopulationStdSkippingNaN) {
  const auto s = mean_std({1.0, 3.0, std::nan("")});
  EXPECT_EQ(s.mean, 2.0);
  EXPECT_EQ(s.std, 1.0);
  EXPECT_EQ(s.n, 2u);
  EXPECT_TRUE(std::isnan(mean_std({}).mean));
  std::vector<ImageMetrics> xs(2);
  xs[0].values.fill(0.2);
  xs[1].values.fill(0.6);
  const auto r = aggregate(xs);
  EXPECT_NEAR(r.dice(), 0.4, 1e-15);
  EXPECT_NEAR(r.summary[6].std, 0.2, 1e-15);
}
