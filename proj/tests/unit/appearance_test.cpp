#include <gtest/gtest.h>

#include <cmath>

#include "streamloc/appearance.hpp"

using namespace streamloc;

namespace {

AppearanceSample sample(std::vector<double> color, std::vector<double> flow, bool fg) {
    return {std::move(color), std::move(flow), fg};
}

AppearanceParams with_k(int k, int window = 5) {
    AppearanceParams p;
    p.clusters = k;
    p.window = window;
    return p;
}

LabeledFrame two_blobs(Rng& rng, double jitter) {
    LabeledFrame f;
    for (int i = 0; i < 6; ++i) f.push_back(sample({rng.uniform(-jitter, jitter), rng.uniform(-jitter, jitter)}, {1, 0}, true));
    for (int i = 0; i < 6; ++i)
        f.push_back(sample({10 + rng.uniform(-jitter, jitter), 10 + rng.uniform(-jitter, jitter)}, {0, 0}, false));
    return f;
}

double sse(const std::vector<std::vector<double>>& pts, const std::vector<int>& part, std::vector<std::vector<double>>& c) {
    c.assign(2, std::vector<double>(pts[0].size(), 0.0));
    std::vector<int> n(2, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        ++n[part[i]];
        for (std::size_t d = 0; d < pts[i].size(); ++d) c[part[i]][d] += pts[i][d];
    }
    if (n[0] == 0 || n[1] == 0) return std::numeric_limits<double>::infinity();
    for (int k = 0; k < 2; ++k)
        for (auto& v : c[k]) v /= n[k];
    double s = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) s += squared_distance(pts[i], c[part[i]]);
    return s;
}

}  // namespace

TEST(Appearance, SmoothedRatioThreeToOne) {
    const LabeledFrame f{sample({1, 0}, {0, 0}, true), sample({1.1, 0}, {0, 0}, true), sample({0.9, 0}, {0, 0}, true),
                         sample({1, 0.1}, {0, 0}, false)};
    const auto m = AppearanceModel::fit_frames({f}, with_k(1));
    ASSERT_EQ(m.clusters().size(), 1u);
    EXPECT_EQ(m.clusters()[0].foreground_count, 3);
    EXPECT_EQ(m.clusters()[0].background_count, 1);
    EXPECT_DOUBLE_EQ(m.clusters()[0].ratio, 2.0);
}

TEST(Appearance, SmoothedRatioWithoutBackground) {
    const LabeledFrame f{sample({1, 0}, {0, 0}, true), sample({1.1, 0}, {0, 0}, true), sample({0.9, 0}, {0, 0}, true),
                         sample({1, 0.1}, {0, 0}, true)};
    const auto m = AppearanceModel::fit_frames({f}, with_k(1));
    EXPECT_DOUBLE_EQ(m.clusters()[0].ratio, 5.0);
    EXPECT_TRUE(std::isfinite(m.foreground_score({1, 0}, {0, 0})));
}

TEST(Appearance, TwoBlobsMatchExhaustiveTwoMeans) {
    Rng rng(11);
    const auto f = two_blobs(rng, 1.5);
    std::vector<std::vector<double>> pts;
    for (const auto& s : f) pts.push_back(s.color);
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_centers;
    for (int mask = 0; mask < (1 << pts.size()); ++mask) {
        std::vector<int> part(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) part[i] = (mask >> i) & 1;
        std::vector<std::vector<double>> c;
        const double s = sse(pts, part, c);
        if (s < best) best = s, best_centers = c;
    }
    const auto m = AppearanceModel::fit_frames({f}, with_k(2));
    ASSERT_EQ(m.clusters().size(), 2u);
    for (const auto& oracle_center : best_centers) {
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& c : m.clusters()) nearest = std::min(nearest, euclidean(c.color_center, oracle_center));
        EXPECT_LT(nearest, 1e-9);
    }
}

TEST(Appearance, ScoreAtClusterCenter) {
    const LabeledFrame f{sample({0, 0}, {0, 0}, true), sample({2, 0}, {0, 2}, false)};
    const auto m = AppearanceModel::fit_frames({f}, with_k(1));
    const auto& c = m.clusters()[0];
    ASSERT_DOUBLE_EQ(c.ratio, 1.0);
    ASSERT_DOUBLE_EQ(c.radius, 1.0);
    ASSERT_DOUBLE_EQ(c.flow_spread, 1.0);
    EXPECT_DOUBLE_EQ(m.foreground_score({1, 0}, {0, 1}), 2.0);
}

TEST(Appearance, ScoreAtUnitNormalizedDistance) {
    const LabeledFrame f{sample({0, 0}, {0, 0}, true), sample({2, 0}, {0, 2}, false)};
    const auto m = AppearanceModel::fit_frames({f}, with_k(1));
    EXPECT_NEAR(m.foreground_score({2, 0}, {0, 0}), 2.0 * std::exp(-1.0), 1e-12);
    EXPECT_NEAR(m.foreground_score({2, 0}, {0, 0}), 0.7358, 1e-4);
}

TEST(Appearance, ScoreMatchesClosedForm) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        LabeledFrame f;
        for (int i = 0; i < 30; ++i)
            f.push_back(sample({rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5)},
                               {rng.uniform(-2, 2), rng.uniform(-2, 2)}, rng.uniform() < 0.4));
        AppearanceParams p = with_k(4);
        p.seed = static_cast<std::uint64_t>(trial);
        const auto m = AppearanceModel::fit_frames({f}, p);
        const std::vector<double> color{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5)};
        const std::vector<double> flow{rng.uniform(-2, 2), rng.uniform(-2, 2)};
        std::size_t k = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < m.clusters().size(); ++c) {
            double d = 0.0;
            for (int i = 0; i < 3; ++i) d += std::pow(color[i] - m.clusters()[c].color_center[i], 2);
            if (d < bd) bd = d, k = c;
        }
        const auto& c = m.clusters()[k];
        const double df = std::hypot(flow[0] - c.flow_mean[0], flow[1] - c.flow_mean[1]);
        const double expected = std::exp(-std::sqrt(bd) / c.radius) * c.ratio + std::exp(-df / c.flow_spread);
        EXPECT_NEAR(m.foreground_score(color, flow), expected, 1e-12);
        EXPECT_GT(m.foreground_score(color, flow), 0.0);
        EXPECT_LE(m.foreground_score(color, flow), c.ratio + 1.0);
    }
}

TEST(Appearance, ClusterStatisticsAreConsistent) {
    Rng rng(13);
    LabeledFrame f;
    for (int i = 0; i < 40; ++i)
        f.push_back(sample({rng.uniform(0, 5), rng.uniform(0, 5)}, {rng.uniform(-2, 2), rng.uniform(-2, 2)}, i % 3 == 0));
    const auto m = AppearanceModel::fit_frames({f}, with_k(5));
    int fg = 0, bg = 0;
    for (const auto& c : m.clusters()) {
        fg += c.foreground_count;
        bg += c.background_count;
        EXPECT_DOUBLE_EQ(c.ratio, (c.foreground_count + 1.0) / (c.background_count + 1.0));
    }
    EXPECT_EQ(fg, 14);
    EXPECT_EQ(bg, 26);
}

TEST(Appearance, WindowOfOneKeepsOnlyNewestFrame) {
    Rng rng(14);
    const auto a = two_blobs(rng, 1.0);
    LabeledFrame b;
    for (int i = 0; i < 5; ++i) b.push_back(sample({50 + 0.1 * i, 0}, {2, 0}, true));
    for (int i = 0; i < 5; ++i) b.push_back(sample({0, 50 + 0.1 * i}, {0, 0}, false));
    auto m = AppearanceModel::fit_frames({a}, with_k(2, 1));
    m.update(b);
    ASSERT_EQ(m.window().size(), 1u);
    const auto fresh = AppearanceModel::fit_frames({b}, with_k(2, 1));
    ASSERT_EQ(m.clusters().size(), fresh.clusters().size());
    for (const auto& c : m.clusters()) {
        bool found = false;
        for (const auto& d : fresh.clusters())
            if (euclidean(c.color_center, d.color_center) < 1e-9 && c.foreground_count == d.foreground_count &&
                c.background_count == d.background_count)
                found = true;
        EXPECT_TRUE(found);
    }
}

TEST(Appearance, IdenticalFramesAreAFixedPoint) {
    Rng rng(15);
    const auto f = two_blobs(rng, 1.0);
    auto m = AppearanceModel::fit_frames({f}, with_k(2, 3));
    for (int i = 0; i < 3; ++i) m.update(f);
    const auto before = m.clusters();
    m.update(f);
    ASSERT_EQ(before.size(), m.clusters().size());
    for (std::size_t k = 0; k < before.size(); ++k) {
        for (std::size_t d = 0; d < before[k].color_center.size(); ++d)
            EXPECT_NEAR(before[k].color_center[d], m.clusters()[k].color_center[d], 1e-9);
        EXPECT_NEAR(before[k].radius, m.clusters()[k].radius, 1e-9);
    }
}

TEST(Appearance, WindowMatchesFreshFitOnSameContents) {
    Rng rng(16);
    std::vector<LabeledFrame> frames;
    for (int i = 0; i < 6; ++i) frames.push_back(two_blobs(rng, 1.0));
    auto m = AppearanceModel::fit_frames({frames[0]}, with_k(2, 3));
    for (int i = 1; i < 6; ++i) m.update(frames[i]);
    const auto fresh = AppearanceModel::fit_frames({frames[3], frames[4], frames[5]}, with_k(2, 3));
    ASSERT_EQ(m.window().size(), 3u);
    for (const auto& c : m.clusters()) {
        double nearest = std::numeric_limits<double>::infinity();
        const AppearanceCluster* match = nullptr;
        for (const auto& d : fresh.clusters()) {
            const double dist = euclidean(c.color_center, d.color_center);
            if (dist < nearest) nearest = dist, match = &d;
        }
        EXPECT_LT(nearest, 1e-9);
        EXPECT_EQ(c.foreground_count, match->foreground_count);
        EXPECT_EQ(c.background_count, match->background_count);
        EXPECT_NEAR(c.flow_spread, match->flow_spread, 1e-9);
    }
}

TEST(Appearance, ReducesKForFewSamplesAndRejectsEmpty) {
    const LabeledFrame f{sample({0, 0}, {0, 0}, true), sample({5, 5}, {0, 0}, false)};
    EXPECT_EQ(AppearanceModel::fit_frames({f}, with_k(20)).clusters().size(), 2u);
    EXPECT_THROW((void)AppearanceModel::fit_frames({LabeledFrame{}}, with_k(2)), Error);
    EXPECT_THROW((void)AppearanceModel().foreground_score({0, 0}, {0, 0}), Error);
}
