#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "streamloc/predictor.hpp"

using namespace streamloc;

namespace {

Codebook unit_codebook(int v) {
    Codebook cb;
    for (int i = 0; i < v; ++i) {
        std::vector<double> c(static_cast<std::size_t>(v), 0.0);
        c[static_cast<std::size_t>(i)] = 1.0;
        cb.centers.push_back(c);
    }
    return cb;
}

}  // namespace

TEST(Encode, SingleBinMass) {
    const auto cb = unit_codebook(4);
    TubeFrame f{1, Box{0, 0, 10, 10}, {}};
    for (int i = 0; i < 5; ++i) f.descriptors.push_back({{1.0 + i, 2.0}, {0.1, 0.0, 0.9, 0.05}});
    f.descriptors.push_back({{50, 50}, {1.0, 0.0, 0.0, 0.0}});  // outside the tube box
    const auto feat = encode_segment({f}, cb, 2, "v");
    EXPECT_EQ(feat.histogram, (std::vector<double>{0, 0, 1, 0}));
    EXPECT_FALSE(feat.empty);
    EXPECT_EQ(feat.segment, 2);
}

TEST(Encode, EmptyTubeIsFlagged) {
    const auto cb = unit_codebook(3);
    const auto feat = encode_segment({TubeFrame{1, Box{0, 0, 5, 5}, {{{20, 20}, {1, 0, 0}}}}}, cb);
    EXPECT_TRUE(feat.empty);
    EXPECT_EQ(feat.histogram, (std::vector<double>{0, 0, 0}));
    EXPECT_THROW((void)encode_segment({}, Codebook{}), Error);
}

TEST(Encode, MatchesLinearScanQuantizer) {
    Rng rng(51);
    for (int trial = 0; trial < 20; ++trial) {
        Codebook cb;
        for (int k = 0; k < 8; ++k) cb.centers.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
        std::vector<TubeFrame> frames;
        std::vector<double> expected(8, 0.0);
        double total = 0.0;
        for (int t = 1; t <= 3; ++t) {
            TubeFrame f{t, Box{rng.uniform(0, 10), rng.uniform(0, 10), 15, 15}, {}};
            for (int d = 0; d < 20; ++d) {
                PlacedDescriptor pd{{rng.uniform(0, 30), rng.uniform(0, 30)}, {rng.uniform(), rng.uniform(), rng.uniform()}};
                if (f.box.contains(pd.position)) {
                    std::size_t best = 0;
                    double bd = 1e300;
                    for (std::size_t k = 0; k < cb.centers.size(); ++k) {
                        double s = 0.0;
                        for (int i = 0; i < 3; ++i) s += std::pow(pd.values[i] - cb.centers[k][i], 2);
                        if (s < bd) bd = s, best = k;
                    }
                    expected[best] += 1.0;
                    total += 1.0;
                }
                f.descriptors.push_back(pd);
            }
            frames.push_back(f);
        }
        const auto feat = encode_segment(frames, cb);
        ASSERT_GT(total, 0.0);
        for (int k = 0; k < 8; ++k) EXPECT_NEAR(feat.histogram[k], expected[k] / total, 1e-12);
    }
}

TEST(Codebook, DistinctCentersAndErrors) {
    Rng rng(52);
    std::vector<std::vector<double>> ds;
    for (int i = 0; i < 40; ++i) ds.push_back({rng.uniform(), rng.uniform()});
    const auto cb = build_codebook(ds, 6, 1);
    EXPECT_EQ(cb.size(), 6);
    EXPECT_EQ(build_codebook(ds, 6, 1).centers, cb.centers);
    EXPECT_THROW((void)build_codebook(ds, 1, 1), Error);
    EXPECT_THROW((void)build_codebook({{1.0}, {1.0}, {1.0}}, 4, 1), Error);
}

TEST(Intervals, EqualSplit) {
    EXPECT_EQ(interval_ends(1, 30, 3), (std::vector<int>{10, 20, 30}));
    EXPECT_EQ(interval_ends(5, 9, 5), (std::vector<int>{5, 6, 7, 8, 9}));
    EXPECT_THROW((void)interval_ends(1, 2, 3), Error);
}

TEST(Intervals, CumulativeFeatureUsesLastM) {
    const std::vector<std::vector<double>> segs{{1, 0}, {0, 1}, {0.5, 0.5}, {1, 0}};
    const auto x = cumulative_feature(segs, 2);
    EXPECT_NEAR(x[0], 0.75, 1e-15);
    EXPECT_NEAR(x[1], 0.25, 1e-15);
    const auto early = cumulative_feature({{1, 0}}, 3);
    EXPECT_NEAR(early[0], 1.0 / 3.0, 1e-15);
}

TEST(DpConfidence, SigmoidAtZero) { EXPECT_EQ(sigmoid(0.0), 0.5); }

TEST(DpConfidence, ProductChain) {
    const auto conf = dp_confidence({{0.8}, {0.9}}, 1);
    EXPECT_NEAR(conf[0], 0.8, 1e-15);
    EXPECT_NEAR(conf[1], 0.72, 1e-15);
}

TEST(DpConfidence, MatchesAlignmentEnumeration) {
    Rng rng(53);
    for (int trial = 0; trial < 100; ++trial) {
        const int m = static_cast<int>(rng.uniform_int(1, 3));
        const int steps = static_cast<int>(rng.uniform_int(1, 5));
        std::vector<std::vector<double>> scores(steps, std::vector<double>(m));
        for (auto& row : scores)
            for (auto& v : row) v = rng.uniform();
        const auto got = dp_confidence(scores, m);
        const auto want = oracle::alignment_max(scores, m);
        for (int k = 0; k < steps; ++k) EXPECT_NEAR(got[k], want[k], 1e-12);
    }
}

TEST(DpConfidence, UntrimmedResetAfterLowStreak) {
    DpConfidence dp(2, true, 0.01, 2);
    dp.push({0.001, 0.001});
    EXPECT_LT(dp.confidence(), 0.01);
    dp.push({0.001, 0.001});
    EXPECT_EQ(dp.table()[0], 1.0);
    EXPECT_NEAR(dp.push({0.7, 0.2}), 0.7, 1e-15);
    EXPECT_THROW((void)dp.push({0.5}), Error);
}

TEST(DpSvm, TrainsPerClassAndSegment) {
    std::vector<DpTrainingSegment> data;
    for (int cls = 0; cls < 2; ++cls)
        for (int seg = 1; seg <= 2; ++seg)
            for (int v = 0; v < 3; ++v) data.push_back({cls, seg, cls == 0 ? std::vector<double>{0.9, 0.1} : std::vector<double>{0.1, 0.9}});
    const auto bank = train_dp_svm(data, {"a", "b"}, 2, 1.0);
    ASSERT_EQ(bank.size(), 2u);
    ASSERT_EQ(bank[0].size(), 2u);
    EXPECT_GT(bank[0][0].decision({0.9, 0.1}), 0.0);
    EXPECT_LT(bank[1][1].decision({0.9, 0.1}), 0.0);
    data.erase(std::remove_if(data.begin(), data.end(), [](const auto& d) { return d.class_index == 1 && d.segment == 2; }),
               data.end());
    try {
        (void)train_dp_svm(data, {"a", "b"}, 2, 1.0);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("m = 2"), std::string::npos);
    }
}

TEST(Bank, JsonRoundTripAndTracker) {
    SegmentClassifierBank bank;
    bank.classes = {"a", "b"};
    bank.segments = 2;
    bank.omega = 4.0;
    bank.codebook = unit_codebook(2);
    SsvmModel a, b;
    a.segments = b.segments = 2;
    a.w = {1.0, -1.0, 0.0};
    b.w = {-1.0, 1.0, 0.0};
    bank.ssvm = {a, b};
    const auto back = SegmentClassifierBank::from_json(bank.to_json());
    EXPECT_EQ(back.to_json(), bank.to_json());

    ConfidenceTracker tracker(back);
    const auto c1 = tracker.push({1.0, 0.0});
    EXPECT_NEAR(c1[0], 0.5, 1e-15);
    EXPECT_NEAR(c1[1], -0.5, 1e-15);
    const auto c2 = tracker.push({1.0, 0.0});
    EXPECT_NEAR(c2[0], 1.0, 1e-15);
    EXPECT_EQ(tracker.intervals(), 2);

    auto bad = bank.to_json();
    bad["version"] = 99;
    EXPECT_THROW((void)SegmentClassifierBank::from_json(bad), Error);
}

TEST(Descriptor, ProjectsColorHistogram) {
    Superpixel sp;
    sp.color_hist.assign(kColorBins, 0.0);
    sp.color_hist[64 * 3 + 8 * 2 + 5] = 1.0;  // hue 3, intensity bin 5
    sp.flow_hist = {1, 0, 0, 0, 0, 0, 0, 0};
    sp.mean_flow_mag = 2.0;
    const auto d = superpixel_descriptor(sp);
    ASSERT_EQ(d.size(), 8u + 1u + kDescriptorColorBins);
    EXPECT_EQ(d[8], 2.0);
    EXPECT_EQ(d[9 + 3 * 4 + 2], 1.0);
}
