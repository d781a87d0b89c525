#include <gtest/gtest.h>

#include "oracles.hpp"
#include "streamloc/evaluator.hpp"

using namespace streamloc;

namespace {

GroundTruth gt_with(const std::string& id, const std::string& label, int t0, int t1, Box box) {
    GroundTruth g;
    g.video_id = id;
    g.label = label;
    g.t_start = t0;
    g.t_end = t1;
    g.boxes.assign(static_cast<std::size_t>(t1), {});
    for (int t = t0; t <= t1; ++t) g.boxes[static_cast<std::size_t>(t - 1)] = {box};
    return g;
}

Detection det_with(const std::string& id, const std::string& label, int t0, int t1, Box box, double conf) {
    Detection d;
    d.video_id = id;
    d.label = label;
    d.confidence = conf;
    for (int t = t0; t <= t1; ++t) d.boxes[t] = box;
    return d;
}

TrackRecord record(int frame, std::vector<double> conf, int interval) {
    TrackRecord r;
    r.frame = frame;
    r.confidences = std::move(conf);
    r.interval = interval;
    return r;
}

}  // namespace

TEST(TubeIou, IdenticalTubes) {
    const auto g = gt_with("v", "a", 1, 5, {3, 4, 10, 12});
    EXPECT_DOUBLE_EQ(tube_iou(det_with("v", "a", 1, 5, {3, 4, 10, 12}, 1.0), g), 1.0);
}

TEST(TubeIou, HalfShiftedBoxesGiveOneThird) {
    const auto g = gt_with("v", "a", 1, 4, {0, 0, 10, 10});
    EXPECT_NEAR(tube_iou(det_with("v", "a", 1, 4, {5, 0, 10, 10}, 1.0), g), 50.0 / 150.0, 1e-15);
}

TEST(TubeIou, MissingFramesCountZero) {
    const auto g = gt_with("v", "a", 1, 4, {0, 0, 10, 10});
    EXPECT_DOUBLE_EQ(tube_iou(det_with("v", "a", 1, 2, {0, 0, 10, 10}, 1.0), g), 0.5);
    EXPECT_DOUBLE_EQ(tube_iou(det_with("v", "a", 1, 8, {0, 0, 10, 10}, 1.0), g), 0.5);
}

TEST(TubeIou, MatchesPixelOracle) {
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        const auto [dets, gts] = oracle::random_detection_case(rng);
        for (const auto& d : dets)
            for (const auto& g : gts) EXPECT_NEAR(tube_iou(d, g), oracle::pixel_tube_iou(d, g), 1e-12);
    }
}

TEST(Roc, PerfectDetectorReachesFullRecallAtZeroFpr) {
    std::vector<GroundTruth> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 4; ++i) {
        const auto id = "v" + std::to_string(i);
        gts.push_back(gt_with(id, "a", 1, 3, {0, 0, 8, 8}));
        dets.push_back(det_with(id, "a", 1, 3, {0, 0, 8, 8}, 1.0 - 0.1 * i));
    }
    const auto c = roc_at_overlap(dets, gts, 0.2);
    bool reached = false;
    for (const auto& [fpr, tpr] : c.points) reached = reached || (fpr == 0.0 && tpr == 1.0);
    EXPECT_TRUE(reached);
    EXPECT_DOUBLE_EQ(auc(c), 1.0);
}

TEST(Roc, EmptyDetectionSetHasZeroTpr) {
    const std::vector<GroundTruth> gts{gt_with("v", "a", 1, 3, {0, 0, 8, 8})};
    const auto c = roc_at_overlap({}, gts, 0.2);
    for (const auto& p : c.points) EXPECT_EQ(p.second, 0.0);
}

TEST(Roc, WorstFirstRankingMatchesConfusionOracle) {
    std::vector<GroundTruth> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 5; ++i) {
        const auto id = "v" + std::to_string(i);
        gts.push_back(gt_with(id, "a", 1, 3, {0, 0, 8, 8}));
        dets.push_back(det_with(id, "a", 1, 3, {0, 0, 8, 8}, 0.1 * i));          // correct, low confidence
        dets.push_back(det_with(id, "b", 1, 3, {0, 0, 8, 8}, 1.0 + 0.1 * i));    // wrong class, high confidence
    }
    const auto c = roc_at_overlap(dets, gts, 0.2);
    EXPECT_EQ(c.points, oracle::confusion_roc(dets, gts, 0.2));
    for (const auto& [fpr, tpr] : c.points) EXPECT_LE(tpr, fpr + 1e-12);
    EXPECT_DOUBLE_EQ(auc(c), 0.0);
}

TEST(Roc, FprDenominatorIsUnmatchedDetections) {
    const std::vector<GroundTruth> gts{gt_with("v", "a", 1, 2, {0, 0, 8, 8})};
    const std::vector<Detection> dets{det_with("v", "a", 1, 2, {0, 0, 8, 8}, 0.9),
                                      det_with("v", "a", 1, 2, {40, 40, 8, 8}, 0.5),
                                      det_with("v", "b", 1, 2, {0, 0, 8, 8}, 0.4)};
    const auto c = roc_at_overlap(dets, gts, 0.2);
    const std::vector<std::pair<double, double>> want{{0, 0}, {0, 1}, {0.5, 1}, {1, 1}};
    EXPECT_EQ(c.points, want);
}

TEST(Roc, ConfidenceTiesMoveTogether) {
    const std::vector<GroundTruth> gts{gt_with("v", "a", 1, 2, {0, 0, 8, 8})};
    const std::vector<Detection> dets{det_with("v", "b", 1, 2, {0, 0, 8, 8}, 0.5),
                                      det_with("v", "a", 1, 2, {0, 0, 8, 8}, 0.5)};
    const auto c = roc_at_overlap(dets, gts, 0.2);
    const std::vector<std::pair<double, double>> want{{0, 0}, {1, 1}};
    EXPECT_EQ(c.points, want);
}

TEST(Auc, DiagonalIsHalf) {
    EvalCurve c;
    c.points = {{0, 0}, {1, 1}};
    EXPECT_DOUBLE_EQ(auc(c), 0.5);
}

TEST(Auc, TopEdgeIsOne) {
    EvalCurve c;
    c.points = {{0, 1}, {1, 1}};
    EXPECT_DOUBLE_EQ(auc(c), 1.0);
}

TEST(Auc, RandomStepCurveMatchesRiemannSum) {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        EvalCurve c;
        c.points.emplace_back(0.0, 0.0);
        std::vector<double> xs;
        for (int k = 0; k < 6; ++k) xs.push_back(rng.uniform_int(0, 20) / 20.0);
        std::sort(xs.begin(), xs.end());
        double y = 0.0;
        for (double x : xs) {
            c.points.emplace_back(x, y);  // horizontal run
            y = std::min(1.0, y + rng.uniform_int(0, 4) / 10.0);
            c.points.emplace_back(x, y);  // vertical step
        }
        c.points.emplace_back(1.0, y);
        // fine Riemann sum of the step function (right-continuous, value after the step)
        double riemann = 0.0;
        const int n = 20000;
        for (int s = 0; s < n; ++s) {
            const double x = (s + 0.5) / n;
            double v = 0.0;
            for (const auto& p : c.points)
                if (p.first <= x) v = p.second;
            riemann += v / n;
        }
        EXPECT_NEAR(auc(c), riemann, 1e-9);
    }
}

TEST(AucVsThreshold, DefaultGrid) {
    const auto th = default_overlap_thresholds();
    ASSERT_EQ(th.size(), 6u);
    EXPECT_DOUBLE_EQ(th.front(), 0.1);
    EXPECT_DOUBLE_EQ(th.back(), 0.6);
}

TEST(AucVsThreshold, DecreasesWithStricterOverlap) {
    std::vector<GroundTruth> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 6; ++i) {
        const auto id = "v" + std::to_string(i);
        gts.push_back(gt_with(id, "a", 1, 3, {0, 0, 10, 10}));
        dets.push_back(det_with(id, "a", 1, 3, {static_cast<double>(i), 0, 10, 10}, 1.0 - 0.1 * i));
        dets.push_back(det_with(id, "b", 1, 3, {0, 0, 10, 10}, 0.5));
    }
    const auto c = auc_vs_threshold(dets, gts);
    for (std::size_t k = 1; k < c.points.size(); ++k) EXPECT_LE(c.points[k].second, c.points[k - 1].second + 1e-12);
}

TEST(PrecisionRecall, PerfectRankingHasUnitAp) {
    std::vector<GroundTruth> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 3; ++i) {
        const auto id = "v" + std::to_string(i);
        gts.push_back(gt_with(id, "a", 1, 3, {0, 0, 8, 8}));
        dets.push_back(det_with(id, "a", 1, 3, {0, 0, 8, 8}, 1.0 - 0.1 * i));
        dets.push_back(det_with(id, "b", 1, 3, {0, 0, 8, 8}, 0.1 - 0.01 * i));
    }
    EXPECT_DOUBLE_EQ(precision_recall(dets, gts).average_precision, 1.0);
}

TEST(PrecisionRecall, MatchesInterpolationOracle) {
    Rng rng(21);
    for (int i = 0; i < 100; ++i) {
        std::vector<GroundTruth> gts;
        std::vector<Detection> dets;
        const int n = rng.uniform_int(1, 5);
        for (int v = 0; v < n; ++v) {
            const auto id = "v" + std::to_string(v);
            gts.push_back(gt_with(id, "a", 1, 3, {0, 0, 8, 8}));
            for (int k = 0; k < 2; ++k)
                dets.push_back(det_with(id, rng.uniform() < 0.6 ? "a" : "b", 1, 3,
                                        {static_cast<double>(rng.uniform_int(0, 8)), 0, 8, 8}, rng.uniform_int(0, 5) / 5.0));
        }
        EXPECT_NEAR(precision_recall(dets, gts).average_precision, oracle::average_precision(dets, gts, 0.2), 1e-12);
    }
}

TEST(Matching, OneDetectionPerGroundTruth) {
    const std::vector<GroundTruth> gts{gt_with("v", "a", 1, 2, {0, 0, 8, 8})};
    const std::vector<Detection> dets{det_with("v", "a", 1, 2, {0, 0, 8, 8}, 0.9),
                                      det_with("v", "a", 1, 2, {0, 0, 8, 8}, 0.8)};
    const auto m = match_detections(dets, gts, 0.2);
    EXPECT_EQ(m.true_positive, (std::vector<bool>{true, false}));
}

TEST(Matching, ClassAndVideoMustAgree) {
    const std::vector<GroundTruth> gts{gt_with("v", "a", 1, 2, {0, 0, 8, 8})};
    const std::vector<Detection> dets{det_with("w", "a", 1, 2, {0, 0, 8, 8}, 0.9),
                                      det_with("v", "b", 1, 2, {0, 0, 8, 8}, 0.8)};
    const auto m = match_detections(dets, gts, 0.2);
    EXPECT_EQ(m.true_positive, (std::vector<bool>{false, false}));
}

TEST(Observation, ConstantWhenAlwaysCorrect) {
    ObservedVideo v;
    v.gt = gt_with("v", "b", 1, 20, {0, 0, 5, 5});
    for (int f = 1; f <= 20; ++f) v.records.push_back(record(f, {0.1, 0.9}, f >= 5 ? 1 + (f - 5) / 5 : 0));
    const auto c = accuracy_vs_observation({v}, {"a", "b"});
    ASSERT_EQ(c.points.size(), 11u);
    for (std::size_t i = 0; i < c.points.size(); ++i) {
        EXPECT_DOUBLE_EQ(c.points[i].first, i / 10.0);
        EXPECT_DOUBLE_EQ(c.points[i].second, 1.0);
    }
}

TEST(Observation, ZeroFractionUsesFirstInterval) {
    ObservedVideo v;
    v.gt = gt_with("v", "a", 1, 20, {0, 0, 5, 5});
    for (int f = 1; f <= 20; ++f) v.records.push_back(record(f, f < 15 ? std::vector<double>{1, 0} : std::vector<double>{0, 1}, f >= 5 ? 1 : 0));
    const auto conf = confidences_at(v.records, 1.0);
    ASSERT_TRUE(conf.has_value());
    EXPECT_EQ(*conf, (std::vector<double>{1, 0}));
    const auto c = accuracy_vs_observation({v}, {"a", "b"});
    EXPECT_DOUBLE_EQ(c.points.front().second, 1.0);
    EXPECT_DOUBLE_EQ(c.points.back().second, 0.0);
}

TEST(Observation, NoCompletedIntervalIsWrong) {
    ObservedVideo v;
    v.gt = gt_with("v", "a", 1, 5, {0, 0, 5, 5});
    for (int f = 1; f <= 5; ++f) v.records.push_back(record(f, {1, 0}, 0));
    EXPECT_FALSE(classified_correctly(v, {"a", "b"}, 5));
}

TEST(Observation, RandomTensorMatchesDirectRecomputation) {
    Rng rng(8);
    const std::vector<std::string> classes{"a", "b", "c"};
    std::vector<ObservedVideo> videos;
    for (int i = 0; i < 12; ++i) {
        ObservedVideo v;
        const int t0 = rng.uniform_int(1, 5), t1 = rng.uniform_int(t0 + 3, 30);
        v.gt = gt_with("v" + std::to_string(i), classes[static_cast<std::size_t>(rng.uniform_int(0, 2))], t0, t1, {0, 0, 4, 4});
        int interval = 0;
        for (int f = 1; f <= 30; ++f) {
            if (rng.uniform() < 0.3) ++interval;
            v.records.push_back(record(f, {rng.uniform(), rng.uniform(), rng.uniform()}, interval));
        }
        videos.push_back(v);
    }
    const auto c = accuracy_vs_observation(videos, classes);
    for (const auto& [f, acc] : c.points) {
        int correct = 0;
        for (const auto& v : videos) {
            const double cutoff = v.gt.t_start + f * (v.gt.t_end - v.gt.t_start);
            const TrackRecord* use = nullptr;
            for (const auto& r : v.records)
                if (r.interval >= 1 && r.frame <= cutoff + 1e-9) use = &r;
            if (!use)
                for (const auto& r : v.records)
                    if (r.interval >= 1) {
                        use = &r;
                        break;
                    }
            if (!use) continue;
            const auto& cf = use->confidences;
            const auto best = std::max_element(cf.begin(), cf.end()) - cf.begin();
            correct += classes[static_cast<std::size_t>(best)] == v.gt.label ? 1 : 0;
        }
        EXPECT_DOUBLE_EQ(acc, static_cast<double>(correct) / videos.size()) << "fraction " << f;
    }
    EXPECT_DOUBLE_EQ(c.points.back().second, full_video_accuracy(videos, classes));
}

TEST(Detections, OnePerClassFromTrack) {
    Track t;
    t.video_id = "v";
    t.classes = {"a", "b"};
    for (int f = 1; f <= 4; ++f) {
        auto r = record(f, {0.1 * f, -0.1 * f}, 0);
        r.box = {static_cast<double>(f), 0, 3, 3};
        t.records.push_back(r);
    }
    const auto d = detections_from_track(t);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_DOUBLE_EQ(d[0].confidence, 0.4);
    EXPECT_DOUBLE_EQ(d[1].confidence, -0.4);
    EXPECT_EQ(d[0].boxes.size(), 4u);
    EXPECT_EQ(d[1].label, "b");
}
