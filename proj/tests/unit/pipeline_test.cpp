#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "streamloc/pipeline.hpp"
#include "streamloc/synth.hpp"
#include "temp_dir.hpp"

using namespace streamloc;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SceneSpec moving(const std::string& id, double vx, int frames = 20) {
    SceneSpec s;
    s.id = id;
    s.frames = frames;
    ActorSpec a;
    a.vx = vx;
    a.x = vx > 0 ? 8.0 : 70.0;
    s.actors = {a};
    return s;
}

PipelineConfig fast_config() {
    PipelineConfig c;
    c.superpixels = 120;
    c.vocabulary = 16;
    return c;
}

std::vector<TrainingVideo> training_set(const PipelineConfig&, std::vector<std::pair<int, int>> extents = {}) {
    std::vector<TrainingVideo> out;
    for (int i = 0; i < 4; ++i) {
        auto spec = moving("train" + std::to_string(i), i % 2 == 0 ? 2.0 : -2.0);
        if (!extents.empty()) std::tie(spec.t_start, spec.t_end) = extents[static_cast<std::size_t>(i)];
        const auto scene = synthesize_scene(spec, 100 + static_cast<std::uint64_t>(i));
        out.push_back({scene.sequence, scene.sequence.ground_truth->label});
    }
    return out;
}

}  // namespace

TEST(Pipeline, NoiselessSceneIsLocalizedWithinTwoPixels) {
    const auto scene = synthesize_scene(moving("clean", 2.0, 30), 5);
    const auto track = run_online(scene.sequence, nullptr, PipelineConfig{});
    ASSERT_EQ(track.records.size(), 30u);
    int good = 0;
    for (const auto& rec : track.records) {
        const Box gt = scene.actor_boxes[rec.frame - 1][0];
        const bool close = std::abs(rec.box.x - gt.x) <= 2 && std::abs(rec.box.y - gt.y) <= 2 &&
                           std::abs(rec.box.x + rec.box.w - gt.x - gt.w) <= 2 &&
                           std::abs(rec.box.y + rec.box.h - gt.y - gt.h) <= 2;
        good += close ? 1 : 0;
    }
    EXPECT_GE(good, static_cast<int>(std::ceil(0.95 * 30))) << good << "/30 frames within 2 px";
}

TEST(Pipeline, ZeroWindowStillCompletes) {
    auto config = PipelineConfig{};
    config.window = 0;
    const auto scene = synthesize_scene(moving("flat", 2.0, 12), 6);
    std::size_t history = 99;
    const auto track = run_online(scene.sequence, nullptr, config, nullptr, -1, &history);
    EXPECT_EQ(track.records.size(), 12u);
    EXPECT_EQ(history, 1u);
    for (const auto& rec : track.records) EXPECT_FALSE(rec.box.empty());
}

TEST(Pipeline, HistoryIsBoundedByWindow) {
    const auto scene = synthesize_scene(moving("hist", 2.0, 15), 6);
    std::size_t history = 0;
    (void)run_online(scene.sequence, nullptr, PipelineConfig{}, nullptr, -1, &history);
    EXPECT_EQ(history, static_cast<std::size_t>(PipelineConfig{}.window + 1));
}

TEST(Pipeline, RunsAreBitwiseIdentical) {
    streamloc::testing::TempDir dir;
    const auto scene = synthesize_scene(moving("det", -2.0, 12), 7);
    const auto a = dir / "a.track", b = dir / "b.track";
    (void)run_online(scene.sequence, nullptr, PipelineConfig{}, &a);
    (void)run_online(scene.sequence, nullptr, PipelineConfig{}, &b);
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_FALSE(slurp(a).empty());
}

TEST(Pipeline, MaxFramesGivesPrefix) {
    const auto scene = synthesize_scene(moving("prefix", 2.0, 12), 8);
    const auto full = run_online(scene.sequence, nullptr, PipelineConfig{});
    const auto part = run_online(scene.sequence, nullptr, PipelineConfig{}, nullptr, 5);
    ASSERT_EQ(part.records.size(), 5u);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(part.records[i], full.records[i]);
}

TEST(Training, OmegaIsMeanIntervalLength) {
    const auto config = fast_config();
    const auto videos = training_set(config, {{1, 15}, {1, 18}, {4, 15}, {1, 12}});
    const auto bank = run_train(videos, config);
    EXPECT_NEAR(bank.omega, (15.0 + 18.0 + 12.0 + 12.0) / 3.0 / 4.0, 1e-12);
    EXPECT_EQ(bank.classes, (std::vector<std::string>{"left", "right"}));
    EXPECT_EQ(bank.dp.size(), 2u);
    EXPECT_EQ(bank.ssvm.size(), 2u);
    EXPECT_EQ(bank.codebook.size(), config.vocabulary);
}

TEST(Training, RetrainingIsDeterministic) {
    streamloc::testing::TempDir dir;
    const auto config = fast_config();
    const auto videos = training_set(config);
    save_model(dir / "a", run_train(videos, config), config);
    save_model(dir / "b", run_train(videos, config), config);
    EXPECT_EQ(slurp(dir / "a" / "model.json"), slurp(dir / "b" / "model.json"));
    const auto loaded = load_model(dir / "a");
    EXPECT_EQ(loaded.to_json(), run_train(videos, config).to_json());
}

TEST(Training, ClassWithOneVideoIsRejected) {
    const auto config = fast_config();
    auto videos = training_set(config);
    videos.pop_back();
    try {
        (void)run_train(videos, config);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("left"), std::string::npos);
    }
}

TEST(Training, TrainedBankProducesConfidences) {
    const auto config = fast_config();
    const auto bank = run_train(training_set(config), config);
    const auto scene = synthesize_scene(moving("probe", 2.0, 20), 77);
    const auto track = run_online(scene.sequence, &bank, config);
    ASSERT_EQ(track.classes, bank.classes);
    const auto& last = track.records.back();
    ASSERT_EQ(last.confidences.size(), 2u);
    EXPECT_GE(last.interval, 1);
    EXPECT_GT(last.confidences[1], last.confidences[0]);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW((void)PipelineConfig::from_json({{"windw", 3}}), Error);
    EXPECT_THROW((void)PipelineConfig::from_json({{"segments", 0}}), Error);
    EXPECT_THROW((void)PipelineConfig::from_json({{"mode", "magic"}}), Error);
    const auto c = PipelineConfig::from_json({{"window", 2}, {"C", 4.0}});
    EXPECT_EQ(c.window, 2);
    EXPECT_EQ(c.c, 4.0);
    EXPECT_EQ(c.iterations, 3);
    EXPECT_EQ(PipelineConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(Config, Defaults) {
    const PipelineConfig c;
    EXPECT_EQ(c.window, 5);
    EXPECT_EQ(c.iterations, 3);
    EXPECT_EQ(c.segments, 3);
    EXPECT_EQ(c.vocabulary, 64);
    EXPECT_EQ(c.eps, 0.5);
    EXPECT_EQ(c.c, 1.0);
    EXPECT_NO_THROW(c.validate());
}
