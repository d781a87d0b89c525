#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "streamloc/io.hpp"
#include "streamloc/synth.hpp"
#include "temp_dir.hpp"

using namespace streamloc;

namespace {

struct Outcome {
    int code = -1;
    std::string output;
};

Outcome run(const std::string& args) {
    const std::string cmd = std::string(STREAMLOC_CLI) + " " + args + " 2>&1";
    Outcome out;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return out;
    char buf[4096];
    while (fgets(buf, sizeof buf, pipe)) out.output += buf;
    const int status = pclose(pipe);
    out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return out;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

nlohmann::json scenes_spec() {
    nlohmann::json scenes = nlohmann::json::array();
    for (int i = 0; i < 4; ++i) {
        const bool right = i % 2 == 0;
        scenes.push_back({{"id", "s" + std::to_string(i)},
                          {"frames", 12},
                          {"actors", {{{"x", right ? 8 : 70}, {"y", 20}, {"vx", right ? 2.0 : -2.0}, {"vy", 0.0}}}}});
    }
    return {{"scenes", scenes}};
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("train --data /nonexistent --labels /nonexistent --out x").code, 2);
    const auto r = run("evaluate --tracks x");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("--gt"), std::string::npos);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run("--help").code, 0); }

TEST(Cli, ModuleErrorExitsOne) {
    streamloc::testing::TempDir dir;
    write_text(dir / "bad.json", "{ not json");
    const auto r = run("synthesize --spec " + (dir / "bad.json").string() + " --out " + (dir / "out").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("bad.json"), std::string::npos);
}

TEST(Cli, SynthesizeTrainLocalizeEvaluate) {
    streamloc::testing::TempDir dir;
    write_text(dir / "spec.json", scenes_spec().dump());
    write_text(dir / "config.json", R"({"superpixels": 100, "vocabulary": 16})");
    const auto data = dir / "data";
    ASSERT_EQ(run("synthesize --spec " + (dir / "spec.json").string() + " --out " + data.string() + " --seed 3").code, 0);
    ASSERT_TRUE(std::filesystem::exists(data / "labels.txt"));

    ASSERT_EQ(run("train --data " + data.string() + " --labels " + (data / "labels.txt").string() + " --config " +
                  (dir / "config.json").string() + " --out " + (dir / "model").string())
                  .code,
              0);
    ASSERT_TRUE(std::filesystem::exists(dir / "model" / "model.json"));

    const auto track_path = dir / "tracks" / "s0.track";
    ASSERT_EQ(run("localize --data " + (data / "s0").string() + " --models " + (dir / "model").string() + " --out " +
                  track_path.string())
                  .code,
              0);
    const auto track = read_track(track_path);
    EXPECT_EQ(track.records.size(), 12u);
    EXPECT_EQ(track.classes, (std::vector<std::string>{"left", "right"}));

    const auto partial = dir / "tracks" / "partial.track";
    ASSERT_EQ(run("localize --data " + (data / "s1").string() + " --models " + (dir / "model").string() + " --out " +
                  partial.string() + " --max-frames 5")
                  .code,
              0);
    EXPECT_EQ(read_track(partial).records.size(), 5u);
}

TEST(Cli, EvaluatePerfectTracksGivesUnitAuc) {
    streamloc::testing::TempDir dir;
    const auto gt_dir = dir / "gt";
    std::filesystem::create_directories(dir / "tracks");
    const std::vector<std::string> classes{"left", "right"};
    for (int i = 0; i < 4; ++i) {
        SceneSpec spec;
        spec.id = "v" + std::to_string(i);
        spec.frames = 10;
        spec.actors[0].vx = i % 2 == 0 ? 2.0 : -2.0;
        spec.actors[0].x = i % 2 == 0 ? 8.0 : 70.0;
        const auto scene = synthesize_scene(spec, static_cast<std::uint64_t>(i));
        write_sequence(gt_dir / spec.id, scene.sequence);
        TrackWriter writer(dir / "tracks" / (spec.id + ".track"), spec.id, classes, nlohmann::json::object());
        const bool right = scene.sequence.ground_truth->label == "right";
        for (int t = 1; t <= spec.frames; ++t) {
            TrackRecord rec;
            rec.frame = t;
            rec.box = scene.actor_boxes[t - 1][0];
            rec.confidences = right ? std::vector<double>{0.1, 0.9} : std::vector<double>{0.9, 0.1};
            rec.interval = 1;
            writer.append(rec);
        }
    }
    const auto out = dir / "eval";
    const auto r = run("evaluate --tracks '" + (dir / "tracks" / "*.track").string() + "' --gt " + gt_dir.string() +
                       " --theta 0.2 --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.output;
    std::ifstream in(out / "summary.json");
    const auto summary = nlohmann::json::parse(in);
    EXPECT_DOUBLE_EQ(summary.at("auc").get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(summary.at("auc_vs_threshold").at("0.2").get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(summary.at("full_video_accuracy").get<double>(), 1.0);
    for (const char* f : {"roc.csv", "auc_vs_threshold.csv", "precision_recall.csv", "acc_vs_observation.csv"})
        EXPECT_TRUE(std::filesystem::exists(out / f)) << f;

    EXPECT_EQ(run("evaluate --tracks '" + (dir / "none" / "*.track").string() + "' --gt " + gt_dir.string() + " --out " +
                  out.string())
                  .code,
              1);
}
