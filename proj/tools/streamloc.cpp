// streamloc command line: synthesize, train, localize, evaluate, demo-accept.
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <fnmatch.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "acceptance_suite.hpp"
#include "streamloc/evaluator.hpp"
#include "streamloc/io.hpp"
#include "streamloc/log.hpp"
#include "streamloc/pipeline.hpp"
#include "streamloc/synth.hpp"

namespace fs = std::filesystem;
using namespace streamloc;

namespace {

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

PipelineConfig config_or_default(const std::string& path) {
    return path.empty() ? PipelineConfig{} : PipelineConfig::load(path);
}

/// A spec file holds one scene object or {"scenes": [...]}. Writes one
/// sequence directory per scene plus labels.txt.
void cmd_synthesize(const fs::path& spec_path, const fs::path& out, std::uint64_t seed) {
    const auto j = read_json(spec_path);
    std::vector<SceneSpec> specs;
    if (j.contains("scenes"))
        for (const auto& s : j.at("scenes")) specs.push_back(SceneSpec::from_json(s));
    else
        specs.push_back(SceneSpec::from_json(j));
    fs::create_directories(out);
    std::ofstream labels(out / "labels.txt");
    if (!labels) throw Error("cannot write " + (out / "labels.txt").string());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto scene = synthesize_scene(specs[i], seed + i);
        write_sequence(out / specs[i].id, scene.sequence);
        labels << specs[i].id << ' ' << scene.sequence.ground_truth->label << '\n';
        log().info("wrote {}", (out / specs[i].id).string());
    }
}

void cmd_train(const fs::path& data, const fs::path& labels, const std::string& config_path, const fs::path& out) {
    const auto config = config_or_default(config_path);
    const auto videos = load_training_set(data, labels);
    const auto bank = run_train(videos, config);
    save_model(out, bank, config);
    log().info("model with {} classes written to {}", bank.classes.size(), out.string());
}

void cmd_localize(const fs::path& data, const fs::path& models, const std::string& config_path, const fs::path& out,
                  int max_frames) {
    const auto file = fs::is_directory(models) ? models / "model.json" : models;
    const auto model_json = read_json(file);
    const auto bank = SegmentClassifierBank::from_json(model_json);
    PipelineConfig config;
    if (!config_path.empty()) config = PipelineConfig::load(config_path);
    else if (model_json.contains("config")) config = PipelineConfig::from_json(model_json.at("config"));
    const auto seq = load_sequence(data);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    run_online(seq, &bank, config, &out, max_frames);
}

std::vector<fs::path> glob_files(const std::string& pattern) {
    const fs::path p(pattern);
    const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    const std::string leaf = p.filename().string();
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && fnmatch(leaf.c_str(), entry.path().filename().c_str(), 0) == 0)
            out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

void cmd_evaluate(const std::string& tracks_glob, const fs::path& gt_dir, double theta, const fs::path& out) {
    const auto files = glob_files(tracks_glob);
    if (files.empty()) throw Error("no track files match '" + tracks_glob + "'");
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
    std::vector<ObservedVideo> observed;
    std::vector<std::string> classes;
    for (const auto& f : files) {
        const auto track = read_track(f);
        if (classes.empty()) classes = track.classes;
        else if (classes != track.classes) throw Error(f.string() + ": class list differs from the other tracks");
        const auto seq = load_sequence(gt_dir / track.video_id);
        if (!seq.ground_truth) throw Error("no ground truth for video '" + track.video_id + "'");
        for (auto& d : detections_from_track(track)) dets.push_back(std::move(d));
        gts.push_back(*seq.ground_truth);
        observed.push_back({track.records, *seq.ground_truth});
    }
    fs::create_directories(out);
    const auto roc = roc_at_overlap(dets, gts, theta);
    const auto auc_curve = auc_vs_threshold(dets, gts);
    const auto pr = precision_recall(dets, gts, theta);
    const auto acc = accuracy_vs_observation(observed, classes);
    write_curve_csv(out / "roc.csv", roc);
    write_curve_csv(out / "auc_vs_threshold.csv", auc_curve);
    write_curve_csv(out / "precision_recall.csv", pr.curve);
    write_curve_csv(out / "acc_vs_observation.csv", acc);
    nlohmann::json auc_by_theta = nlohmann::json::object();
    for (const auto& [th, a] : auc_curve.points) auc_by_theta[fmt::format("{:.1f}", th)] = a;
    const nlohmann::json summary{{"videos", files.size()},
                                 {"detections", dets.size()},
                                 {"theta", theta},
                                 {"auc", auc(roc)},
                                 {"auc_vs_threshold", auc_by_theta},
                                 {"average_precision", pr.average_precision},
                                 {"full_video_accuracy", full_video_accuracy(observed, classes)}};
    std::ofstream s(out / "summary.json");
    if (!s) throw Error("cannot write summary in " + out.string());
    s << summary.dump(2) << '\n';
}

int cmd_demo_accept(std::uint64_t seed) {
    std::printf("%-4s  %-2s  %-32s  %s\n", "", "#", "criterion", "detail");
    const auto results = acceptance::run_all(seed, [](const acceptance::CriterionResult& r) {
        std::printf("%-4s  %-2d  %-32s  %s\n", r.pass ? "PASS" : "FAIL", r.id, r.name.c_str(), r.detail.c_str());
        std::fflush(stdout);
    });
    std::size_t passed = 0;
    for (const auto& r : results) passed += r.pass ? 1 : 0;
    std::printf("%zu/%zu criteria passed\n", passed, results.size());
    return passed == results.size() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online action localization and prediction"};
    app.require_subcommand(1);

    auto* syn = app.add_subcommand("synthesize", "generate synthetic sequences with ground truth");
    std::string syn_spec, syn_out;
    std::uint64_t syn_seed = 1;
    syn->add_option("--spec", syn_spec, "scene spec JSON")->required()->check(CLI::ExistingFile);
    syn->add_option("--out", syn_out, "output directory")->required();
    syn->add_option("--seed", syn_seed, "random seed");

    auto* train = app.add_subcommand("train", "train the codebook and classifier banks");
    std::string tr_data, tr_labels, tr_config, tr_out;
    train->add_option("--data", tr_data, "directory holding the training sequences")->required()->check(CLI::ExistingDirectory);
    train->add_option("--labels", tr_labels, "lines of '<sequence dir> <class>'")->required()->check(CLI::ExistingFile);
    train->add_option("--config", tr_config, "pipeline config JSON")->check(CLI::ExistingFile);
    train->add_option("--out", tr_out, "model directory")->required();

    auto* loc = app.add_subcommand("localize", "stream one sequence through the online localizer");
    std::string lo_data, lo_models, lo_config, lo_out;
    int lo_max = -1;
    loc->add_option("--data", lo_data, "sequence directory or manifest")->required()->check(CLI::ExistingPath);
    loc->add_option("--models", lo_models, "model directory or file")->required()->check(CLI::ExistingPath);
    loc->add_option("--config", lo_config, "pipeline config JSON (default: the one stored with the model)")
        ->check(CLI::ExistingFile);
    loc->add_option("--out", lo_out, "track file")->required();
    loc->add_option("--max-frames", lo_max, "stop after this many frames");

    auto* eval = app.add_subcommand("evaluate", "score tracks against ground truth");
    std::string ev_tracks, ev_gt, ev_out;
    double ev_theta = 0.2;
    eval->add_option("--tracks", ev_tracks, "glob of track files")->required();
    eval->add_option("--gt", ev_gt, "directory with one sequence per video id")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--theta", ev_theta, "tube IoU threshold")->check(CLI::Range(0.0, 1.0));
    eval->add_option("--out", ev_out, "output directory")->required();

    auto* demo = app.add_subcommand("demo-accept", "run the acceptance suite and print a pass/fail table");
    std::uint64_t demo_seed = 20240601;
    demo->add_option("--seed", demo_seed, "suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n\n%s", e.what(), app.help().c_str());
        return 2;
    }

    try {
        if (*syn) cmd_synthesize(syn_spec, syn_out, syn_seed);
        else if (*train) cmd_train(tr_data, tr_labels, tr_config, tr_out);
        else if (*loc) cmd_localize(lo_data, lo_models, lo_config, lo_out, lo_max);
        else if (*eval) cmd_evaluate(ev_tracks, ev_gt, ev_theta, ev_out);
        else if (*demo) return cmd_demo_accept(demo_seed);
    } catch (const std::exception& e) {
        log().error("{}", e.what());
        return 1;
    }
    return 0;
}
