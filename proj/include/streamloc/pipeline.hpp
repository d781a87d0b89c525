#pragma once

// Per-frame online loop: segment, score, refine poses, infer the CRF labeling,
// localize, update the appearance model and report class confidences. Every
// record is final once emitted.

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamloc/appearance.hpp"
#include "streamloc/core.hpp"
#include "streamloc/crf.hpp"
#include "streamloc/io.hpp"
#include "streamloc/log.hpp"
#include "streamloc/pose.hpp"
#include "streamloc/predictor.hpp"
#include "streamloc/superpixel.hpp"

namespace streamloc {

struct PipelineConfig {
    int window = 5;           // delta: frames of history besides the current one
    int iterations = 3;       // Q
    int clusters = 20;        // K
    int appearance_window = 5;
    int segments = 3;         // M
    double c = 1.0;
    double eps = 0.5;
    int vocabulary = 64;      // V
    std::string mode = "s_svm";
    std::string kernel = "histogram_intersection";
    int superpixels = 200;
    double compactness = 10.0;
    int slic_iterations = 10;
    double alpha_fg = 1.0;
    double alpha_pose = 1.0;
    double spline_lambda = 0.5;
    double transition_sigma = 20.0;
    double temporal_overlap = 0.2;
    double pose_margin = 0.0;
    int actors = 1;
    bool untrimmed = false;
    int codebook_samples = 20000;
    std::uint64_t seed = 7;

    void validate() const {
        auto positive = [](bool ok, const char* what) {
            if (!ok) throw Error(std::string("config: ") + what);
        };
        positive(window >= 0, "window must be >= 0");
        positive(iterations >= 0, "iterations must be >= 0");
        positive(clusters >= 1, "clusters must be >= 1");
        positive(appearance_window >= 1, "appearance_window must be >= 1");
        positive(segments >= 1, "segments must be >= 1");
        positive(c > 0.0, "C must be > 0");
        positive(eps > 0.0, "eps must be > 0");
        positive(vocabulary >= 2, "vocabulary must be >= 2");
        positive(superpixels >= 2, "superpixels must be >= 2");
        positive(compactness > 0.0, "compactness must be > 0");
        positive(slic_iterations >= 1, "slic_iterations must be >= 1");
        positive(spline_lambda >= 0.0, "spline_lambda must be >= 0");
        positive(transition_sigma > 0.0, "transition_sigma must be > 0");
        positive(actors >= 1, "actors must be >= 1");
        positive(codebook_samples >= 2, "codebook_samples must be >= 2");
        (void)mode_from_string(mode);
        (void)kernel_from_string(kernel);
    }

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"window", window},
                {"iterations", iterations},
                {"clusters", clusters},
                {"appearance_window", appearance_window},
                {"segments", segments},
                {"C", c},
                {"eps", eps},
                {"vocabulary", vocabulary},
                {"mode", mode},
                {"kernel", kernel},
                {"superpixels", superpixels},
                {"compactness", compactness},
                {"slic_iterations", slic_iterations},
                {"alpha_fg", alpha_fg},
                {"alpha_pose", alpha_pose},
                {"spline_lambda", spline_lambda},
                {"transition_sigma", transition_sigma},
                {"temporal_overlap", temporal_overlap},
                {"pose_margin", pose_margin},
                {"actors", actors},
                {"untrimmed", untrimmed},
                {"codebook_samples", codebook_samples},
                {"seed", seed}};
    }

    /// Missing keys keep their defaults; unknown keys are rejected.
    static PipelineConfig from_json(const nlohmann::json& j) {
        PipelineConfig c;
        const auto known = c.to_json();
        for (const auto& [key, value] : j.items())
            if (!known.contains(key)) throw Error("config: unknown key '" + key + "'");
        c.window = j.value("window", c.window);
        c.iterations = j.value("iterations", c.iterations);
        c.clusters = j.value("clusters", c.clusters);
        c.appearance_window = j.value("appearance_window", c.appearance_window);
        c.segments = j.value("segments", c.segments);
        c.c = j.value("C", c.c);
        c.eps = j.value("eps", c.eps);
        c.vocabulary = j.value("vocabulary", c.vocabulary);
        c.mode = j.value("mode", c.mode);
        c.kernel = j.value("kernel", c.kernel);
        c.superpixels = j.value("superpixels", c.superpixels);
        c.compactness = j.value("compactness", c.compactness);
        c.slic_iterations = j.value("slic_iterations", c.slic_iterations);
        c.alpha_fg = j.value("alpha_fg", c.alpha_fg);
        c.alpha_pose = j.value("alpha_pose", c.alpha_pose);
        c.spline_lambda = j.value("spline_lambda", c.spline_lambda);
        c.transition_sigma = j.value("transition_sigma", c.transition_sigma);
        c.temporal_overlap = j.value("temporal_overlap", c.temporal_overlap);
        c.pose_margin = j.value("pose_margin", c.pose_margin);
        c.actors = j.value("actors", c.actors);
        c.untrimmed = j.value("untrimmed", c.untrimmed);
        c.codebook_samples = j.value("codebook_samples", c.codebook_samples);
        c.seed = j.value("seed", c.seed);
        c.validate();
        return c;
    }

    static PipelineConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open config " + path.string());
        return from_json(nlohmann::json::parse(in));
    }

    [[nodiscard]] SlicParams slic() const { return {superpixels, compactness, slic_iterations}; }

    [[nodiscard]] AppearanceParams appearance() const {
        AppearanceParams p;
        p.clusters = clusters;
        p.window = appearance_window;
        p.seed = seed;
        return p;
    }

    [[nodiscard]] CrfParams crf() const {
        CrfParams p;
        p.alpha_fg = alpha_fg;
        p.alpha_pose = alpha_pose;
        p.temporal_overlap = temporal_overlap;
        p.pose_margin = pose_margin;
        return p;
    }
};

/// Superpixel map of frame t with features computed from the flow of t-1
/// (splatted onto frame t), so nothing after frame t is read.
inline SuperpixelMap causal_superpixels(const Image& frame, int t, const FlowField* incoming,
                                        const SuperpixelMap* previous, const SlicParams& params) {
    SuperpixelMap map = slic_segment(frame, params, t);
    if (incoming) {
        const FlowField aligned = align_flow_to_target(*incoming);
        extract_features(map, frame, &aligned, previous);
    } else {
        extract_features(map, frame, nullptr, previous);
    }
    return map;
}

/// Online localizer for one stream. Feed frames in order with `step`.
class OnlineLocalizer {
public:
    OnlineLocalizer(PipelineConfig config, const SegmentClassifierBank* bank) : config_(std::move(config)), bank_(bank) {
        config_.validate();
        if (bank_) {
            bank_->validate();
            accumulator_.emplace(bank_->codebook);
            tracker_.emplace(*bank_, config_.untrimmed);
        }
    }

    /// `incoming` maps frame t-1 onto t (null for the first frame).
    TrackRecord step(int t, const Image& frame, const FlowField* incoming, const std::vector<Pose>& poses) {
        const auto started = std::chrono::steady_clock::now();
        TrackRecord rec;
        try {
            rec = process(t, frame, incoming, poses);
        } catch (const std::exception& e) {
            log().warn("frame {}: {}; repeating the previous state", t, e.what());
            history_.clear();
            rec = last_;
            rec.frame = t;
            rec.flags = {"error"};
        }
        rec.confidences.resize(class_count(), 0.0);
        last_ = rec;
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        log().info("frame {}: {:.1f} ms", t, ms);
        return rec;
    }

    /// Largest number of frames held in the history window so far.
    [[nodiscard]] std::size_t max_history() const { return max_history_; }

private:
    struct HistoryFrame {
        int frame = 0;
        SuperpixelMap map;
        std::optional<FlowField> flow_to_next;
        std::vector<std::vector<Pose>> candidates;  // per actor
        std::vector<std::optional<Pose>> selected;  // per actor
        std::vector<double> selected_cost;
    };

    struct Actor {
        AppearanceModel model;
        std::optional<LocalizationState> state;
        int first_frame = 0;
    };

    [[nodiscard]] std::size_t class_count() const { return bank_ ? bank_->classes.size() : 0; }

    TrackRecord process(int t, const Image& frame, const FlowField* incoming, const std::vector<Pose>& poses) {
        if (incoming && !history_.empty() && history_.back().frame == t - 1) history_.back().flow_to_next = *incoming;
        const SuperpixelMap* previous = history_.empty() ? nullptr : &history_.back().map;
        HistoryFrame cur;
        cur.frame = t;
        cur.map = causal_superpixels(frame, t, incoming, previous, config_.slic());

        if (actors_.empty()) initialize_actors(t, cur.map, poses);
        const std::size_t n_actors = actors_.size();
        cur.candidates.assign(n_actors, {});
        cur.selected.assign(n_actors, std::nullopt);
        cur.selected_cost.assign(n_actors, 0.0);
        if (n_actors == 1) {
            cur.candidates[0] = poses;
        } else if (n_actors > 1) {
            std::vector<Box> boxes;
            for (const auto& a : actors_) boxes.push_back(a.state ? a.state->current() : Box{});
            cur.candidates = partition_by_actor(poses, boxes);
        }

        history_.push_back(std::move(cur));
        while (static_cast<int>(history_.size()) > config_.window + 1) history_.pop_front();
        max_history_ = std::max(max_history_, history_.size());

        TrackRecord rec;
        rec.frame = t;
        if (actors_.empty()) {
            rec.flags.push_back("uninitialized");
        } else {
            for (std::size_t a = 0; a < actors_.size(); ++a) {
                ActorRecord ar = localize_actor(a, t, incoming);
                rec.actors.push_back(std::move(ar));
            }
            rec.box = rec.actors.front().box;
            rec.segment = rec.actors.front().segment;
            for (std::size_t a = 1; a < rec.actors.size(); ++a) rec.box = union_box(rec.box, rec.actors[a].box);
            if (rec.actors.size() == 1) rec.actors.clear();
        }
        predict(rec, history_.back().map);
        return rec;
    }

    static Box union_box(const Box& a, const Box& b) {
        if (a.empty()) return b;
        if (b.empty()) return a;
        const double x0 = std::min(a.x, b.x), y0 = std::min(a.y, b.y);
        const double x1 = std::max(a.x + a.w, b.x + b.w), y1 = std::max(a.y + a.h, b.y + b.h);
        return {x0, y0, x1 - x0, y1 - y0};
    }

    void initialize_actors(int t, const SuperpixelMap& map, const std::vector<Pose>& poses) {
        const auto seeds = seed_actor_boxes(poses, config_.actors, config_.pose_margin);
        for (const auto& box : seeds) {
            std::vector<Superpixel> fg, bg;
            for (const auto& sp : map.superpixels) (box.contains(sp.centroid) ? fg : bg).push_back(sp);
            if (fg.empty() || bg.empty()) continue;
            Actor actor;
            actor.model = AppearanceModel::fit(fg, bg, config_.appearance());
            actor.first_frame = t;
            actors_.push_back(std::move(actor));
        }
        if (!actors_.empty()) log().info("frame {}: initialized {} actor(s)", t, actors_.size());
    }

    ActorRecord localize_actor(std::size_t a, int t, const FlowField* incoming) {
        Actor& actor = actors_[a];
        HistoryFrame& cur = history_.back();

        // pose refinement over the frames of the window this actor has seen
        std::size_t first = 0;
        while (first < history_.size() && history_[first].frame < actor.first_frame) ++first;
        std::vector<std::vector<Pose>> window_poses;
        std::vector<const SuperpixelMap*> maps;
        for (std::size_t i = first; i < history_.size(); ++i) {
            window_poses.push_back(history_[i].candidates[a]);
            maps.push_back(&history_[i].map);
        }
        bool any_pose = false;
        for (const auto& w : window_poses) any_pose = any_pose || !w.empty();
        if (any_pose) {
            MapForegroundLookup lookup(maps, actor.model);
            const ForegroundLookup fn(std::cref(lookup));
            RefineParams rp;
            rp.iterations = config_.iterations;
            rp.spline_lambda = config_.spline_lambda;
            // the window is self-contained: frames that left it keep no map for J_app
            const auto res = refine_poses(window_poses, history_[first].frame, nullptr, &fn, rp);
            cur.selected[a] = res.selected.back();
            cur.selected_cost[a] = res.costs.back();
        }

        // CRF over the same window
        std::vector<CrfFrameInput> window;
        for (std::size_t i = first; i < history_.size(); ++i) {
            CrfFrameInput in;
            in.map = &history_[i].map;
            in.flow_to_next = (i + 1 < history_.size() && history_[i].flow_to_next) ? &*history_[i].flow_to_next : nullptr;
            if (history_[i].selected[a]) {
                in.pose = history_[i].selected[a];
                in.pose_cost = history_[i].selected_cost[a];
            }
            window.push_back(in);
        }
        const CrfGraph graph = build_graph(window, actor.model, config_.crf());
        const auto labels = infer_labels(graph);
        const std::size_t base = static_cast<std::size_t>(graph.frame_offset.back());
        std::vector<std::uint8_t> fg(cur.map.superpixels.size());
        for (std::size_t s = 0; s < fg.size(); ++s) fg[s] = labels[base + s];
        const Segment segment = segment_to_box(fg, cur.map);

        std::vector<double> scores;
        scores.reserve(cur.map.superpixels.size());
        for (const auto& sp : cur.map.superpixels) scores.push_back(actor.model.foreground_score(sp));

        std::vector<MapCandidate> cands;
        auto add = [&](const Box& b, const char* source) {
            const Box box = clamp_box(b, cur.map.width, cur.map.height);
            if (box.empty()) return;
            MapCandidate c;
            c.box = box;
            c.source = source;
            c.superpixel_likelihood = box_superpixel_likelihood(cur.map, scores, box, config_.alpha_fg);
            c.pose_likelihood = cur.selected[a] ? box_pose_likelihood(*cur.selected[a], cur.selected_cost[a], box) : 1.0;
            cands.push_back(c);
        };
        if (!segment.empty) add(segment.box, "segment");
        if (cur.selected[a]) add(cur.selected[a]->bbox(config_.pose_margin), "pose");
        if (actor.state) add(incoming ? propagate_box(actor.state->current(), *incoming) : actor.state->current(), "propagated");

        ActorRecord out;
        if (cands.empty()) {
            if (actor.state) out.box = actor.state->current();
            return out;
        }
        const double s = config_.transition_sigma;
        const auto upd = map_update(actor.state, cands, {s, s, s, s}, t, static_cast<std::size_t>(config_.window) + 1);
        actor.state = upd.state;
        out.box = upd.state.current();
        out.segment = segment.superpixels;

        std::vector<Superpixel> fg_sp, bg_sp;
        for (const auto& sp : cur.map.superpixels) {
            const bool inside = out.box.contains(sp.centroid);
            (inside && fg[static_cast<std::size_t>(sp.id)] ? fg_sp : bg_sp).push_back(sp);
        }
        if (fg_sp.empty()) {
            bg_sp.clear();
            for (const auto& sp : cur.map.superpixels) (out.box.contains(sp.centroid) ? fg_sp : bg_sp).push_back(sp);
        }
        if (!fg_sp.empty() && !bg_sp.empty()) actor.model.update(fg_sp, bg_sp);
        return out;
    }

    void predict(TrackRecord& rec, const SuperpixelMap& map) {
        rec.interval = intervals_;
        if (!bank_) return;
        rec.confidences = confidences_;
        if (rec.box.empty()) return;
        accumulator_->add(rec.box, builtin_descriptors(map));
        if (++frames_in_interval_ < bank_->interval_frames()) return;
        const auto feature = accumulator_->finish(intervals_ + 1, {});
        accumulator_->reset();
        frames_in_interval_ = 0;
        confidences_ = tracker_->push(feature.histogram);
        ++intervals_;
        rec.interval = intervals_;
        rec.confidences = confidences_;
    }

    PipelineConfig config_;
    const SegmentClassifierBank* bank_;
    std::deque<HistoryFrame> history_;
    std::vector<Actor> actors_;
    std::optional<SegmentAccumulator> accumulator_;
    std::optional<ConfidenceTracker> tracker_;
    std::vector<double> confidences_;
    int frames_in_interval_ = 0;
    int intervals_ = 0;
    TrackRecord last_;
    std::size_t max_history_ = 0;
};

/// Runs the online loop over a loaded sequence. Records are appended to `out`
/// (when given) as soon as they are produced. `max_frames` < 0 processes all.
inline Track run_online(const Sequence& seq, const SegmentClassifierBank* bank, const PipelineConfig& config,
                        const std::filesystem::path* out = nullptr, int max_frames = -1,
                        std::size_t* max_history = nullptr) {
    Track track;
    track.video_id = seq.video.id;
    if (bank) track.classes = bank->classes;
    track.config = config.to_json();
    track.library_version = kLibraryVersion;
    std::optional<TrackWriter> writer;
    if (out) writer.emplace(*out, track.video_id, track.classes, track.config);
    OnlineLocalizer loc(config, bank);
    const int frames = max_frames < 0 ? seq.video.frame_count() : std::min(max_frames, seq.video.frame_count());
    static const std::vector<Pose> no_poses;
    for (int t = 1; t <= frames; ++t) {
        const FlowField* incoming = (t >= 2 && t - 2 < static_cast<int>(seq.flows.size())) ? &seq.flows[t - 2] : nullptr;
        const auto& poses = t - 1 < static_cast<int>(seq.poses.frames.size()) ? seq.poses.frames[t - 1] : no_poses;
        TrackRecord rec = loc.step(t, seq.video.frames[t - 1], incoming, poses);
        if (writer) writer->append(rec);
        track.records.push_back(std::move(rec));
    }
    if (max_history) *max_history = loc.max_history();
    return track;
}

// ---------------------------------------------------------------------------
// training

struct TrainingVideo {
    Sequence sequence;
    std::string label;
};

/// Descriptors of every annotated frame, restricted to the annotated box.
inline std::vector<TubeFrame> training_tube(const Sequence& seq, const PipelineConfig& config) {
    if (!seq.ground_truth) throw Error("training video '" + seq.video.id + "' has no ground truth");
    const auto& gt = *seq.ground_truth;
    std::vector<TubeFrame> tube;
    std::optional<SuperpixelMap> previous;
    for (int t = 1; t <= gt.t_end && t <= seq.video.frame_count(); ++t) {
        const FlowField* incoming = (t >= 2 && t - 2 < static_cast<int>(seq.flows.size())) ? &seq.flows[t - 2] : nullptr;
        SuperpixelMap map =
            causal_superpixels(seq.video.frames[t - 1], t, incoming, previous ? &*previous : nullptr, config.slic());
        if (t >= gt.t_start) {
            TubeFrame f;
            f.frame = t;
            f.box = gt.actor_box(t).value_or(Box{});
            for (auto& d : builtin_descriptors(map))
                if (f.box.contains(d.position)) f.descriptors.push_back(std::move(d));
            tube.push_back(std::move(f));
        }
        previous = std::move(map);
    }
    return tube;
}

/// Builds the codebook, splits every annotated tube into M equal intervals,
/// and trains both classifier banks.
inline SegmentClassifierBank run_train(const std::vector<TrainingVideo>& videos, const PipelineConfig& config) {
    config.validate();
    std::map<std::string, int> counts;
    for (const auto& v : videos) ++counts[v.label];
    for (const auto& [label, n] : counts)
        if (n < 2) throw Error("class '" + label + "' has " + std::to_string(n) + " training video(s), need >= 2");
    if (counts.size() < 2) throw Error("training needs at least 2 classes");

    SegmentClassifierBank bank;
    for (const auto& [label, n] : counts) bank.classes.push_back(label);
    bank.mode = mode_from_string(config.mode);
    bank.segments = config.segments;
    bank.eps = config.eps;
    bank.c = config.c;
    bank.kernel = kernel_from_string(config.kernel);

    std::vector<std::vector<TubeFrame>> tubes;
    std::vector<std::vector<double>> pool;
    for (const auto& v : videos) {
        tubes.push_back(training_tube(v.sequence, config));
        for (const auto& f : tubes.back())
            for (const auto& d : f.descriptors) pool.push_back(d.values);
    }
    if (static_cast<int>(pool.size()) > config.codebook_samples) {
        std::vector<std::vector<double>> sub;
        const double stride = static_cast<double>(pool.size()) / config.codebook_samples;
        for (int i = 0; i < config.codebook_samples; ++i) sub.push_back(pool[static_cast<std::size_t>(i * stride)]);
        pool = std::move(sub);
    }
    bank.codebook = build_codebook(pool, config.vocabulary, config.seed);

    std::vector<DpTrainingSegment> dp_data;
    std::vector<std::vector<std::vector<double>>> per_video(videos.size());
    double omega_sum = 0.0;
    for (std::size_t i = 0; i < videos.size(); ++i) {
        const auto& tube = tubes[i];
        if (static_cast<int>(tube.size()) < config.segments)
            throw Error("training video '" + videos[i].sequence.video.id + "' is shorter than M frames");
        const int first = tube.front().frame, last = tube.back().frame;
        const auto ends = interval_ends(first, last, config.segments);
        omega_sum += static_cast<double>(last - first + 1) / config.segments;
        const int cls = static_cast<int>(std::find(bank.classes.begin(), bank.classes.end(), videos[i].label) -
                                         bank.classes.begin());
        int start = first;
        for (int m = 1; m <= config.segments; ++m) {
            std::vector<TubeFrame> part;
            for (const auto& f : tube)
                if (f.frame >= start && f.frame <= ends[m - 1]) part.push_back(f);
            const auto feat = encode_segment(part, bank.codebook, m, videos[i].sequence.video.id);
            dp_data.push_back({cls, m, feat.histogram});
            per_video[i].push_back(feat.histogram);
            start = ends[m - 1] + 1;
        }
    }
    bank.omega = omega_sum / static_cast<double>(videos.size());
    bank.dp = train_dp_svm(dp_data, bank.classes, config.segments, config.c, bank.kernel);

    SsvmOptions opt;
    opt.c = config.c;
    opt.eps = config.eps;
    for (std::size_t cls = 0; cls < bank.classes.size(); ++cls) {
        std::vector<SsvmSample> samples;
        for (std::size_t i = 0; i < videos.size(); ++i) {
            const bool positive = videos[i].label == bank.classes[cls];
            for (int m = 1; m <= config.segments; ++m) {
                std::vector<std::vector<double>> prefix(per_video[i].begin(), per_video[i].begin() + m);
                samples.push_back({cumulative_feature(prefix, config.segments), positive ? m : -1});
            }
        }
        bank.ssvm.push_back(train_ssvm(samples, config.segments, opt));
    }
    bank.validate();
    return bank;
}

/// Reads "<sequence dir> <class>" lines (paths relative to `data`).
inline std::vector<TrainingVideo> load_training_set(const std::filesystem::path& data,
                                                    const std::filesystem::path& labels) {
    std::ifstream in(labels);
    if (!in) throw Error("cannot open labels file " + labels.string());
    std::vector<TrainingVideo> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string dir, label;
        if (!(ss >> dir >> label)) throw Error("labels file: malformed line '" + line + "'");
        out.push_back({load_sequence(data / dir), label});
    }
    return out;
}

inline void save_model(const std::filesystem::path& dir, const SegmentClassifierBank& bank, const PipelineConfig& config) {
    std::filesystem::create_directories(dir);
    nlohmann::json j = bank.to_json();
    j["config"] = config.to_json();
    j["library_version"] = kLibraryVersion;
    std::ofstream out(dir / "model.json");
    if (!out) throw Error("cannot write model in " + dir.string());
    out << j.dump(1) << '\n';
}

inline SegmentClassifierBank load_model(const std::filesystem::path& path) {
    const auto file = std::filesystem::is_directory(path) ? path / "model.json" : path;
    std::ifstream in(file);
    if (!in) throw Error("cannot open model " + file.string());
    return SegmentClassifierBank::from_json(nlohmann::json::parse(in));
}

}  // namespace streamloc
