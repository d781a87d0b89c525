#pragma once

// Synthetic scenes with exact ground truth: colored rectangles moving at
// constant velocity over a static textured background.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamloc/core.hpp"
#include "streamloc/io.hpp"
#include "streamloc/pose_types.hpp"

namespace streamloc {

struct ActorSpec {
    double x = 10.0, y = 20.0;   // top-left at frame 1
    int w = 14, h = 30;
    double vx = 2.0, vy = 0.0;   // pixels per frame
    Rgb color{220, 40, 40};
};

struct SceneSpec {
    std::string id = "scene";
    int width = 96;
    int height = 72;
    int frames = 30;
    double frame_rate = 25.0;
    std::vector<ActorSpec> actors{ActorSpec{}};
    std::string label;              // empty: derived from the first actor's motion direction
    double contrast = 1.0;          // 0: actor color equals the background mean, 1: full actor color
    double texture = 24.0;          // background noise amplitude
    int texture_block = 4;
    double pose_noise = 0.0;        // joint jitter standard deviation, pixels
    int distractors = 0;            // distractor poses per actor and frame
    double true_score = 1.0;
    double score_noise = 0.0;       // std-dev of the true pose score
    double distractor_gap = 0.4;    // mean score deficit of distractors
    double distractor_score_noise = 0.25;
    int t_start = 0;                // 0: first frame
    int t_end = 0;                  // 0: last frame

    static SceneSpec from_json(const nlohmann::json& j);
    [[nodiscard]] nlohmann::json to_json() const;
};

inline SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
    SceneSpec s;
    s.id = j.value("id", s.id);
    s.width = j.value("width", s.width);
    s.height = j.value("height", s.height);
    s.frames = j.value("frames", s.frames);
    s.frame_rate = j.value("frame_rate", s.frame_rate);
    if (j.contains("actors")) {
        s.actors.clear();
        for (const auto& a : j.at("actors")) {
            ActorSpec as;
            as.x = a.value("x", as.x);
            as.y = a.value("y", as.y);
            as.w = a.value("w", as.w);
            as.h = a.value("h", as.h);
            as.vx = a.value("vx", as.vx);
            as.vy = a.value("vy", as.vy);
            if (a.contains("color")) {
                const auto c = a.at("color").get<std::vector<int>>();
                if (c.size() != 3) throw Error("scene spec: actor color needs 3 components");
                as.color = {static_cast<std::uint8_t>(std::clamp(c[0], 0, 255)),
                            static_cast<std::uint8_t>(std::clamp(c[1], 0, 255)),
                            static_cast<std::uint8_t>(std::clamp(c[2], 0, 255))};
            }
            s.actors.push_back(as);
        }
    }
    s.label = j.value("label", s.label);
    s.contrast = j.value("contrast", s.contrast);
    s.texture = j.value("texture", s.texture);
    s.texture_block = j.value("texture_block", s.texture_block);
    s.pose_noise = j.value("pose_noise", s.pose_noise);
    s.distractors = j.value("distractors", s.distractors);
    s.true_score = j.value("true_score", s.true_score);
    s.score_noise = j.value("score_noise", s.score_noise);
    s.distractor_gap = j.value("distractor_gap", s.distractor_gap);
    s.distractor_score_noise = j.value("distractor_score_noise", s.distractor_score_noise);
    s.t_start = j.value("t_start", s.t_start);
    s.t_end = j.value("t_end", s.t_end);
    return s;
}

inline nlohmann::json SceneSpec::to_json() const {
    nlohmann::json actors_j = nlohmann::json::array();
    for (const auto& a : actors)
        actors_j.push_back({{"x", a.x}, {"y", a.y}, {"w", a.w}, {"h", a.h}, {"vx", a.vx}, {"vy", a.vy},
                            {"color", {a.color.r, a.color.g, a.color.b}}});
    return {{"id", id},
            {"width", width},
            {"height", height},
            {"frames", frames},
            {"frame_rate", frame_rate},
            {"actors", actors_j},
            {"label", label},
            {"contrast", contrast},
            {"texture", texture},
            {"texture_block", texture_block},
            {"pose_noise", pose_noise},
            {"distractors", distractors},
            {"true_score", true_score},
            {"score_noise", score_noise},
            {"distractor_gap", distractor_gap},
            {"distractor_score_noise", distractor_score_noise},
            {"t_start", t_start},
            {"t_end", t_end}};
}

/// Class name from a velocity: the dominant axis and its sign.
inline std::string motion_label(double vx, double vy) {
    if (std::abs(vx) >= std::abs(vy)) return vx >= 0.0 ? "right" : "left";
    return vy >= 0.0 ? "down" : "up";
}

inline constexpr int kSyntheticJoints = 6;

/// Joints of an axis-aligned actor rectangle (inclusive pixel bounds): head,
/// both hands, torso, both feet. The extreme joints touch all four sides, so
/// the tight joint box equals the rectangle.
inline std::vector<Point2> rectangle_joints(int x0, int y0, int x1, int y1) {
    const double cx = std::round((x0 + x1) / 2.0), cy = std::round((y0 + y1) / 2.0);
    const double arm = y0 + std::round((y1 - y0) / 3.0);
    const double quarter = std::round((x1 - x0) / 4.0);
    return {{cx, static_cast<double>(y0)},
            {static_cast<double>(x0), arm},
            {static_cast<double>(x1), arm},
            {cx, cy},
            {x0 + quarter, static_cast<double>(y1)},
            {x1 - quarter, static_cast<double>(y1)}};
}

struct SyntheticScene {
    Sequence sequence;
    std::vector<std::vector<std::vector<Point2>>> true_joints;  // [frame - 1][actor][joint]
    std::vector<std::vector<Box>> actor_boxes;                  // [frame - 1][actor]
};

/// Renders the scene, its exact flow (actor pixels carry the actor velocity,
/// background pixels zero), jittered pose hypotheses and the annotation.
inline SyntheticScene synthesize_scene(const SceneSpec& spec, std::uint64_t seed) {
    if (spec.width < 8 || spec.height < 8 || spec.frames < 1) throw Error("synthesize_scene: scene too small");
    if (spec.actors.empty()) throw Error("synthesize_scene: at least one actor required");
    const int t_start = spec.t_start > 0 ? spec.t_start : 1;
    const int t_end = spec.t_end > 0 ? spec.t_end : spec.frames;
    if (t_start > t_end || t_end > spec.frames) throw Error("synthesize_scene: invalid temporal extent");

    Rng tex_rng(seed * 0x9E3779B97F4A7C15ULL + 1);
    Rng pose_rng(seed * 0xD1B54A32D192ED03ULL + 2);
    Image background(spec.width, spec.height);
    const int block = std::max(1, spec.texture_block);
    for (int by = 0; by < spec.height; by += block) {
        for (int bx = 0; bx < spec.width; bx += block) {
            const double base = 128.0 + tex_rng.uniform(-spec.texture, spec.texture);
            const double tint = tex_rng.uniform(-spec.texture / 3.0, spec.texture / 3.0);
            const Rgb c{static_cast<std::uint8_t>(std::clamp(base + tint, 0.0, 255.0)),
                        static_cast<std::uint8_t>(std::clamp(base, 0.0, 255.0)),
                        static_cast<std::uint8_t>(std::clamp(base - tint, 0.0, 255.0))};
            for (int y = by; y < std::min(spec.height, by + block); ++y)
                for (int x = bx; x < std::min(spec.width, bx + block); ++x) background.at(x, y) = c;
        }
    }

    SyntheticScene scene;
    auto& seq = scene.sequence;
    seq.video.id = spec.id;
    seq.video.frame_rate = spec.frame_rate;
    seq.poses.joint_count = kSyntheticJoints;
    GroundTruth gt;
    gt.video_id = spec.id;
    gt.label = spec.label.empty() ? motion_label(spec.actors[0].vx, spec.actors[0].vy) : spec.label;
    gt.t_start = t_start;
    gt.t_end = t_end;

    for (int t = 1; t <= spec.frames; ++t) {
        Image img = background;
        FlowField flow(t, spec.width, spec.height);
        std::vector<Box> boxes;
        std::vector<std::vector<Point2>> joints;
        std::vector<Pose> candidates;
        for (const auto& a : spec.actors) {
            const int x0 = static_cast<int>(std::lround(a.x + a.vx * (t - 1)));
            const int y0 = static_cast<int>(std::lround(a.y + a.vy * (t - 1)));
            const int x1 = x0 + a.w - 1, y1 = y0 + a.h - 1;
            if (x0 < 0 || y0 < 0 || x1 >= spec.width || y1 >= spec.height)
                throw Error("synthesize_scene: actor leaves the frame at t = " + std::to_string(t));
            const Rgb color{
                static_cast<std::uint8_t>(std::lround(128.0 + spec.contrast * (a.color.r - 128.0))),
                static_cast<std::uint8_t>(std::lround(128.0 + spec.contrast * (a.color.g - 128.0))),
                static_cast<std::uint8_t>(std::lround(128.0 + spec.contrast * (a.color.b - 128.0)))};
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    img.at(x, y) = color;
                    flow.u[flow.index(x, y)] = static_cast<float>(a.vx);
                    flow.v[flow.index(x, y)] = static_cast<float>(a.vy);
                }
            }
            boxes.push_back(box_from_pixel_range(x0, y0, x1, y1));
            const auto truth = rectangle_joints(x0, y0, x1, y1);
            joints.push_back(truth);

            auto clamp_point = [&](Point2 p) {
                return Point2{std::clamp(p.x, 0.0, spec.width - 1.0), std::clamp(p.y, 0.0, spec.height - 1.0)};
            };
            Pose real;
            real.frame_index = t;
            real.score = spec.true_score + (spec.score_noise > 0.0 ? spec.score_noise * pose_rng.normal() : 0.0);
            for (const auto& p : truth) {
                Point2 q = p;
                if (spec.pose_noise > 0.0) {
                    q.x += spec.pose_noise * pose_rng.normal();
                    q.y += spec.pose_noise * pose_rng.normal();
                }
                real.joints.push_back({clamp_point(q), false});
            }
            candidates.push_back(real);
            const Point2 center{(x0 + x1) / 2.0, (y0 + y1) / 2.0};
            for (int d = 0; d < spec.distractors; ++d) {
                const double angle = pose_rng.uniform(0.0, 2.0 * std::numbers::pi);
                const double offset = pose_rng.uniform(20.0, 40.0);
                const double scale = pose_rng.uniform(0.6, 1.4);
                Pose fake;
                fake.frame_index = t;
                fake.score = spec.true_score - spec.distractor_gap + spec.distractor_score_noise * pose_rng.normal();
                for (const auto& p : truth) {
                    Point2 q{center.x + offset * std::cos(angle) + scale * (p.x - center.x),
                             center.y + offset * std::sin(angle) + scale * (p.y - center.y)};
                    if (spec.pose_noise > 0.0) {
                        q.x += spec.pose_noise * pose_rng.normal();
                        q.y += spec.pose_noise * pose_rng.normal();
                    }
                    fake.joints.push_back({clamp_point(q), false});
                }
                candidates.push_back(fake);
            }
        }
        seq.video.frames.push_back(std::move(img));
        if (t < spec.frames) seq.flows.push_back(std::move(flow));
        seq.poses.frames.push_back(std::move(candidates));
        gt.boxes.push_back(t >= t_start && t <= t_end ? boxes : std::vector<Box>{});
        scene.true_joints.push_back(std::move(joints));
        scene.actor_boxes.push_back(std::move(boxes));
    }
    seq.ground_truth = std::move(gt);
    return scene;
}

}  // namespace streamloc
