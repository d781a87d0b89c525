#pragma once

// Sequence loading and track emission. Formats:
//  * manifest.txt : `key=value` header lines followed by `frame <t> <path>`,
//                   `flow <t> <path>`, `poses <path>` and `groundtruth <path>` entries
//  * frames       : binary PPM (P6), lossless 8-bit RGB
//  * flow         : JSON header line, then one text row per image row of `u v` pairs
//  * poses, groundtruth, tracks : JSON lines (header object, then one object per frame)
// Frame indices are 1-based everywhere.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamloc/core.hpp"
#include "streamloc/log.hpp"
#include "streamloc/pose_types.hpp"

namespace streamloc {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct VideoStream {
    std::string id;
    double frame_rate = 25.0;
    std::vector<Image> frames;  // frames[t - 1] is frame t

    [[nodiscard]] int frame_count() const { return static_cast<int>(frames.size()); }
    [[nodiscard]] int width() const { return frames.empty() ? 0 : frames.front().width; }
    [[nodiscard]] int height() const { return frames.empty() ? 0 : frames.front().height; }

    friend bool operator==(const VideoStream&, const VideoStream&) = default;
};

struct PoseHypothesisFile {
    int joint_count = 0;
    std::vector<std::vector<Pose>> frames;  // frames[t - 1] holds the candidates of frame t

    friend bool operator==(const PoseHypothesisFile&, const PoseHypothesisFile&) = default;
};

struct GroundTruth {
    std::string video_id;
    std::string label;
    int t_start = 1;
    int t_end = 1;
    std::vector<std::vector<Box>> boxes;  // boxes[t - 1]: one box per actor, empty outside the extent

    /// Union box of all actors at frame t, or nullopt when no actor is annotated.
    [[nodiscard]] std::optional<Box> actor_box(int t) const {
        if (t < 1 || t > static_cast<int>(boxes.size()) || boxes[t - 1].empty()) return std::nullopt;
        const auto& bs = boxes[t - 1];
        double x0 = bs[0].x, y0 = bs[0].y, x1 = bs[0].x + bs[0].w, y1 = bs[0].y + bs[0].h;
        for (const auto& b : bs) {
            x0 = std::min(x0, b.x);
            y0 = std::min(y0, b.y);
            x1 = std::max(x1, b.x + b.w);
            y1 = std::max(y1, b.y + b.h);
        }
        return Box{x0, y0, x1 - x0, y1 - y0};
    }

    friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct Sequence {
    VideoStream video;
    std::vector<FlowField> flows;  // flows[t - 1] maps frame t onto t+1
    PoseHypothesisFile poses;
    std::optional<GroundTruth> ground_truth;

    friend bool operator==(const Sequence&, const Sequence&) = default;
};

inline constexpr const char* kFlowConvention = "t_to_t+1";
inline constexpr const char* kManifestName = "manifest.txt";

// ---------------------------------------------------------------------------
// rasters

inline void write_ppm(const fs::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size() * 3));
    if (!out) throw Error("write failed: " + path.string());
}

inline Image read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open frame: " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P6") throw Error("not a binary PPM: " + path.string());
    auto next_int = [&]() {
        int value = 0;
        while (in >> std::ws && in.peek() == '#') {
            std::string comment;
            std::getline(in, comment);
        }
        in >> value;
        return value;
    };
    const int w = next_int();
    const int h = next_int();
    const int maxval = next_int();
    if (!in || w <= 0 || h <= 0 || maxval != 255) throw Error("bad PPM header: " + path.string());
    in.get();
    Image img(w, h);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size() * 3));
    if (!in) throw Error("truncated PPM: " + path.string());
    return img;
}

// ---------------------------------------------------------------------------
// flow

inline void write_flow(const fs::path& path, const FlowField& flow) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << json{{"format", "streamloc-flow"},
                {"version", 1},
                {"frame_index", flow.frame_index},
                {"width", flow.width},
                {"height", flow.height}}
               .dump()
        << '\n';
    std::string row;
    char buf[32];
    for (int y = 0; y < flow.height; ++y) {
        row.clear();
        for (int x = 0; x < flow.width; ++x) {
            const auto i = flow.index(x, y);
            for (float value : {flow.u[i], flow.v[i]}) {
                if (!row.empty()) row.push_back(' ');
                auto res = std::to_chars(buf, buf + sizeof(buf), value);
                row.append(buf, res.ptr);
            }
        }
        out << row << '\n';
    }
    if (!out) throw Error("write failed: " + path.string());
}

inline FlowField read_flow(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open flow: " + path.string());
    std::string line;
    std::getline(in, line);
    const json header = json::parse(line);
    if (header.value("format", "") != "streamloc-flow") throw Error("not a flow file: " + path.string());
    FlowField flow(header.at("frame_index").get<int>(), header.at("width").get<int>(),
                   header.at("height").get<int>());
    for (int y = 0; y < flow.height; ++y) {
        if (!std::getline(in, line)) throw Error("truncated flow file: " + path.string());
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (int x = 0; x < flow.width; ++x) {
            float uv[2];
            for (float& value : uv) {
                while (p < end && *p == ' ') ++p;
                auto res = std::from_chars(p, end, value);
                if (res.ec != std::errc()) throw Error("malformed flow row " + std::to_string(y + 1) + " in " + path.string());
                if (!std::isfinite(value)) throw Error("non-finite flow value in " + path.string());
                p = res.ptr;
            }
            flow.u[flow.index(x, y)] = uv[0];
            flow.v[flow.index(x, y)] = uv[1];
        }
    }
    return flow;
}

// ---------------------------------------------------------------------------
// poses

inline json pose_to_json(const Pose& pose) {
    json joints = json::array();
    for (const auto& j : pose.joints) joints.push_back({j.position.x, j.position.y, j.occluded ? 1 : 0});
    return {{"score", pose.score}, {"body_config", pose.body_config}, {"joints", joints}};
}

inline Pose pose_from_json(const json& j, int frame) {
    Pose pose;
    pose.frame_index = frame;
    pose.score = j.at("score").get<double>();
    pose.body_config = j.value("body_config", "full");
    for (const auto& jt : j.at("joints")) {
        Joint joint;
        joint.position = {jt.at(0).get<double>(), jt.at(1).get<double>()};
        joint.occluded = jt.size() > 2 && jt.at(2).get<int>() != 0;
        pose.joints.push_back(joint);
    }
    return pose;
}

inline void write_poses(const fs::path& path, const PoseHypothesisFile& poses) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << json{{"format", "streamloc-poses"}, {"version", 1}, {"joint_count", poses.joint_count}}.dump() << '\n';
    for (std::size_t t = 0; t < poses.frames.size(); ++t) {
        json list = json::array();
        for (const auto& p : poses.frames[t]) list.push_back(pose_to_json(p));
        out << json{{"frame", t + 1}, {"poses", list}}.dump() << '\n';
    }
    if (!out) throw Error("write failed: " + path.string());
}

inline PoseHypothesisFile read_poses(const fs::path& path, int frame_count, int width, int height) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open pose file: " + path.string());
    std::string line;
    std::getline(in, line);
    const json header = json::parse(line);
    PoseHypothesisFile out;
    out.joint_count = header.at("joint_count").get<int>();
    out.frames.assign(static_cast<std::size_t>(frame_count), {});
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        const int t = rec.at("frame").get<int>();
        if (t < 1 || t > frame_count) throw Error("pose record for frame " + std::to_string(t) + " outside 1.." + std::to_string(frame_count));
        for (const auto& pj : rec.at("poses")) {
            Pose pose = pose_from_json(pj, t);
            if (static_cast<int>(pose.joints.size()) != out.joint_count)
                throw Error("pose in frame " + std::to_string(t) + " has " + std::to_string(pose.joints.size()) +
                            " joints, expected " + std::to_string(out.joint_count));
            for (auto& j : pose.joints) {
                const bool inside = j.position.x >= 0 && j.position.y >= 0 && j.position.x <= width - 1 &&
                                    j.position.y <= height - 1;
                if (!inside && !j.occluded) {
                    log().warn("frame {}: visible joint outside the frame, marking occluded", t);
                    j.occluded = true;
                }
            }
            out.frames[t - 1].push_back(std::move(pose));
        }
    }
    for (int t = 1; t <= frame_count; ++t)
        if (out.frames[t - 1].empty()) log().warn("frame {}: no pose hypotheses", t);
    return out;
}

// ---------------------------------------------------------------------------
// ground truth

inline void write_ground_truth(const fs::path& path, const GroundTruth& gt) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << json{{"format", "streamloc-groundtruth"},
                {"version", 1},
                {"video_id", gt.video_id},
                {"label", gt.label},
                {"t_start", gt.t_start},
                {"t_end", gt.t_end}}
               .dump()
        << '\n';
    for (std::size_t t = 0; t < gt.boxes.size(); ++t) {
        json list = json::array();
        for (const auto& b : gt.boxes[t]) list.push_back({b.x, b.y, b.w, b.h});
        out << json{{"frame", t + 1}, {"boxes", list}}.dump() << '\n';
    }
    if (!out) throw Error("write failed: " + path.string());
}

inline GroundTruth read_ground_truth(const fs::path& path, int frame_count, int width, int height) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open ground truth: " + path.string());
    std::string line;
    std::getline(in, line);
    const json header = json::parse(line);
    GroundTruth gt;
    gt.video_id = header.value("video_id", "");
    gt.label = header.value("label", "");
    gt.t_start = header.at("t_start").get<int>();
    gt.t_end = header.at("t_end").get<int>();
    if (gt.t_start > gt.t_end) throw Error("ground truth t_start > t_end in " + path.string());
    gt.boxes.assign(static_cast<std::size_t>(frame_count), {});
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        const int t = rec.at("frame").get<int>();
        if (t < 1 || t > frame_count) throw Error("ground truth record for frame " + std::to_string(t) + " out of range");
        for (const auto& b : rec.at("boxes")) {
            Box box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
            if (box.x < 0 || box.y < 0 || box.x + box.w > width || box.y + box.h > height)
                throw Error("ground truth box outside frame bounds at frame " + std::to_string(t));
            gt.boxes[t - 1].push_back(box);
        }
    }
    return gt;
}

// ---------------------------------------------------------------------------
// manifest

struct Manifest {
    std::map<std::string, std::string> header;
    std::map<int, std::string> frames;
    std::map<int, std::string> flows;
    std::string poses;
    std::string groundtruth;
};

inline Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest: " + path.string());
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (const auto eq = line.find('='); eq != std::string::npos && line.find(' ') > eq) {
            m.header[line.substr(0, eq)] = line.substr(eq + 1);
            continue;
        }
        std::istringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "frame" || kind == "flow") {
            int t = 0;
            std::string file;
            ss >> t >> file;
            if (!ss || file.empty()) throw Error("malformed manifest line: " + line);
            (kind == "frame" ? m.frames : m.flows)[t] = file;
        } else if (kind == "poses") {
            ss >> m.poses;
        } else if (kind == "groundtruth") {
            ss >> m.groundtruth;
        } else {
            throw Error("unknown manifest entry: " + line);
        }
    }
    return m;
}

inline fs::path manifest_path(const fs::path& path) {
    return fs::is_directory(path) ? path / kManifestName : path;
}

/// Loads and cross-validates a sequence. `path` is a manifest file or the directory holding one.
inline Sequence load_sequence(const fs::path& path) {
    const fs::path mpath = manifest_path(path);
    const fs::path dir = mpath.parent_path();
    const Manifest m = read_manifest(mpath);
    auto header_int = [&](const std::string& key) {
        const auto it = m.header.find(key);
        if (it == m.header.end()) throw Error("manifest missing header key '" + key + "'");
        return std::stoi(it->second);
    };
    const int height = header_int("height");
    const int width = header_int("width");
    const int frame_count = header_int("frame_count");
    if (const auto it = m.header.find("flow_convention"); it != m.header.end() && it->second != kFlowConvention)
        throw Error("unsupported flow convention '" + it->second + "'");

    Sequence seq;
    seq.video.id = m.header.count("id") ? m.header.at("id") : dir.filename().string();
    if (m.header.count("frame_rate")) seq.video.frame_rate = std::stod(m.header.at("frame_rate"));
    for (int t = 1; t <= frame_count; ++t) {
        const auto it = m.frames.find(t);
        if (it == m.frames.end()) throw Error("missing frame " + std::to_string(t) + " in manifest");
        Image img = read_ppm(dir / it->second);
        if (img.width != width || img.height != height)
            throw Error("frame " + std::to_string(t) + " has dimensions " + std::to_string(img.width) + "x" +
                        std::to_string(img.height) + ", expected " + std::to_string(width) + "x" + std::to_string(height));
        seq.video.frames.push_back(std::move(img));
    }
    if (!m.frames.empty() && m.frames.rbegin()->first > frame_count)
        throw Error("manifest lists frame " + std::to_string(m.frames.rbegin()->first) + " beyond frame_count");

    const int flow_count = static_cast<int>(m.flows.size());
    for (int t = 1; t <= flow_count; ++t) {
        const auto it = m.flows.find(t);
        if (it == m.flows.end()) throw Error("missing flow " + std::to_string(t) + " in manifest");
        FlowField flow = read_flow(dir / it->second);
        if (flow.width != width || flow.height != height)
            throw Error("flow " + std::to_string(t) + " dimension mismatch");
        if (flow.frame_index != t) throw Error("flow file listed as " + std::to_string(t) + " carries index " + std::to_string(flow.frame_index));
        seq.flows.push_back(std::move(flow));
    }
    if (flow_count >= frame_count && frame_count > 0)
        throw Error("flow index " + std::to_string(flow_count) + " has no following frame");

    const int joint_count = m.header.count("joint_count") ? header_int("joint_count") : 0;
    if (!m.poses.empty()) {
        seq.poses = read_poses(dir / m.poses, frame_count, width, height);
        if (m.header.count("joint_count") && seq.poses.joint_count != joint_count)
            throw Error("pose file joint_count disagrees with manifest");
    } else {
        seq.poses.joint_count = joint_count;
        seq.poses.frames.assign(static_cast<std::size_t>(frame_count), {});
    }
    if (!m.groundtruth.empty()) seq.ground_truth = read_ground_truth(dir / m.groundtruth, frame_count, width, height);
    return seq;
}

/// Writes every part of `seq` plus a manifest into `dir`.
inline void write_sequence(const fs::path& dir, const Sequence& seq) {
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "flow");
    std::ofstream manifest(dir / kManifestName);
    if (!manifest) throw Error("cannot write manifest in " + dir.string());
    manifest << "# streamloc sequence manifest\n"
             << "version=1\n"
             << "id=" << seq.video.id << '\n'
             << "height=" << seq.video.height() << '\n'
             << "width=" << seq.video.width() << '\n'
             << "frame_count=" << seq.video.frame_count() << '\n'
             << "frame_rate=" << seq.video.frame_rate << '\n'
             << "flow_convention=" << kFlowConvention << '\n'
             << "joint_count=" << seq.poses.joint_count << '\n';
    char name[32];
    for (int t = 1; t <= seq.video.frame_count(); ++t) {
        std::snprintf(name, sizeof(name), "frames/%06d.ppm", t);
        write_ppm(dir / name, seq.video.frames[t - 1]);
        manifest << "frame " << t << ' ' << name << '\n';
    }
    for (const auto& flow : seq.flows) {
        std::snprintf(name, sizeof(name), "flow/%06d.flow", flow.frame_index);
        write_flow(dir / name, flow);
        manifest << "flow " << flow.frame_index << ' ' << name << '\n';
    }
    write_poses(dir / "poses.jsonl", seq.poses);
    manifest << "poses poses.jsonl\n";
    if (seq.ground_truth) {
        write_ground_truth(dir / "groundtruth.jsonl", *seq.ground_truth);
        manifest << "groundtruth groundtruth.jsonl\n";
    }
    if (!manifest) throw Error("write failed for manifest in " + dir.string());
}

// ---------------------------------------------------------------------------
// tracks

struct ActorRecord {
    Box box;
    std::vector<int> segment;

    friend bool operator==(const ActorRecord&, const ActorRecord&) = default;
};

/// One emitted frame. `interval` counts completed classification intervals
/// (0 until the first interval closes); `flags` carries per-frame diagnostics.
struct TrackRecord {
    int frame = 0;
    Box box;
    std::vector<int> segment;
    std::vector<double> confidences;
    int interval = 0;
    std::vector<std::string> flags;
    std::vector<ActorRecord> actors;  // only filled for multi-actor runs

    friend bool operator==(const TrackRecord&, const TrackRecord&) = default;
};

struct Track {
    std::string video_id;
    std::vector<std::string> classes;
    json config = json::object();
    std::string library_version;
    std::vector<TrackRecord> records;

    friend bool operator==(const Track& a, const Track& b) {
        return a.video_id == b.video_id && a.classes == b.classes && a.config == b.config &&
               a.library_version == b.library_version && a.records == b.records;
    }
};

inline json record_to_json(const TrackRecord& r) {
    json j{{"frame", r.frame},
           {"box", {r.box.x, r.box.y, r.box.w, r.box.h}},
           {"segment", r.segment},
           {"confidences", r.confidences},
           {"interval", r.interval},
           {"flags", r.flags}};
    if (!r.actors.empty()) {
        json actors = json::array();
        for (const auto& a : r.actors)
            actors.push_back({{"box", {a.box.x, a.box.y, a.box.w, a.box.h}}, {"segment", a.segment}});
        j["actors"] = actors;
    }
    return j;
}

inline TrackRecord record_from_json(const json& j) {
    auto box_of = [](const json& b) {
        return Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
    };
    TrackRecord r;
    r.frame = j.at("frame").get<int>();
    r.box = box_of(j.at("box"));
    r.segment = j.at("segment").get<std::vector<int>>();
    r.confidences = j.at("confidences").get<std::vector<double>>();
    r.interval = j.value("interval", 0);
    r.flags = j.value("flags", std::vector<std::string>{});
    if (j.contains("actors"))
        for (const auto& a : j.at("actors")) r.actors.push_back({box_of(a.at("box")), a.at("segment").get<std::vector<int>>()});
    return r;
}

/// Append-only writer. Records are flushed one by one so an interrupted run
/// leaves a readable prefix; frames must strictly increase.
class TrackWriter {
public:
    TrackWriter(const fs::path& path, const std::string& video_id, const std::vector<std::string>& classes,
                const json& config = json::object())
        : path_(path), out_(path, std::ios::trunc), class_count_(classes.size()) {
        if (!out_) throw Error("cannot open track for writing: " + path.string());
        out_ << json{{"format", "streamloc-track"},
                     {"version", 1},
                     {"video_id", video_id},
                     {"classes", classes},
                     {"config", config},
                     {"library_version", kLibraryVersion}}
                    .dump()
             << '\n';
        out_.flush();
        if (!out_) throw Error("write failed: " + path.string());
    }

    void append(const TrackRecord& record) {
        if (record.frame <= last_frame_)
            throw Error("frame " + std::to_string(record.frame) + " already emitted (last emitted frame " +
                        std::to_string(last_frame_) + "); past results are irrevocable");
        if (record.confidences.size() != class_count_)
            throw Error("record for frame " + std::to_string(record.frame) + " has " +
                        std::to_string(record.confidences.size()) + " confidences, expected " + std::to_string(class_count_));
        out_ << record_to_json(record).dump() << '\n';
        out_.flush();
        if (!out_) throw Error("write failed: " + path_.string());
        last_frame_ = record.frame;
    }

    [[nodiscard]] int last_frame() const { return last_frame_; }

private:
    fs::path path_;
    std::ofstream out_;
    std::size_t class_count_;
    int last_frame_ = 0;
};

/// Reads a track; a trailing partial line left by an interrupted writer is ignored.
inline Track read_track(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open track: " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Track track;
    std::size_t pos = 0;
    bool header_done = false;
    while (pos < content.size()) {
        const std::size_t nl = content.find('\n', pos);
        if (nl == std::string::npos) break;  // incomplete final line
        const std::string line = content.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (!header_done) {
            if (j.value("format", "") != "streamloc-track") throw Error("not a track file: " + path.string());
            track.video_id = j.value("video_id", "");
            track.classes = j.at("classes").get<std::vector<std::string>>();
            track.config = j.value("config", json::object());
            track.library_version = j.value("library_version", "");
            header_done = true;
        } else {
            track.records.push_back(record_from_json(j));
        }
    }
    if (!header_done) throw Error("track has no header: " + path.string());
    return track;
}

/// Writes a whole track in one go (state boxes plus per-frame confidences).
inline void write_track(const fs::path& path, const Track& track) {
    TrackWriter writer(path, track.video_id, track.classes, track.config);
    for (const auto& r : track.records) writer.append(r);
}

}  // namespace streamloc
