#pragma once

#include <array>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamloc/appearance.hpp"
#include "streamloc/core.hpp"
#include "streamloc/maxflow.hpp"
#include "streamloc/pose.hpp"
#include "streamloc/superpixel.hpp"

namespace streamloc {

struct CrfNode {
    int frame = 0;        // position in the window (0 = oldest)
    int superpixel = 0;   // id inside that frame's map
    double cost_fg = 0.0;
    double cost_bg = 0.0;
};

struct CrfEdge {
    int a = 0;
    int b = 0;
    double weight = 0.0;  // paid when the two labels differ
    bool temporal = false;
};

/// Binary pairwise energy over window superpixels. Label 1 is foreground.
struct CrfGraph {
    std::vector<CrfNode> nodes;
    std::vector<CrfEdge> edges;
    std::vector<int> frame_offset;  // first node index of every window frame

    [[nodiscard]] int node_of(int frame, int superpixel) const { return frame_offset[frame] + superpixel; }

    [[nodiscard]] double energy(const std::vector<std::uint8_t>& labels) const {
        double e = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) e += labels[i] ? nodes[i].cost_fg : nodes[i].cost_bg;
        for (const auto& ed : edges)
            if (labels[ed.a] != labels[ed.b]) e += ed.weight;
        return e;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json n = nlohmann::json::array(), ed = nlohmann::json::array();
        for (const auto& x : nodes) n.push_back({x.frame, x.superpixel, x.cost_fg, x.cost_bg});
        for (const auto& x : edges) ed.push_back({x.a, x.b, x.weight, x.temporal ? 1 : 0});
        return {{"nodes", n}, {"edges", ed}};
    }
};

struct CrfParams {
    double alpha_fg = 1.0;
    double alpha_pose = 1.0;
    std::array<double, 5> beta{1.0, 1.0, 1.0, 1.0, 1.0};  // col, hof, mu, mb, edge
    double squash_center = 1.0;
    double squash_gain = 4.0;
    double temporal_overlap = 0.2;
    bool normalize_distances = true;
    double pose_margin = 0.0;
};

/// Everything the graph needs about one window frame.
struct CrfFrameInput {
    const SuperpixelMap* map = nullptr;
    const FlowField* flow_to_next = nullptr;  // maps this frame onto the next window frame
    std::optional<Pose> pose;                 // selected pose, if any
    double pose_cost = 0.0;                   // its H_pose
};

/// Temporal correspondences: (s, s') pairs where at least `overlap` of the
/// flow-warped pixels of s land inside s'.
inline std::vector<std::pair<int, int>> temporal_links(const SuperpixelMap& from, const SuperpixelMap& to,
                                                       const FlowField& flow, double overlap) {
    std::vector<std::pair<int, int>> links;
    std::map<int, int> hits;
    for (const auto& sp : from.superpixels) {
        hits.clear();
        for (int idx : sp.pixels) {
            const int x = idx % from.width, y = idx / from.width;
            const int tx = static_cast<int>(std::lround(x + flow.u[idx]));
            const int ty = static_cast<int>(std::lround(y + flow.v[idx]));
            if (tx < 0 || ty < 0 || tx >= to.width || ty >= to.height) continue;
            ++hits[to.label_at(tx, ty)];
        }
        for (const auto& [target, count] : hits)
            if (count >= overlap * static_cast<double>(sp.pixels.size())) links.emplace_back(sp.id, target);
    }
    return links;
}

/// Unary costs from the logistic foreground probability of
/// alpha_fg * normalized H_fg + alpha_pose * (pose likelihood inside the pose box).
inline std::pair<double, double> unary_costs(double h_fg_normalized, double pose_term, const CrfParams& p) {
    const double z = p.alpha_fg * h_fg_normalized + p.alpha_pose * pose_term;
    const double prob = std::clamp(sigmoid(p.squash_gain * (z - p.squash_center)), 1e-12, 1.0 - 1e-12);
    return {-std::log(prob), -std::log(1.0 - prob)};
}

/// Spatio-temporal superpixel graph over the window (oldest frame first).
inline CrfGraph build_graph(const std::vector<CrfFrameInput>& window, const AppearanceModel& model,
                            const CrfParams& params = {}) {
    CrfGraph g;
    std::vector<double> hfg;
    for (std::size_t f = 0; f < window.size(); ++f) {
        g.frame_offset.push_back(static_cast<int>(g.nodes.size()));
        for (const auto& sp : window[f].map->superpixels) {
            g.nodes.push_back({static_cast<int>(f), sp.id, 0.0, 0.0});
            hfg.push_back(model.foreground_score(sp));
        }
    }
    const auto hnorm = min_max_normalize(hfg);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        auto& node = g.nodes[i];
        const auto& in = window[node.frame];
        double pose_term = 0.0;
        if (in.pose) {
            const Box pb = in.pose->bbox(params.pose_margin);
            if (pb.contains(in.map->superpixels[node.superpixel].centroid)) pose_term = pose_likelihood(in.pose_cost);
        }
        std::tie(node.cost_fg, node.cost_bg) = unary_costs(hnorm[i], pose_term, params);
    }

    // raw distances first so they can be normalized by their mean over the graph
    struct RawEdge {
        int a, b;
        bool temporal;
        std::array<double, 5> d;
    };
    std::vector<RawEdge> raw;
    for (std::size_t f = 0; f < window.size(); ++f) {
        const auto& map = *window[f].map;
        for (const auto& [a, b] : map.adjacency) {
            const auto& s = map.superpixels[a];
            const auto& t = map.superpixels[b];
            raw.push_back({g.node_of(static_cast<int>(f), a), g.node_of(static_cast<int>(f), b), false,
                           {superpixel_distance(DistanceKind::col, s, t), superpixel_distance(DistanceKind::hof, s, t),
                            superpixel_distance(DistanceKind::mu, s, t), superpixel_distance(DistanceKind::mb, s, t),
                            superpixel_distance(DistanceKind::edge, s, t)}});
        }
        if (f + 1 < window.size() && window[f].flow_to_next) {
            const auto& next = *window[f + 1].map;
            for (const auto& [a, b] : temporal_links(map, next, *window[f].flow_to_next, params.temporal_overlap)) {
                const auto& s = map.superpixels[a];
                const auto& t = next.superpixels[b];
                raw.push_back({g.node_of(static_cast<int>(f), a), g.node_of(static_cast<int>(f + 1), b), true,
                               {superpixel_distance(DistanceKind::col, s, t),
                                superpixel_distance(DistanceKind::hof, s, t),
                                superpixel_distance(DistanceKind::mu, s, t), 0.0, 0.0}});
            }
        }
    }
    std::array<double, 5> scale{1.0, 1.0, 1.0, 1.0, 1.0};
    if (params.normalize_distances) {
        for (int k = 0; k < 5; ++k) {
            double sum = 0.0;
            int n = 0;
            for (const auto& e : raw) {
                if (e.temporal && k >= 3) continue;
                sum += e.d[k];
                ++n;
            }
            if (n > 0 && sum > 0.0) scale[k] = n / sum;
        }
    }
    for (const auto& e : raw) {
        double w = 0.0;
        const int kinds = e.temporal ? 3 : 5;
        for (int k = 0; k < kinds; ++k) w += params.beta[k] * std::exp(-e.d[k] * scale[k]);
        g.edges.push_back({e.a, e.b, w, e.temporal});
    }
    return g;
}

/// Exact minimizer of the graph energy by s-t min-cut (source side = foreground).
/// Among several optimal labelings the one with the largest foreground is returned.
inline std::vector<std::uint8_t> infer_labels(const CrfGraph& g) {
    const int n = static_cast<int>(g.nodes.size());
    const int source = n, sink = n + 1;
    double scale = 1.0;
    for (const auto& node : g.nodes) scale = std::max({scale, std::abs(node.cost_fg), std::abs(node.cost_bg)});
    for (const auto& e : g.edges) {
        if (!(e.weight >= 0.0)) throw Error("infer_labels: negative pairwise weight makes the energy non-submodular");
        scale = std::max(scale, e.weight);
    }
    MaxFlow flow(n + 2, 1e-13 * scale);
    for (int i = 0; i < n; ++i) {
        const auto& node = g.nodes[i];
        const double base = std::min(node.cost_fg, node.cost_bg);
        if (node.cost_bg > base) flow.add_edge(source, i, node.cost_bg - base);
        if (node.cost_fg > base) flow.add_edge(i, sink, node.cost_fg - base);
    }
    for (const auto& e : g.edges)
        if (e.weight > 0.0) flow.add_edge(e.a, e.b, e.weight, e.weight);
    flow.solve(source, sink);
    const auto side = flow.source_side_max(sink);
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) labels[i] = side[i] ? 1 : 0;
    return labels;
}

/// Iterated conditional modes from the given labeling; debug fallback and test reference.
inline std::vector<std::uint8_t> icm_labels(const CrfGraph& g, std::vector<std::uint8_t> labels, int max_sweeps = 100) {
    std::vector<std::vector<std::pair<int, double>>> nbrs(g.nodes.size());
    for (const auto& e : g.edges) {
        nbrs[e.a].emplace_back(e.b, e.weight);
        nbrs[e.b].emplace_back(e.a, e.weight);
    }
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool changed = false;
        for (std::size_t i = 0; i < g.nodes.size(); ++i) {
            double e_fg = g.nodes[i].cost_fg, e_bg = g.nodes[i].cost_bg;
            for (const auto& [j, w] : nbrs[i]) (labels[j] ? e_bg : e_fg) += w;
            const std::uint8_t want = e_fg < e_bg ? 1 : (e_bg < e_fg ? 0 : labels[i]);
            if (want != labels[i]) {
                labels[i] = want;
                changed = true;
            }
        }
        if (!changed) break;
    }
    return labels;
}

struct Segment {
    Box box;
    std::vector<int> superpixels;  // sorted ids of the chosen component
    bool empty = true;
};

/// Largest 4-connected foreground component (counted in superpixels; ties go to
/// more pixels, then to the lower smallest id) and its tight pixel box.
inline Segment segment_to_box(const std::vector<std::uint8_t>& fg, const SuperpixelMap& map) {
    Segment best;
    std::vector<int> comp_of(map.superpixels.size(), -1);
    std::size_t best_pixels = 0;
    int comp_index = 0;
    for (const auto& sp : map.superpixels) {
        if (!fg[sp.id] || comp_of[sp.id] >= 0) continue;
        std::vector<int> members{sp.id};
        comp_of[sp.id] = comp_index;
        for (std::size_t h = 0; h < members.size(); ++h) {
            for (const auto& [nb, border] : map.superpixels[members[h]].borders) {
                if (fg[nb] && comp_of[nb] < 0) {
                    comp_of[nb] = comp_index;
                    members.push_back(nb);
                }
            }
        }
        ++comp_index;
        std::size_t pixels = 0;
        for (int m : members) pixels += map.superpixels[m].pixels.size();
        const bool better = best.empty || members.size() > best.superpixels.size() ||
                            (members.size() == best.superpixels.size() && pixels > best_pixels);
        if (better) {
            std::sort(members.begin(), members.end());
            best.superpixels = members;
            best.empty = false;
            best_pixels = pixels;
        }
    }
    if (best.empty) return best;
    int x0 = map.width, y0 = map.height, x1 = -1, y1 = -1;
    for (int id : best.superpixels) {
        const auto& sp = map.superpixels[id];
        x0 = std::min(x0, sp.x0);
        y0 = std::min(y0, sp.y0);
        x1 = std::max(x1, sp.x1);
        y1 = std::max(y1, sp.y1);
    }
    best.box = box_from_pixel_range(x0, y0, x1, y1);
    return best;
}

struct LocalizationState {
    int frame = 0;
    std::deque<Box> boxes;  // tube over the window, newest last
    double posterior = 1.0;
    std::array<double, 4> sigma{20.0, 20.0, 20.0, 20.0};  // transition std-devs for (cx, cy, w, h)

    [[nodiscard]] const Box& current() const { return boxes.back(); }
};

struct MapCandidate {
    Box box;
    double superpixel_likelihood = 1.0;  // p(S_t | X_t)
    double pose_likelihood = 1.0;        // p(P_t | X_t)
    std::string source;
};

struct MapResult {
    LocalizationState state;
    std::vector<double> posteriors;  // normalized over the candidates
    std::size_t chosen = 0;
};

inline double transition_log_density(const Box& c, const Box& prev, const std::array<double, 4>& sigma) {
    const Point2 a = c.center(), b = prev.center();
    const std::array<double, 4> d{a.x - b.x, a.y - b.y, c.w - prev.w, c.h - prev.h};
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += -0.5 * (d[k] / sigma[k]) * (d[k] / sigma[k]) - std::log(sigma[k]);
    return s;
}

/// MAP state update over a discrete candidate set: posterior proportional to
/// p(S|X) p(P|X) N(X; X_prev, Sigma), normalized by its sum. Evaluated in the
/// log domain. Ties go to the candidate nearest the previous box center.
inline MapResult map_update(const std::optional<LocalizationState>& prev, const std::vector<MapCandidate>& candidates,
                            std::array<double, 4> sigma, int frame, std::size_t tube_length) {
    if (candidates.empty()) throw Error("map_update: empty candidate set");
    std::vector<double> logp(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        logp[i] = std::log(c.superpixel_likelihood) + std::log(c.pose_likelihood);
        if (prev && !prev->boxes.empty()) logp[i] += transition_log_density(c.box, prev->current(), sigma);
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logp) mx = std::max(mx, v);
    MapResult res;
    res.posteriors.resize(candidates.size());
    if (!std::isfinite(mx)) {
        std::fill(res.posteriors.begin(), res.posteriors.end(), 1.0 / candidates.size());
    } else {
        double z = 0.0;
        for (double v : logp) z += std::exp(v - mx);
        for (std::size_t i = 0; i < candidates.size(); ++i) res.posteriors[i] = std::exp(logp[i] - mx) / z;
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double a = res.posteriors[i], b = res.posteriors[best];
        if (a > b + 1e-15) {
            best = i;
        } else if (std::abs(a - b) <= 1e-15 && prev && !prev->boxes.empty()) {
            const Point2 pc = prev->current().center();
            if (distance(candidates[i].box.center(), pc) < distance(candidates[best].box.center(), pc)) best = i;
        }
    }
    res.chosen = best;
    if (prev) res.state = *prev;
    res.state.frame = frame;
    res.state.sigma = sigma;
    res.state.posterior = res.posteriors[best];
    res.state.boxes.push_back(candidates[best].box);
    while (res.state.boxes.size() > std::max<std::size_t>(1, tube_length)) res.state.boxes.pop_front();
    return res;
}

/// p(S_t | X_t): mean H_fg of the superpixels whose centroids fall in the box.
inline double box_superpixel_likelihood(const SuperpixelMap& map, const std::vector<double>& scores, const Box& box,
                                        double alpha_fg = 1.0) {
    double sum = 0.0;
    int n = 0;
    for (const auto& sp : map.superpixels) {
        if (!box.contains(sp.centroid)) continue;
        sum += scores[sp.id];
        ++n;
    }
    return n > 0 ? std::max(1e-12, alpha_fg * sum / n) : 1e-12;
}

/// p(P_t | X_t): pose likelihood scaled by the fraction of visible joints inside the box.
inline double box_pose_likelihood(const Pose& pose, double pose_cost, const Box& box) {
    int inside = 0, visible = 0;
    for (const auto& j : pose.joints) {
        if (j.occluded) continue;
        ++visible;
        inside += box.contains(j.position) ? 1 : 0;
    }
    const double frac = visible > 0 ? static_cast<double>(inside) / visible : 0.0;
    return std::max(1e-6, pose_likelihood(pose_cost) * frac);
}

/// Shifts a box by the median flow vector inside it.
inline Box propagate_box(const Box& box, const FlowField& flow) {
    std::vector<float> us, vs;
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x)));
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y)));
    const int x1 = std::min(flow.width - 1, static_cast<int>(std::ceil(box.x + box.w)) - 1);
    const int y1 = std::min(flow.height - 1, static_cast<int>(std::ceil(box.y + box.h)) - 1);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            us.push_back(flow.u[flow.index(x, y)]);
            vs.push_back(flow.v[flow.index(x, y)]);
        }
    }
    if (us.empty()) return box;
    auto median = [](std::vector<float>& v) {
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        return static_cast<double>(v[v.size() / 2]);
    };
    return {box.x + median(us), box.y + median(vs), box.w, box.h};
}

}  // namespace streamloc
