#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "streamloc/appearance.hpp"
#include "streamloc/core.hpp"
#include "streamloc/log.hpp"
#include "streamloc/pose_types.hpp"
#include "streamloc/superpixel.hpp"

namespace streamloc {

/// H_fg of the superpixel enclosing a point of a given frame.
using ForegroundLookup = std::function<double(int frame, Point2 p)>;

/// Natural cubic smoothing spline over one coordinate pair of a joint
/// trajectory, time mapped to [0, 1]. With n <= 4 observations it interpolates
/// with a degree n-1 polynomial; above that it minimizes
/// (1/n) * sum |y_i - f(t_i)|^2 + lambda * integral f''^2 over a truncated-power
/// cubic basis with knots at the interior observation times.
class JointSpline {
public:
    JointSpline() = default;

    static JointSpline fit(const std::vector<double>& times, const std::vector<Point2>& points, double t_lo,
                           double t_hi, double lambda) {
        JointSpline s;
        const std::size_t n = times.size();
        if (n == 0) return s;
        s.valid_ = true;
        s.t_lo_ = t_lo;
        s.scale_ = t_hi > t_lo ? 1.0 / (t_hi - t_lo) : 1.0;
        if (n == 1) {
            s.degenerate_ = true;
            s.cx_ = Eigen::VectorXd::Constant(1, points[0].x);
            s.cy_ = Eigen::VectorXd::Constant(1, points[0].y);
            return s;
        }
        std::vector<double> tau(n);
        for (std::size_t i = 0; i < n; ++i) tau[i] = (times[i] - t_lo) * s.scale_;
        const std::size_t poly = std::min<std::size_t>(n, 4);
        if (n > 4)
            for (std::size_t i = 1; i + 1 < n; ++i) s.knots_.push_back(tau[i]);
        const std::size_t p = poly + s.knots_.size();
        Eigen::MatrixXd basis(n, p);
        for (std::size_t i = 0; i < n; ++i) {
            const auto row = s.basis_row(tau[i], poly);
            for (std::size_t c = 0; c < p; ++c) basis(i, c) = row[c];
        }
        Eigen::VectorXd yx(n), yy(n);
        for (std::size_t i = 0; i < n; ++i) {
            yx(i) = points[i].x;
            yy(i) = points[i].y;
        }
        if (s.knots_.empty()) {
            const auto qr = basis.colPivHouseholderQr();
            s.cx_ = qr.solve(yx);
            s.cy_ = qr.solve(yy);
        } else {
            const Eigen::MatrixXd normal = basis.transpose() * basis + static_cast<double>(n) * lambda * s.roughness(poly);
            const auto solver = normal.ldlt();
            s.cx_ = solver.solve(basis.transpose() * yx);
            s.cy_ = solver.solve(basis.transpose() * yy);
        }
        s.poly_ = poly;
        return s;
    }

    [[nodiscard]] bool valid() const { return valid_; }
    /// Fewer than two observations: constant at the last seen location.
    [[nodiscard]] bool degenerate() const { return degenerate_; }

    [[nodiscard]] Point2 operator()(double t) const {
        if (!valid_) return {};
        if (degenerate_) return {cx_(0), cy_(0)};
        const auto row = basis_row((t - t_lo_) * scale_, poly_);
        double x = 0.0, y = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            x += row[c] * cx_(static_cast<Eigen::Index>(c));
            y += row[c] * cy_(static_cast<Eigen::Index>(c));
        }
        return {x, y};
    }

    /// Roughness penalty matrix: integral over [0, 1] of the products of the
    /// basis functions' second derivatives (all piecewise linear, so Simpson's
    /// rule on every segment between breakpoints is exact).
    [[nodiscard]] Eigen::MatrixXd roughness(std::size_t poly) const {
        const std::size_t p = poly + knots_.size();
        auto second = [&](double tau) {
            std::vector<double> d(p, 0.0);
            if (poly > 2) d[2] = 2.0;
            if (poly > 3) d[3] = 6.0 * tau;
            for (std::size_t k = 0; k < knots_.size(); ++k) d[poly + k] = 6.0 * std::max(0.0, tau - knots_[k]);
            return d;
        };
        std::vector<double> breaks{0.0};
        for (double k : knots_) breaks.push_back(std::clamp(k, 0.0, 1.0));
        breaks.push_back(1.0);
        Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
        for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
            const double a = breaks[b], c = breaks[b + 1];
            if (c <= a) continue;
            const auto fa = second(a), fm = second((a + c) / 2.0), fc = second(c);
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < p; ++j)
                    omega(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +=
                        (c - a) / 6.0 * (fa[i] * fa[j] + 4.0 * fm[i] * fm[j] + fc[i] * fc[j]);
        }
        return omega;
    }

private:
    [[nodiscard]] std::vector<double> basis_row(double tau, std::size_t poly) const {
        std::vector<double> row;
        row.reserve(poly + knots_.size());
        double pw = 1.0;
        for (std::size_t d = 0; d < poly; ++d) {
            row.push_back(pw);
            pw *= tau;
        }
        for (double k : knots_) {
            const double r = std::max(0.0, tau - k);
            row.push_back(r * r * r);
        }
        return row;
    }

    bool valid_ = false;
    bool degenerate_ = false;
    double t_lo_ = 0.0;
    double scale_ = 1.0;
    std::size_t poly_ = 0;
    std::vector<double> knots_;
    Eigen::VectorXd cx_, cy_;
};

struct JointSplines {
    int first_frame = 0;
    int last_frame = 0;
    std::vector<JointSpline> joints;

    [[nodiscard]] Point2 at(std::size_t joint, double t) const { return joints[joint](t); }

    /// Vertical extrema of every valid spline over the integer frames of the window.
    [[nodiscard]] std::optional<std::pair<double, double>> vertical_extent() const {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& s : joints) {
            if (!s.valid()) continue;
            for (int t = first_frame; t <= last_frame; ++t) {
                const double y = s(t).y;
                lo = std::min(lo, y);
                hi = std::max(hi, y);
            }
        }
        if (lo > hi) return std::nullopt;
        return std::pair{lo, hi};
    }
};

/// Fits one spline per joint to the visible joints of the given poses (one pose
/// per frame; virtual poses are skipped). The window spans the poses' frames.
inline JointSplines fit_joint_splines(const std::vector<Pose>& selection, double lambda = 0.5) {
    JointSplines out;
    if (selection.empty()) return out;
    out.first_frame = selection.front().frame_index;
    out.last_frame = selection.back().frame_index;
    std::size_t joint_count = 0;
    for (const auto& p : selection) joint_count = std::max(joint_count, p.joints.size());
    out.joints.resize(joint_count);
    for (std::size_t j = 0; j < joint_count; ++j) {
        std::vector<double> times;
        std::vector<Point2> pts;
        for (const auto& p : selection) {
            if (p.is_virtual || j >= p.joints.size() || p.joints[j].occluded) continue;
            times.push_back(p.frame_index);
            pts.push_back(p.joints[j].position);
        }
        out.joints[j] = JointSpline::fit(times, pts, out.first_frame, out.last_frame, lambda);
        if (out.joints[j].degenerate())
            log().debug("joint {} visible in fewer than two frames; constant trajectory", j);
    }
    return out;
}

/// J_app: summed |H_fg| change between the superpixels under corresponding joints.
inline double appearance_smoothness(const Pose& current, const Pose& previous, const ForegroundLookup& lookup) {
    double cost = 0.0;
    const std::size_t n = std::min(current.joints.size(), previous.joints.size());
    for (std::size_t j = 0; j < n; ++j) {
        if (current.joints[j].occluded || previous.joints[j].occluded) continue;
        cost += std::abs(lookup(current.frame_index, current.joints[j].position) -
                         lookup(previous.frame_index, previous.joints[j].position));
    }
    return cost;
}

/// Lookup backed by superpixel maps and an appearance model; points outside the
/// frame are clamped to the nearest pixel.
class MapForegroundLookup {
public:
    MapForegroundLookup(std::vector<const SuperpixelMap*> maps, const AppearanceModel& model) : model_(&model) {
        for (const auto* m : maps) {
            auto& scores = scores_[m->frame_index];
            maps_[m->frame_index] = m;
            scores.reserve(m->superpixels.size());
            for (const auto& sp : m->superpixels) scores.push_back(model.foreground_score(sp));
        }
    }

    double operator()(int frame, Point2 p) const {
        const auto it = maps_.find(frame);
        if (it == maps_.end()) throw Error("no superpixel map for frame " + std::to_string(frame));
        const auto* map = it->second;
        if (p.x < -0.5 || p.y < -0.5 || p.x > map->width - 0.5 || p.y > map->height - 0.5)
            log().debug("joint at ({}, {}) outside frame {}, clamping", p.x, p.y, frame);
        return scores_.at(frame)[static_cast<std::size_t>(map->enclosing(p))];
    }

private:
    const AppearanceModel* model_;
    std::map<int, const SuperpixelMap*> maps_;
    std::map<int, std::vector<double>> scores_;
};

inline double appearance_smoothness(const Pose& current, const Pose& previous, const SuperpixelMap& current_map,
                                    const SuperpixelMap& previous_map, const AppearanceModel& model) {
    MapForegroundLookup lookup({&current_map, &previous_map}, model);
    return appearance_smoothness(current, previous, ForegroundLookup(std::cref(lookup)));
}

/// J_loc: summed distance between each visible joint and its spline prediction.
inline double location_smoothness(const Pose& pose, const JointSplines& splines) {
    double cost = 0.0;
    for (std::size_t j = 0; j < pose.joints.size() && j < splines.joints.size(); ++j) {
        if (pose.joints[j].occluded || !splines.joints[j].valid()) continue;
        cost += distance(splines.at(j, pose.frame_index), pose.joints[j].position);
    }
    return cost;
}

/// J_sc: |(spline envelope height over the window) - (pose joint height)|.
inline double scale_smoothness(const Pose& pose, const JointSplines& splines) {
    const auto env = splines.vertical_extent();
    if (!env) return 0.0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& j : pose.joints) {
        if (j.occluded) continue;
        lo = std::min(lo, j.position.y);
        hi = std::max(hi, j.position.y);
    }
    const double pose_height = lo <= hi ? hi - lo : 0.0;
    return std::abs((env->second - env->first) - pose_height);
}

struct PoseCostTerms {
    double raw = 0.0;
    double app = 0.0;
    double loc = 0.0;
    double sc = 0.0;
    double total = 0.0;  // sum of the four terms, each min-max normalized over the frame's candidates
};

/// H_pose for every candidate of one frame. `previous` is the pose selected in
/// the preceding frame (J_app is 0 without it or without a lookup).
inline std::vector<PoseCostTerms> combined_costs(const std::vector<Pose>& candidates, const Pose* previous,
                                                 const JointSplines& splines, const ForegroundLookup* lookup) {
    std::vector<PoseCostTerms> terms(candidates.size());
    std::vector<double> raw, app, loc, sc;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        auto& t = terms[c];
        t.raw = -candidates[c].score;
        t.app = (previous && lookup) ? appearance_smoothness(candidates[c], *previous, *lookup) : 0.0;
        t.loc = location_smoothness(candidates[c], splines);
        t.sc = scale_smoothness(candidates[c], splines);
        raw.push_back(t.raw);
        app.push_back(t.app);
        loc.push_back(t.loc);
        sc.push_back(t.sc);
    }
    const auto nr = min_max_normalize(raw), na = min_max_normalize(app), nl = min_max_normalize(loc),
               ns = min_max_normalize(sc);
    for (std::size_t c = 0; c < candidates.size(); ++c) terms[c].total = nr[c] + na[c] + nl[c] + ns[c];
    return terms;
}

/// p(P_t | X_t) = exp(alpha_pose * H_pose) with alpha_pose = -1.
inline double pose_likelihood(double pose_cost, double alpha_pose = -1.0) { return std::exp(alpha_pose * pose_cost); }

struct RefineParams {
    int iterations = 3;  // Q
    double spline_lambda = 0.5;
};

struct RefineResult {
    std::vector<Pose> selected;       // one per window frame, virtual poses flagged
    std::vector<int> choice;          // candidate index per frame, -1 for a virtual pose
    std::vector<double> costs;        // H_pose of each selected pose under the final splines
    std::vector<double> objective;    // objective after initialization and after each accepted iteration
    JointSplines splines;             // fitted to the final selection
    int iterations_run = 0;
};

/// Batch pose refinement over a window of frames (`candidates[i]` belongs to
/// frame first_frame + i). `before_window` is the pose selected for the frame
/// preceding the window, if any (J_app context for the first frame).
class PoseRefiner {
public:
    PoseRefiner(const std::vector<std::vector<Pose>>& candidates, int first_frame, const Pose* before_window,
                const ForegroundLookup* lookup, RefineParams params)
        : candidates_(candidates), first_frame_(first_frame), before_(before_window), lookup_(lookup), params_(params) {
        for (std::size_t i = 0; i < candidates_.size(); ++i)
            for (auto& p : candidates_[i]) p.frame_index = first_frame_ + static_cast<int>(i);
    }

    /// Initial selection: per-frame argmin of the raw cost (ties to the lower index).
    [[nodiscard]] std::vector<int> initial_choice() const {
        std::vector<int> choice(candidates_.size(), -1);
        for (std::size_t i = 0; i < candidates_.size(); ++i) {
            for (std::size_t c = 0; c < candidates_[i].size(); ++c)
                if (choice[i] < 0 || -candidates_[i][c].score < -candidates_[i][choice[i]].score) choice[i] = static_cast<int>(c);
        }
        return choice;
    }

    /// Splines fitted to the non-virtual poses of a selection.
    [[nodiscard]] JointSplines splines_for(const std::vector<int>& choice) const {
        std::vector<Pose> sel;
        for (std::size_t i = 0; i < choice.size(); ++i)
            if (choice[i] >= 0) sel.push_back(candidates_[i][choice[i]]);
        JointSplines s = fit_joint_splines(sel, params_.spline_lambda);
        s.first_frame = first_frame_;
        s.last_frame = first_frame_ + static_cast<int>(choice.size()) - 1;
        return s;
    }

    /// Candidate list of frame i, with a spline-synthesized virtual pose for empty frames.
    [[nodiscard]] std::vector<Pose> frame_candidates(std::size_t i, const JointSplines& splines) const {
        if (!candidates_[i].empty()) return candidates_[i];
        Pose v;
        v.frame_index = first_frame_ + static_cast<int>(i);
        v.is_virtual = true;
        for (const auto& s : splines.joints) v.joints.push_back({s(v.frame_index), !s.valid()});
        return {v};
    }

    /// Sum of H_pose over the window for a fixed selection and fixed splines.
    [[nodiscard]] double selection_cost(const std::vector<int>& choice, const JointSplines& splines,
                                        std::vector<double>* per_frame = nullptr) const {
        double total = 0.0;
        std::optional<Pose> prev;
        if (before_) prev = *before_;
        for (std::size_t i = 0; i < choice.size(); ++i) {
            const auto cands = frame_candidates(i, splines);
            const auto terms = combined_costs(cands, prev ? &*prev : nullptr, splines, lookup_);
            const std::size_t c = choice[i] < 0 ? 0 : static_cast<std::size_t>(choice[i]);
            total += terms[c].total;
            if (per_frame) per_frame->push_back(terms[c].total);
            prev = cands[c];
        }
        return total;
    }

    /// Self-consistent objective: selection cost under splines fitted to that selection.
    [[nodiscard]] double objective(const std::vector<int>& choice) const {
        return selection_cost(choice, splines_for(choice));
    }

    /// Minimizes the window cost for fixed splines. Frames interact only through
    /// J_app of consecutive frames, so a forward chain recursion is exact.
    [[nodiscard]] std::vector<int> best_choice(const JointSplines& splines) const {
        const std::size_t n = candidates_.size();
        std::vector<std::vector<Pose>> cands(n);
        for (std::size_t i = 0; i < n; ++i) cands[i] = frame_candidates(i, splines);
        std::vector<std::vector<double>> acc(n);
        std::vector<std::vector<int>> back(n);
        for (std::size_t i = 0; i < n; ++i) {
            acc[i].assign(cands[i].size(), std::numeric_limits<double>::infinity());
            back[i].assign(cands[i].size(), -1);
            if (i == 0) {
                const auto terms = combined_costs(cands[0], before_, splines, lookup_);
                for (std::size_t c = 0; c < cands[0].size(); ++c) acc[0][c] = terms[c].total;
                continue;
            }
            for (std::size_t pc = 0; pc < cands[i - 1].size(); ++pc) {
                const auto terms = combined_costs(cands[i], &cands[i - 1][pc], splines, lookup_);
                for (std::size_t c = 0; c < cands[i].size(); ++c) {
                    const double v = acc[i - 1][pc] + terms[c].total;
                    if (v < acc[i][c]) {
                        acc[i][c] = v;
                        back[i][c] = static_cast<int>(pc);
                    }
                }
            }
        }
        std::vector<int> choice(n, 0);
        if (n == 0) return choice;
        int c = 0;
        for (std::size_t k = 1; k < acc[n - 1].size(); ++k)
            if (acc[n - 1][k] < acc[n - 1][c]) c = static_cast<int>(k);
        for (std::size_t i = n; i-- > 0;) {
            choice[i] = c;
            c = back[i][c];
        }
        for (std::size_t i = 0; i < n; ++i)
            if (candidates_[i].empty()) choice[i] = -1;
        return choice;
    }

    [[nodiscard]] RefineResult run() const {
        if (candidates_.empty()) throw Error("refine_poses: empty window");
        bool any = false;
        for (const auto& c : candidates_) any = any || !c.empty();
        if (!any) throw Error("refine_poses: no pose candidates in any window frame");

        RefineResult res;
        std::vector<int> choice = initial_choice();
        double current = objective(choice);
        res.objective.push_back(current);
        for (int it = 0; it < params_.iterations; ++it) {
            const JointSplines splines = splines_for(choice);
            std::vector<int> next = best_choice(splines);
            ++res.iterations_run;
            if (next == choice) break;
            const double value = objective(next);
            if (!(value < current)) break;  // keep the previous selection on ties and increases
            choice = std::move(next);
            current = value;
            res.objective.push_back(current);
        }
        res.choice = choice;
        res.splines = splines_for(choice);
        (void)selection_cost(choice, res.splines, &res.costs);
        for (std::size_t i = 0; i < choice.size(); ++i) {
            const auto cands = frame_candidates(i, res.splines);
            res.selected.push_back(cands[choice[i] < 0 ? 0 : static_cast<std::size_t>(choice[i])]);
        }
        return res;
    }

private:
    std::vector<std::vector<Pose>> candidates_;
    int first_frame_;
    const Pose* before_;
    const ForegroundLookup* lookup_;
    RefineParams params_;
};

inline RefineResult refine_poses(const std::vector<std::vector<Pose>>& candidates, int first_frame,
                                 const Pose* before_window, const ForegroundLookup* lookup, RefineParams params = {}) {
    return PoseRefiner(candidates, first_frame, before_window, lookup, params).run();
}

/// Splits one frame's candidates between actors by nearest previous actor box
/// center (greedy, in candidate order).
inline std::vector<std::vector<Pose>> partition_by_actor(const std::vector<Pose>& candidates,
                                                         const std::vector<Box>& actor_boxes) {
    std::vector<std::vector<Pose>> out(actor_boxes.size());
    if (actor_boxes.empty()) return out;
    for (const auto& p : candidates) {
        const Point2 c = p.bbox().center();
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < actor_boxes.size(); ++a) {
            const double d = distance(c, actor_boxes[a].center());
            if (d < bd) {
                bd = d;
                best = a;
            }
        }
        out[best].push_back(p);
    }
    return out;
}

/// Seeds `count` actors from the highest scoring, mutually non-overlapping poses of a frame.
inline std::vector<Box> seed_actor_boxes(const std::vector<Pose>& candidates, int count, double margin = 0.0) {
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return candidates[a].score > candidates[b].score; });
    std::vector<Box> boxes;
    for (std::size_t i : order) {
        if (static_cast<int>(boxes.size()) >= count) break;
        const Box b = candidates[i].bbox(margin);
        bool overlaps = false;
        for (const auto& o : boxes) overlaps = overlaps || box_iou(o, b) > 0.3;
        if (!overlaps) boxes.push_back(b);
    }
    return boxes;
}

}  // namespace streamloc
