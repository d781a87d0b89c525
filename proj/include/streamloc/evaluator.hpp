#pragma once

// Detection metrics: tube IoU, ROC at a fixed overlap, AUC, precision/recall
// and accuracy as a function of the observed fraction of an action.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamloc/core.hpp"
#include "streamloc/io.hpp"

namespace streamloc {

struct Detection {
    std::string video_id;
    std::map<int, Box> boxes;  // frame -> box
    std::string label;
    double confidence = 0.0;
};

enum class CurveKind { roc, auc_vs_threshold, acc_vs_observation, precision_recall };

inline const char* to_string(CurveKind k) {
    switch (k) {
        case CurveKind::roc: return "roc";
        case CurveKind::auc_vs_threshold: return "auc_vs_threshold";
        case CurveKind::acc_vs_observation: return "acc_vs_observation";
        case CurveKind::precision_recall: return "precision_recall";
    }
    return "?";
}

/// Ordered (x, y) points. x is non-decreasing; step curves keep their
/// vertical segments as repeated x values.
struct EvalCurve {
    CurveKind kind = CurveKind::roc;
    double overlap_threshold = 0.2;
    std::vector<std::pair<double, double>> points;
};

/// Mean per-frame IoU over the union of the detected and annotated frames;
/// a frame present on one side only counts 0.
inline double tube_iou(const Detection& det, const GroundTruth& gt) {
    std::set<int> frames;
    for (const auto& [t, b] : det.boxes)
        if (!b.empty()) frames.insert(t);
    for (int t = gt.t_start; t <= gt.t_end; ++t)
        if (gt.actor_box(t)) frames.insert(t);
    if (frames.empty()) return 0.0;
    double sum = 0.0;
    for (int t : frames) {
        const auto g = gt.actor_box(t);
        const auto it = det.boxes.find(t);
        if (!g || it == det.boxes.end() || it->second.empty()) continue;
        sum += box_iou(it->second, *g);
    }
    return sum / static_cast<double>(frames.size());
}

struct MatchResult {
    std::vector<std::size_t> order;  // detection indices by descending confidence (stable)
    std::vector<bool> true_positive;  // indexed like `order`
    std::size_t positives = 0;        // number of ground truths
};

/// Greedy one-to-one matching in descending confidence order: a detection is a
/// true positive when it claims a still unmatched ground truth of the same
/// video and class with tube IoU >= theta (the best such one).
inline MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                    double theta) {
    MatchResult res;
    res.positives = gts.size();
    res.order.resize(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) res.order[i] = i;
    std::stable_sort(res.order.begin(), res.order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
    std::vector<bool> used(gts.size(), false);
    for (std::size_t idx : res.order) {
        const auto& d = dets[idx];
        std::optional<std::size_t> best;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g] || gts[g].video_id != d.video_id || gts[g].label != d.label) continue;
            const double iou = tube_iou(d, gts[g]);
            if (iou >= theta && iou > best_iou) {
                best_iou = iou;
                best = g;
            }
        }
        if (best) used[*best] = true;
        res.true_positive.push_back(best.has_value());
    }
    return res;
}

/// ROC over confidence thresholds. TPR = TP / #ground truths; FPR = FP / #unmatched
/// detections (0 when every detection is a true positive). Tied confidences
/// move together; the curve is closed with (1, final TPR).
inline EvalCurve roc_at_overlap(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                double theta = 0.2) {
    const auto m = match_detections(dets, gts, theta);
    std::size_t negatives = 0;
    for (bool tp : m.true_positive) negatives += tp ? 0 : 1;
    EvalCurve c;
    c.kind = CurveKind::roc;
    c.overlap_threshold = theta;
    c.points.emplace_back(0.0, 0.0);
    std::size_t tp = 0, fp = 0;
    auto rate = [](std::size_t a, std::size_t b) { return b > 0 ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
    for (std::size_t k = 0; k < m.order.size(); ++k) {
        (m.true_positive[k] ? tp : fp) += 1;
        const bool group_end =
            k + 1 == m.order.size() || dets[m.order[k + 1]].confidence != dets[m.order[k]].confidence;
        if (group_end) c.points.emplace_back(rate(fp, negatives), rate(tp, m.positives));
    }
    if (c.points.back().first < 1.0) c.points.emplace_back(1.0, c.points.back().second);
    return c;
}

/// Trapezoidal area under the curve.
inline double auc(const EvalCurve& curve) {
    double a = 0.0;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const auto [x0, y0] = curve.points[i - 1];
        const auto [x1, y1] = curve.points[i];
        a += (x1 - x0) * (y0 + y1) / 2.0;
    }
    return a;
}

inline std::vector<double> default_overlap_thresholds() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}; }

inline EvalCurve auc_vs_threshold(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                  const std::vector<double>& thetas = default_overlap_thresholds()) {
    EvalCurve c;
    c.kind = CurveKind::auc_vs_threshold;
    for (double th : thetas) c.points.emplace_back(th, auc(roc_at_overlap(dets, gts, th)));
    return c;
}

struct PrecisionRecall {
    EvalCurve curve;  // (recall, precision) per ranked detection
    double average_precision = 0.0;
};

/// Ranked precision/recall with the greedy TP rule. AP integrates the
/// interpolated precision (max precision at any higher recall) by trapezoids,
/// starting from recall 0 at the first interpolated precision.
inline PrecisionRecall precision_recall(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                        double theta = 0.2) {
    const auto m = match_detections(dets, gts, theta);
    PrecisionRecall pr;
    pr.curve.kind = CurveKind::precision_recall;
    pr.curve.overlap_threshold = theta;
    if (m.positives == 0 || dets.empty()) return pr;
    std::size_t tp = 0;
    std::vector<double> recall, precision;
    for (std::size_t k = 0; k < m.order.size(); ++k) {
        tp += m.true_positive[k] ? 1 : 0;
        recall.push_back(static_cast<double>(tp) / static_cast<double>(m.positives));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
        pr.curve.points.emplace_back(recall.back(), precision.back());
    }
    std::vector<double> interp(precision.size());
    double running = 0.0;
    for (std::size_t k = precision.size(); k-- > 0;) {
        running = std::max(running, precision[k]);
        interp[k] = running;
    }
    double prev_r = 0.0, prev_p = interp.front();
    for (std::size_t k = 0; k < interp.size(); ++k) {
        pr.average_precision += (recall[k] - prev_r) * (prev_p + interp[k]) / 2.0;
        prev_r = recall[k];
        prev_p = interp[k];
    }
    return pr;
}

// ---------------------------------------------------------------------------
// observation percentage

/// Streamed per-record confidences of one test video with its annotation.
struct ObservedVideo {
    std::vector<TrackRecord> records;
    GroundTruth gt;
};

inline std::vector<double> default_observation_fractions() {
    std::vector<double> f;
    for (int i = 0; i <= 10; ++i) f.push_back(i / 10.0);
    return f;
}

inline int argmax_class(const std::vector<double>& confidences) {
    int best = 0;
    for (std::size_t c = 1; c < confidences.size(); ++c)
        if (confidences[c] > confidences[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    return best;
}

/// Confidences available at frame `cutoff`: the latest record at or before the
/// cutoff that carries at least one completed interval, falling back to the
/// first such record of the stream. Empty when the stream never completes one.
inline std::optional<std::vector<double>> confidences_at(const std::vector<TrackRecord>& records, double cutoff) {
    const TrackRecord* chosen = nullptr;
    const TrackRecord* first = nullptr;
    for (const auto& r : records) {
        if (r.interval < 1) continue;
        if (!first) first = &r;
        if (r.frame <= cutoff + 1e-9) chosen = &r;
    }
    if (!chosen) chosen = first;
    if (!chosen) return std::nullopt;
    return chosen->confidences;
}

inline bool classified_correctly(const ObservedVideo& v, const std::vector<std::string>& classes, double cutoff) {
    const auto conf = confidences_at(v.records, cutoff);
    if (!conf || conf->empty()) return false;
    return classes[static_cast<std::size_t>(argmax_class(*conf))] == v.gt.label;
}

inline EvalCurve accuracy_vs_observation(const std::vector<ObservedVideo>& videos, const std::vector<std::string>& classes,
                                         const std::vector<double>& fractions = default_observation_fractions()) {
    EvalCurve c;
    c.kind = CurveKind::acc_vs_observation;
    for (double f : fractions) {
        std::size_t correct = 0;
        for (const auto& v : videos) {
            const double cutoff = v.gt.t_start + f * (v.gt.t_end - v.gt.t_start);
            correct += classified_correctly(v, classes, cutoff) ? 1 : 0;
        }
        c.points.emplace_back(f, videos.empty() ? 0.0 : static_cast<double>(correct) / videos.size());
    }
    return c;
}

/// Accuracy of classifying each video from everything emitted up to the end of its annotated extent.
inline double full_video_accuracy(const std::vector<ObservedVideo>& videos, const std::vector<std::string>& classes) {
    if (videos.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& v : videos) correct += classified_correctly(v, classes, v.gt.t_end) ? 1 : 0;
    return static_cast<double>(correct) / videos.size();
}

// ---------------------------------------------------------------------------
// track conversion and output

/// One detection per class: the emitted tube with the last reported confidence of that class.
inline std::vector<Detection> detections_from_track(const Track& track) {
    std::vector<Detection> out;
    for (std::size_t c = 0; c < track.classes.size(); ++c) {
        Detection d;
        d.video_id = track.video_id;
        d.label = track.classes[c];
        for (const auto& r : track.records) {
            if (!r.box.empty()) d.boxes[r.frame] = r.box;
            if (c < r.confidences.size()) d.confidence = r.confidences[c];
        }
        out.push_back(std::move(d));
    }
    return out;
}

inline void write_curve_csv(const std::filesystem::path& path, const EvalCurve& curve) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "# kind=" << to_string(curve.kind) << " theta=" << curve.overlap_threshold;
    if (curve.kind == CurveKind::roc) out << " fpr=FP/(FP+TN) over unmatched detections, 0 when none";
    out << '\n';
    out << (curve.kind == CurveKind::roc                ? "fpr,tpr"
            : curve.kind == CurveKind::precision_recall ? "recall,precision"
            : curve.kind == CurveKind::auc_vs_threshold ? "theta,auc"
                                                        : "fraction,accuracy")
        << '\n';
    out.precision(17);
    for (const auto& [x, y] : curve.points) out << x << ',' << y << '\n';
}

}  // namespace streamloc
