#pragma once

// Segment encoding and the per-class classifier banks that turn localized
// tubes into online class confidences.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamloc/core.hpp"
#include "streamloc/kmeans.hpp"
#include "streamloc/log.hpp"
#include "streamloc/superpixel.hpp"
#include "streamloc/svm.hpp"

namespace streamloc {

inline constexpr int kDescriptorColorBins = 32;  // 8 hue x 4 intensity

/// Built-in per-superpixel descriptor: flow histogram, mean flow magnitude and
/// the color histogram projected onto hue x coarse intensity.
inline std::vector<double> superpixel_descriptor(const Superpixel& sp) {
    std::vector<double> d(sp.flow_hist.begin(), sp.flow_hist.end());
    d.push_back(sp.mean_flow_mag);
    std::vector<double> color(kDescriptorColorBins, 0.0);
    for (std::size_t b = 0; b < sp.color_hist.size(); ++b) {
        const std::size_t hue = b / 64, inten = (b % 8) / 2;
        color[hue * 4 + inten] += sp.color_hist[b];
    }
    d.insert(d.end(), color.begin(), color.end());
    return d;
}

/// A descriptor anchored at the centroid of the region it was computed on.
struct PlacedDescriptor {
    Point2 position;
    std::vector<double> values;
};

using DescriptorFn = std::function<std::vector<PlacedDescriptor>(const SuperpixelMap&)>;

inline std::vector<PlacedDescriptor> builtin_descriptors(const SuperpixelMap& map) {
    std::vector<PlacedDescriptor> out;
    out.reserve(map.superpixels.size());
    for (const auto& sp : map.superpixels) out.push_back({sp.centroid, superpixel_descriptor(sp)});
    return out;
}

struct Codebook {
    std::vector<std::vector<double>> centers;

    [[nodiscard]] int size() const { return static_cast<int>(centers.size()); }
    [[nodiscard]] int quantize(const std::vector<double>& d) const { return nearest_center(centers, d); }
};

/// k-means vocabulary of up to `v` distinct centers; duplicate centers are dropped.
inline Codebook build_codebook(const std::vector<std::vector<double>>& descriptors, int v, std::uint64_t seed,
                               int max_iterations = 50) {
    if (v < 2) throw Error("build_codebook: V must be >= 2");
    if (descriptors.size() < 2) throw Error("build_codebook: need at least 2 descriptors");
    const int k = std::min<int>(v, static_cast<int>(descriptors.size()));
    const auto km = kmeans(descriptors, k, seed, max_iterations);
    Codebook cb;
    for (const auto& c : km.centers) {
        bool dup = false;
        for (const auto& o : cb.centers) dup = dup || o == c;
        if (!dup) cb.centers.push_back(c);
    }
    if (cb.size() < 2) throw Error("build_codebook: descriptors collapse to a single center");
    if (cb.size() < v) log().warn("build_codebook: {} distinct centers for V = {}", cb.size(), v);
    return cb;
}

struct SegmentFeature {
    std::vector<double> histogram;
    int segment = 1;  // m
    std::string video_id;
    bool empty = true;
};

/// Per-frame descriptors plus the tube box of that frame.
struct TubeFrame {
    int frame = 0;
    Box box;
    std::vector<PlacedDescriptor> descriptors;
};

/// Running bag-of-words histogram of one interval.
class SegmentAccumulator {
public:
    explicit SegmentAccumulator(const Codebook& codebook) : codebook_(&codebook), counts_(codebook.centers.size(), 0.0) {}

    void add(const Box& box, const std::vector<PlacedDescriptor>& descriptors) {
        for (const auto& d : descriptors) {
            if (!box.contains(d.position)) continue;
            counts_[static_cast<std::size_t>(codebook_->quantize(d.values))] += 1.0;
            total_ += 1.0;
        }
    }

    [[nodiscard]] SegmentFeature finish(int segment, const std::string& video_id) const {
        SegmentFeature f;
        f.segment = segment;
        f.video_id = video_id;
        f.histogram = counts_;
        f.empty = total_ == 0.0;
        if (!f.empty)
            for (double& v : f.histogram) v /= total_;
        return f;
    }

    void reset() {
        std::fill(counts_.begin(), counts_.end(), 0.0);
        total_ = 0.0;
    }

private:
    const Codebook* codebook_;
    std::vector<double> counts_;
    double total_ = 0.0;
};

/// Bag-of-words histogram over the descriptors whose positions fall inside the
/// tube box of their frame; L1-normalized, zero and flagged when empty.
inline SegmentFeature encode_segment(const std::vector<TubeFrame>& interval, const Codebook& codebook, int segment = 1,
                                     const std::string& video_id = {}) {
    if (codebook.size() < 2) throw Error("encode_segment: codebook not built");
    SegmentAccumulator acc(codebook);
    for (const auto& f : interval) acc.add(f.box, f.descriptors);
    return acc.finish(segment, video_id);
}

/// Equal split of frames [t_start, t_end] into M intervals; returns the last
/// frame of every interval.
inline std::vector<int> interval_ends(int t_start, int t_end, int m) {
    if (m < 1) throw Error("interval_ends: M must be >= 1");
    const int length = t_end - t_start + 1;
    if (length < m) throw Error("interval_ends: fewer frames than segments");
    std::vector<int> ends;
    for (int i = 1; i <= m; ++i)
        ends.push_back(t_start - 1 + static_cast<int>(std::lround(static_cast<double>(i) * length / m)));
    return ends;
}

/// Cumulative feature after the newest interval: the sum of the last M segment
/// histograms divided by M, so a fully observed action carries unit mass.
inline std::vector<double> cumulative_feature(const std::vector<std::vector<double>>& segments, int m) {
    if (segments.empty()) return {};
    std::vector<double> x(segments.front().size(), 0.0);
    const std::size_t first = segments.size() > static_cast<std::size_t>(m) ? segments.size() - m : 0;
    for (std::size_t s = first; s < segments.size(); ++s)
        for (std::size_t d = 0; d < x.size(); ++d) x[d] += segments[s][d] / m;
    return x;
}

// ---------------------------------------------------------------------------
// DP-SVM

struct DpTrainingSegment {
    int class_index = 0;
    int segment = 1;  // 1..M
    std::vector<double> x;
};

/// M binary SVMs per class: segment m of class-c videos against segment m of
/// all other classes. Returns [class][m - 1].
inline std::vector<std::vector<BinarySvm>> train_dp_svm(const std::vector<DpTrainingSegment>& data,
                                                        const std::vector<std::string>& classes, int m, double c,
                                                        KernelKind kernel = KernelKind::histogram_intersection) {
    if (m < 1) throw Error("train_dp_svm: M must be >= 1");
    std::vector<std::vector<BinarySvm>> bank(classes.size());
    for (std::size_t cls = 0; cls < classes.size(); ++cls) {
        for (int seg = 1; seg <= m; ++seg) {
            std::vector<std::vector<double>> xs;
            std::vector<int> ys;
            int pos = 0, neg = 0;
            for (const auto& d : data) {
                if (d.segment != seg) continue;
                const bool is_pos = d.class_index == static_cast<int>(cls);
                xs.push_back(d.x);
                ys.push_back(is_pos ? 1 : -1);
                (is_pos ? pos : neg) += 1;
            }
            if (pos == 0 || neg == 0)
                throw Error("train_dp_svm: class '" + classes[cls] + "' (c = " + std::to_string(cls) + ") segment m = " +
                            std::to_string(seg) + " has no " + (pos == 0 ? "positive" : "negative") + " examples");
            bank[cls].push_back(train_binary_svm(xs, ys, c, kernel).model);
        }
    }
    return bank;
}

/// Stay-or-advance alignment recursion F(k, z) = max(F(k-1, z), F(k-1, z-1)) * s_z
/// with F(0, 0) = 1. For untrimmed streams the table is re-initialized after
/// `reset_after` consecutive intervals with confidence below `floor`.
class DpConfidence {
public:
    explicit DpConfidence(int segments, bool untrimmed = false, double floor = 0.01, int reset_after = 3)
        : m_(segments), untrimmed_(untrimmed), floor_(floor), reset_after_(reset_after) {
        if (segments < 1) throw Error("DpConfidence: M must be >= 1");
        reset();
    }

    void reset() {
        f_.assign(static_cast<std::size_t>(m_) + 1, 0.0);
        f_[0] = 1.0;
        low_streak_ = 0;
    }

    /// Consumes the segment probabilities s_1..s_M of the newest interval.
    double push(const std::vector<double>& scores) {
        if (static_cast<int>(scores.size()) != m_) throw Error("DpConfidence: expected M segment scores");
        std::vector<double> next(f_.size(), 0.0);
        for (int z = 1; z <= m_; ++z) next[z] = std::max(f_[z], f_[z - 1]) * scores[z - 1];
        f_ = std::move(next);
        const double conf = confidence();
        if (untrimmed_) {
            low_streak_ = conf < floor_ ? low_streak_ + 1 : 0;
            if (low_streak_ >= reset_after_) reset();
        }
        return conf;
    }

    [[nodiscard]] double confidence() const {
        double best = 0.0;
        for (int z = 1; z <= m_; ++z) best = std::max(best, f_[z]);
        return best;
    }

    [[nodiscard]] const std::vector<double>& table() const { return f_; }

private:
    int m_;
    bool untrimmed_;
    double floor_;
    int reset_after_;
    std::vector<double> f_;
    int low_streak_ = 0;
};

/// Confidence after each interval of a trimmed score matrix scores[k][z-1].
inline std::vector<double> dp_confidence(const std::vector<std::vector<double>>& scores, int segments) {
    DpConfidence dp(segments);
    std::vector<double> out;
    for (const auto& row : scores) out.push_back(dp.push(row));
    return out;
}

// ---------------------------------------------------------------------------
// S-SVM confidence

struct SsvmConfidence {
    int label = -1;
    double score = 0.0;     // score of the returned label
    double ranking = 0.0;   // <w, x> + b, the per-class value used for ranking
};

inline SsvmConfidence ssvm_confidence(const SsvmModel& model, const std::vector<double>& x) {
    const auto [label, score] = ssvm_predict(model, x);
    return {label, score, model.score(x)};
}

// ---------------------------------------------------------------------------
// bank

enum class PredictorMode { dp_svm, s_svm };

inline const char* to_string(PredictorMode m) { return m == PredictorMode::dp_svm ? "dp_svm" : "s_svm"; }
inline PredictorMode mode_from_string(const std::string& s) {
    if (s == "dp_svm") return PredictorMode::dp_svm;
    if (s == "s_svm") return PredictorMode::s_svm;
    throw Error("unknown predictor mode '" + s + "'");
}

inline constexpr int kModelFormatVersion = 1;

/// Trained per-class predictors. Both banks are kept so either mode can be
/// evaluated from one model file; `mode` selects the reported confidence.
struct SegmentClassifierBank {
    PredictorMode mode = PredictorMode::s_svm;
    std::vector<std::string> classes;
    int segments = 3;     // M
    double omega = 10.0;  // mean interval length in frames
    double eps = 0.5;
    double c = 1.0;
    KernelKind kernel = KernelKind::histogram_intersection;
    Codebook codebook;
    std::vector<std::vector<BinarySvm>> dp;  // [class][m - 1]
    std::vector<SsvmModel> ssvm;             // [class]

    [[nodiscard]] int interval_frames() const { return std::max(1, static_cast<int>(std::lround(omega))); }

    void validate() const {
        if (segments < 1) throw Error("classifier bank: M must be >= 1");
        if (!(omega >= 1.0)) throw Error("classifier bank: omega must be >= 1");
        if (!(eps > 0.0) || !(c > 0.0)) throw Error("classifier bank: eps and C must be > 0");
        if (codebook.size() < 2) throw Error("classifier bank: codebook has fewer than 2 centers");
        if (!dp.empty() && dp.size() != classes.size()) throw Error("classifier bank: DP-SVM class count mismatch");
        if (!ssvm.empty() && ssvm.size() != classes.size()) throw Error("classifier bank: S-SVM class count mismatch");
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json dpj = nlohmann::json::array();
        for (const auto& cls : dp) {
            nlohmann::json list = nlohmann::json::array();
            for (const auto& s : cls) list.push_back(s.to_json());
            dpj.push_back(list);
        }
        nlohmann::json sj = nlohmann::json::array();
        for (const auto& s : ssvm) sj.push_back(s.to_json());
        return {{"format", "streamloc-model"},
                {"version", kModelFormatVersion},
                {"mode", to_string(mode)},
                {"classes", classes},
                {"M", segments},
                {"omega", omega},
                {"eps", eps},
                {"C", c},
                {"kernel", to_string(kernel)},
                {"codebook", codebook.centers},
                {"dp_svm", dpj},
                {"s_svm", sj}};
    }

    static SegmentClassifierBank from_json(const nlohmann::json& j) {
        if (j.value("format", std::string{}) != "streamloc-model") throw Error("model file: not a streamloc model");
        if (j.value("version", 0) != kModelFormatVersion) throw Error("model file: unsupported version");
        SegmentClassifierBank b;
        b.mode = mode_from_string(j.at("mode").get<std::string>());
        b.classes = j.at("classes").get<std::vector<std::string>>();
        b.segments = j.at("M").get<int>();
        b.omega = j.at("omega").get<double>();
        b.eps = j.at("eps").get<double>();
        b.c = j.at("C").get<double>();
        b.kernel = kernel_from_string(j.at("kernel").get<std::string>());
        b.codebook.centers = j.at("codebook").get<std::vector<std::vector<double>>>();
        for (const auto& cls : j.at("dp_svm")) {
            std::vector<BinarySvm> list;
            for (const auto& s : cls) list.push_back(BinarySvm::from_json(s));
            b.dp.push_back(std::move(list));
        }
        for (const auto& s : j.at("s_svm")) b.ssvm.push_back(SsvmModel::from_json(s));
        b.validate();
        return b;
    }
};

/// Online per-class confidence state for one stream.
class ConfidenceTracker {
public:
    ConfidenceTracker(const SegmentClassifierBank& bank, bool untrimmed = false) : bank_(&bank) {
        for (std::size_t c = 0; c < bank.classes.size(); ++c) dp_.emplace_back(bank.segments, untrimmed);
    }

    /// Consumes the newest interval histogram; returns per-class confidences
    /// for the bank's mode.
    std::vector<double> push(const std::vector<double>& histogram) {
        recent_.push_back(histogram);
        while (recent_.size() > static_cast<std::size_t>(bank_->segments)) recent_.erase(recent_.begin());
        ++intervals_;
        std::vector<double> out(bank_->classes.size(), 0.0);
        if (!bank_->dp.empty()) {
            for (std::size_t c = 0; c < bank_->classes.size(); ++c) {
                std::vector<double> s;
                for (const auto& w : bank_->dp[c]) s.push_back(sigmoid(w.decision(histogram)));
                dp_last_.resize(bank_->classes.size());
                dp_last_[c] = dp_[c].push(s);
            }
        }
        if (!bank_->ssvm.empty()) {
            const auto x = cumulative_feature(recent_, bank_->segments);
            ssvm_last_.resize(bank_->classes.size());
            for (std::size_t c = 0; c < bank_->classes.size(); ++c) ssvm_last_[c] = bank_->ssvm[c].score(x);
        }
        const auto& chosen = bank_->mode == PredictorMode::dp_svm ? dp_last_ : ssvm_last_;
        if (chosen.size() == out.size()) out = chosen;
        return out;
    }

    [[nodiscard]] int intervals() const { return intervals_; }

private:
    const SegmentClassifierBank* bank_;
    std::vector<DpConfidence> dp_;
    std::vector<std::vector<double>> recent_;
    std::vector<double> dp_last_, ssvm_last_;
    int intervals_ = 0;
};

}  // namespace streamloc
