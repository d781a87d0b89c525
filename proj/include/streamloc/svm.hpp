#pragma once

// Soft-margin binary SVM (dual coordinate descent, linear or histogram
// intersection kernel) and the margin-rescaled structural SVM trained by
// cutting planes.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamloc/core.hpp"
#include "streamloc/log.hpp"

namespace streamloc {

enum class KernelKind { linear, histogram_intersection };

inline const char* to_string(KernelKind k) { return k == KernelKind::linear ? "linear" : "histogram_intersection"; }

inline KernelKind kernel_from_string(const std::string& s) {
    if (s == "linear") return KernelKind::linear;
    if (s == "histogram_intersection") return KernelKind::histogram_intersection;
    throw Error("unknown kernel '" + s + "'");
}

inline double kernel_value(KernelKind k, const std::vector<double>& a, const std::vector<double>& b) {
    if (k == KernelKind::linear) return dot(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::min(a[i], b[i]);
    return s;
}

/// Binary classifier f(x) = sum_i coef_i K(sv_i, x) + bias. The bias is
/// learned as a regularized constant feature (kernel K + 1).
struct BinarySvm {
    KernelKind kernel = KernelKind::linear;
    std::vector<std::vector<double>> support;
    std::vector<double> coef;  // alpha_i * y_i
    double bias = 0.0;
    std::vector<double> weights;  // explicit w for the linear kernel

    [[nodiscard]] double decision(const std::vector<double>& x) const {
        if (kernel == KernelKind::linear && !weights.empty()) return dot(weights, x) + bias;
        double s = bias;
        for (std::size_t i = 0; i < support.size(); ++i) s += coef[i] * kernel_value(kernel, support[i], x);
        return s;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"kernel", to_string(kernel)}, {"support", support}, {"coef", coef}, {"bias", bias}, {"weights", weights}};
    }
    static BinarySvm from_json(const nlohmann::json& j) {
        BinarySvm s;
        s.kernel = kernel_from_string(j.at("kernel").get<std::string>());
        s.support = j.at("support").get<std::vector<std::vector<double>>>();
        s.coef = j.at("coef").get<std::vector<double>>();
        s.bias = j.at("bias").get<double>();
        s.weights = j.value("weights", std::vector<double>{});
        return s;
    }
};

struct BinarySvmResult {
    BinarySvm model;
    std::vector<double> alpha;
    double primal_objective = 0.0;  // 1/2 |w|^2 + C sum hinge, w including the bias
    int epochs = 0;
};

/// Dual coordinate descent on min 1/2|w|^2 + C sum xi, y_i f(x_i) >= 1 - xi_i,
/// run until the largest projected-gradient violation is below `tol`.
inline BinarySvmResult train_binary_svm(const std::vector<std::vector<double>>& xs, const std::vector<int>& ys, double c,
                                        KernelKind kernel = KernelKind::linear, double tol = 1e-6,
                                        int max_epochs = 100000) {
    const std::size_t n = xs.size();
    if (n == 0 || ys.size() != n) throw Error("train_binary_svm: empty or mismatched training set");
    if (!(c > 0.0)) throw Error("train_binary_svm: C must be > 0");
    std::vector<std::vector<double>> gram(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) gram[i][j] = gram[j][i] = kernel_value(kernel, xs[i], xs[j]) + 1.0;
    std::vector<double> alpha(n, 0.0);
    std::vector<double> f(n, 0.0);  // current decision values
    BinarySvmResult res;
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        double max_violation = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = ys[i] * f[i] - 1.0;
            double pg = g;
            if (alpha[i] <= 0.0) pg = std::min(g, 0.0);
            else if (alpha[i] >= c) pg = std::max(g, 0.0);
            max_violation = std::max(max_violation, std::abs(pg));
            if (pg == 0.0 || gram[i][i] <= 0.0) continue;
            const double next = std::clamp(alpha[i] - g / gram[i][i], 0.0, c);
            const double delta = (next - alpha[i]) * ys[i];
            if (delta == 0.0) continue;
            alpha[i] = next;
            for (std::size_t j = 0; j < n; ++j) f[j] += delta * gram[i][j];
        }
        res.epochs = epoch + 1;
        if (max_violation < tol) break;
    }
    auto& m = res.model;
    m.kernel = kernel;
    for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] <= 0.0) continue;
        m.support.push_back(xs[i]);
        m.coef.push_back(alpha[i] * ys[i]);
        m.bias += alpha[i] * ys[i];
    }
    double wnorm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) wnorm2 += alpha[i] * alpha[j] * ys[i] * ys[j] * gram[i][j];
    if (kernel == KernelKind::linear) {
        m.weights.assign(xs.front().size(), 0.0);
        for (std::size_t s = 0; s < m.support.size(); ++s)
            for (std::size_t d = 0; d < m.weights.size(); ++d) m.weights[d] += m.coef[s] * m.support[s][d];
    }
    double hinge = 0.0;
    for (std::size_t i = 0; i < n; ++i) hinge += std::max(0.0, 1.0 - ys[i] * f[i]);
    res.primal_objective = 0.5 * wnorm2 + c * hinge;
    res.alpha = std::move(alpha);
    return res;
}

// ---------------------------------------------------------------------------
// structural SVM

/// Temporal label loss: |y_i - y'| between two positive segment labels,
/// M + eps when a positive is confused with the negative label, eps otherwise.
inline double loss_delta(int y_true, int y_other, int segments, double eps) {
    if (y_true > 0 && y_other > 0) return std::abs(y_true - y_other);
    if (y_true > 0 && y_other < 0) return segments + eps;
    if (y_true == y_other) return 0.0;
    return eps;
}

struct SsvmOptions {
    double c = 1.0;
    double eps = 0.5;
    double tol = 1e-4;     // constraint violation needed to enter the working set
    int max_rounds = 100;
    bool scaled_positive_labels = false;  // Psi(x, y) = x * y / M for y > 0 instead of x * sign(y)
    /// Extension point for interaction-specific terms added to the label loss.
    std::function<double(std::size_t sample, int y_true, int y_other)> extra_loss;
};

struct SsvmSample {
    std::vector<double> x;
    int y = -1;  // -1 or a segment label 1..M
};

/// Label factor multiplying x in the joint feature map.
inline double psi_factor(int y, int segments, bool scaled) {
    if (y < 0) return -1.0;
    return scaled ? static_cast<double>(y) / segments : 1.0;
}

/// Joint feature map with the bias feature appended: [x, 1] * factor(y).
inline std::vector<double> joint_feature(const std::vector<double>& x, int y, int segments, bool scaled) {
    std::vector<double> out(x.size() + 1);
    const double f = psi_factor(y, segments, scaled);
    for (std::size_t d = 0; d < x.size(); ++d) out[d] = x[d] * f;
    out.back() = f;
    return out;
}

inline std::vector<int> label_set(int segments) {
    std::vector<int> ys{-1};
    for (int m = 1; m <= segments; ++m) ys.push_back(m);
    return ys;
}

struct SsvmModel {
    std::vector<double> w;  // feature weights followed by the bias
    int segments = 1;
    double eps = 0.5;
    double c = 1.0;
    bool scaled_positive_labels = false;

    [[nodiscard]] double score(const std::vector<double>& x) const {
        double s = w.back();
        for (std::size_t d = 0; d < x.size(); ++d) s += w[d] * x[d];
        return s;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"w", w}, {"segments", segments}, {"eps", eps}, {"C", c}, {"scaled_positive_labels", scaled_positive_labels}};
    }
    static SsvmModel from_json(const nlohmann::json& j) {
        SsvmModel m;
        m.w = j.at("w").get<std::vector<double>>();
        m.segments = j.at("segments").get<int>();
        m.eps = j.at("eps").get<double>();
        m.c = j.at("C").get<double>();
        m.scaled_positive_labels = j.value("scaled_positive_labels", false);
        return m;
    }
};

/// argmax_y <w, Psi(x, y)>; ties go to -1. Returns (label, that label's score).
inline std::pair<int, double> ssvm_predict(const SsvmModel& model, const std::vector<double>& x) {
    const double s = model.score(x);
    int best = -1;
    double best_score = -s;
    for (int y = 1; y <= model.segments; ++y) {
        const double v = s * psi_factor(y, model.segments, model.scaled_positive_labels);
        if (v > best_score) {
            best_score = v;
            best = y;
        }
    }
    return {best, best_score};
}

struct SsvmTrainingTrace {
    std::vector<double> working_set_objective;  // restricted QP optimum after each round
    std::vector<double> best_objective;         // full objective of the best iterate so far, per round
    std::vector<std::vector<std::vector<int>>> working_sets;  // per round, per sample: labels in the set
    int rounds = 0;
    bool converged = false;
};

/// Full margin-rescaled objective 1/2|w|^2 + C sum_i max(0, max_y Delta - <w, Psi_i(y_i) - Psi_i(y)>).
inline double ssvm_objective(const std::vector<double>& w, const std::vector<SsvmSample>& samples, int segments,
                             const SsvmOptions& opt) {
    double reg = 0.0;
    for (double v : w) reg += v * v;
    double slack = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        double worst = 0.0;
        const auto truth = joint_feature(s.x, s.y, segments, opt.scaled_positive_labels);
        for (int y : label_set(segments)) {
            if (y == s.y) continue;
            const auto other = joint_feature(s.x, y, segments, opt.scaled_positive_labels);
            double margin = 0.0;
            for (std::size_t d = 0; d < w.size(); ++d) margin += w[d] * (truth[d] - other[d]);
            double loss = loss_delta(s.y, y, segments, opt.eps);
            if (opt.extra_loss) loss += opt.extra_loss(i, s.y, y);
            worst = std::max(worst, loss - margin);
        }
        slack += worst;
    }
    return 0.5 * reg + opt.c * slack;
}

namespace detail {

/// n-slack working-set dual: per sample the multipliers of its constraints
/// (plus the always-present xi_i >= 0 constraint) sum to C.
class WorkingSetQp {
public:
    struct Constraint {
        int label;
        std::vector<double> a;  // Psi(y_i) - Psi(y)
        double b;               // Delta(y_i, y)
        double alpha;
    };

    WorkingSetQp(std::size_t samples, std::size_t dim, double c) : sets_(samples), dim_(dim), c_(c), w_(dim, 0.0) {
        for (auto& s : sets_) s.push_back({0, std::vector<double>(dim, 0.0), 0.0, c});  // slack constraint
    }

    void add(std::size_t i, int label, std::vector<double> a, double b) { sets_[i].push_back({label, std::move(a), b, 0.0}); }

    [[nodiscard]] bool contains(std::size_t i, int label) const {
        for (std::size_t k = 1; k < sets_[i].size(); ++k)
            if (sets_[i][k].label == label) return true;
        return false;
    }

    /// Pairwise (SMO) ascent within each sample until every sample's KKT gap is below tol.
    void solve(double tol = 1e-11, int max_passes = 200000) {
        for (int pass = 0; pass < max_passes; ++pass) {
            double worst_gap = 0.0;
            for (auto& set : sets_) {
                for (int inner = 0; inner < 50; ++inner) {
                    std::size_t p = 0, q = 0;
                    double gp = -std::numeric_limits<double>::infinity(), gq = std::numeric_limits<double>::infinity();
                    for (std::size_t k = 0; k < set.size(); ++k) {
                        const double g = set[k].b - dot(w_, set[k].a);
                        if (g > gp) {
                            gp = g;
                            p = k;
                        }
                        if (set[k].alpha > 0.0 && g < gq) {
                            gq = g;
                            q = k;
                        }
                    }
                    const double gap = gp - gq;
                    if (inner == 0) worst_gap = std::max(worst_gap, gap);
                    if (gap <= tol || p == q) break;
                    double diff2 = 0.0;
                    for (std::size_t d = 0; d < dim_; ++d) {
                        const double v = set[p].a[d] - set[q].a[d];
                        diff2 += v * v;
                    }
                    double step = diff2 > 0.0 ? gap / diff2 : set[q].alpha;
                    step = std::min(step, set[q].alpha);
                    set[p].alpha += step;
                    set[q].alpha -= step;
                    if (set[q].alpha < 1e-15) set[q].alpha = 0.0;
                    for (std::size_t d = 0; d < dim_; ++d) w_[d] += step * (set[p].a[d] - set[q].a[d]);
                }
            }
            if (worst_gap <= tol) break;
        }
    }

    [[nodiscard]] const std::vector<double>& w() const { return w_; }

    /// Primal objective restricted to the working set.
    [[nodiscard]] double objective() const {
        double reg = 0.0;
        for (double v : w_) reg += v * v;
        double slack = 0.0;
        for (const auto& set : sets_) {
            double worst = 0.0;
            for (const auto& con : set) worst = std::max(worst, con.b - dot(w_, con.a));
            slack += worst;
        }
        return 0.5 * reg + c_ * slack;
    }

    [[nodiscard]] double slack(std::size_t i) const {
        double worst = 0.0;
        for (const auto& con : sets_[i]) worst = std::max(worst, con.b - dot(w_, con.a));
        return worst;
    }

    [[nodiscard]] std::vector<std::vector<int>> labels() const {
        std::vector<std::vector<int>> out(sets_.size());
        for (std::size_t i = 0; i < sets_.size(); ++i)
            for (std::size_t k = 1; k < sets_[i].size(); ++k) out[i].push_back(sets_[i][k].label);
        return out;
    }

private:
    std::vector<std::vector<Constraint>> sets_;
    std::size_t dim_;
    double c_;
    std::vector<double> w_;
};

}  // namespace detail

/// Cutting-plane training of the margin-rescaled structural SVM. Each round
/// adds every sample's most violated label (argmax <w, Psi(x, y)> + Delta)
/// when it beats the sample's current slack by more than `tol`, then re-solves
/// the working-set QP. Returns the best iterate found.
inline SsvmModel train_ssvm(const std::vector<SsvmSample>& samples, int segments, const SsvmOptions& opt,
                            SsvmTrainingTrace* trace = nullptr) {
    if (samples.empty()) throw Error("train_ssvm: no samples");
    if (segments < 1) throw Error("train_ssvm: M must be >= 1");
    if (!(opt.c > 0.0) || !(opt.eps > 0.0)) throw Error("train_ssvm: C and eps must be > 0");
    bool has_pos = false, has_neg = false;
    for (const auto& s : samples) {
        if (s.y == 0 || s.y > segments || s.y < -1) throw Error("train_ssvm: label outside {-1, 1..M}");
        (s.y > 0 ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) throw Error("train_ssvm: need at least one positive and one negative sample");

    const std::size_t dim = samples.front().x.size() + 1;
    detail::WorkingSetQp qp(samples.size(), dim, opt.c);
    SsvmTrainingTrace local;
    SsvmTrainingTrace& tr = trace ? *trace : local;
    std::vector<double> best_w(dim, 0.0);
    double best_obj = ssvm_objective(best_w, samples, segments, opt);

    for (int round = 0; round < opt.max_rounds; ++round) {
        bool added = false;
        const auto& w = qp.w();
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& s = samples[i];
            const auto truth = joint_feature(s.x, s.y, segments, opt.scaled_positive_labels);
            int best_y = s.y;
            double best_val = dot(w, truth);
            for (int y : label_set(segments)) {
                if (y == s.y) continue;
                double loss = loss_delta(s.y, y, segments, opt.eps);
                if (opt.extra_loss) loss += opt.extra_loss(i, s.y, y);
                const double val = dot(w, joint_feature(s.x, y, segments, opt.scaled_positive_labels)) + loss;
                if (val > best_val) {
                    best_val = val;
                    best_y = y;
                }
            }
            if (best_y == s.y || qp.contains(i, best_y)) continue;
            const double violation = best_val - dot(w, truth);
            if (violation <= qp.slack(i) + opt.tol) continue;
            const auto other = joint_feature(s.x, best_y, segments, opt.scaled_positive_labels);
            std::vector<double> a(dim);
            for (std::size_t d = 0; d < dim; ++d) a[d] = truth[d] - other[d];
            double loss = loss_delta(s.y, best_y, segments, opt.eps);
            if (opt.extra_loss) loss += opt.extra_loss(i, s.y, best_y);
            qp.add(i, best_y, std::move(a), loss);
            added = true;
        }
        if (!added) {
            tr.converged = true;
            break;
        }
        qp.solve();
        ++tr.rounds;
        tr.working_set_objective.push_back(qp.objective());
        tr.working_sets.push_back(qp.labels());
        const double full = ssvm_objective(qp.w(), samples, segments, opt);
        if (full < best_obj) {
            best_obj = full;
            best_w = qp.w();
        }
        tr.best_objective.push_back(best_obj);
    }
    if (!tr.converged) log().warn("train_ssvm: no convergence after {} rounds, returning best iterate", opt.max_rounds);

    SsvmModel model;
    model.w = best_w;
    model.segments = segments;
    model.eps = opt.eps;
    model.c = opt.c;
    model.scaled_positive_labels = opt.scaled_positive_labels;
    return model;
}

}  // namespace streamloc
