#pragma once

#include <deque>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamloc/core.hpp"
#include "streamloc/kmeans.hpp"
#include "streamloc/log.hpp"
#include "streamloc/superpixel.hpp"

namespace streamloc {

/// Descriptor pair the appearance model works on: the 512-bin color histogram
/// and the mean flow vector of a superpixel.
struct AppearanceSample {
    std::vector<double> color;
    std::vector<double> flow;  // (u, v)
    bool foreground = false;

    static AppearanceSample of(const Superpixel& sp, bool fg) {
        return {sp.color_hist, {sp.mean_flow.x, sp.mean_flow.y}, fg};
    }
};

using LabeledFrame = std::vector<AppearanceSample>;

struct AppearanceCluster {
    std::vector<double> color_center;  // q_k
    double radius = 1.0;               // r_k: mean member color distance to q_k
    std::vector<double> flow_mean;     // mu_k
    double flow_spread = 1.0;          // rho_k: RMS member flow deviation from mu_k
    int foreground_count = 0;
    int background_count = 0;
    double ratio = 1.0;                // zeta_k = (fg + 1) / (bg + 1)
};

struct AppearanceParams {
    int clusters = 20;  // K
    int window = 5;     // delta, in frames
    double radius_floor = 1e-6;
    double spread_floor = 1e-6;
    std::uint64_t seed = 7;
};

/// K-cluster discriminative foreground/background color+motion model over the
/// last `window` labeled frames.
class AppearanceModel {
public:
    AppearanceModel() = default;
    explicit AppearanceModel(AppearanceParams params) : params_(params) {}

    /// Fresh fit on a single labeled frame (fg and bg superpixels).
    static AppearanceModel fit(const std::vector<Superpixel>& fg, const std::vector<Superpixel>& bg,
                               AppearanceParams params) {
        LabeledFrame frame;
        for (const auto& s : fg) frame.push_back(AppearanceSample::of(s, true));
        for (const auto& s : bg) frame.push_back(AppearanceSample::of(s, false));
        return fit_frames({std::move(frame)}, params);
    }

    /// Fresh (k-means++) fit on the given window contents, oldest first.
    static AppearanceModel fit_frames(std::vector<LabeledFrame> frames, AppearanceParams params) {
        AppearanceModel model(params);
        for (auto& f : frames) model.window_.push_back(std::move(f));
        while (static_cast<int>(model.window_.size()) > std::max(1, params.window)) model.window_.pop_front();
        model.refit(nullptr);
        return model;
    }

    /// Pushes the newest labeled frame, evicts frames older than the window and
    /// refits warm-started from the current centers.
    void update(LabeledFrame newest) {
        window_.push_back(std::move(newest));
        while (static_cast<int>(window_.size()) > std::max(1, params_.window)) window_.pop_front();
        std::vector<std::vector<double>> warm;
        for (const auto& c : clusters_) warm.push_back(c.color_center);
        refit(warm.empty() ? nullptr : &warm);
    }

    void update(const std::vector<Superpixel>& fg, const std::vector<Superpixel>& bg) {
        LabeledFrame frame;
        for (const auto& s : fg) frame.push_back(AppearanceSample::of(s, true));
        for (const auto& s : bg) frame.push_back(AppearanceSample::of(s, false));
        update(std::move(frame));
    }

    [[nodiscard]] bool fitted() const { return !clusters_.empty(); }
    [[nodiscard]] const std::vector<AppearanceCluster>& clusters() const { return clusters_; }
    [[nodiscard]] const std::deque<LabeledFrame>& window() const { return window_; }
    [[nodiscard]] const AppearanceParams& params() const { return params_; }

    [[nodiscard]] int assign(const std::vector<double>& color) const {
        require_fitted();
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < clusters_.size(); ++k) {
            const double d = squared_distance(clusters_[k].color_center, color);
            if (d < bd) {
                bd = d;
                best = static_cast<int>(k);
            }
        }
        return best;
    }

    /// H_fg: exp(-|color - q|/r) * zeta + exp(-|flow - mu|/rho) for the cluster
    /// whose color center is nearest. Range (0, zeta + 1].
    [[nodiscard]] double foreground_score(const std::vector<double>& color, const std::vector<double>& flow) const {
        const auto& c = clusters_[static_cast<std::size_t>(assign(color))];
        return std::exp(-euclidean(color, c.color_center) / c.radius) * c.ratio +
               std::exp(-euclidean(flow, c.flow_mean) / c.flow_spread);
    }

    [[nodiscard]] double foreground_score(const Superpixel& sp) const {
        return foreground_score(sp.color_hist, {sp.mean_flow.x, sp.mean_flow.y});
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json out{{"K", clusters_.size()}, {"window", params_.window}, {"frames_in_window", window_.size()}};
        nlohmann::json list = nlohmann::json::array();
        for (const auto& c : clusters_) {
            list.push_back({{"radius", c.radius},
                            {"flow_mean", c.flow_mean},
                            {"flow_spread", c.flow_spread},
                            {"fg", c.foreground_count},
                            {"bg", c.background_count},
                            {"ratio", c.ratio},
                            {"color_center", c.color_center}});
        }
        out["clusters"] = list;
        return out;
    }

private:
    void require_fitted() const {
        if (clusters_.empty()) throw Error("appearance model used before fitting");
    }

    void refit(const std::vector<std::vector<double>>* warm) {
        std::vector<const AppearanceSample*> samples;
        for (const auto& f : window_)
            for (const auto& s : f) samples.push_back(&s);
        if (samples.empty()) throw Error("appearance model: no labeled superpixels to fit");
        std::vector<std::vector<double>> colors;
        colors.reserve(samples.size());
        for (const auto* s : samples) colors.push_back(s->color);

        int k = std::max(1, params_.clusters);
        if (static_cast<int>(samples.size()) < k) {
            log().warn("appearance model: {} samples for K = {}, reducing K", samples.size(), k);
            k = static_cast<int>(samples.size());
        }
        KMeansResult km;
        if (warm && static_cast<int>(warm->size()) == k) {
            km = kmeans_from(colors, *warm);
        } else {
            km = kmeans_from(colors, kmeans_plus_plus(colors, k, params_.seed));
        }

        const std::size_t flow_dim = samples.front()->flow.size();
        clusters_.assign(static_cast<std::size_t>(k), {});
        std::vector<int> members(static_cast<std::size_t>(k), 0);
        for (int c = 0; c < k; ++c) {
            clusters_[c].color_center = km.centers[c];
            clusters_[c].flow_mean.assign(flow_dim, 0.0);
        }
        for (std::size_t i = 0; i < samples.size(); ++i) {
            auto& c = clusters_[km.assignment[i]];
            ++members[km.assignment[i]];
            (samples[i]->foreground ? c.foreground_count : c.background_count) += 1;
            for (std::size_t d = 0; d < flow_dim; ++d) c.flow_mean[d] += samples[i]->flow[d];
        }
        for (int c = 0; c < k; ++c)
            if (members[c] > 0)
                for (double& v : clusters_[c].flow_mean) v /= members[c];
        std::vector<double> radius(static_cast<std::size_t>(k), 0.0), spread(static_cast<std::size_t>(k), 0.0);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const int c = km.assignment[i];
            radius[c] += euclidean(samples[i]->color, clusters_[c].color_center);
            spread[c] += squared_distance(samples[i]->flow, clusters_[c].flow_mean);
        }
        for (int c = 0; c < k; ++c) {
            auto& cl = clusters_[c];
            const double n = std::max(1, members[c]);
            cl.radius = std::max(params_.radius_floor, radius[c] / n);
            cl.flow_spread = std::max(params_.spread_floor, std::sqrt(spread[c] / n));
            cl.ratio = (cl.foreground_count + 1.0) / (cl.background_count + 1.0);
        }
    }

    AppearanceParams params_;
    std::deque<LabeledFrame> window_;
    std::vector<AppearanceCluster> clusters_;
};

}  // namespace streamloc
