#pragma once

#include <limits>
#include <vector>

#include "streamloc/core.hpp"

namespace streamloc {

struct KMeansResult {
    std::vector<std::vector<double>> centers;
    std::vector<int> assignment;
    int iterations = 0;
};

inline int nearest_center(const std::vector<std::vector<double>>& centers, const std::vector<double>& p) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = squared_distance(centers[k], p);
        if (d < bd) {
            bd = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

/// k-means++ seeding driven by a fixed-seed generator.
inline std::vector<std::vector<double>> kmeans_plus_plus(const std::vector<std::vector<double>>& points, int k,
                                                         std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> centers;
    centers.push_back(points[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(points.size()) - 1))]);
    std::vector<double> d2(points.size(), std::numeric_limits<double>::infinity());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            d2[i] = std::min(d2[i], squared_distance(points[i], centers.back()));
            total += d2[i];
        }
        if (!(total > 0.0)) {
            // all remaining points coincide with a center; take them in order
            centers.push_back(points[centers.size() % points.size()]);
            continue;
        }
        double r = rng.uniform() * total;
        std::size_t pick = points.size() - 1;
        for (std::size_t i = 0; i < points.size(); ++i) {
            r -= d2[i];
            if (r < 0.0) {
                pick = i;
                break;
            }
        }
        centers.push_back(points[pick]);
    }
    return centers;
}

/// Lloyd iterations from the given centers until the assignment is stable.
/// A cluster that loses all members is reseeded at the point farthest from
/// its center among clusters with at least two members; if every point sits
/// on its center the old center is kept.
inline KMeansResult kmeans_from(const std::vector<std::vector<double>>& points,
                                std::vector<std::vector<double>> centers, int max_iterations = 100) {
    KMeansResult res;
    res.assignment.assign(points.size(), -1);
    const std::size_t dim = points.empty() ? 0 : points.front().size();
    bool reseeded = false;
    for (int it = 0; it < max_iterations; ++it) {
        bool changed = reseeded;
        reseeded = false;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const int k = nearest_center(centers, points[i]);
            if (k != res.assignment[i]) {
                res.assignment[i] = k;
                changed = true;
            }
        }
        res.iterations = it + 1;
        if (!changed && it > 0) break;
        std::vector<std::vector<double>> sums(centers.size(), std::vector<double>(dim, 0.0));
        std::vector<int> counts(centers.size(), 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            auto& s = sums[res.assignment[i]];
            for (std::size_t d = 0; d < dim; ++d) s[d] += points[i][d];
            ++counts[res.assignment[i]];
        }
        for (std::size_t k = 0; k < centers.size(); ++k) {
            if (counts[k] == 0) continue;
            for (std::size_t d = 0; d < dim; ++d) centers[k][d] = sums[k][d] / counts[k];
        }
        for (std::size_t k = 0; k < centers.size(); ++k) {
            if (counts[k] != 0) continue;
            std::size_t far = 0;
            double fd = -1.0;
            for (std::size_t i = 0; i < points.size(); ++i) {
                if (counts[res.assignment[i]] < 2) continue;
                const double d = squared_distance(points[i], centers[res.assignment[i]]);
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            if (fd <= 0.0) continue;
            --counts[res.assignment[far]];
            ++counts[k];
            centers[k] = points[far];
            res.assignment[far] = static_cast<int>(k);
            reseeded = true;
        }
    }
    res.centers = std::move(centers);
    return res;
}

inline KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                           int max_iterations = 100) {
    if (points.empty()) throw Error("kmeans: no points");
    if (k < 1) throw Error("kmeans: k must be >= 1");
    k = std::min<int>(k, static_cast<int>(points.size()));
    return kmeans_from(points, kmeans_plus_plus(points, k, seed), max_iterations);
}

}  // namespace streamloc
