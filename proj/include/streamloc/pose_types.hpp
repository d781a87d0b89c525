#pragma once

#include <string>
#include <vector>

#include "streamloc/core.hpp"

namespace streamloc {

struct Joint {
    Point2 position;
    bool occluded = false;

    friend bool operator==(const Joint&, const Joint&) = default;
};

/// One scored pose hypothesis. `score` is the detector output (higher is
/// better); the pose model works with its negation as the raw cost.
struct Pose {
    int frame_index = 0;
    std::vector<Joint> joints;
    double score = 0.0;
    std::string body_config = "full";
    bool is_virtual = false;

    [[nodiscard]] int visible_count() const {
        int n = 0;
        for (const auto& j : joints) n += j.occluded ? 0 : 1;
        return n;
    }

    /// Tight box over visible joints, grown by `margin` pixels on every side.
    /// Pixel-inclusive: a joint at pixel (x, y) lies inside [x, x + 1).
    [[nodiscard]] Box bbox(double margin = 0.0) const {
        double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
        double x1 = -x0, y1 = -x0;
        for (const auto& j : joints) {
            if (j.occluded) continue;
            x0 = std::min(x0, j.position.x);
            y0 = std::min(y0, j.position.y);
            x1 = std::max(x1, j.position.x);
            y1 = std::max(y1, j.position.y);
        }
        if (x0 > x1) return {};
        return {x0 - margin, y0 - margin, x1 - x0 + 1.0 + 2.0 * margin, y1 - y0 + 1.0 + 2.0 * margin};
    }

    friend bool operator==(const Pose&, const Pose&) = default;
};

}  // namespace streamloc
