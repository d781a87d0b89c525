#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamloc/core.hpp"

namespace streamloc {

inline constexpr int kColorBins = 512;  // 8 hue x 8 saturation x 8 intensity
inline constexpr double kChiSquareEps = 1e-10;

/// Mean motion-boundary and intensity-edge magnitude along the border shared with one neighbor.
struct BorderStrength {
    double motion = 0.0;
    double edge = 0.0;
    int length = 0;  // number of 4-connected pixel pairs on the border
};

struct Superpixel {
    int id = 0;
    Point2 centroid;
    std::vector<int> pixels;  // raster indices y * width + x
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive pixel bounds
    std::vector<double> color_hist;
    std::vector<double> flow_hist;
    double mean_flow_mag = 0.0;
    Point2 mean_flow;
    std::map<int, BorderStrength> borders;  // keyed by neighbor id

    [[nodiscard]] Box bbox() const { return box_from_pixel_range(x0, y0, x1, y1); }
};

enum class FlowSource { none, computed, copied };

struct SuperpixelMap {
    int frame_index = 0;
    int width = 0;
    int height = 0;
    std::vector<int> labels;  // row-major, values are superpixel ids
    std::vector<Superpixel> superpixels;  // superpixels[id].id == id
    std::vector<std::pair<int, int>> adjacency;  // unordered pairs stored as (lo, hi), sorted
    FlowSource flow_source = FlowSource::none;

    [[nodiscard]] int label_at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] bool adjacent(int a, int b) const {
        return a != b && superpixels[a].borders.count(b) > 0;
    }
    /// Superpixel enclosing a (possibly fractional, possibly out-of-frame) point; clamps to the frame.
    [[nodiscard]] int enclosing(Point2 p) const {
        const int x = std::clamp(static_cast<int>(std::lround(p.x)), 0, width - 1);
        const int y = std::clamp(static_cast<int>(std::lround(p.y)), 0, height - 1);
        return label_at(x, y);
    }
};

struct SlicParams {
    int target_count = 200;
    double compactness = 10.0;
    int iterations = 10;
};

namespace detail {

struct Lab {
    double l = 0, a = 0, b = 0;
};

inline Lab rgb_to_lab(Rgb c) {
    auto lin = [](double v) {
        v /= 255.0;
        return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
    };
    const double r = lin(c.r), g = lin(c.g), b = lin(c.b);
    const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    auto f = [](double t) { return t > 0.008856 ? std::cbrt(t) : 7.787 * t + 16.0 / 116.0; };
    const double fx = f(x), fy = f(y), fz = f(z);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline double intensity(Rgb c) { return (c.r + c.g + c.b) / (3.0 * 255.0); }

/// HSI bin index in [0, 512).
inline int hsi_bin(Rgb c) {
    const double r = c.r / 255.0, g = c.g / 255.0, b = c.b / 255.0;
    const double i = (r + g + b) / 3.0;
    const double mn = std::min({r, g, b});
    const double s = i > 0.0 ? 1.0 - mn / i : 0.0;
    double h = 0.0;
    const double num = 0.5 * ((r - g) + (r - b));
    const double den = std::sqrt((r - g) * (r - g) + (r - b) * (g - b));
    if (den > 1e-12) {
        h = std::acos(std::clamp(num / den, -1.0, 1.0));
        if (b > g) h = 2.0 * M_PI - h;
    }
    const int hb = std::min(7, static_cast<int>(h / (2.0 * M_PI) * 8.0));
    const int sb = std::min(7, static_cast<int>(s * 8.0));
    const int ib = std::min(7, static_cast<int>(i * 8.0));
    return hb * 64 + sb * 8 + ib;
}

/// Central-difference gradient magnitude of a scalar raster (one-sided at the frame edge).
inline std::vector<double> gradient_magnitude(const std::vector<double>& f, int w, int h) {
    std::vector<double> g(f.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int xl = std::max(0, x - 1), xr = std::min(w - 1, x + 1);
            const int yu = std::max(0, y - 1), yd = std::min(h - 1, y + 1);
            const double gx = xr > xl ? (f[y * w + xr] - f[y * w + xl]) / (xr - xl) : 0.0;
            const double gy = yd > yu ? (f[yd * w + x] - f[yu * w + x]) / (yd - yu) : 0.0;
            g[y * w + x] = std::hypot(gx, gy);
        }
    }
    return g;
}

}  // namespace detail

/// Rebuilds pixel sets, centroids, bounds and adjacency from a label raster
/// whose labels are 0..n-1. Features are left empty.
inline SuperpixelMap build_superpixel_map(std::vector<int> labels, int width, int height, int frame_index) {
    SuperpixelMap map;
    map.frame_index = frame_index;
    map.width = width;
    map.height = height;
    map.labels = std::move(labels);
    int n = 0;
    for (int l : map.labels) n = std::max(n, l + 1);
    map.superpixels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& sp = map.superpixels[i];
        sp.id = i;
        sp.x0 = width;
        sp.y0 = height;
    }
    std::vector<double> sx(n, 0.0), sy(n, 0.0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const int idx = y * width + x;
            auto& sp = map.superpixels[map.labels[idx]];
            sp.pixels.push_back(idx);
            sp.x0 = std::min(sp.x0, x);
            sp.y0 = std::min(sp.y0, y);
            sp.x1 = std::max(sp.x1, x);
            sp.y1 = std::max(sp.y1, y);
            sx[map.labels[idx]] += x;
            sy[map.labels[idx]] += y;
        }
    }
    for (int i = 0; i < n; ++i) {
        auto& sp = map.superpixels[i];
        if (sp.pixels.empty()) throw Error("label raster has an empty label " + std::to_string(i));
        sp.centroid = {sx[i] / sp.pixels.size(), sy[i] / sp.pixels.size()};
    }
    auto link = [&](int a, int b) {
        if (a == b) return;
        map.superpixels[a].borders[b].length += 1;
        map.superpixels[b].borders[a].length += 1;
    };
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const int l = map.labels[y * width + x];
            if (x + 1 < width) link(l, map.labels[y * width + x + 1]);
            if (y + 1 < height) link(l, map.labels[(y + 1) * width + x]);
        }
    }
    for (const auto& sp : map.superpixels)
        for (const auto& [nb, border] : sp.borders)
            if (sp.id < nb) map.adjacency.emplace_back(sp.id, nb);
    return map;
}

/// SLIC over-segmentation: k-means in (Lab color, position) space seeded on a
/// regular grid, searched in 2S x 2S windows, followed by one connectivity pass.
inline SuperpixelMap slic_segment(const Image& frame, const SlicParams& params, int frame_index = 1) {
    const int w = frame.width, h = frame.height;
    const int npix = w * h;
    if (params.target_count < 2) throw Error("slic_segment: target_count must be >= 2");
    if (params.target_count > npix) throw Error("slic_segment: target_count exceeds pixel count");
    if (!(params.compactness > 0.0)) throw Error("slic_segment: compactness must be > 0");

    std::vector<detail::Lab> lab(npix);
    for (int i = 0; i < npix; ++i) lab[i] = detail::rgb_to_lab(frame.pixels[i]);

    const double step = std::sqrt(static_cast<double>(npix) / params.target_count);
    const int nx = std::max(1, static_cast<int>(std::lround(w / step)));
    const int ny = std::max(1, static_cast<int>(std::lround(h / step)));

    struct Center {
        double l, a, b, x, y;
    };
    std::vector<Center> centers;
    centers.reserve(static_cast<std::size_t>(nx) * ny);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const double cx = (i + 0.5) * w / nx - 0.5;
            const double cy = (j + 0.5) * h / ny - 0.5;
            const int px = std::clamp(static_cast<int>(std::lround(cx)), 0, w - 1);
            const int py = std::clamp(static_cast<int>(std::lround(cy)), 0, h - 1);
            const auto& c = lab[py * w + px];
            centers.push_back({c.l, c.a, c.b, cx, cy});
        }
    }

    const double spatial_weight = (params.compactness / step) * (params.compactness / step);
    std::vector<int> labels(npix, -1);
    std::vector<double> best(npix);
    auto dist2 = [&](const Center& c, int x, int y) {
        const auto& p = lab[y * w + x];
        const double dl = p.l - c.l, da = p.a - c.a, db = p.b - c.b;
        const double dx = x - c.x, dy = y - c.y;
        return dl * dl + da * da + db * db + spatial_weight * (dx * dx + dy * dy);
    };

    for (int iter = 0; iter < params.iterations; ++iter) {
        std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const auto& c = centers[k];
            const int xa = std::max(0, static_cast<int>(std::floor(c.x - step)));
            const int xb = std::min(w - 1, static_cast<int>(std::ceil(c.x + step)));
            const int ya = std::max(0, static_cast<int>(std::floor(c.y - step)));
            const int yb = std::min(h - 1, static_cast<int>(std::ceil(c.y + step)));
            for (int y = ya; y <= yb; ++y) {
                for (int x = xa; x <= xb; ++x) {
                    const double d = dist2(c, x, y);
                    if (d < best[y * w + x]) {
                        best[y * w + x] = d;
                        labels[y * w + x] = static_cast<int>(k);
                    }
                }
            }
        }
        // pixels outside every window fall back to a full search
        for (int idx = 0; idx < npix; ++idx) {
            if (labels[idx] >= 0) continue;
            const int x = idx % w, y = idx / w;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < centers.size(); ++k) {
                const double d = dist2(centers[k], x, y);
                if (d < bd) {
                    bd = d;
                    labels[idx] = static_cast<int>(k);
                }
            }
        }
        std::vector<Center> acc(centers.size(), Center{0, 0, 0, 0, 0});
        std::vector<int> count(centers.size(), 0);
        for (int idx = 0; idx < npix; ++idx) {
            const int k = labels[idx];
            const auto& p = lab[idx];
            acc[k].l += p.l;
            acc[k].a += p.a;
            acc[k].b += p.b;
            acc[k].x += idx % w;
            acc[k].y += idx / w;
            ++count[k];
        }
        for (std::size_t k = 0; k < centers.size(); ++k) {
            if (count[k] == 0) continue;
            const double n = count[k];
            centers[k] = {acc[k].l / n, acc[k].a / n, acc[k].b / n, acc[k].x / n, acc[k].y / n};
        }
    }

    // Connectivity pass: relabel 4-connected components in raster order and
    // absorb components smaller than a quarter cell into the preceding neighbor.
    const int min_size = std::max(1, static_cast<int>(step * step / 4.0));
    std::vector<int> out(npix, -1);
    int next_label = 0;
    std::vector<int> component;
    const int dx4[4] = {-1, 0, 1, 0};
    const int dy4[4] = {0, -1, 0, 1};
    for (int start = 0; start < npix; ++start) {
        if (out[start] >= 0) continue;
        const int sx = start % w, sy = start / w;
        int adjacent_label = -1;
        for (int d = 0; d < 4; ++d) {
            const int x = sx + dx4[d], y = sy + dy4[d];
            if (x >= 0 && y >= 0 && x < w && y < h && out[y * w + x] >= 0) adjacent_label = out[y * w + x];
        }
        component.clear();
        component.push_back(start);
        out[start] = next_label;
        for (std::size_t head = 0; head < component.size(); ++head) {
            const int idx = component[head];
            const int cx = idx % w, cy = idx / w;
            for (int d = 0; d < 4; ++d) {
                const int x = cx + dx4[d], y = cy + dy4[d];
                if (x < 0 || y < 0 || x >= w || y >= h) continue;
                const int nidx = y * w + x;
                if (out[nidx] < 0 && labels[nidx] == labels[start]) {
                    out[nidx] = next_label;
                    component.push_back(nidx);
                }
            }
        }
        if (static_cast<int>(component.size()) < min_size && adjacent_label >= 0) {
            for (int idx : component) out[idx] = adjacent_label;
        } else {
            ++next_label;
        }
    }
    return build_superpixel_map(std::move(out), w, h, frame_index);
}

struct FeatureParams {
    int flow_bins = 8;
};

/// Fills color/flow descriptors and per-border strengths. When `flow` is null
/// (no forward flow available) the flow-dependent fields are copied from the
/// nearest-centroid superpixel of `previous`, or left at the zero-motion
/// convention if there is no previous map.
inline void extract_features(SuperpixelMap& map, const Image& frame, const FlowField* flow,
                             const SuperpixelMap* previous = nullptr, const FeatureParams& params = {}) {
    const int w = map.width, h = map.height;
    if (frame.width != w || frame.height != h) throw Error("extract_features: frame dimensions differ from map");
    if (flow && (flow->width != w || flow->height != h)) throw Error("extract_features: flow dimensions differ from frame");
    const int bins = params.flow_bins;

    for (auto& sp : map.superpixels) {
        sp.color_hist.assign(kColorBins, 0.0);
        for (int idx : sp.pixels) sp.color_hist[detail::hsi_bin(frame.pixels[idx])] += 1.0;
        for (double& v : sp.color_hist) v /= static_cast<double>(sp.pixels.size());

        sp.flow_hist.assign(static_cast<std::size_t>(bins), 0.0);
        sp.mean_flow_mag = 0.0;
        sp.mean_flow = {};
        if (flow) {
            double total = 0.0;
            for (int idx : sp.pixels) {
                const double u = flow->u[idx], v = flow->v[idx];
                const double mag = std::hypot(u, v);
                sp.mean_flow_mag += mag;
                sp.mean_flow.x += u;
                sp.mean_flow.y += v;
                if (mag > 0.0) {
                    double ang = std::atan2(v, u);
                    if (ang < 0.0) ang += 2.0 * M_PI;
                    const int b = std::min(bins - 1, static_cast<int>(ang / (2.0 * M_PI) * bins));
                    sp.flow_hist[b] += mag;
                    total += mag;
                }
            }
            const double n = static_cast<double>(sp.pixels.size());
            sp.mean_flow_mag /= n;
            sp.mean_flow = {sp.mean_flow.x / n, sp.mean_flow.y / n};
            if (total > 0.0) {
                for (double& v : sp.flow_hist) v /= total;
            } else {
                sp.flow_hist[0] = 1.0;
            }
        } else if (previous && !previous->superpixels.empty()) {
            const Superpixel* nearest = &previous->superpixels.front();
            double bd = std::numeric_limits<double>::infinity();
            for (const auto& ps : previous->superpixels) {
                const double d = distance(ps.centroid, sp.centroid);
                if (d < bd) {
                    bd = d;
                    nearest = &ps;
                }
            }
            sp.flow_hist = nearest->flow_hist;
            sp.mean_flow_mag = nearest->mean_flow_mag;
            sp.mean_flow = nearest->mean_flow;
        } else {
            sp.flow_hist[0] = 1.0;
        }
    }
    map.flow_source = flow ? FlowSource::computed : (previous ? FlowSource::copied : FlowSource::none);

    std::vector<double> inten(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < inten.size(); ++i) inten[i] = detail::intensity(frame.pixels[i]);
    const std::vector<double> edge = detail::gradient_magnitude(inten, w, h);
    std::vector<double> motion(inten.size(), 0.0);
    if (flow) {
        const std::vector<double> fu(flow->u.begin(), flow->u.end());
        const std::vector<double> fv(flow->v.begin(), flow->v.end());
        const auto gu = detail::gradient_magnitude(fu, w, h);
        const auto gv = detail::gradient_magnitude(fv, w, h);
        for (std::size_t i = 0; i < motion.size(); ++i) motion[i] = gu[i] + gv[i];
    }

    for (auto& sp : map.superpixels)
        for (auto& [nb, border] : sp.borders) border = BorderStrength{0.0, 0.0, 0};
    auto accumulate = [&](int p, int q) {
        const int a = map.labels[p], b = map.labels[q];
        if (a == b) return;
        const double m = 0.5 * (motion[p] + motion[q]);
        const double e = 0.5 * (edge[p] + edge[q]);
        for (auto [s, o] : {std::pair{a, b}, std::pair{b, a}}) {
            auto& border = map.superpixels[s].borders[o];
            border.motion += m;
            border.edge += e;
            border.length += 1;
        }
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (x + 1 < w) accumulate(y * w + x, y * w + x + 1);
            if (y + 1 < h) accumulate(y * w + x, (y + 1) * w + x);
        }
    }
    for (auto& sp : map.superpixels) {
        for (auto& [nb, border] : sp.borders) {
            border.motion /= border.length;
            border.edge /= border.length;
        }
    }
}

enum class DistanceKind { col, hof, mu, mb, edge };

inline double chi_square(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("chi_square: histogram lengths differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d != 0.0) s += d * d / (a[i] + b[i] + kChiSquareEps);
    }
    return 0.5 * s;
}

/// The five superpixel distances. `mb` and `edge` are the mean boundary
/// magnitudes on the shared border and so only exist for adjacent pairs.
inline double superpixel_distance(DistanceKind kind, const Superpixel& s, const Superpixel& t) {
    switch (kind) {
        case DistanceKind::col: return chi_square(s.color_hist, t.color_hist);
        case DistanceKind::hof: return chi_square(s.flow_hist, t.flow_hist);
        case DistanceKind::mu: return std::abs(s.mean_flow_mag - t.mean_flow_mag);
        case DistanceKind::mb:
        case DistanceKind::edge: {
            if (&s == &t || s.id == t.id) return 0.0;
            const auto it = s.borders.find(t.id);
            if (it == s.borders.end())
                throw Error("superpixel_distance: superpixels " + std::to_string(s.id) + " and " + std::to_string(t.id) +
                            " are not adjacent");
            return kind == DistanceKind::mb ? it->second.motion : it->second.edge;
        }
    }
    return 0.0;
}

/// Shift flow so that it is indexed by the pixels of frame t+1: each source
/// pixel's vector is splatted to its rounded destination; unreached pixels
/// keep the unshifted value.
inline FlowField align_flow_to_target(const FlowField& flow) {
    FlowField out = flow;
    out.frame_index = flow.frame_index + 1;
    std::vector<double> best(out.u.size(), -1.0);
    for (int y = 0; y < flow.height; ++y) {
        for (int x = 0; x < flow.width; ++x) {
            const auto i = flow.index(x, y);
            const int tx = static_cast<int>(std::lround(x + flow.u[i]));
            const int ty = static_cast<int>(std::lround(y + flow.v[i]));
            if (tx < 0 || ty < 0 || tx >= flow.width || ty >= flow.height) continue;
            const auto j = flow.index(tx, ty);
            const double mag = std::hypot(flow.u[i], flow.v[i]);
            if (mag > best[j]) {
                best[j] = mag;
                out.u[j] = flow.u[i];
                out.v[j] = flow.v[i];
            }
        }
    }
    return out;
}

/// 64-bit FNV-1a over the raw frame bytes.
inline std::uint64_t frame_hash(const Image& frame) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](std::uint8_t b) {
        h ^= b;
        h *= 1099511628211ULL;
    };
    for (int v : {frame.width, frame.height})
        for (int k = 0; k < 4; ++k) mix(static_cast<std::uint8_t>(v >> (8 * k)));
    for (const auto& p : frame.pixels) {
        mix(p.r);
        mix(p.g);
        mix(p.b);
    }
    return h;
}

/// On-disk cache of segmentations keyed by (frame hash, target_count, compactness).
class SuperpixelCache {
public:
    explicit SuperpixelCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

    SuperpixelMap segment(const Image& frame, const SlicParams& params, int frame_index) {
        const auto path = dir_ / key(frame, params);
        if (std::filesystem::exists(path)) {
            std::ifstream in(path);
            const auto j = nlohmann::json::parse(in);
            return build_superpixel_map(j.at("labels").get<std::vector<int>>(), frame.width, frame.height, frame_index);
        }
        SuperpixelMap map = slic_segment(frame, params, frame_index);
        std::filesystem::create_directories(dir_);
        std::ofstream out(path);
        out << nlohmann::json{{"width", frame.width}, {"height", frame.height}, {"labels", map.labels}}.dump();
        return map;
    }

    [[nodiscard]] static std::string key(const Image& frame, const SlicParams& params) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%016llx_%d_%.6g_%d.json", static_cast<unsigned long long>(frame_hash(frame)),
                      params.target_count, params.compactness, params.iterations);
        return buf;
    }

private:
    std::filesystem::path dir_;
};

}  // namespace streamloc
