#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#define STREAMLOC_VERSION "0.1.0"

namespace streamloc {

inline constexpr const char* kLibraryVersion = STREAMLOC_VERSION;

/// Raised for any violated input contract (bad files, bad dimensions, bad parameters).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Axis-aligned box in pixel units. A box (x, y, w, h) covers the pixel
/// columns x .. x+w-1 and rows y .. y+h-1 when the values are integral.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    [[nodiscard]] double area() const { return std::max(0.0, w) * std::max(0.0, h); }
    [[nodiscard]] Point2 center() const { return {x + w / 2.0, y + h / 2.0}; }
    [[nodiscard]] bool empty() const { return w <= 0.0 || h <= 0.0; }
    [[nodiscard]] bool contains(Point2 p) const {
        return p.x >= x && p.x < x + w && p.y >= y && p.y < y + h;
    }

    friend bool operator==(const Box&, const Box&) = default;
};

inline double intersection_area(const Box& a, const Box& b) {
    const double ix = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
    const double iy = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
    return (ix > 0.0 && iy > 0.0) ? ix * iy : 0.0;
}

inline double box_iou(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

/// Smallest box with integral corners covering the pixel set spanned by the
/// given inclusive pixel ranges.
inline Box box_from_pixel_range(int x0, int y0, int x1, int y1) {
    return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 - x0 + 1),
            static_cast<double>(y1 - y0 + 1)};
}

inline Box clamp_box(const Box& b, int width, int height) {
    const double x0 = std::clamp(b.x, 0.0, static_cast<double>(width));
    const double y0 = std::clamp(b.y, 0.0, static_cast<double>(height));
    const double x1 = std::clamp(b.x + b.w, 0.0, static_cast<double>(width));
    const double y1 = std::clamp(b.y + b.h, 0.0, static_cast<double>(height));
    return {x0, y0, x1 - x0, y1 - y0};
}

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Row-major H x W color raster.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<Rgb> pixels;

    Image() = default;
    Image(int w, int h, Rgb fill = {}) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    [[nodiscard]] std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    Rgb& at(int x, int y) { return pixels[index(x, y)]; }
    [[nodiscard]] const Rgb& at(int x, int y) const { return pixels[index(x, y)]; }
    [[nodiscard]] bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Per-pixel displacement. The field with frame_index t maps frame t onto t+1.
struct FlowField {
    int frame_index = 0;
    int width = 0;
    int height = 0;
    std::vector<float> u;
    std::vector<float> v;

    FlowField() = default;
    FlowField(int t, int w, int h)
        : frame_index(t), width(w), height(h), u(static_cast<std::size_t>(w) * h, 0.0f),
          v(static_cast<std::size_t>(w) * h, 0.0f) {}

    [[nodiscard]] std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    [[nodiscard]] Point2 at(int x, int y) const { return {u[index(x, y)], v[index(x, y)]}; }

    friend bool operator==(const FlowField&, const FlowField&) = default;
};

/// Deterministic uniform draws that do not depend on the standard library's
/// distribution implementations (those differ between vendors).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9E3779B97F4A7C15ULL) { next(); }

    std::uint64_t next() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int uniform_int(int lo, int hi) {  // inclusive
        return lo + static_cast<int>(next() % static_cast<std::uint64_t>(hi - lo + 1));
    }
    double normal() {
        // Box-Muller, one value per call keeps the stream simple to reason about.
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::uint64_t state_;
};

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    return std::sqrt(squared_distance(a, b));
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Min-max normalization to [0, 1]; a constant input maps to all zeros.
inline std::vector<double> min_max_normalize(const std::vector<double>& values) {
    std::vector<double> out(values.size(), 0.0);
    if (values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) return out;
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
    return out;
}

}  // namespace streamloc
