#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gah/diffcore/array.hpp"
#include "gah/io.hpp"

namespace gah {

/// Axis-aligned box in scene units; valid boxes have strictly positive area.
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    [[nodiscard]] bool valid() const
    {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 < x2 && y1 < y2;
    }
    [[nodiscard]] double width() const { return x2 - x1; }
    [[nodiscard]] double height() const { return y2 - y1; }
    [[nodiscard]] double area() const { return width() * height(); }
    [[nodiscard]] double center_x() const { return 0.5 * (x1 + x2); }
    [[nodiscard]] double center_y() const { return 0.5 * (y1 + y2); }
    [[nodiscard]] std::array<double, 4> coords() const { return {x1, y1, x2, y2}; }

    static Box centered(double cx, double cy, double w, double h)
    {
        return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    }

    friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection over union; 0 for disjoint boxes.
inline double iou(const Box& a, const Box& b)
{
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) {
        return 0.0;
    }
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

/// Boxes of N objects over T frames, stored object-major (box(j, t) at j * T + t).
class BoxTrajectorySet {
public:
    BoxTrajectorySet() = default;

    BoxTrajectorySet(std::size_t objects, std::size_t frames, double scene_width, double scene_height,
                     std::vector<Box> boxes)
        : n_(objects), t_(frames), width_(scene_width), height_(scene_height), boxes_(std::move(boxes))
    {
        validate();
    }

    [[nodiscard]] std::size_t objects() const { return n_; }
    [[nodiscard]] std::size_t frames() const { return t_; }
    [[nodiscard]] double scene_width() const { return width_; }
    [[nodiscard]] double scene_height() const { return height_; }
    [[nodiscard]] const Box& at(std::size_t object, std::size_t frame) const { return boxes_[object * t_ + frame]; }
    [[nodiscard]] const std::vector<Box>& boxes() const { return boxes_; }

    void validate() const
    {
        if (n_ < 1 || t_ < 2) {
            throw std::invalid_argument("trajectory set needs N >= 1 and T >= 2, got N=" + std::to_string(n_) +
                                        " T=" + std::to_string(t_));
        }
        if (boxes_.size() != n_ * t_) {
            throw std::invalid_argument("trajectory set holds " + std::to_string(boxes_.size()) + " boxes, expected " +
                                        std::to_string(n_ * t_));
        }
        if (!(width_ > 0.0) || !(height_ > 0.0)) {
            throw std::invalid_argument("scene extent must be positive");
        }
        for (std::size_t j = 0; j < n_; ++j) {
            for (std::size_t t = 0; t < t_; ++t) {
                const Box& b = at(j, t);
                if (!b.valid()) {
                    throw std::invalid_argument("degenerate box for object " + std::to_string(j) + " frame " +
                                                std::to_string(t));
                }
                if (b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > width_ || b.y2 > height_) {
                    throw std::invalid_argument("box for object " + std::to_string(j) + " frame " + std::to_string(t) +
                                                " leaves the scene");
                }
            }
        }
    }

    /// Same trajectories with objects reordered: result object i is source object order[i].
    [[nodiscard]] BoxTrajectorySet permuted(const std::vector<std::size_t>& order) const
    {
        std::vector<Box> out;
        out.reserve(boxes_.size());
        for (std::size_t src : order) {
            for (std::size_t t = 0; t < t_; ++t) {
                out.push_back(at(src, t));
            }
        }
        return BoxTrajectorySet(n_, t_, width_, height_, std::move(out));
    }

private:
    std::size_t n_ = 0;
    std::size_t t_ = 0;
    double width_ = 0.0;
    double height_ = 0.0;
    std::vector<Box> boxes_;
};

/// Raw positional graphs: g_t is N x T x T, g_s is T x N x N.
struct RelationGraphs {
    Array g_t;
    Array g_s;
};

/**
 * Per-object temporal graph. Entry [j][t1][t2] is the IoU of object j's boxes
 * at frames t1 and t2 when t2 < t1 (earlier frames feed later ones), 1 on the
 * diagonal and 0 above it.
 */
inline Array build_temporal_graph(const BoxTrajectorySet& traj)
{
    const std::size_t n = traj.objects();
    const std::size_t t = traj.frames();
    std::vector<double> g(n * t * t, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t t1 = 0; t1 < t; ++t1) {
            double* row = g.data() + (j * t + t1) * t;
            row[t1] = 1.0;
            for (std::size_t t2 = 0; t2 < t1; ++t2) {
                row[t2] = iou(traj.at(j, t1), traj.at(j, t2));
            }
        }
    }
    return Array({n, t, t}, std::move(g));
}

inline constexpr double kSpatialStdFloor = 1e-8;

/**
 * Per-frame spatial graph from normalized distances:
 *
 *     g_s[t][i][j] = 1 - sqrt( mean_c (box_i,c - box_j,c)^2 / std[t][c]^2 )
 *
 * over the four box coordinates, where std[t][c] is the population standard
 * deviation of coordinate c across objects in frame t (floored at 1e-8).
 * Entries are not clamped and go negative for far-apart objects.
 */
inline Array build_spatial_graph(const BoxTrajectorySet& traj)
{
    const std::size_t n = traj.objects();
    const std::size_t t = traj.frames();
    std::vector<double> g(t * n * n, 0.0);
    for (std::size_t f = 0; f < t; ++f) {
        std::array<double, 4> mean{};
        std::array<double, 4> var{};
        for (std::size_t j = 0; j < n; ++j) {
            const auto c = traj.at(j, f).coords();
            for (std::size_t k = 0; k < 4; ++k) {
                mean[k] += c[k] / static_cast<double>(n);
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            const auto c = traj.at(j, f).coords();
            for (std::size_t k = 0; k < 4; ++k) {
                var[k] += (c[k] - mean[k]) * (c[k] - mean[k]) / static_cast<double>(n);
            }
        }
        std::array<double, 4> inv_var{};
        for (std::size_t k = 0; k < 4; ++k) {
            const double sd = std::max(std::sqrt(var[k]), kSpatialStdFloor);
            inv_var[k] = 1.0 / (sd * sd);
        }
        double* frame = g.data() + f * n * n;
        for (std::size_t i = 0; i < n; ++i) {
            frame[i * n + i] = 1.0;
            const auto ci = traj.at(i, f).coords();
            for (std::size_t j = i + 1; j < n; ++j) {
                const auto cj = traj.at(j, f).coords();
                double acc = 0.0;
                for (std::size_t k = 0; k < 4; ++k) {
                    acc += (ci[k] - cj[k]) * (ci[k] - cj[k]) * inv_var[k];
                }
                const double v = 1.0 - std::sqrt(acc / 4.0);
                frame[i * n + j] = v;
                frame[j * n + i] = v;
            }
        }
    }
    return Array({t, n, n}, std::move(g));
}

inline RelationGraphs build_graphs(const BoxTrajectorySet& traj)
{
    return {build_temporal_graph(traj), build_spatial_graph(traj)};
}

// Trajectory files: magic "GAHT", version u16, N u16, T u16, then N x T x 4 little-endian f64
// (x1, y1, x2, y2 per box, object-major). The scene extent travels in the dataset manifest.

inline constexpr std::uint16_t kTrajectoryFileVersion = 1;

inline void write_trajectories(std::ostream& out, const BoxTrajectorySet& traj)
{
    io::put_magic(out, "GAHT");
    io::put_u16(out, kTrajectoryFileVersion);
    io::put_u16(out, static_cast<std::uint16_t>(traj.objects()));
    io::put_u16(out, static_cast<std::uint16_t>(traj.frames()));
    for (const Box& b : traj.boxes()) {
        for (double c : b.coords()) {
            io::put_f64(out, c);
        }
    }
}

inline void write_trajectories(const std::filesystem::path& path, const BoxTrajectorySet& traj)
{
    std::ofstream out = io::open_out(path);
    write_trajectories(out, traj);
}

/// Reads and validates a trajectory file against the given scene extent.
inline BoxTrajectorySet read_trajectories(std::istream& in, double scene_width, double scene_height)
{
    io::expect_magic(in, "GAHT");
    const auto version = io::get_u16(in, "trajectory version");
    if (version != kTrajectoryFileVersion) {
        throw FormatError("unsupported trajectory file version " + std::to_string(version));
    }
    const std::size_t n = io::get_u16(in, "object count");
    const std::size_t t = io::get_u16(in, "frame count");
    std::vector<Box> boxes(n * t);
    for (Box& b : boxes) {
        b.x1 = io::get_f64(in, "box");
        b.y1 = io::get_f64(in, "box");
        b.x2 = io::get_f64(in, "box");
        b.y2 = io::get_f64(in, "box");
    }
    io::expect_eof(in, "trajectory payload");
    try {
        return BoxTrajectorySet(n, t, scene_width, scene_height, std::move(boxes));
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("invalid trajectory file: ") + e.what());
    }
}

inline BoxTrajectorySet read_trajectories(const std::filesystem::path& path, double scene_width, double scene_height)
{
    std::ifstream in = io::open_in(path);
    return read_trajectories(in, scene_width, scene_height);
}

} // namespace gah
