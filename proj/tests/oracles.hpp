#pragma once

// Direct, unoptimized reference computations shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "gah/graph_builder.hpp"
#include "gah/retrieval.hpp"

namespace gah::oracle {

/// IoU at extended precision.
inline long double box_iou(const Box& a, const Box& b)
{
    const long double w = std::max(0.0L, std::min<long double>(a.x2, b.x2) - std::max<long double>(a.x1, b.x1));
    const long double h = std::max(0.0L, std::min<long double>(a.y2, b.y2) - std::max<long double>(a.y1, b.y1));
    const long double inter = w * h;
    const long double area_a = (static_cast<long double>(a.x2) - a.x1) * (static_cast<long double>(a.y2) - a.y1);
    const long double area_b = (static_cast<long double>(b.x2) - b.x1) * (static_cast<long double>(b.y2) - b.y1);
    return inter / (area_a + area_b - inter);
}

inline long double temporal(const BoxTrajectorySet& traj, std::size_t j, std::size_t t1, std::size_t t2)
{
    if (t2 > t1) {
        return 0.0L;
    }
    if (t2 == t1) {
        return 1.0L;
    }
    return box_iou(traj.at(j, t1), traj.at(j, t2));
}

/// One minus the RMS over coordinates of the std-normalized coordinate difference.
inline long double spatial(const BoxTrajectorySet& traj, std::size_t f, std::size_t i, std::size_t j)
{
    const std::size_t n = traj.objects();
    long double acc = 0.0L;
    for (std::size_t c = 0; c < 4; ++c) {
        long double mu = 0.0L;
        for (std::size_t k = 0; k < n; ++k) {
            mu += traj.at(k, f).coords()[c];
        }
        mu /= n;
        long double var = 0.0L;
        for (std::size_t k = 0; k < n; ++k) {
            const long double d = traj.at(k, f).coords()[c] - mu;
            var += d * d;
        }
        var /= n;
        long double sd = std::sqrt(var);
        if (sd < 1e-8L) {
            sd = 1e-8L;
        }
        const long double diff = static_cast<long double>(traj.at(i, f).coords()[c]) - traj.at(j, f).coords()[c];
        acc += diff * diff / (sd * sd);
    }
    return 1.0L - std::sqrt(acc / 4.0L);
}

using Signs = std::vector<std::int8_t>;

inline std::size_t hamming(const Signs& a, const Signs& b)
{
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += a[i] != b[i] ? 1 : 0;
    }
    return d;
}

struct Entry {
    std::uint64_t id;
    Signs code;
    std::int64_t label;
};

/// Every database entry except exclude, sorted by (distance, id).
inline std::vector<Hit> ranking(const std::vector<Entry>& db, const Signs& q, std::uint64_t exclude)
{
    std::vector<Hit> all;
    for (const auto& e : db) {
        if (e.id != exclude) {
            all.push_back({e.id, hamming(q, e.code)});
        }
    }
    std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
        return std::pair(a.distance, a.id) < std::pair(b.distance, b.id);
    });
    return all;
}

/// AP@k of one query; counted is false when the database holds nothing relevant to it.
inline double average_precision(const std::vector<Entry>& db, const Entry& q, std::size_t k, bool* counted)
{
    const auto ranked = ranking(db, q.code, q.id);
    std::size_t relevant = 0;
    for (const auto& e : db) {
        relevant += (e.id != q.id && e.label == q.label) ? 1 : 0;
    }
    *counted = relevant > 0;
    if (relevant == 0) {
        return 0.0;
    }
    long double sum = 0.0L;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < std::min(k, ranked.size()); ++j) {
        const auto& e = *std::find_if(db.begin(), db.end(), [&](const Entry& x) { return x.id == ranked[j].id; });
        if (e.label == q.label) {
            ++hits;
            sum += static_cast<long double>(hits) / static_cast<long double>(j + 1);
        }
    }
    return static_cast<double>(sum / static_cast<long double>(std::min(k, relevant)));
}

} // namespace gah::oracle
