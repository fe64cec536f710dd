#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "gah/graph_builder.hpp"
#include "gah/model.hpp"
#include "gah/random.hpp"

namespace gah::testing {

/// Random boxes inside a 40 x 40 scene with small per-frame motion.
inline BoxTrajectorySet random_trajectories(Rng& rng, std::size_t n, std::size_t t)
{
    std::vector<Box> boxes;
    for (std::size_t j = 0; j < n; ++j) {
        double x = rng.uniform(5, 30);
        double y = rng.uniform(5, 30);
        const double w = rng.uniform(3, 6);
        const double h = rng.uniform(3, 6);
        for (std::size_t f = 0; f < t; ++f) {
            x = std::clamp(x + rng.uniform(-2, 2), 0.0, 40.0 - w);
            y = std::clamp(y + rng.uniform(-2, 2), 0.0, 40.0 - h);
            boxes.push_back({x, y, x + w, y + h});
        }
    }
    return BoxTrajectorySet(n, t, 40, 40, std::move(boxes));
}

inline Example random_example(Rng& rng, const ModelConfig& c, std::uint64_t id)
{
    Example e;
    e.id = id;
    std::vector<double> f(c.objects * c.frames * c.input_dim);
    for (double& v : f) {
        v = rng.normal();
    }
    e.features = Array({c.objects, c.frames, c.input_dim}, std::move(f));
    e.graphs = build_graphs(random_trajectories(rng, c.objects, c.frames));
    e.activity = rng.below(c.activities);
    e.appearance = rng.below(3);
    for (std::size_t j = 0; j < c.objects; ++j) {
        e.actions.push_back(rng.below(c.actions));
    }
    return e;
}

inline std::vector<Example> random_examples(Rng& rng, const ModelConfig& c, std::size_t count)
{
    std::vector<Example> out;
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(random_example(rng, c, i));
    }
    return out;
}

inline Batch whole_batch(const std::vector<Example>& examples)
{
    std::vector<const Example*> ptrs;
    for (const auto& e : examples) {
        ptrs.push_back(&e);
    }
    return make_batch(ptrs);
}

/// The small instance used for gradient checks: N=3, T=4, d=8, K=8, two layers.
inline ModelConfig tiny_config(ModelKind kind)
{
    ModelConfig c;
    c.kind = kind;
    c.input_dim = 10;
    c.dim = 8;
    c.bits = 8;
    c.layers = 2;
    c.activities = 3;
    c.actions = 2;
    c.objects = 3;
    c.frames = 4;
    c.seed = 17;
    return c;
}

/// Reorders objects of an example: new object i is old object order[i].
inline Example permute_objects(const Example& e, const std::vector<std::size_t>& order)
{
    const std::size_t n = order.size();
    const Shape& fs = e.features.shape();
    const std::size_t t = fs[1];
    const std::size_t d = fs[2];
    Example p = e;
    std::vector<double> f(e.features.size());
    std::vector<double> gt(e.graphs.g_t.size());
    std::vector<double> gs(e.graphs.g_s.size());
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = order[i];
        std::copy_n(e.features.data().begin() + static_cast<std::ptrdiff_t>(src * t * d), t * d,
                    f.begin() + static_cast<std::ptrdiff_t>(i * t * d));
        std::copy_n(e.graphs.g_t.data().begin() + static_cast<std::ptrdiff_t>(src * t * t), t * t,
                    gt.begin() + static_cast<std::ptrdiff_t>(i * t * t));
        p.actions[i] = e.actions[src];
    }
    for (std::size_t f2 = 0; f2 < t; ++f2) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                gs[(f2 * n + i) * n + j] = e.graphs.g_s.at((f2 * n + order[i]) * n + order[j]);
            }
        }
    }
    p.features = Array(fs, std::move(f));
    p.graphs.g_t = Array(e.graphs.g_t.shape(), std::move(gt));
    p.graphs.g_s = Array(e.graphs.g_s.shape(), std::move(gs));
    return p;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

} // namespace gah::testing
