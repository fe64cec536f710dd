#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gah/attention.hpp"
#include "gah/dataset.hpp"
#include "gah/diffcore.hpp"
#include "gah/layers.hpp"
#include "json.hpp"

namespace gah {

enum class ModelKind { stvh, mstvh };

inline std::string to_string(ModelKind k) { return k == ModelKind::stvh ? "stvh" : "mstvh"; }

inline ModelKind parse_model_kind(std::string_view name)
{
    if (name == "stvh") {
        return ModelKind::stvh;
    }
    if (name == "mstvh") {
        return ModelKind::mstvh;
    }
    throw std::invalid_argument("unknown model kind \"" + std::string(name) + "\" (expected stvh or mstvh)");
}

inline void to_json(nlohmann::json& j, ModelKind k) { j = to_string(k); }
inline void from_json(const nlohmann::json& j, ModelKind& k) { k = parse_model_kind(j.get<std::string>()); }

/// Training uses the relaxed code h for the activity heads; inference uses the binary code b.
enum class Mode { train, infer };

struct ModelConfig {
    ModelKind kind = ModelKind::stvh;
    std::size_t input_dim = 800; // D_in: d_v * 25 for RoI features
    std::size_t dim = 64;        // d
    std::size_t bits = 64;       // K
    std::size_t layers = 4;      // Upsilon
    std::size_t activities = 4;  // A
    std::size_t actions = 3;     // C_act
    std::size_t objects = 4;     // N
    std::size_t frames = 8;      // T
    std::uint64_t seed = 0;      // parameter initialization

    void validate() const
    {
        if (input_dim == 0 || dim == 0 || bits == 0 || activities < 2 || actions < 1 || objects < 1 || frames < 1) {
            throw std::invalid_argument("model config has an empty dimension");
        }
        if (bits > 65535 || layers > 65535) {
            throw std::invalid_argument("K and Upsilon must fit in 16 bits");
        }
        if (kind == ModelKind::stvh && layers < 1) {
            throw std::invalid_argument("STVH needs at least one PVF layer");
        }
        if (kind == ModelKind::mstvh && layers < 2) {
            throw std::invalid_argument("M-STVH needs at least two MSF layers");
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, kind, input_dim, dim, bits, layers, activities, actions,
                                                objects, frames, seed)

/// Stacked examples: features [B, N, T, D_in], g_t [B, N, T, T], g_s [B, T, N, N].
struct Batch {
    Array features;
    Array g_t;
    Array g_s;
    std::vector<std::size_t> activity;
    std::vector<std::size_t> actions; // B x N, row-major
    std::vector<std::size_t> appearance;
    std::vector<std::uint64_t> ids;

    [[nodiscard]] std::size_t size() const { return activity.size(); }
};

inline Batch make_batch(std::span<const Example* const> examples)
{
    if (examples.empty()) {
        throw std::invalid_argument("empty batch");
    }
    const Shape fs = examples[0]->features.shape();
    const Shape ts = examples[0]->graphs.g_t.shape();
    const Shape ss = examples[0]->graphs.g_s.shape();
    std::vector<double> f;
    std::vector<double> gt;
    std::vector<double> gs;
    Batch batch;
    for (const Example* e : examples) {
        if (e->features.shape() != fs || e->graphs.g_t.shape() != ts || e->graphs.g_s.shape() != ss) {
            throw ShapeError("examples in one batch must share N, T and D");
        }
        f.insert(f.end(), e->features.data().begin(), e->features.data().end());
        gt.insert(gt.end(), e->graphs.g_t.data().begin(), e->graphs.g_t.data().end());
        gs.insert(gs.end(), e->graphs.g_s.data().begin(), e->graphs.g_s.data().end());
        batch.activity.push_back(e->activity);
        batch.actions.insert(batch.actions.end(), e->actions.begin(), e->actions.end());
        batch.appearance.push_back(e->appearance);
        batch.ids.push_back(e->id);
    }
    auto stacked = [&](const Shape& s) {
        Shape out{examples.size()};
        out.insert(out.end(), s.begin(), s.end());
        return out;
    };
    batch.features = Array(stacked(fs), std::move(f));
    batch.g_t = Array(stacked(ts), std::move(gt));
    batch.g_s = Array(stacked(ss), std::move(gs));
    return batch;
}

inline Batch make_batch(const std::vector<Example>& examples, std::span<const std::size_t> indices)
{
    std::vector<const Example*> ptrs;
    ptrs.reserve(indices.size());
    for (std::size_t i : indices) {
        ptrs.push_back(&examples.at(i));
    }
    return make_batch(ptrs);
}

/// Total training loss plus the value of each named term.
struct LossReport {
    Array total;
    std::map<std::string, double> parts;
    std::size_t correct = 0; // activity predictions matching the label
};

/// Row-wise argmax of [B, A] logits compared with labels.
inline std::size_t count_correct(const Array& logits, std::span<const std::size_t> labels)
{
    const std::size_t a = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = logits.data().subspan(i * a, a);
        const auto best = static_cast<std::size_t>(std::ranges::max_element(row) - row.begin());
        correct += best == labels[i] ? 1 : 0;
    }
    return correct;
}

/// Runs the fusion stack; with no layers the input passes through unchanged.
inline Array run_fusion_stack(const std::vector<FusionLayer>& layers, const Array& f, const Array& g_t,
                              const Array& g_s, std::vector<FusionOutput>* outputs = nullptr,
                              AttentionTrace* trace = nullptr)
{
    Array x = f;
    for (const auto& layer : layers) {
        FusionOutput o = layer(x, g_t, g_s, trace);
        x = o.out;
        if (outputs != nullptr) {
            outputs->push_back(std::move(o));
        }
    }
    return x;
}

inline void check_batch(const ModelConfig& c, const Batch& batch)
{
    const Shape& f = batch.features.shape();
    if (f.size() != 4 || f[1] != c.objects || f[2] != c.frames || f[3] != c.input_dim) {
        throw ShapeError("batch features " + to_string(f) + " do not match model [B, " + std::to_string(c.objects) +
                         ", " + std::to_string(c.frames) + ", " + std::to_string(c.input_dim) + "]");
    }
    const Shape gt{f[0], c.objects, c.frames, c.frames};
    const Shape gs{f[0], c.frames, c.objects, c.objects};
    if (batch.g_t.shape() != gt || batch.g_s.shape() != gs) {
        throw ShapeError("batch graphs " + to_string(batch.g_t.shape()) + " / " + to_string(batch.g_s.shape()) +
                         " do not match the features");
    }
}

} // namespace gah
