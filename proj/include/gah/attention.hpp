#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gah/diffcore.hpp"
#include "gah/layers.hpp"

namespace gah {

/// Attention maps of one block, kept for inspection (attn-dump).
struct AttentionRecord {
    std::string block;
    Array visual;     // at_v
    Array positional; // at_p
    Array combined;   // at_v x at_p
};

using AttentionTrace = std::vector<AttentionRecord>;

/// Visual attention softmax((f W2)(f W3)^T / sqrt(d)) over the interaction axis; f is [..., L, d].
inline Array at_v(const Array& f, const Array& w2, const Array& w3)
{
    if (f.rank() < 2 || w2.rank() != 2 || w3.shape() != w2.shape() || w2.dim(0) != f.dim(-1)) {
        throw ShapeError("at_v: features " + to_string(f.shape()) + " incompatible with weights " +
                         to_string(w2.shape()) + " / " + to_string(w3.shape()));
    }
    const Array q = matmul(f, w2);
    const Array k = matmul(f, w3);
    return softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(f.dim(-1)))), -1);
}

/// Positional attention softmax(G W_pos) over the last axis; G is [..., L, L], W_pos is L x L.
inline Array at_p(const Array& g, const Array& w_pos)
{
    if (g.rank() < 2 || g.dim(-1) != g.dim(-2) || w_pos.rank() != 2 || w_pos.dim(0) != g.dim(-1) ||
        w_pos.dim(1) != g.dim(-1)) {
        throw ShapeError("at_p: graph " + to_string(g.shape()) + " incompatible with W_pos " +
                         to_string(w_pos.shape()));
    }
    return softmax(matmul(g, w_pos), -1);
}

/// Positional attention with W_pos = alpha * I; alpha has one element.
inline Array at_p_scaled(const Array& g, const Array& alpha)
{
    if (g.rank() < 2 || g.dim(-1) != g.dim(-2) || alpha.size() != 1) {
        throw ShapeError("at_p: graph " + to_string(g.shape()) + " must be square and alpha a scalar");
    }
    return softmax(mul(g, alpha), -1);
}

/**
 * Graph-relation attention (SGAT, O-MFAT and G-MFAT all share this form):
 *
 *     out = (at_v(f) x at_p(G)) (f W1)
 *
 * with f of shape [..., L, d] and G of shape [..., L, L]. The positional weight
 * is either a full L x L matrix or alpha * I; the latter commutes with any
 * permutation of the L entities and is used on the object axis.
 */
class GraphAttention {
public:
    enum class Positional { full, scaled_identity };

    GraphAttention() = default;

    GraphAttention(ParameterStore& store, const std::string& name, const std::string& value_name, std::size_t dim,
                   std::size_t length, Positional kind, Rng& rng)
        : name_(name), kind_(kind)
    {
        w1_ = store.uniform(name + "." + value_name, {dim, dim}, dim, rng);
        w2_ = store.uniform(name + ".w2", {dim, dim}, dim, rng);
        w3_ = store.uniform(name + ".w3", {dim, dim}, dim, rng);
        if (kind == Positional::full) {
            std::vector<double> eye(length * length, 0.0);
            for (std::size_t i = 0; i < length; ++i) {
                eye[i * length + i] = 1.0;
            }
            w_pos_ = store.add(name + ".w_pos", {length, length}, std::move(eye));
        } else {
            w_pos_ = store.constant(name + ".alpha", {1}, 1.0);
        }
    }

    [[nodiscard]] Array operator()(const Array& f, const Array& g, AttentionTrace* trace = nullptr) const
    {
        if (g.rank() != f.rank() || g.dim(-1) != f.dim(-2) || g.dim(-2) != f.dim(-2)) {
            throw ShapeError(name_ + ": graph " + to_string(g.shape()) + " does not match features " +
                             to_string(f.shape()));
        }
        const Array visual = at_v(f, w2_.value(), w3_.value());
        const Array positional =
            kind_ == Positional::full ? at_p(g, w_pos_.value()) : at_p_scaled(g, w_pos_.value());
        const Array combined = matmul(visual, positional);
        if (trace != nullptr) {
            trace->push_back({name_, visual, positional, combined});
        }
        return matmul(combined, matmul(f, w1_.value()));
    }

    [[nodiscard]] const Parameter& value_weight() const { return w1_; }
    [[nodiscard]] const Parameter& query_weight() const { return w2_; }
    [[nodiscard]] const Parameter& key_weight() const { return w3_; }
    [[nodiscard]] const Parameter& positional_weight() const { return w_pos_; }

private:
    std::string name_;
    Positional kind_ = Positional::full;
    Parameter w1_;
    Parameter w2_;
    Parameter w3_;
    Parameter w_pos_;
};

/// Intermediate tensors of one fusion layer, all [B, N, T, d].
struct FusionOutput {
    Array temporal; // after the object-focused (frame-axis) attention and its residual
    Array spatial;  // after the group-focused (object-axis) attention and its residual
    Array out;      // after the feed-forward block and its residual
};

/**
 * One fusion layer on [B, N, T, d] features:
 *
 *     x = LN(f);  a = x + A_T(x, G_T);  s = a + A_S(a, G_S);  out = s + FFN(s)
 *
 * A_T attends over frames per object with G_T [B, N, T, T]; A_S attends over
 * objects per frame with G_S [B, T, N, N]. This is the PVF layer of STVH and
 * the MSF layer of M-STVH.
 */
class FusionLayer {
public:
    FusionLayer() = default;

    FusionLayer(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t frames,
                const std::string& temporal_value, const std::string& spatial_value, Rng& rng)
        : norm_(store, name + ".norm", dim),
          temporal_(store, name + ".temporal", temporal_value, dim, frames, GraphAttention::Positional::full, rng),
          spatial_(store, name + ".spatial", spatial_value, dim, 0, GraphAttention::Positional::scaled_identity, rng),
          ffn_(store, name + ".ffn", dim, rng)
    {
    }

    [[nodiscard]] FusionOutput operator()(const Array& f, const Array& g_t, const Array& g_s,
                                          AttentionTrace* trace = nullptr) const
    {
        if (f.rank() != 4) {
            throw ShapeError("fusion layer expects [B, N, T, d] features, got " + to_string(f.shape()));
        }
        FusionOutput o;
        const Array x = norm_(f);
        o.temporal = add(x, temporal_(x, g_t, trace));
        const Array by_frame = permute(o.temporal, {0, 2, 1, 3});
        o.spatial = add(o.temporal, permute(spatial_(by_frame, g_s, trace), {0, 2, 1, 3}));
        o.out = add(o.spatial, ffn_(o.spatial));
        return o;
    }

    [[nodiscard]] const LayerNorm& norm() const { return norm_; }
    [[nodiscard]] const GraphAttention& temporal() const { return temporal_; }
    [[nodiscard]] const GraphAttention& spatial() const { return spatial_; }
    [[nodiscard]] const FeedForward& ffn() const { return ffn_; }

private:
    LayerNorm norm_;
    GraphAttention temporal_;
    GraphAttention spatial_;
    FeedForward ffn_;
};

} // namespace gah
