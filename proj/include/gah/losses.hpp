#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gah/diffcore.hpp"
#include "gah/layers.hpp"
#include "json.hpp"

namespace gah {

struct LossWeights {
    double lambda1 = 0.1;       // STVH quantization
    double lambda2 = 0.5;       // STVH contrastive
    double mu1 = 0.1;           // M-STVH quantization
    double mu2 = 0.5;           // M-STVH contrastive
    double mu3 = 0.01;          // M-STVH reconstruction
    double action_weight = 0.5; // L_cls = L_acty + action_weight * L_action
    std::vector<double> layer_weights; // per-layer activity weights; empty means the default ramp
    std::size_t hash_warmup_epochs = 10; // quantization/contrastive terms are off for these epochs

    /// Linear ramp from 0 (first layer, left to the appearance content) to 1 (last layer).
    static std::vector<double> default_layer_weights(std::size_t layers)
    {
        std::vector<double> w(layers, 1.0);
        for (std::size_t i = 0; i + 1 < layers; ++i) {
            w[i] = static_cast<double>(i) / static_cast<double>(layers - 1);
        }
        return w;
    }

    [[nodiscard]] std::vector<double> layer_weights_for(std::size_t layers) const
    {
        return layer_weights.empty() ? default_layer_weights(layers) : layer_weights;
    }

    /// Weights in effect during a 1-based epoch.
    [[nodiscard]] LossWeights at_epoch(std::size_t epoch) const
    {
        LossWeights w = *this;
        if (epoch <= hash_warmup_epochs) {
            w.lambda1 = w.lambda2 = w.mu1 = w.mu2 = 0.0;
        }
        return w;
    }

    void validate(std::size_t layers) const
    {
        for (double v : {lambda1, lambda2, mu1, mu2, mu3, action_weight}) {
            if (!(v >= 0.0) || !std::isfinite(v)) {
                throw std::invalid_argument("loss weights must be finite and nonnegative");
            }
        }
        const auto w = layer_weights_for(layers);
        if (w.size() != layers) {
            throw std::invalid_argument("expected " + std::to_string(layers) + " layer weights, got " +
                                        std::to_string(w.size()));
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (!(w[i] >= 0.0) || !std::isfinite(w[i]) || (i > 0 && w[i] < w[i - 1])) {
                throw std::invalid_argument("layer weights must be nonnegative and nondecreasing");
            }
        }
    }

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, lambda1, lambda2, mu1, mu2, mu3, action_weight,
                                                layer_weights, hash_warmup_epochs)

/// Mean over rows of -log softmax(logits)[label]; logits is [B, A].
inline Array ce_activity(const Array& logits, std::span<const std::size_t> labels)
{
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw ShapeError("ce_activity: logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t rows = logits.dim(0);
    const std::size_t classes = logits.dim(1);
    std::vector<double> pick(rows * classes, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        if (labels[i] >= classes) {
            throw std::out_of_range("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) +
                                    ")");
        }
        pick[i * classes + labels[i]] = -1.0 / static_cast<double>(rows);
    }
    return sum_all(mul(log_softmax(logits, -1), Array(logits.shape(), std::move(pick))));
}

/// Per-object action cross-entropy; logits [B, N, C], labels row-major B x N.
inline Array ce_action(const Array& logits, std::span<const std::size_t> labels)
{
    if (logits.rank() != 3) {
        throw ShapeError("ce_action expects [B, N, C] logits, got " + to_string(logits.shape()));
    }
    return ce_activity(reshape(logits, {logits.dim(0) * logits.dim(1), logits.dim(2)}), labels);
}

/// Weighted sum over layers of ce_activity.
inline Array ce_activity_layered(const std::vector<Array>& per_layer, std::span<const std::size_t> labels,
                                 std::span<const double> weights)
{
    if (per_layer.size() != weights.size() || per_layer.empty()) {
        throw std::invalid_argument("ce_activity_layered: " + std::to_string(per_layer.size()) + " layers vs " +
                                    std::to_string(weights.size()) + " weights");
    }
    Array total = scale(ce_activity(per_layer[0], labels), weights[0]);
    for (std::size_t i = 1; i < per_layer.size(); ++i) {
        total = add(total, scale(ce_activity(per_layer[i], labels), weights[i]));
    }
    return total;
}

/**
 * Sum over all ordered pairs (i, j) of the batch, diagonal included, of
 * exp(|h_i.h_j - b_i.b_j| / K). b is treated as a constant.
 */
inline Array quantization_loss(const Array& h, const Array& b)
{
    if (h.rank() != 2 || h.shape() != b.shape()) {
        throw ShapeError("quantization_loss: h " + to_string(h.shape()) + " vs b " + to_string(b.shape()));
    }
    const Array bc = detach(b);
    const Array gap = abs(sub(matmul(h, transpose(h)), matmul(bc, transpose(bc))));
    return sum_all(exp(scale(gap, 1.0 / static_cast<double>(h.dim(1)))));
}

/**
 * Symmetric-normalized adjacency D^-1/2 (A + I) D^-1/2 with A the time mean of
 * g_s clamped at zero. g_s is [B, T, N, N]; the result [B, N, N] is constant.
 */
inline Array relation_adjacency(const Array& g_s)
{
    if (g_s.rank() != 4 || g_s.dim(2) != g_s.dim(3)) {
        throw ShapeError("relation_adjacency expects [B, T, N, N], got " + to_string(g_s.shape()));
    }
    const std::size_t batch = g_s.dim(0);
    const std::size_t frames = g_s.dim(1);
    const std::size_t n = g_s.dim(2);
    const auto g = g_s.data();
    std::vector<double> out(batch * n * n, 0.0);
    std::vector<double> deg(n);
    for (std::size_t b = 0; b < batch; ++b) {
        double* a = out.data() + b * n * n;
        for (std::size_t t = 0; t < frames; ++t) {
            for (std::size_t k = 0; k < n * n; ++k) {
                a[k] += g[(b * frames + t) * n * n + k] / static_cast<double>(frames);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            deg[i] = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                double& v = a[i * n + j];
                v = std::max(v, 0.0) + (i == j ? 1.0 : 0.0);
                deg[i] += v;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                a[i * n + j] /= std::sqrt(deg[i] * deg[j]);
            }
        }
    }
    return Array({batch, n, n}, std::move(out));
}

/**
 * Two-layer graph convolution over the objects: node features are the
 * softmax of the action logits, each layer propagates with the normalized
 * adjacency, applies an affine map and ReLU; nodes are mean-pooled and mapped
 * to K dims.
 */
class RelationEncoder {
public:
    RelationEncoder() = default;

    RelationEncoder(ParameterStore& store, const std::string& name, std::size_t actions, std::size_t bits, Rng& rng)
        : layer1_(store, name + ".gcn1", actions, bits, rng), layer2_(store, name + ".gcn2", bits, bits, rng),
          out_(store, name + ".out", bits, bits, rng)
    {
    }

    /// action_logits [B, N, C], g_s [B, T, N, N] -> [B, K].
    [[nodiscard]] Array operator()(const Array& action_logits, const Array& g_s) const
    {
        if (action_logits.rank() != 3 || g_s.rank() != 4 || g_s.dim(0) != action_logits.dim(0) ||
            g_s.dim(2) != action_logits.dim(1)) {
            throw ShapeError("relation_encode: action logits " + to_string(action_logits.shape()) +
                             " vs spatial graph " + to_string(g_s.shape()));
        }
        const Array adj = relation_adjacency(g_s);
        const Array x = softmax(action_logits, -1);
        const Array h1 = relu(layer1_(matmul(adj, x)));
        const Array h2 = relu(layer2_(matmul(adj, h1)));
        return out_(mean(h2, 1));
    }

    [[nodiscard]] const Affine& layer1() const { return layer1_; }
    [[nodiscard]] const Affine& layer2() const { return layer2_; }
    [[nodiscard]] const Affine& output() const { return out_; }

private:
    Affine layer1_;
    Affine layer2_;
    Affine out_;
};

inline Array relation_encode(const Array& action_logits, const Array& g_s, const RelationEncoder& encoder)
{
    return encoder(action_logits, g_s);
}

inline constexpr double kNormEps = 1e-12;

/**
 * With sim(x, y) = exp(x.y / (|x| |y|)):
 *
 *     sum_i log( sum_j [sim(a_i, b_j) + sim(a_j, b_i)] / sim(a_i, b_i) )
 *
 * Norms get 1e-12 added. a and b are [B, K] with B >= 2.
 */
inline Array contrastive_loss(const Array& a, const Array& b)
{
    if (a.rank() != 2 || a.shape() != b.shape()) {
        throw ShapeError("contrastive_loss: a " + to_string(a.shape()) + " vs b " + to_string(b.shape()));
    }
    if (a.dim(0) < 2) {
        throw std::invalid_argument("contrastive_loss needs a batch of at least 2");
    }
    auto all_zero = [](const Array& x) {
        return std::all_of(x.data().begin(), x.data().end(), [](double v) { return v == 0.0; });
    };
    if (all_zero(a) || all_zero(b)) {
        throw NumericError("contrastive_loss: degenerate all-zero input");
    }
    const Array an = div(a, add_scalar(sqrt(sum(square(a), 1, true)), kNormEps));
    const Array bn = div(b, add_scalar(sqrt(sum(square(b), 1, true)), kNormEps));
    const Array sim = exp(matmul(an, transpose(bn))); // sim[i][j] = sim(a_i, b_j)
    const Array numer = add(sum(sim, 1), sum(sim, 0));
    return sub(sum_all(log(numer)), sum_all(mul(an, bn)));
}

/// Mean squared error over all entries.
inline Array recon_loss(const Array& target, const Array& estimate)
{
    if (target.shape() != estimate.shape()) {
        throw ShapeError("recon_loss: " + to_string(target.shape()) + " vs " + to_string(estimate.shape()));
    }
    return mean_all(square(sub(target, estimate)));
}

struct StvhLossParts {
    Array activity;
    Array action;
    Array quantization;
    Array contrastive;
};

struct MstvhLossParts {
    Array activity; // layer-weighted
    Array action;
    Array quantization;
    Array contrastive;
    Array reconstruction;
};

/**
 * The classification terms are batch means while L_q and L_con are batch sums,
 * so the weighted hashing terms are divided by the batch size. This keeps the
 * hashing/classification balance the same as with per-sample summed
 * cross-entropy, independent of B.
 */
inline Array total_stvh(const StvhLossParts& p, const LossWeights& w, std::size_t batch)
{
    if (batch == 0) {
        throw std::invalid_argument("total_stvh: empty batch");
    }
    const double per = 1.0 / static_cast<double>(batch);
    Array cls = add(p.activity, scale(p.action, w.action_weight));
    return add(add(cls, scale(p.quantization, w.lambda1 * per)), scale(p.contrastive, w.lambda2 * per));
}

inline Array total_mstvh(const MstvhLossParts& p, const LossWeights& w, std::size_t batch)
{
    if (batch == 0) {
        throw std::invalid_argument("total_mstvh: empty batch");
    }
    const double per = 1.0 / static_cast<double>(batch);
    Array cls = add(p.activity, scale(p.action, w.action_weight));
    return add(add(add(cls, scale(p.quantization, w.mu1 * per)), scale(p.contrastive, w.mu2 * per)),
               scale(p.reconstruction, w.mu3));
}

} // namespace gah
