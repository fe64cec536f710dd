#pragma once

#include <string>
#include <vector>

#include "gah/attention.hpp"
#include "gah/losses.hpp"
#include "gah/model.hpp"
#include "gah/synth_frontend.hpp"

namespace gah {

struct StvhOutput {
    Array h;               // [B, K] relaxed code
    Array b;               // [B, K] sign(h), entries +-1
    Array activity_logits; // [B, A]
    Array action_logits;   // [B, N, C_act]
    Array f_t;             // [B, N, T, d] temporal path of the last layer
    Array f_s;             // [B, N, T, d] spatial path of the last layer, through its feed-forward block
};

/**
 * STVH: vectorizer, a stack of PVF fusion layers, and the hash, activity and
 * action heads. The code is h = tanh(mean over objects and frames of F_h(f_S)).
 */
class StvhModel {
public:
    explicit StvhModel(ModelConfig config) : config_(std::move(config))
    {
        config_.validate();
        if (config_.kind != ModelKind::stvh) {
            throw std::invalid_argument("StvhModel built from a non-STVH config");
        }
        Rng rng(config_.seed);
        const std::size_t d = config_.dim;
        auto w = store_.uniform("vectorizer.weight", {config_.input_dim, d}, config_.input_dim, rng);
        auto b = store_.constant("vectorizer.bias", {d}, 0.0);
        vectorizer_ = Vectorizer(w, b);
        for (std::size_t i = 0; i < config_.layers; ++i) {
            layers_.emplace_back(store_, "pvf." + std::to_string(i), d, config_.frames, "w1", "w1", rng);
        }
        hash_ = Affine(store_, "hash", d, config_.bits, rng);
        classifier_ = Affine(store_, "activity", config_.bits, config_.activities, rng);
        action_ = Affine(store_, "action", d, config_.actions, rng);
        relation_ = RelationEncoder(store_, "relation", config_.actions, config_.bits, rng);
    }

    [[nodiscard]] const ModelConfig& config() const { return config_; }
    [[nodiscard]] const ParameterStore& parameters() const { return store_; }
    [[nodiscard]] const std::vector<FusionLayer>& layers() const { return layers_; }
    [[nodiscard]] const Vectorizer& vectorizer() const { return vectorizer_; }
    [[nodiscard]] const Affine& hash_head() const { return hash_; }
    [[nodiscard]] const Affine& activity_head() const { return classifier_; }
    [[nodiscard]] const Affine& action_head() const { return action_; }
    [[nodiscard]] const RelationEncoder& relation_encoder() const { return relation_; }

    [[nodiscard]] StvhOutput forward(const Batch& batch, Mode mode, AttentionTrace* trace = nullptr) const
    {
        check_batch(config_, batch);
        std::vector<FusionOutput> outs;
        const Array f = vectorizer_(batch.features);
        (void)run_fusion_stack(layers_, f, batch.g_t, batch.g_s, &outs, trace);
        StvhOutput o;
        o.f_t = outs.back().temporal;
        o.f_s = outs.back().out;
        o.h = tanh(hash_(pool_objects_frames(o.f_s)));
        o.b = sign(o.h);
        o.activity_logits = classifier_(mode == Mode::train ? o.h : o.b);
        o.action_logits = action_(mean(o.f_t, 2));
        return o;
    }

    /// Total loss L_cls + (lambda1 L_q + lambda2 L_con) / B; the contrastive term needs B >= 2 and is zero otherwise.
    [[nodiscard]] LossReport loss(const Batch& batch, const LossWeights& weights) const
    {
        const StvhOutput o = forward(batch, Mode::train);
        StvhLossParts p;
        p.activity = ce_activity(o.activity_logits, batch.activity);
        p.action = ce_action(o.action_logits, batch.actions);
        p.quantization = quantization_loss(o.h, o.b);
        p.contrastive = batch.size() >= 2 ? contrastive_loss(relation_(o.action_logits, batch.g_s), o.h)
                                          : Array::scalar(0.0);
        LossReport r;
        r.total = total_stvh(p, weights, batch.size());
        r.parts = {{"activity", p.activity.item()},
                   {"action", p.action.item()},
                   {"quantization", p.quantization.item()},
                   {"contrastive", p.contrastive.item()},
                   {"total", r.total.item()}};
        r.correct = count_correct(o.activity_logits, batch.activity);
        return r;
    }

private:
    ModelConfig config_;
    ParameterStore store_;
    Vectorizer vectorizer_;
    std::vector<FusionLayer> layers_;
    Affine hash_;
    Affine classifier_;
    Affine action_;
    RelationEncoder relation_;
};

} // namespace gah
