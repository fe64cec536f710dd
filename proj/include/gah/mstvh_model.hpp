#pragma once

#include <string>
#include <vector>

#include "gah/attention.hpp"
#include "gah/losses.hpp"
#include "gah/model.hpp"
#include "gah/synth_frontend.hpp"

namespace gah {

struct MultiFocusOutput {
    std::vector<Array> h;               // per layer [B, K]
    std::vector<Array> b;               // per layer [B, K], entries +-1
    std::vector<Array> activity_logits; // per layer [B, A]
    Array action_logits;                // [B, N, C_act]
    Array recon;                        // [B, N, T, D_in]
};

/**
 * M-STVH: vectorizer, a stack of MSF layers (object-focused then group-focused
 * attention), one hash head and activity classifier per layer, an action head
 * on the last layer and a decoder that reconstructs the input features from
 * the first layer's output.
 */
class MstvhModel {
public:
    explicit MstvhModel(ModelConfig config) : config_(std::move(config))
    {
        config_.validate();
        if (config_.kind != ModelKind::mstvh) {
            throw std::invalid_argument("MstvhModel built from a non-M-STVH config");
        }
        Rng rng(config_.seed);
        const std::size_t d = config_.dim;
        auto w = store_.uniform("vectorizer.weight", {config_.input_dim, d}, config_.input_dim, rng);
        auto b = store_.constant("vectorizer.bias", {d}, 0.0);
        vectorizer_ = Vectorizer(w, b);
        for (std::size_t i = 0; i < config_.layers; ++i) {
            const std::string name = "msf." + std::to_string(i);
            layers_.emplace_back(store_, name, d, config_.frames, "w_o", "w_g", rng);
            hash_.emplace_back(store_, "hash." + std::to_string(i), d, config_.bits, rng);
            classifiers_.emplace_back(store_, "activity." + std::to_string(i), config_.bits, config_.activities, rng);
        }
        action_ = Affine(store_, "action", d, config_.actions, rng);
        decoder_ = Affine(store_, "decoder", d, config_.input_dim, rng);
        relation_ = RelationEncoder(store_, "relation", config_.actions, config_.bits, rng);
    }

    [[nodiscard]] const ModelConfig& config() const { return config_; }
    [[nodiscard]] const ParameterStore& parameters() const { return store_; }
    [[nodiscard]] const std::vector<FusionLayer>& layers() const { return layers_; }
    [[nodiscard]] const Vectorizer& vectorizer() const { return vectorizer_; }
    [[nodiscard]] const std::vector<Affine>& hash_heads() const { return hash_; }
    [[nodiscard]] const std::vector<Affine>& activity_heads() const { return classifiers_; }
    [[nodiscard]] const Affine& action_head() const { return action_; }
    [[nodiscard]] const Affine& decoder() const { return decoder_; }
    [[nodiscard]] const RelationEncoder& relation_encoder() const { return relation_; }

    [[nodiscard]] MultiFocusOutput forward(const Batch& batch, Mode mode, AttentionTrace* trace = nullptr) const
    {
        check_batch(config_, batch);
        std::vector<FusionOutput> outs;
        const Array f = vectorizer_(batch.features);
        const Array last = run_fusion_stack(layers_, f, batch.g_t, batch.g_s, &outs, trace);
        MultiFocusOutput o;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            Array h = tanh(hash_[i](pool_objects_frames(outs[i].out)));
            Array b = sign(h);
            o.activity_logits.push_back(classifiers_[i](mode == Mode::train ? h : b));
            o.h.push_back(std::move(h));
            o.b.push_back(std::move(b));
        }
        o.action_logits = action_(mean(last, 2));
        o.recon = decoder_(outs.front().out);
        return o;
    }

    /**
     * L_cls + (mu1 L_q + mu2 L_H) / B + mu3 L_recon. L_q and L_H act on the last
     * layer's code only, like the action head; L_H needs B >= 2 (zero otherwise).
     */
    [[nodiscard]] LossReport loss(const Batch& batch, const LossWeights& weights) const
    {
        const MultiFocusOutput o = forward(batch, Mode::train);
        const auto w = weights.layer_weights_for(config_.layers);
        if (w.size() != config_.layers) {
            throw std::invalid_argument("layer weight count does not match the number of layers");
        }
        MstvhLossParts p;
        p.activity = ce_activity_layered(o.activity_logits, batch.activity, w);
        p.action = ce_action(o.action_logits, batch.actions);
        p.quantization = quantization_loss(o.h.back(), o.b.back());
        p.contrastive = batch.size() >= 2 ? contrastive_loss(relation_(o.action_logits, batch.g_s), o.h.back())
                                          : Array::scalar(0.0);
        p.reconstruction = recon_loss(batch.features, o.recon);
        LossReport r;
        r.total = total_mstvh(p, weights, batch.size());
        r.parts = {{"activity", p.activity.item()},         {"action", p.action.item()},
                   {"quantization", p.quantization.item()}, {"contrastive", p.contrastive.item()},
                   {"reconstruction", p.reconstruction.item()}, {"total", r.total.item()}};
        r.correct = count_correct(o.activity_logits.back(), batch.activity);
        return r;
    }

private:
    ModelConfig config_;
    ParameterStore store_;
    Vectorizer vectorizer_;
    std::vector<FusionLayer> layers_;
    std::vector<Affine> hash_;
    std::vector<Affine> classifiers_;
    Affine action_;
    Affine decoder_;
    RelationEncoder relation_;
};

} // namespace gah
