#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "gah/diffcore.hpp"
#include "gah/random.hpp"

namespace gah {

/// Ordered, uniquely named parameters of one model.
class ParameterStore {
public:
    Parameter add(const std::string& name, Shape shape, std::vector<double> init)
    {
        if (index_.contains(name)) {
            throw std::invalid_argument("duplicate parameter name " + name);
        }
        index_.emplace(name, params_.size());
        params_.emplace_back(name, std::move(shape), std::move(init));
        return params_.back();
    }

    /// Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Parameter uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng)
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> v(numel(shape));
        for (double& x : v) {
            x = rng.uniform(-bound, bound);
        }
        return add(name, std::move(shape), std::move(v));
    }

    Parameter constant(const std::string& name, Shape shape, double value)
    {
        const std::size_t n = numel(shape);
        return add(name, std::move(shape), std::vector<double>(n, value));
    }

    [[nodiscard]] const std::vector<Parameter>& all() const { return params_; }

    [[nodiscard]] const Parameter& get(const std::string& name) const
    {
        const auto it = index_.find(name);
        if (it == index_.end()) {
            throw std::out_of_range("no parameter named " + name);
        }
        return params_[it->second];
    }

    [[nodiscard]] std::size_t scalar_count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_) {
            n += p.size();
        }
        return n;
    }

    void zero_grad() const
    {
        for (const auto& p : params_) {
            p.zero_grad();
        }
    }

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// y = x W + b over the last axis; W is in x out.
struct Affine {
    Parameter weight;
    Parameter bias;

    Affine() = default;
    Affine(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : weight(store.uniform(name + ".weight", {in, out}, in, rng)), bias(store.constant(name + ".bias", {out}, 0.0))
    {
    }

    [[nodiscard]] Array operator()(const Array& x) const { return add(matmul(x, weight.value()), bias.value()); }
};

struct LayerNorm {
    Parameter gain;
    Parameter bias;

    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim)
        : gain(store.constant(name + ".gain", {dim}, 1.0)), bias(store.constant(name + ".bias", {dim}, 0.0))
    {
    }

    [[nodiscard]] Array operator()(const Array& x) const { return layer_norm(x, -1, gain, bias); }
};

/// Position-wise feed-forward block relu(x Wa + ba) Wb + bb with hidden width 2d.
struct FeedForward {
    Affine expand;
    Affine project;

    FeedForward() = default;
    FeedForward(ParameterStore& store, const std::string& name, std::size_t dim, Rng& rng)
        : expand(store, name + ".expand", dim, 2 * dim, rng), project(store, name + ".project", 2 * dim, dim, rng)
    {
    }

    [[nodiscard]] Array operator()(const Array& x) const { return project(relu(expand(x))); }
};

/// Mean over the object and frame axes of a [B, N, T, d] tensor.
inline Array pool_objects_frames(const Array& f) { return mean(mean(f, 2), 1); }

} // namespace gah
