#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gah/diffcore.hpp"
#include "json.hpp"

namespace gah {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline void to_json(nlohmann::json& j, const AdamOptions& o)
{
    j = {{"kind", "adam"}, {"betas", {o.beta1, o.beta2}}, {"eps", o.eps}};
}

inline void from_json(const nlohmann::json& j, AdamOptions& o)
{
    if (j.value("kind", std::string("adam")) != "adam") {
        throw std::invalid_argument("only the adam optimizer is supported");
    }
    if (j.contains("betas")) {
        o.beta1 = j.at("betas").at(0).get<double>();
        o.beta2 = j.at("betas").at(1).get<double>();
    }
    o.eps = j.value("eps", o.eps);
}

/// Adam with bias correction over a fixed parameter list.
class Adam {
public:
    explicit Adam(std::vector<Parameter> params, AdamOptions options = {})
        : params_(std::move(params)), options_(options)
    {
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    /// Applies one update from the accumulated gradients. A non-finite gradient throws before anything changes.
    void step(double lr)
    {
        for (const auto& p : params_) {
            for (double g : p.grad()) {
                if (!std::isfinite(g)) {
                    throw NumericError("non-finite gradient in parameter " + p.name());
                }
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto value = params_[i].mutable_data();
            auto grad = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < value.size(); ++j) {
                m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * grad[j];
                v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * grad[j] * grad[j];
                value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
            }
        }
    }

    void zero_grad() const
    {
        for (const auto& p : params_) {
            p.zero_grad();
        }
    }

    [[nodiscard]] std::size_t steps() const { return t_; }
    [[nodiscard]] const std::vector<Parameter>& parameters() const { return params_; }

private:
    std::vector<Parameter> params_;
    AdamOptions options_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

/// Step-decay schedule: the rate of the latest key not exceeding the (1-based) epoch.
class LrSchedule {
public:
    LrSchedule() = default;
    explicit LrSchedule(std::map<std::size_t, double> points) : points_(std::move(points)) { validate(); }

    void validate() const
    {
        if (points_.empty() || points_.begin()->first != 1) {
            throw std::invalid_argument("learning-rate schedule must start at epoch 1");
        }
        for (const auto& [epoch, rate] : points_) {
            if (!(rate > 0.0) || !std::isfinite(rate)) {
                throw std::invalid_argument("learning rate at epoch " + std::to_string(epoch) + " must be positive");
            }
        }
    }

    [[nodiscard]] double at(std::size_t epoch) const
    {
        auto it = points_.upper_bound(epoch);
        if (it == points_.begin()) {
            throw std::out_of_range("epoch " + std::to_string(epoch) + " precedes the schedule");
        }
        return std::prev(it)->second;
    }

    [[nodiscard]] const std::map<std::size_t, double>& points() const { return points_; }

private:
    std::map<std::size_t, double> points_{{1, 1e-3}, {11, 5e-4}, {21, 1e-4}};
};

// Serialized as an object keyed by epoch: {"1": 0.001, "11": 0.0005}. JSON object keys sort as strings,
// so order is restored numerically here.
inline void to_json(nlohmann::json& j, const LrSchedule& s)
{
    j = nlohmann::json::object();
    for (const auto& [epoch, rate] : s.points()) {
        j[std::to_string(epoch)] = rate;
    }
}

inline void from_json(const nlohmann::json& j, LrSchedule& s)
{
    std::map<std::size_t, double> points;
    for (const auto& [key, value] : j.items()) {
        std::size_t pos = 0;
        unsigned long epoch = 0;
        try {
            epoch = std::stoul(key, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != key.size() || epoch == 0) {
            throw std::invalid_argument("learning-rate schedule key '" + key + "' is not a positive epoch");
        }
        points[epoch] = value.get<double>();
    }
    s = LrSchedule(std::move(points));
}

} // namespace gah
