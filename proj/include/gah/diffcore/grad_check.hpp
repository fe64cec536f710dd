#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "gah/diffcore/array.hpp"

namespace gah {

/**
 * Compares reverse-mode gradients of a scalar function against central
 * differences and returns the worst relative error
 *
 *     |analytic - numeric| / (|analytic| + |numeric| + 1e-12)
 *
 * over every entry of every parameter. An entry whose absolute discrepancy is
 * below the rounding noise of the central difference itself,
 * 16 * machine-eps * max(1, |f|) / eps, counts as exact; without that floor a
 * gradient that is zero analytically reports an error near 1.
 *
 * `f` must rebuild its tape on each call. Parameter values are restored
 * before returning.
 */
inline double grad_check(const std::function<Array()>& f, std::span<const Parameter> params, double eps = 1e-5)
{
    if (!(eps > 0.0 && eps <= 1e-2)) {
        throw std::invalid_argument("grad_check: eps must lie in (0, 1e-2]");
    }
    for (const Parameter& p : params) {
        p.zero_grad();
    }
    const Array y = f();
    if (y.size() != 1) {
        throw ShapeError("grad_check: function must be scalar-valued, got shape " + to_string(y.shape()));
    }
    y.backward();
    const double noise_floor =
        16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(y.item())) / eps;

    double worst = 0.0;
    for (const Parameter& p : params) {
        const std::vector<double> analytic(p.grad().begin(), p.grad().end());
        auto values = p.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = f().item();
            values[i] = saved - eps;
            const double down = f().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double diff = std::fabs(analytic[i] - numeric);
            if (diff <= noise_floor) {
                continue;
            }
            worst = std::max(worst, diff / (std::fabs(analytic[i]) + std::fabs(numeric) + 1e-12));
        }
    }
    return worst;
}

inline double grad_check(const std::function<Array()>& f, const std::vector<Parameter>& params, double eps = 1e-5)
{
    return grad_check(f, std::span<const Parameter>(params), eps);
}

} // namespace gah
