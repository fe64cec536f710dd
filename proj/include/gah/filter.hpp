#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "gah/codes.hpp"
#include "gah/diffcore.hpp"
#include "gah/io.hpp"
#include "gah/optim.hpp"
#include "gah/parallel.hpp"

namespace gah {

inline constexpr double kFilterSigmaFloor = 1e-8;

/**
 * K x K matrix mapping a layer's code to the layer before it, row-major.
 * Fitting produces real entries; the stored form is binary (0/1 entries).
 */
struct FilterMatrix {
    std::size_t bits = 0;
    std::vector<double> f;

    static FilterMatrix identity(std::size_t k)
    {
        FilterMatrix m{k, std::vector<double>(k * k, 0.0)};
        for (std::size_t i = 0; i < k; ++i) {
            m.f[i * k + i] = 1.0;
        }
        return m;
    }

    [[nodiscard]] double at(std::size_t i, std::size_t j) const { return f[i * bits + j]; }

    void validate() const
    {
        if (f.size() != bits * bits) {
            throw std::invalid_argument("filter holds " + std::to_string(f.size()) + " entries, expected " +
                                        std::to_string(bits * bits));
        }
        for (double v : f) {
            if (!std::isfinite(v)) {
                throw NumericError("filter matrix has a non-finite entry");
            }
        }
    }

    [[nodiscard]] bool is_binary() const
    {
        return std::ranges::all_of(f, [](double v) { return v == 0.0 || v == 1.0; });
    }

    bool operator==(const FilterMatrix&) const = default;
};

/// Entry-wise (f >= threshold) as a 0/1 matrix.
inline FilterMatrix binarize(const FilterMatrix& relaxed, double threshold)
{
    FilterMatrix out{relaxed.bits, std::vector<double>(relaxed.f.size())};
    std::ranges::transform(relaxed.f, out.f.begin(), [&](double v) { return v >= threshold ? 1.0 : 0.0; });
    return out;
}

/// sign((F b - mean) / std) over the vector's own statistics, sign(0) = +1.
inline std::vector<std::int8_t> derive_code(std::span<const std::int8_t> deeper, const FilterMatrix& filter)
{
    const std::size_t k = filter.bits;
    if (deeper.size() != k) {
        throw std::invalid_argument("code has " + std::to_string(deeper.size()) + " bits, filter expects " +
                                    std::to_string(k));
    }
    std::vector<double> z(k, 0.0);
    double mean = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            z[i] += filter.at(i, j) * deeper[j];
        }
        mean += z[i];
    }
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (double v : z) {
        var += (v - mean) * (v - mean);
    }
    const double sigma = std::max(std::sqrt(var / static_cast<double>(k)), kFilterSigmaFloor);
    std::vector<std::int8_t> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        out[i] = (z[i] - mean) / sigma >= 0.0 ? 1 : -1;
    }
    return out;
}

/// Rebuilds `layers` layers from the stored deepest layer by applying the filter repeatedly.
/// The last layer of the result is the stored code itself.
inline CodeBook derive_layers(const CodeBook& deepest, const FilterMatrix& filter, std::size_t layers)
{
    if (deepest.layers() != 1) {
        throw std::invalid_argument("derive_layers expects a single-layer code book");
    }
    if (deepest.bits() != filter.bits) {
        throw std::invalid_argument("code book has " + std::to_string(deepest.bits()) + " bits, filter expects " +
                                    std::to_string(filter.bits));
    }
    CodeBook out(deepest.count(), layers, deepest.bits());
    parallel_for(deepest.count(), [&](std::size_t m) {
        std::vector<std::int8_t> code(deepest.code(m, 0).begin(), deepest.code(m, 0).end());
        for (std::size_t l = layers; l-- > 0;) {
            std::ranges::copy(code, out.code(m, l).begin());
            if (l > 0) {
                code = derive_code(code, filter);
            }
        }
    });
    return out;
}

struct FilterFitOptions {
    std::size_t steps = 500;
    double learning_rate = 1e-2;
    std::size_t patience = 50;       // steps without relative improvement before stopping
    double min_improvement = 1e-9;
    std::size_t thresholds = 64;     // quantiles of the relaxed entries tried when binarizing, besides top-jK cuts
};

struct FilterFit {
    FilterMatrix filter;    // binary
    FilterMatrix relaxed;   // real-valued optimum before binarization
    double threshold = 0.0;
    double loss = 0.0;      // final relaxed objective, mean over entries
    double bit_error = 0.0; // fraction of target bits the binary filter gets wrong
    std::size_t steps = 0;
    bool underdetermined = false;   // fewer codes than bits
};

namespace detail {

/// Fraction of entries where sign(normalize(deeper F^T)) differs from target; rows are codes.
inline double filter_bit_error(const Array& deeper, const Array& target, const FilterMatrix& filter)
{
    const std::size_t k = filter.bits;
    const Array z = matmul(deeper, transpose(Array({k, k}, filter.f)));
    const auto zd = z.data();
    const auto td = target.data();
    const std::size_t rows = deeper.dim(0);
    std::size_t wrong = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = zd.subspan(r * k, k);
        double mean = 0.0;
        for (double v : row) {
            mean += v;
        }
        mean /= static_cast<double>(k);
        double var = 0.0;
        for (double v : row) {
            var += (v - mean) * (v - mean);
        }
        const double sigma = std::max(std::sqrt(var / static_cast<double>(k)), kFilterSigmaFloor);
        for (std::size_t i = 0; i < k; ++i) {
            const double bit = (row[i] - mean) / sigma >= 0.0 ? 1.0 : -1.0;
            wrong += bit != td[r * k + i];
        }
    }
    return static_cast<double>(wrong) / static_cast<double>(rows * k);
}

} // namespace detail

/**
 * Fits one shared F minimising sum over adjacent layers of ||normalize(F b_t) - b_(t-1)||^2 with the sign
 * relaxed away (Adam from the identity), then binarizes it at the candidate threshold with the fewest wrong bits.
 */
inline FilterFit fit_filter(const CodeBook& codes, const FilterFitOptions& options = {})
{
    const std::size_t k = codes.bits();
    const std::size_t pairs = codes.layers() - 1;
    if (codes.layers() < 2) {
        throw std::invalid_argument("fit_filter needs at least two layers");
    }
    if (codes.count() == 0) {
        throw std::invalid_argument("fit_filter needs at least one code");
    }
    const std::size_t rows = codes.count() * pairs;
    std::vector<double> x(rows * k);
    std::vector<double> y(rows * k);
    for (std::size_t m = 0; m < codes.count(); ++m) {
        for (std::size_t p = 0; p < pairs; ++p) {
            const std::size_t r = m * pairs + p;
            std::ranges::copy(codes.code(m, p + 1), x.begin() + static_cast<std::ptrdiff_t>(r * k));
            std::ranges::copy(codes.code(m, p), y.begin() + static_cast<std::ptrdiff_t>(r * k));
        }
    }
    const Array deeper({rows, k}, std::move(x));
    const Array target({rows, k}, std::move(y));
    const Parameter f("filter", {k, k}, FilterMatrix::identity(k).f);

    const auto objective = [&] {
        const Array z = matmul(deeper, transpose(f.value()));
        const Array centered = z - mean(z, 1, true);
        const Array sigma = sqrt(add_scalar(mean(square(centered), 1, true), kFilterSigmaFloor * kFilterSigmaFloor));
        return mean_all(square(centered / sigma - target));
    };

    Adam adam({f});
    FilterFit fit;
    fit.underdetermined = codes.count() < k;
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    for (std::size_t step = 0; step < options.steps; ++step) {
        adam.zero_grad();
        const Array loss = objective();
        if (!std::isfinite(loss.item())) {
            throw NumericError("filter fit diverged at step " + std::to_string(step));
        }
        if (loss.item() < best * (1.0 - options.min_improvement)) {
            best = loss.item();
            stale = 0;
        } else if (++stale >= options.patience) {
            break;
        }
        loss.backward();
        adam.step(options.learning_rate);
        fit.steps = step + 1;
    }
    fit.relaxed = FilterMatrix{k, f.value().to_vector()};
    fit.loss = objective().item();

    std::vector<double> sorted = fit.relaxed.f;
    std::ranges::sort(sorted);
    std::vector<double> candidates;
    const std::size_t n = std::max<std::size_t>(options.thresholds, 1);
    for (std::size_t i = 0; i < n; ++i) {
        candidates.push_back(sorted[std::min(sorted.size() - 1, (i * sorted.size() + sorted.size() / 2) / n)]);
    }
    for (std::size_t j = 1; j <= k; ++j) {
        candidates.push_back(sorted[sorted.size() - j * k]); // keeps the j*k largest entries
    }
    std::ranges::sort(candidates);
    const auto [first, last] = std::ranges::unique(candidates);
    candidates.erase(first, last);
    fit.bit_error = std::numeric_limits<double>::infinity();
    for (double t : candidates) {
        FilterMatrix bin = binarize(fit.relaxed, t);
        const double e = detail::filter_bit_error(deeper, target, bin);
        if (e < fit.bit_error) {
            fit.bit_error = e;
            fit.threshold = t;
            fit.filter = std::move(bin);
        }
    }
    return fit;
}

/// Storage of the compact form (deepest codes plus filter) over storing every layer.
inline double compression_ratio(std::size_t count, std::size_t bits, std::size_t layers)
{
    if (count == 0 || bits == 0 || layers == 0) {
        throw std::invalid_argument("compression_ratio arguments must be positive");
    }
    const double m = static_cast<double>(count);
    const double k = static_cast<double>(bits);
    const double y = static_cast<double>(layers);
    return (m * k + k * k) / (m * y * k);
}

/// Payload bytes of a filter file: one bit per entry.
inline std::size_t filter_payload_bytes(std::size_t bits) { return (bits * bits + 7) / 8; }

// Filter file: "GAHF", K u16, then the K^2 entries row-major, one bit each, entry i in
// byte i / 8 at bit i % 8 (LSB first); a set bit is entry 1.

inline void write_filter(const std::filesystem::path& path, const FilterMatrix& filter)
{
    filter.validate();
    if (!filter.is_binary()) {
        throw std::invalid_argument("only binary filters can be written");
    }
    if (filter.bits > std::numeric_limits<std::uint16_t>::max()) {
        throw std::invalid_argument("filter dimension exceeds the file header range");
    }
    std::vector<std::uint8_t> bytes(filter_payload_bytes(filter.bits), 0);
    for (std::size_t i = 0; i < filter.f.size(); ++i) {
        if (filter.f[i] == 1.0) {
            bytes[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
        }
    }
    std::ofstream out = io::open_out(path);
    io::put_magic(out, "GAHF");
    io::put_u16(out, static_cast<std::uint16_t>(filter.bits));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

inline FilterMatrix read_filter(const std::filesystem::path& path)
{
    std::ifstream in = io::open_in(path);
    io::expect_magic(in, "GAHF");
    FilterMatrix filter;
    filter.bits = io::get_u16(in, "filter size");
    std::vector<std::uint8_t> bytes(filter_payload_bytes(filter.bits));
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw FormatError(path.string() + ": truncated filter payload");
    }
    io::expect_eof(in, "filter file");
    filter.f.resize(filter.bits * filter.bits);
    for (std::size_t i = 0; i < filter.f.size(); ++i) {
        filter.f[i] = (bytes[i / 8] >> (i % 8)) & 1u ? 1.0 : 0.0;
    }
    return filter;
}

} // namespace gah
