#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gah/diffcore.hpp"
#include "gah/graph_builder.hpp"
#include "gah/random.hpp"
#include "json.hpp"

namespace gah {

/// Parameterized trajectory generators, one per activity class.
enum class ActivityTemplate {
    converge,   // objects on a ring move radially inward
    pulse,      // inward to the inner radius at mid-clip, then back out
    spiral_in,  // inward while rotating about the group center
    orbit,      // fixed radius, rotating
    disperse,   // radially outward
    spiral_out, // outward while rotating
    queue,      // scattered start, collinear line at the end
    cross,      // each object crosses to its mirror position through the center
    follow,     // single file along a straight path
};

inline constexpr std::array<std::pair<ActivityTemplate, std::string_view>, 9> kTemplateNames{{
    {ActivityTemplate::converge, "converge"},
    {ActivityTemplate::pulse, "pulse"},
    {ActivityTemplate::spiral_in, "spiral_in"},
    {ActivityTemplate::orbit, "orbit"},
    {ActivityTemplate::disperse, "disperse"},
    {ActivityTemplate::spiral_out, "spiral_out"},
    {ActivityTemplate::queue, "queue"},
    {ActivityTemplate::cross, "cross"},
    {ActivityTemplate::follow, "follow"},
}};

inline std::string_view to_string(ActivityTemplate t)
{
    for (const auto& [k, name] : kTemplateNames) {
        if (k == t) {
            return name;
        }
    }
    return "unknown";
}

inline ActivityTemplate parse_template(std::string_view name)
{
    for (const auto& [k, n] : kTemplateNames) {
        if (n == name) {
            return k;
        }
    }
    throw std::invalid_argument("unknown activity template \"" + std::string(name) + "\"");
}

/**
 * Synthetic scene generator settings.
 *
 * The default activity set shares one occupancy distribution (uniform angle,
 * time-uniform radius between the two radii), so pooled features carry no
 * activity information; the classes differ in motion speed, spatial shape and
 * whether the group returns to its start. The first templates of
 * kTemplateNames are used when only an activity count is given.
 */
struct GeneratorConfig {
    std::vector<std::string> activities{"converge", "pulse", "spiral_in", "orbit"};
    std::size_t appearances = 4; // P
    std::size_t actions = 3;     // C_act
    std::size_t objects = 4;     // N
    std::size_t frames = 8;      // T
    std::size_t channels = 32;   // d_v
    std::size_t map_width = 12;  // W'
    std::size_t map_height = 12; // H'
    double scene_width = 48.0;
    double scene_height = 48.0;
    double box_size = 6.0;
    double inner_radius = 6.0;
    double outer_radius = 18.0;
    double sweep = std::numbers::pi / 2.0; // rotation over the clip for rotating templates
    double position_noise = 0.3;
    double layout_strength = 1.0;
    double appearance_strength = 1.0;
    double action_strength = 1.0;
    double feature_noise = 0.5;
    std::uint64_t layout_seed = 7;

    [[nodiscard]] std::size_t activity_count() const { return activities.size(); }
    [[nodiscard]] std::size_t roi_dim() const { return channels * 25; }

    void validate() const
    {
        if (activities.size() < 2) {
            throw std::invalid_argument("generator config needs at least 2 activity templates");
        }
        for (const auto& a : activities) {
            (void)parse_template(a);
        }
        if (objects < 2 || frames < 2) {
            throw std::invalid_argument("generator config needs N >= 2 and T >= 2");
        }
        if (appearances < 1 || actions < 1 || channels < 1 || map_width < 2 || map_height < 2) {
            throw std::invalid_argument("generator config has an empty label space or map");
        }
        if (!(box_size > 0.0) || !(inner_radius > 0.0) || !(outer_radius > inner_radius)) {
            throw std::invalid_argument("generator config has invalid geometry");
        }
        const double reach = outer_radius + box_size;
        if (2.0 * reach > std::min(scene_width, scene_height)) {
            throw std::invalid_argument("generator config: outer radius does not fit in the scene");
        }
    }

    friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorConfig, activities, appearances, actions, objects, frames,
                                                channels, map_width, map_height, scene_width, scene_height, box_size,
                                                inner_radius, outer_radius, sweep, position_noise, layout_strength,
                                                appearance_strength, action_strength, feature_noise, layout_seed)

/// One synthetic clip. feature_maps has shape T x d_v x H' x W'.
struct SceneSample {
    BoxTrajectorySet traj;
    std::size_t activity_label = 0;
    std::vector<std::size_t> action_labels;
    std::size_t appearance_label = 0;
    Array feature_maps;
    std::uint64_t rng_seed = 0;
};

/**
 * Bilinear RoIAlign of one box from a d_v x H' x W' map into d_v x out x out.
 *
 * Scene coordinates map to continuous map coordinates as u = x * scale - 0.5,
 * so cell (i, j) has its value at its center. Each output bin averages a 2 x 2
 * regular grid of bilinear samples; samples outside the map clamp to the edge.
 */
inline std::vector<double> roi_align(std::span<const double> map, std::size_t channels, std::size_t height,
                                     std::size_t width, const Box& box, double scale_x, double scale_y,
                                     std::size_t out_size = 5)
{
    constexpr std::size_t kRatio = 2;
    std::vector<double> out(channels * out_size * out_size, 0.0);
    const double x0 = box.x1 * scale_x - 0.5;
    const double y0 = box.y1 * scale_y - 0.5;
    const double bin_w = box.width() * scale_x / static_cast<double>(out_size);
    const double bin_h = box.height() * scale_y / static_cast<double>(out_size);

    struct Tap {
        std::size_t lo;
        std::size_t hi;
        double frac;
    };
    auto tap = [](double u, std::size_t extent) {
        u = std::clamp(u, 0.0, static_cast<double>(extent - 1));
        const auto lo = static_cast<std::size_t>(std::floor(u));
        const std::size_t hi = std::min(lo + 1, extent - 1);
        return Tap{lo, hi, u - static_cast<double>(lo)};
    };

    const double norm = 1.0 / static_cast<double>(kRatio * kRatio);
    for (std::size_t by = 0; by < out_size; ++by) {
        for (std::size_t bx = 0; bx < out_size; ++bx) {
            for (std::size_t sy = 0; sy < kRatio; ++sy) {
                const Tap ty = tap(y0 + (static_cast<double>(by) + (static_cast<double>(sy) + 0.5) / kRatio) * bin_h, height);
                for (std::size_t sx = 0; sx < kRatio; ++sx) {
                    const Tap tx =
                        tap(x0 + (static_cast<double>(bx) + (static_cast<double>(sx) + 0.5) / kRatio) * bin_w, width);
                    const double w00 = (1 - ty.frac) * (1 - tx.frac);
                    const double w01 = (1 - ty.frac) * tx.frac;
                    const double w10 = ty.frac * (1 - tx.frac);
                    const double w11 = ty.frac * tx.frac;
                    for (std::size_t c = 0; c < channels; ++c) {
                        const double* m = map.data() + c * height * width;
                        const double v = w00 * m[ty.lo * width + tx.lo] + w01 * m[ty.lo * width + tx.hi] +
                                         w10 * m[ty.hi * width + tx.lo] + w11 * m[ty.hi * width + tx.hi];
                        out[(c * out_size + by) * out_size + bx] += norm * v;
                    }
                }
            }
        }
    }
    return out;
}

/// RoI features of every object in every frame, flattened to N x T x (d_v * 25).
inline Array extract_roi_features(const SceneSample& sample)
{
    const auto& shape = sample.feature_maps.shape();
    if (shape.size() != 4 || shape[0] != sample.traj.frames()) {
        throw ShapeError("feature maps must be T x d_v x H' x W', got " + to_string(shape));
    }
    const std::size_t t_count = shape[0];
    const std::size_t channels = shape[1];
    const std::size_t height = shape[2];
    const std::size_t width = shape[3];
    const double sx = static_cast<double>(width) / sample.traj.scene_width();
    const double sy = static_cast<double>(height) / sample.traj.scene_height();
    const std::size_t n = sample.traj.objects();
    const std::size_t dim = channels * 25;
    std::vector<double> out(n * t_count * dim);
    const auto maps = sample.feature_maps.data();
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t t = 0; t < t_count; ++t) {
            const auto roi = roi_align(maps.subspan(t * channels * height * width, channels * height * width), channels,
                                       height, width, sample.traj.at(j, t), sx, sy);
            std::copy(roi.begin(), roi.end(), out.begin() + static_cast<std::ptrdiff_t>((j * t_count + t) * dim));
        }
    }
    return Array({n, t_count, dim}, std::move(out));
}

/**
 * Scene generator with the fixed per-config "court": smooth layout fields per
 * channel and the appearance/action signature vectors. Built once, then
 * generate() is a pure function of the seed.
 */
class SceneGenerator {
public:
    explicit SceneGenerator(GeneratorConfig config) : config_(std::move(config))
    {
        config_.validate();
        for (const auto& a : config_.activities) {
            templates_.push_back(parse_template(a));
        }
        Rng rng(config_.layout_seed);
        const std::size_t cells = config_.map_width * config_.map_height;
        layout_.assign(config_.channels * cells, 0.0);
        const double cx = 0.5 * config_.scene_width;
        const double cy = 0.5 * config_.scene_height;
        for (std::size_t c = 0; c < config_.channels; ++c) {
            // Alternate radial and planar waves so the layout encodes distance from the center and direction.
            const double wavelength = rng.uniform(16.0, 64.0);
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double k = 2.0 * std::numbers::pi / wavelength;
            for (std::size_t y = 0; y < config_.map_height; ++y) {
                for (std::size_t x = 0; x < config_.map_width; ++x) {
                    const double px = (static_cast<double>(x) + 0.5) * config_.scene_width / config_.map_width;
                    const double py = (static_cast<double>(y) + 0.5) * config_.scene_height / config_.map_height;
                    double v = 0.0;
                    if (c % 2 == 0) {
                        v = std::cos(k * std::hypot(px - cx, py - cy) + phase);
                    } else {
                        v = std::cos(k * ((px - cx) * std::cos(angle) + (py - cy) * std::sin(angle)) + phase);
                    }
                    layout_[c * cells + y * config_.map_width + x] = config_.layout_strength * v;
                }
            }
        }
        appearance_sig_ = signatures(rng, config_.appearances, config_.channels, config_.appearance_strength);
        action_sig_ = signatures(rng, config_.actions, config_.channels, config_.action_strength);
    }

    [[nodiscard]] const GeneratorConfig& config() const { return config_; }

    [[nodiscard]] SceneSample generate(std::uint64_t seed) const
    {
        Rng rng(seed);
        SceneSample s;
        s.rng_seed = seed;
        s.activity_label = rng.below(templates_.size());
        s.appearance_label = rng.below(config_.appearances);
        for (std::size_t j = 0; j < config_.objects; ++j) {
            s.action_labels.push_back(rng.below(config_.actions));
        }
        s.traj = trajectories(templates_[s.activity_label], rng);
        s.feature_maps = render(s, rng);
        return s;
    }

private:
    static std::vector<double> signatures(Rng& rng, std::size_t count, std::size_t channels, double strength)
    {
        std::vector<double> sig(count * channels);
        for (double& v : sig) {
            v = strength * rng.normal();
        }
        return sig;
    }

    [[nodiscard]] BoxTrajectorySet trajectories(ActivityTemplate kind, Rng& rng) const
    {
        const auto& c = config_;
        const std::size_t n = c.objects;
        const std::size_t frames = c.frames;
        const double two_pi = 2.0 * std::numbers::pi;
        const double gx = 0.5 * c.scene_width + rng.uniform(-2.0, 2.0);
        const double gy = 0.5 * c.scene_height + rng.uniform(-2.0, 2.0);
        const double theta0 = rng.uniform(0.0, two_pi);
        const double dir = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double line = rng.uniform(0.0, std::numbers::pi);
        const double lx = std::cos(line);
        const double ly = std::sin(line);
        std::vector<double> angle(n);
        std::vector<double> radius(n);
        std::vector<double> size(n);
        for (std::size_t j = 0; j < n; ++j) {
            angle[j] = theta0 + two_pi * static_cast<double>(j) / static_cast<double>(n) + rng.uniform(-0.3, 0.3);
            radius[j] = rng.uniform(c.inner_radius, c.outer_radius);
            size[j] = c.box_size * rng.uniform(0.9, 1.1);
        }
        const double span = c.outer_radius - c.inner_radius;
        const double spacing = 2.0 * c.outer_radius / static_cast<double>(n);
        const double gap = std::min(1.2 * c.box_size, spacing);

        std::vector<Box> boxes;
        boxes.reserve(n * frames);
        for (std::size_t j = 0; j < n; ++j) {
            const double mid = static_cast<double>(j) - 0.5 * static_cast<double>(n - 1);
            for (std::size_t t = 0; t < frames; ++t) {
                const double s = static_cast<double>(t) / static_cast<double>(frames - 1);
                double r = 0.0;
                double th = angle[j];
                double x = 0.0;
                double y = 0.0;
                bool polar = true;
                switch (kind) {
                case ActivityTemplate::converge: r = c.outer_radius - span * s; break;
                case ActivityTemplate::disperse: r = c.inner_radius + span * s; break;
                case ActivityTemplate::pulse: {
                    // Folded time at frame midpoints keeps the mean radius equal to converge's.
                    const double u = std::abs(2.0 * (static_cast<double>(t) + 0.5) / static_cast<double>(frames) - 1.0);
                    r = c.inner_radius + span * u;
                    break;
                }
                case ActivityTemplate::spiral_in:
                    r = c.outer_radius - span * s;
                    th += dir * c.sweep * s;
                    break;
                case ActivityTemplate::spiral_out:
                    r = c.inner_radius + span * s;
                    th += dir * c.sweep * s;
                    break;
                case ActivityTemplate::orbit:
                    r = radius[j];
                    th += dir * c.sweep * s;
                    break;
                case ActivityTemplate::cross: r = c.outer_radius * (1.0 - 2.0 * s); break;
                case ActivityTemplate::queue: {
                    polar = false;
                    const double sx = radius[j] * std::cos(angle[j]);
                    const double sy = radius[j] * std::sin(angle[j]);
                    x = (1.0 - s) * sx + s * mid * spacing * lx;
                    y = (1.0 - s) * sy + s * mid * spacing * ly;
                    break;
                }
                case ActivityTemplate::follow: {
                    polar = false;
                    const double lead_start = -c.outer_radius + static_cast<double>(n - 1) * gap;
                    const double p = lead_start + (c.outer_radius - lead_start) * s - static_cast<double>(j) * gap;
                    x = p * lx;
                    y = p * ly;
                    break;
                }
                }
                if (polar) {
                    x = r * std::cos(th);
                    y = r * std::sin(th);
                }
                const double half = 0.5 * size[j];
                const double cx =
                    std::clamp(gx + x + rng.normal(0.0, c.position_noise), half, c.scene_width - half);
                const double cy =
                    std::clamp(gy + y + rng.normal(0.0, c.position_noise), half, c.scene_height - half);
                boxes.push_back(Box::centered(cx, cy, size[j], size[j]));
            }
        }
        return BoxTrajectorySet(n, frames, c.scene_width, c.scene_height, std::move(boxes));
    }

    // Map value = layout field + sum over objects of a Gaussian bump times
    // (appearance signature + action signature) + white noise.
    [[nodiscard]] Array render(const SceneSample& s, Rng& rng) const
    {
        const auto& c = config_;
        const std::size_t cells = c.map_width * c.map_height;
        const std::size_t n = c.objects;
        std::vector<double> out(c.frames * c.channels * cells);
        std::vector<double> bump(n * cells);
        for (std::size_t t = 0; t < c.frames; ++t) {
            for (std::size_t j = 0; j < n; ++j) {
                const Box& b = s.traj.at(j, t);
                const double sigma = 0.5 * b.width();
                for (std::size_t y = 0; y < c.map_height; ++y) {
                    for (std::size_t x = 0; x < c.map_width; ++x) {
                        const double px = (static_cast<double>(x) + 0.5) * c.scene_width / c.map_width;
                        const double py = (static_cast<double>(y) + 0.5) * c.scene_height / c.map_height;
                        const double d2 = (px - b.center_x()) * (px - b.center_x()) +
                                          (py - b.center_y()) * (py - b.center_y());
                        bump[j * cells + y * c.map_width + x] = std::exp(-d2 / (2.0 * sigma * sigma));
                    }
                }
            }
            for (std::size_t ch = 0; ch < c.channels; ++ch) {
                double* dst = out.data() + (t * c.channels + ch) * cells;
                const double app = appearance_sig_[s.appearance_label * c.channels + ch];
                for (std::size_t i = 0; i < cells; ++i) {
                    double v = layout_[ch * cells + i];
                    for (std::size_t j = 0; j < n; ++j) {
                        v += bump[j * cells + i] * (app + action_sig_[s.action_labels[j] * c.channels + ch]);
                    }
                    dst[i] = v + c.feature_noise * rng.normal();
                }
            }
        }
        return Array({c.frames, c.channels, c.map_height, c.map_width}, std::move(out));
    }

    GeneratorConfig config_;
    std::vector<ActivityTemplate> templates_;
    std::vector<double> layout_;
    std::vector<double> appearance_sig_;
    std::vector<double> action_sig_;
};

/// Convenience wrapper; prefer a shared SceneGenerator when generating many scenes.
inline SceneSample generate_scene(const GeneratorConfig& config, std::uint64_t seed)
{
    return SceneGenerator(config).generate(seed);
}

/**
 * Learnable projection of flattened RoI features to d dims: out = x W + b with
 * W of shape D_in x d. Accepts [..., D_in] or [..., d_v, 5, 5] inputs.
 */
class Vectorizer {
public:
    Vectorizer() = default;

    Vectorizer(std::size_t input_dim, std::size_t dim, Rng& rng)
        : weight_("vectorizer.weight", {input_dim, dim}, uniform_init(input_dim * dim, input_dim, rng)),
          bias_("vectorizer.bias", {dim}, std::vector<double>(dim, 0.0))
    {
    }

    Vectorizer(Parameter weight, Parameter bias) : weight_(std::move(weight)), bias_(std::move(bias))
    {
        if (weight_.value().rank() != 2 || bias_.value().rank() != 1 ||
            bias_.value().dim(0) != weight_.value().dim(1)) {
            throw ShapeError("vectorizer expects weight D_in x d and bias d, got " +
                             to_string(weight_.value().shape()) + " and " + to_string(bias_.value().shape()));
        }
    }

    [[nodiscard]] std::size_t input_dim() const { return weight_.value().dim(0); }
    [[nodiscard]] std::size_t dim() const { return weight_.value().dim(1); }

    [[nodiscard]] Array operator()(const Array& roi) const
    {
        const Shape& s = roi.shape();
        Shape flat = s;
        if (!s.empty() && s.back() == input_dim()) {
            // already flattened
        } else if (s.size() >= 3 && s[s.size() - 3] * s[s.size() - 2] * s[s.size() - 1] == input_dim()) {
            flat.resize(s.size() - 3);
            flat.push_back(input_dim());
        } else {
            throw ShapeError("vectorizer input " + to_string(s) + " does not end in " + std::to_string(input_dim()) +
                             " features");
        }
        return add(matmul(reshape(roi, flat), weight_.value()), bias_.value());
    }

    [[nodiscard]] std::vector<Parameter> parameters() const { return {weight_, bias_}; }

    static std::vector<double> uniform_init(std::size_t count, std::size_t fan_in, Rng& rng)
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> v(count);
        for (double& x : v) {
            x = rng.uniform(-bound, bound);
        }
        return v;
    }

private:
    Parameter weight_;
    Parameter bias_;
};

} // namespace gah
