#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "gah/graph_builder.hpp"
#include "gah/io.hpp"
#include "gah/parallel.hpp"
#include "gah/synth_frontend.hpp"
#include "json.hpp"

namespace gah {

/// Model-ready clip: per-object input features (N x T x D_in), graphs and labels.
struct Example {
    std::uint64_t id = 0;
    std::string video_id;
    Array features;
    RelationGraphs graphs;
    std::size_t activity = 0;
    std::size_t appearance = 0;
    std::vector<std::size_t> actions;
};

struct DatasetSplit {
    std::vector<Example> train;
    std::vector<Example> test;
};

/// Sample i of a generated dataset uses seed mix_seed(base_seed, i); output does not depend on thread count.
inline std::uint64_t sample_seed(std::uint64_t base_seed, std::uint64_t index) { return mix_seed(base_seed, index); }

inline Example make_example(const SceneSample& s, std::uint64_t id)
{
    Example e;
    e.id = id;
    e.video_id = "synthetic-" + std::to_string(id);
    e.features = extract_roi_features(s);
    e.graphs = build_graphs(s.traj);
    e.activity = s.activity_label;
    e.appearance = s.appearance_label;
    e.actions = s.action_labels;
    return e;
}

/// Generates train_count + test_count clips in memory; ids run 0..total-1, train first.
inline DatasetSplit generate_examples(const GeneratorConfig& config, std::size_t train_count, std::size_t test_count,
                                      std::uint64_t base_seed)
{
    const SceneGenerator gen(config);
    std::vector<Example> all(train_count + test_count);
    parallel_for(all.size(), [&](std::size_t i) { all[i] = make_example(gen.generate(sample_seed(base_seed, i)), i); });
    DatasetSplit split;
    split.train.assign(std::make_move_iterator(all.begin()),
                       std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(train_count)));
    split.test.assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(train_count)),
                      std::make_move_iterator(all.end()));
    return split;
}

// Dataset directory: manifest.json plus, per sample, <stem>.gaht (trajectories) and <stem>.gaha
// (T x d_v x H' x W' feature maps). Precomputed feature directories hold <stem>.gaha files of shape
// N x T x D that replace the RoI features.

inline std::string sample_stem(std::uint64_t id)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "sample_%06llu", static_cast<unsigned long long>(id));
    return buf;
}

inline void write_dataset(const std::filesystem::path& dir, const GeneratorConfig& config, std::size_t train_count,
                          std::size_t test_count, std::uint64_t base_seed)
{
    const SceneGenerator gen(config);
    const std::size_t total = train_count + test_count;
    std::vector<nlohmann::json> entries(total);
    std::filesystem::create_directories(dir);
    parallel_for(total, [&](std::size_t i) {
        const std::uint64_t seed = sample_seed(base_seed, i);
        const SceneSample s = gen.generate(seed);
        const std::string stem = sample_stem(i);
        write_trajectories(dir / (stem + ".gaht"), s.traj);
        write_array(dir / (stem + ".gaha"), s.feature_maps.shape(), s.feature_maps.data());
        entries[i] = {{"id", i},
                      {"seed", seed},
                      {"split", i < train_count ? "train" : "test"},
                      {"activity", s.activity_label},
                      {"appearance", s.appearance_label},
                      {"actions", s.action_labels},
                      {"trajectory", stem + ".gaht"},
                      {"features", stem + ".gaha"}};
    });
    nlohmann::json manifest = {{"format", "gah-dataset"},
                               {"version", 1},
                               {"config", config},
                               {"base_seed", base_seed},
                               {"sample_count", total},
                               {"train_count", train_count},
                               {"test_count", test_count},
                               {"label_spaces",
                                {{"activity", config.activities},
                                 {"appearance", config.appearances},
                                 {"action", config.actions}}},
                               {"samples", entries}};
    io::write_text(dir / "manifest.json", manifest.dump(2));
}

struct LoadedDataset {
    GeneratorConfig config;
    DatasetSplit split;
    std::size_t input_dim = 0;
};

inline GeneratorConfig read_dataset_config(const std::filesystem::path& dir)
{
    const auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    return manifest.at("config").get<GeneratorConfig>();
}

/**
 * Loads a dataset directory. With precomputed set, per-object features come
 * from <precomputed>/<stem>.gaha (N x T x D, D shared by all samples) instead
 * of RoIAlign over the stored feature maps.
 */
inline LoadedDataset load_dataset(const std::filesystem::path& dir,
                                  const std::optional<std::filesystem::path>& precomputed = std::nullopt)
{
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad dataset manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "gah-dataset") {
        throw FormatError(dir.string() + " is not a dataset directory");
    }
    LoadedDataset out;
    out.config = manifest.at("config").get<GeneratorConfig>();
    const auto& samples = manifest.at("samples");
    std::vector<Example> all(samples.size());
    std::vector<char> is_train(samples.size(), 0); // not vector<bool>: written from several threads
    const auto& cfg = out.config;
    parallel_for(samples.size(), [&](std::size_t i) {
        const auto& entry = samples[i];
        Example e;
        e.id = entry.at("id").get<std::uint64_t>();
        e.video_id = entry.value("video_id", "synthetic-" + std::to_string(e.id));
        e.activity = entry.at("activity").get<std::size_t>();
        e.appearance = entry.at("appearance").get<std::size_t>();
        e.actions = entry.at("actions").get<std::vector<std::size_t>>();
        const auto traj =
            read_trajectories(dir / entry.at("trajectory").get<std::string>(), cfg.scene_width, cfg.scene_height);
        e.graphs = build_graphs(traj);
        if (precomputed) {
            auto f = read_array(*precomputed / (sample_stem(e.id) + ".gaha"));
            if (f.shape.size() != 3 || f.shape[0] != traj.objects() || f.shape[1] != traj.frames()) {
                throw FormatError("precomputed features for sample " + std::to_string(e.id) + " have shape " +
                                  to_string(f.shape) + ", expected N x T x D");
            }
            for (double v : f.data) {
                if (!std::isfinite(v)) {
                    throw FormatError("precomputed features for sample " + std::to_string(e.id) + " are not finite");
                }
            }
            e.features = Array(f.shape, std::move(f.data));
        } else {
            auto f = read_array(dir / entry.at("features").get<std::string>());
            SceneSample s;
            s.traj = traj;
            s.feature_maps = Array(f.shape, std::move(f.data));
            e.features = extract_roi_features(s);
        }
        is_train[i] = entry.at("split").get<std::string>() == "train";
        all[i] = std::move(e);
    });
    for (std::size_t i = 0; i < all.size(); ++i) {
        const std::size_t dim = all[i].features.dim(2);
        if (out.input_dim == 0) {
            out.input_dim = dim;
        } else if (dim != out.input_dim) {
            throw FormatError("samples disagree on feature dimension");
        }
        (is_train[i] ? out.split.train : out.split.test).push_back(std::move(all[i]));
    }
    return out;
}

} // namespace gah
