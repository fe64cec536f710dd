#pragma once

#include <filesystem>
#include <string>

#include "gah/io.hpp"
#include "gah/layers.hpp"
#include "gah/model.hpp"
#include "json.hpp"

namespace gah {

// Checkpoint directory: manifest.json (model kind, dimensions, parameter names and shapes, optional
// metadata) and parameters.bin, the parameters' values as packed little-endian f64 in manifest order.

inline void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& config, const ParameterStore& store,
                            const nlohmann::json& meta = nlohmann::json::object())
{
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : store.all()) {
        params.push_back({{"name", p.name()}, {"shape", p.shape()}});
    }
    const nlohmann::json manifest = {{"format", "gah-checkpoint"},
                                     {"version", 1},
                                     {"kind", config.kind},
                                     {"config", config},
                                     {"parameters", params},
                                     {"payload", "parameters.bin"},
                                     {"meta", meta}};
    std::filesystem::create_directories(dir);
    {
        std::ofstream out = io::open_out(dir / "parameters.bin");
        for (const auto& p : store.all()) {
            for (double v : p.value().data()) {
                io::put_f64(out, v);
            }
        }
    }
    io::write_text(dir / "manifest.json", manifest.dump(2));
}

inline nlohmann::json read_checkpoint_manifest(const std::filesystem::path& dir)
{
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad checkpoint manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "gah-checkpoint") {
        throw FormatError(dir.string() + " is not a checkpoint");
    }
    return manifest;
}

inline ModelConfig read_checkpoint_config(const std::filesystem::path& dir)
{
    return read_checkpoint_manifest(dir).at("config").get<ModelConfig>();
}

/// Overwrites the values in store, which must hold exactly the checkpoint's names and shapes in order.
inline void load_parameters(const std::filesystem::path& dir, const ParameterStore& store)
{
    const auto manifest = read_checkpoint_manifest(dir);
    const auto& listed = manifest.at("parameters");
    if (listed.size() != store.all().size()) {
        throw FormatError("checkpoint lists " + std::to_string(listed.size()) + " parameters, model has " +
                          std::to_string(store.all().size()));
    }
    for (std::size_t i = 0; i < listed.size(); ++i) {
        const auto& p = store.all()[i];
        const auto name = listed[i].at("name").get<std::string>();
        const auto shape = listed[i].at("shape").get<Shape>();
        if (name != p.name() || shape != p.shape()) {
            throw FormatError("checkpoint parameter " + name + " " + to_string(shape) + " does not match model " +
                              p.name() + " " + to_string(p.shape()));
        }
    }
    std::ifstream in = io::open_in(dir / manifest.value("payload", "parameters.bin"));
    for (const auto& p : store.all()) {
        for (double& v : p.mutable_data()) {
            v = io::get_f64(in, "checkpoint payload");
        }
    }
    io::expect_eof(in, "checkpoint payload");
}

/// Builds a model of type M from the checkpoint's config and loads its values.
template <class M>
M load_model(const std::filesystem::path& dir)
{
    M model(read_checkpoint_config(dir));
    load_parameters(dir, model.parameters());
    return model;
}

} // namespace gah
