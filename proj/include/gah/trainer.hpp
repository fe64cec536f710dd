#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "gah/checkpoint.hpp"
#include "gah/codes.hpp"
#include "gah/dataset.hpp"
#include "gah/losses.hpp"
#include "gah/mstvh_model.hpp"
#include "gah/optim.hpp"
#include "gah/parallel.hpp"
#include "gah/retrieval.hpp"
#include "gah/stvh_model.hpp"
#include "json.hpp"

namespace gah {

/// Invalid run configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    ModelKind kind = ModelKind::stvh;
    std::size_t objects = 4;     // N
    std::size_t frames = 8;      // T
    std::size_t channels = 32;   // d_v
    std::size_t dim = 64;        // d
    std::size_t bits = 64;       // K
    std::size_t layers = 4;      // Upsilon
    std::size_t activities = 4;  // A
    std::size_t actions = 3;     // C_act
    std::size_t appearances = 4; // P
    LossWeights loss_weights;
    AdamOptions optimizer;
    LrSchedule lr_schedule;
    std::size_t epochs = 60;
    std::size_t batch_size = 8;
    std::uint64_t seed = 1;
    std::optional<std::string> dataset;              // dataset directory; generated in memory when absent
    std::optional<std::string> precomputed_features; // directory of <sample>.gaha feature tensors
    GeneratorConfig generator;                       // scene parameters besides the dims above
    std::size_t train_count = 512;
    std::size_t test_count = 128;
    double validation_fraction = 0.1;
    std::size_t eval_k = 10;

    /// Generator settings with the run's dims applied; the first A templates when none are listed.
    [[nodiscard]] GeneratorConfig generator_config() const
    {
        GeneratorConfig g = generator;
        g.objects = objects;
        g.frames = frames;
        g.channels = channels;
        g.actions = actions;
        g.appearances = appearances;
        if (g.activities.size() != activities) {
            if (activities > kTemplateNames.size()) {
                throw ConfigError("at most " + std::to_string(kTemplateNames.size()) + " activity templates exist");
            }
            g.activities.clear();
            for (std::size_t i = 0; i < activities; ++i) {
                g.activities.emplace_back(kTemplateNames[i].second);
            }
        }
        return g;
    }

    [[nodiscard]] ModelConfig model_config(std::size_t input_dim) const
    {
        ModelConfig m;
        m.kind = kind;
        m.input_dim = input_dim;
        m.dim = dim;
        m.bits = bits;
        m.layers = layers;
        m.activities = activities;
        m.actions = actions;
        m.objects = objects;
        m.frames = frames;
        m.seed = mix_seed(seed, 0x6d6f64656c);
        return m;
    }

    void validate() const
    {
        try {
            for (std::size_t v : {objects, frames, channels, dim, bits, layers, activities, actions, appearances}) {
                if (v == 0) {
                    throw std::invalid_argument("all dimensions must be positive");
                }
            }
            if (epochs == 0 || batch_size == 0 || eval_k == 0) {
                throw std::invalid_argument("epochs, batch_size and eval_k must be positive");
            }
            if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
                throw std::invalid_argument("validation_fraction must lie in [0, 1)");
            }
            if (!dataset && train_count == 0) {
                throw std::invalid_argument("train_count must be positive");
            }
            lr_schedule.validate();
            loss_weights.validate(layers);
            model_config(channels * 25).validate();
            if (!dataset) {
                generator_config().validate();
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c)
{
    nlohmann::json opt = c.optimizer;
    opt["lr_schedule"] = c.lr_schedule;
    j = {{"model", c.kind},
         {"objects", c.objects},
         {"frames", c.frames},
         {"channels", c.channels},
         {"dim", c.dim},
         {"bits", c.bits},
         {"layers", c.layers},
         {"activities", c.activities},
         {"actions", c.actions},
         {"appearances", c.appearances},
         {"loss_weights", c.loss_weights},
         {"optimizer", opt},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"seed", c.seed},
         {"dataset", c.dataset ? nlohmann::json(*c.dataset) : nlohmann::json(nullptr)},
         {"precomputed_features",
          c.precomputed_features ? nlohmann::json(*c.precomputed_features) : nlohmann::json(nullptr)},
         {"generator", c.generator},
         {"train_count", c.train_count},
         {"test_count", c.test_count},
         {"validation_fraction", c.validation_fraction},
         {"eval_k", c.eval_k}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c)
{
    static const std::set<std::string> known{"model",        "objects",      "frames",     "channels",
                                             "dim",          "bits",         "layers",     "activities",
                                             "actions",      "appearances",  "loss_weights", "optimizer",
                                             "epochs",       "batch_size",   "seed",       "dataset",
                                             "precomputed_features", "generator", "train_count", "test_count",
                                             "validation_fraction", "eval_k"};
    if (!j.is_object()) {
        throw ConfigError("run config must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError("unknown run config field '" + key + "'");
        }
    }
    // Nested objects: keys must be ones the default value serializes.
    const auto check_nested = [&](const char* field, const nlohmann::json& defaults) {
        if (!j.contains(field)) {
            return;
        }
        if (!j.at(field).is_object()) {
            throw ConfigError(std::string("run config field '") + field + "' must be an object");
        }
        for (const auto& [key, value] : j.at(field).items()) {
            if (!defaults.contains(key)) {
                throw ConfigError(std::string("unknown field '") + key + "' in '" + field + "'");
            }
        }
    };
    check_nested("loss_weights", LossWeights{});
    check_nested("generator", GeneratorConfig{});
    check_nested("optimizer", {{"kind", nullptr}, {"betas", nullptr}, {"eps", nullptr}, {"lr_schedule", nullptr}});
    try {
        RunConfig d;
        c.kind = j.value("model", d.kind);
        c.objects = j.value("objects", d.objects);
        c.frames = j.value("frames", d.frames);
        c.channels = j.value("channels", d.channels);
        c.dim = j.value("dim", d.dim);
        c.bits = j.value("bits", d.bits);
        c.layers = j.value("layers", d.layers);
        c.activities = j.value("activities", d.activities);
        c.actions = j.value("actions", d.actions);
        c.appearances = j.value("appearances", d.appearances);
        c.loss_weights = j.value("loss_weights", d.loss_weights);
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            c.optimizer = o.get<AdamOptions>();
            c.lr_schedule = o.contains("lr_schedule") ? o.at("lr_schedule").get<LrSchedule>() : d.lr_schedule;
        }
        c.epochs = j.value("epochs", d.epochs);
        c.batch_size = j.value("batch_size", d.batch_size);
        c.seed = j.value("seed", d.seed);
        c.dataset = j.contains("dataset") && !j.at("dataset").is_null()
                        ? std::optional(j.at("dataset").get<std::string>())
                        : std::nullopt;
        c.precomputed_features = j.contains("precomputed_features") && !j.at("precomputed_features").is_null()
                                     ? std::optional(j.at("precomputed_features").get<std::string>())
                                     : std::nullopt;
        c.generator = j.value("generator", d.generator);
        c.train_count = j.value("train_count", d.train_count);
        c.test_count = j.value("test_count", d.test_count);
        c.validation_fraction = j.value("validation_fraction", d.validation_fraction);
        c.eval_k = j.value("eval_k", d.eval_k);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad run config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("bad run config: ") + e.what());
    }
}

inline RunConfig read_run_config(const std::filesystem::path& path)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());
    }
    return j.get<RunConfig>();
}

// ---------------------------------------------------------------------------
// Data

struct RunData {
    std::vector<Example> train;       // excludes the validation samples
    std::vector<Example> validation;
    std::vector<Example> test;
    std::size_t input_dim = 0;
};

/// Loads or generates the run's data and carves the validation split out of train, fixed by the seed.
inline RunData prepare_data(const RunConfig& config)
{
    DatasetSplit split;
    std::size_t input_dim = 0;
    if (config.dataset) {
        std::optional<std::filesystem::path> pre;
        if (config.precomputed_features) {
            pre = *config.precomputed_features;
        }
        LoadedDataset loaded = load_dataset(*config.dataset, pre);
        const GeneratorConfig& g = loaded.config;
        if (g.objects != config.objects || g.frames != config.frames || g.activity_count() != config.activities ||
            g.actions != config.actions || g.appearances != config.appearances) {
            throw ConfigError("dataset " + *config.dataset + " dimensions do not match the run config");
        }
        split = std::move(loaded.split);
        input_dim = loaded.input_dim;
    } else {
        const GeneratorConfig g = config.generator_config();
        split = generate_examples(g, config.train_count, config.test_count, config.seed);
        input_dim = g.roi_dim();
    }
    if (split.train.empty()) {
        throw ConfigError("run has no training samples");
    }
    std::vector<std::size_t> order(split.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(config.seed, 0x76616c));
    rng.shuffle(order);
    const auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction *
                                                           static_cast<double>(split.train.size())));
    std::vector<char> is_val(split.train.size(), 0);
    for (std::size_t i = 0; i < n_val; ++i) {
        is_val[order[i]] = 1;
    }
    RunData data;
    data.input_dim = input_dim;
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        (is_val[i] ? data.validation : data.train).push_back(std::move(split.train[i]));
    }
    data.test = std::move(split.test);
    return data;
}

// ---------------------------------------------------------------------------
// Encoding and evaluation

inline LabelSidecar labels_of(const std::vector<Example>& examples)
{
    LabelSidecar s;
    for (const auto& e : examples) {
        s.ids.push_back(e.id);
        s.labels[e.id] = {{"activity", static_cast<std::int64_t>(e.activity)},
                          {"appearance", static_cast<std::int64_t>(e.appearance)},
                          {"video-id", static_cast<std::int64_t>(e.id)}};
    }
    return s;
}

inline std::vector<Array> code_layers(const StvhOutput& o) { return {o.b}; }
inline std::vector<Array> code_layers(const MultiFocusOutput& o) { return o.b; }

/// Binary codes of every example: one layer for STVH, all layers for M-STVH. Batches run in parallel.
template <class M>
CodeBook encode_examples(const M& model, const std::vector<Example>& examples, std::size_t batch_size = 32)
{
    const std::size_t layers = model.config().kind == ModelKind::stvh ? 1 : model.config().layers;
    CodeBook book(examples.size(), layers, model.config().bits);
    if (examples.empty()) {
        return book;
    }
    const std::size_t batches = (examples.size() + batch_size - 1) / batch_size;
    parallel_for(batches, [&](std::size_t bi) {
        std::vector<const Example*> ptrs;
        for (std::size_t i = bi * batch_size; i < std::min(examples.size(), (bi + 1) * batch_size); ++i) {
            ptrs.push_back(&examples[i]);
        }
        const CodeBook part = CodeBook::from_layers(code_layers(model.forward(make_batch(ptrs), Mode::infer)));
        for (std::size_t i = 0; i < ptrs.size(); ++i) {
            for (std::size_t l = 0; l < layers; ++l) {
                std::ranges::copy(part.code(i, l), book.code(bi * batch_size + i, l).begin());
            }
        }
    });
    return book;
}

/// Test-time activity accuracy (inference path).
template <class M>
double activity_accuracy(const M& model, const std::vector<Example>& examples, std::size_t batch_size = 32)
{
    if (examples.empty()) {
        return 0.0;
    }
    const std::size_t batches = (examples.size() + batch_size - 1) / batch_size;
    std::vector<std::size_t> correct(batches, 0);
    parallel_for(batches, [&](std::size_t bi) {
        std::vector<const Example*> ptrs;
        for (std::size_t i = bi * batch_size; i < std::min(examples.size(), (bi + 1) * batch_size); ++i) {
            ptrs.push_back(&examples[i]);
        }
        const Batch b = make_batch(ptrs);
        const auto o = model.forward(b, Mode::infer);
        if constexpr (std::is_same_v<M, StvhModel>) {
            correct[bi] = count_correct(o.activity_logits, b.activity);
        } else {
            correct[bi] = count_correct(o.activity_logits.back(), b.activity);
        }
    });
    std::size_t total = 0;
    for (auto c : correct) {
        total += c;
    }
    return static_cast<double>(total) / static_cast<double>(examples.size());
}

/// mAP@k of one layer of the query codes against the same layer of the database codes.
inline MapReport evaluate_map(const CodeBook& database, const LabelSidecar& database_labels, const CodeBook& queries,
                              const LabelSidecar& query_labels, std::size_t layer, const std::string& label_space,
                              std::size_t k)
{
    if (database.bits() != queries.bits()) {
        throw std::invalid_argument("database and query codes differ in length");
    }
    const HammingIndex index = build_index(records_from(database, layer, database_labels), database.bits());
    return map_at_k(records_from(queries, layer, query_labels), index, label_space, k);
}

// ---------------------------------------------------------------------------
// Training

using AnyModel = std::variant<StvhModel, MstvhModel>;

inline AnyModel make_model(const ModelConfig& config)
{
    if (config.kind == ModelKind::stvh) {
        return AnyModel(std::in_place_type<StvhModel>, config);
    }
    return AnyModel(std::in_place_type<MstvhModel>, config);
}

inline AnyModel load_any_model(const std::filesystem::path& dir)
{
    const ModelConfig config = read_checkpoint_config(dir);
    AnyModel model = make_model(config);
    std::visit([&](auto& m) { load_parameters(dir, m.parameters()); }, model);
    return model;
}

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    std::map<std::string, double> loss;   // per-sample means over the epoch
    double train_accuracy = 0.0;
    std::optional<double> validation_map;
    double seconds = 0.0; // wall time, kept out of the log so reruns are byte-identical
};

inline void to_json(nlohmann::json& j, const EpochMetrics& m)
{
    j = {{"epoch", m.epoch},
         {"lr", m.lr},
         {"loss", m.loss},
         {"train_accuracy", m.train_accuracy},
         {"validation_map", m.validation_map ? nlohmann::json(*m.validation_map) : nlohmann::json(nullptr)}};
}

struct TrainResult {
    std::vector<EpochMetrics> epochs;
    std::size_t best_epoch = 0;
    std::optional<double> best_validation_map;
};

struct TrainOptions {
    std::optional<std::filesystem::path> out;   // checkpoints and metrics.jsonl; nothing written when absent
    std::function<void(const EpochMetrics&)> on_epoch;
};

/// Validation mAP@k on activity labels: validation codes query the training codes (deepest layer).
template <class M>
double validation_map(const M& model, const RunData& data, std::size_t k)
{
    const CodeBook db = encode_examples(model, data.train);
    const CodeBook q = encode_examples(model, data.validation);
    return evaluate_map(db, labels_of(data.train), q, labels_of(data.validation), db.layers() - 1, "activity", k)
        .value;
}

/// Trains in place. Deterministic given the config: fixed init, fixed per-epoch shuffles, serial updates.
template <class M>
TrainResult train_model(M& model, const RunConfig& config, const RunData& data, const TrainOptions& options = {})
{
    Adam adam(model.parameters().all(), config.optimizer);
    TrainResult result;
    const auto save = [&](const std::string& name, std::size_t epoch) {
        if (options.out) {
            save_checkpoint(*options.out / name, model.config(), model.parameters(),
                            {{"epoch", epoch}, {"run_config", config}});
        }
    };
    std::ofstream metrics_log;
    if (options.out) {
        std::filesystem::create_directories(*options.out);
        io::write_text(*options.out / "run_config.json", nlohmann::json(config).dump(2));
        metrics_log = io::open_out(*options.out / "metrics.jsonl");
    }

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        EpochMetrics m;
        m.epoch = epoch;
        m.lr = config.lr_schedule.at(epoch);
        const LossWeights weights = config.loss_weights.at_epoch(epoch);
        Rng rng(mix_seed(config.seed, 0x65706f6368 + epoch));
        rng.shuffle(order);
        std::size_t correct = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            std::vector<const Example*> ptrs;
            for (std::size_t i = begin; i < end; ++i) {
                ptrs.push_back(&data.train[order[i]]);
            }
            const Batch batch = make_batch(ptrs);
            adam.zero_grad();
            const LossReport r = model.loss(batch, weights);
            if (!std::isfinite(r.total.item())) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                   std::to_string(begin));
            }
            r.total.backward();
            adam.step(m.lr);
            for (const auto& [name, value] : r.parts) {
                m.loss[name] += value * static_cast<double>(batch.size());
            }
            correct += r.correct;
        }
        for (auto& [name, value] : m.loss) {
            value /= static_cast<double>(order.size());
        }
        m.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        if (!data.validation.empty()) {
            m.validation_map = validation_map(model, data, config.eval_k);
        }
        m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        save("last_good", epoch);
        if (!result.best_validation_map ||
            (m.validation_map && *m.validation_map > *result.best_validation_map)) {
            result.best_validation_map = m.validation_map;
            result.best_epoch = epoch;
            save("best", epoch);
        }
        if (metrics_log.is_open()) {
            metrics_log << nlohmann::json(m).dump() << '\n' << std::flush;
        }
        if (options.on_epoch) {
            options.on_epoch(m);
        }
        result.epochs.push_back(std::move(m));
    }
    save("final", config.epochs);
    return result;
}

/// Builds the model from the config and trains it.
inline std::pair<AnyModel, TrainResult> train(const RunConfig& config, const RunData& data,
                                              const TrainOptions& options = {})
{
    config.validate();
    AnyModel model = make_model(config.model_config(data.input_dim));
    TrainResult result = std::visit([&](auto& m) { return train_model(m, config, data, options); }, model);
    return {std::move(model), std::move(result)};
}

} // namespace gah
