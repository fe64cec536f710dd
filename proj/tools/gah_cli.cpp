// gah: command-line front end for dataset generation, training, encoding and retrieval.
//
// Exit codes: 0 success, 2 config or usage error, 3 numeric failure, 1 anything else.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gah/gah.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Global {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

gah::RunConfig load_config(const Global& g, const std::optional<std::string>& dataset = std::nullopt,
                           const std::optional<std::string>& precomputed = std::nullopt)
{
    gah::RunConfig c = g.config ? gah::read_run_config(*g.config) : gah::RunConfig{};
    if (g.seed) {
        c.seed = *g.seed;
    }
    if (dataset) {
        c.dataset = *dataset;
    }
    if (precomputed) {
        c.precomputed_features = *precomputed;
    }
    c.validate();
    return c;
}

fs::path require_out(const Global& g, const char* verb)
{
    if (!g.out) {
        throw gah::ConfigError(std::string(verb) + " needs --out");
    }
    return *g.out;
}

fs::path labels_path(const fs::path& codes) { return fs::path(codes.string() + ".labels.json"); }

const std::vector<gah::Example>& pick_split(const gah::RunData& data, const std::string& split)
{
    if (split == "train") {
        return data.train;
    }
    if (split == "validation") {
        return data.validation;
    }
    if (split == "test") {
        return data.test;
    }
    throw gah::ConfigError("unknown split '" + split + "' (train, validation, test)");
}

void check_dims(const gah::AnyModel& model, const gah::RunData& data)
{
    const auto& mc = std::visit([](const auto& m) -> const gah::ModelConfig& { return m.config(); }, model);
    const auto& sample = data.train.empty() ? data.test.front() : data.train.front();
    const auto& s = sample.features.shape();
    if (mc.input_dim != data.input_dim || mc.objects != s[0] || mc.frames != s[1]) {
        throw gah::ConfigError("checkpoint expects N=" + std::to_string(mc.objects) + " T=" +
                               std::to_string(mc.frames) + " D=" + std::to_string(mc.input_dim) +
                               ", dataset has N=" + std::to_string(s[0]) + " T=" + std::to_string(s[1]) +
                               " D=" + std::to_string(data.input_dim));
    }
}

gah::CodeBook encode(const gah::AnyModel& model, const std::vector<gah::Example>& examples)
{
    return std::visit([&](const auto& m) { return gah::encode_examples(m, examples); }, model);
}

// Accuracy and per-layer mAP@k of the test split against the training split.
json test_report(const gah::AnyModel& model, const gah::RunConfig& config, const gah::RunData& data)
{
    const double accuracy =
        std::visit([&](const auto& m) { return gah::activity_accuracy(m, data.test); }, model);
    const gah::CodeBook db = encode(model, data.train);
    const gah::CodeBook q = encode(model, data.test);
    const auto db_labels = gah::labels_of(data.train);
    const auto q_labels = gah::labels_of(data.test);
    json layers = json::array();
    for (std::size_t l = 0; l < db.layers(); ++l) {
        json row;
        for (const char* space : {"activity", "appearance"}) {
            row[space] = gah::evaluate_map(db, db_labels, q, q_labels, l, space, config.eval_k).value;
        }
        layers.push_back(row);
    }
    return {{"test_accuracy", accuracy}, {"k", config.eval_k}, {"map", layers}};
}

int cmd_generate(const Global& g)
{
    const gah::RunConfig c = load_config(g);
    const fs::path out = require_out(g, "generate");
    gah::write_dataset(out, c.generator_config(), c.train_count, c.test_count, c.seed);
    std::cout << json{{"dataset", out.string()}, {"train", c.train_count}, {"test", c.test_count}}.dump() << '\n';
    return 0;
}

int cmd_train(const Global& g, const std::optional<std::string>& dataset,
              const std::optional<std::string>& precomputed, bool quiet)
{
    const gah::RunConfig c = load_config(g, dataset, precomputed);
    const fs::path out = require_out(g, "train");
    const gah::RunData data = gah::prepare_data(c);
    gah::TrainOptions opt;
    opt.out = out;
    if (!quiet) {
        opt.on_epoch = [](const gah::EpochMetrics& m) {
            std::cerr << "epoch " << m.epoch << " lr " << m.lr << " total " << m.loss.at("total") << " train_acc "
                      << m.train_accuracy;
            if (m.validation_map) {
                std::cerr << " val_map " << *m.validation_map;
            }
            std::cerr << " (" << m.seconds << " s)\n";
        };
    }
    const auto [model, result] = gah::train(c, data, opt);
    json summary{{"final", test_report(model, c, data)}};
    summary["final"]["epoch"] = c.epochs;
    if (result.best_validation_map) {
        const gah::AnyModel best = gah::load_any_model(out / "best");
        summary["best"] = test_report(best, c, data);
        summary["best"]["epoch"] = result.best_epoch;
        summary["best"]["validation_map"] = *result.best_validation_map;
    }
    gah::io::write_text(out / "summary.json", summary.dump(2));
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_encode(const Global& g, const std::string& checkpoint, const std::string& split,
               const std::optional<std::string>& dataset, const std::optional<std::string>& precomputed)
{
    const gah::RunConfig c = load_config(g, dataset, precomputed);
    const fs::path out = require_out(g, "encode");
    const gah::AnyModel model = gah::load_any_model(checkpoint);
    const gah::RunData data = gah::prepare_data(c);
    check_dims(model, data);
    const auto& examples = pick_split(data, split);
    const gah::CodeBook book = encode(model, examples);
    gah::write_codes(out, book);
    gah::write_labels(labels_path(out), gah::labels_of(examples));
    std::cout << json{{"codes", out.string()}, {"count", book.count()}, {"layers", book.layers()},
                      {"bits", book.bits()}}.dump()
              << '\n';
    return 0;
}

int cmd_fit_filter(const Global& g, const std::string& codes, gah::FilterFitOptions options)
{
    const fs::path out = require_out(g, "fit-filter");
    const gah::FilterFit fit = gah::fit_filter(gah::read_codes(codes), options);
    gah::write_filter(out, fit.filter);
    std::cout << json{{"filter", out.string()},       {"loss", fit.loss},   {"threshold", fit.threshold},
                      {"bit_error", fit.bit_error},   {"steps", fit.steps}, {"underdetermined", fit.underdetermined}}
                     .dump()
              << '\n';
    return 0;
}

int cmd_derive(const Global& g, const std::string& codes, const std::string& filter, std::size_t layers)
{
    const fs::path out = require_out(g, "derive-codes");
    const gah::CodeBook book = gah::read_codes(codes);
    const std::size_t n = layers == 0 ? book.layers() : layers;
    const gah::CodeBook derived = gah::derive_layers(book.layer(book.layers() - 1), gah::read_filter(filter), n);
    gah::write_codes(out, derived);
    if (fs::exists(labels_path(codes))) {
        fs::copy_file(labels_path(codes), labels_path(out), fs::copy_options::overwrite_existing);
    }
    std::cout << json{{"codes", out.string()}, {"layers", derived.layers()},
                      {"compression_ratio", gah::compression_ratio(book.count(), book.bits(), n)}}
                     .dump()
              << '\n';
    return 0;
}

gah::HammingIndex load_index(const std::string& codes, std::size_t layer)
{
    const gah::CodeBook book = gah::read_codes(codes);
    if (layer >= book.layers()) {
        throw gah::ConfigError("layer " + std::to_string(layer) + " out of range; " + codes + " has " +
                               std::to_string(book.layers()));
    }
    return gah::build_index(gah::records_from(book, layer, gah::read_labels(labels_path(codes))), book.bits());
}

int cmd_index(const std::string& codes, std::size_t layer, const std::string& space)
{
    const gah::HammingIndex index = load_index(codes, layer);
    const gah::ClassDistances d = gah::mean_hamming_by_class(index, space);
    std::cout << json{{"records", index.size()}, {"bits", index.bits()},      {"layer", layer},
                      {"label_space", space},    {"classes", d.classes},      {"mean_hamming", d.mean}}
                     .dump()
              << '\n';
    return 0;
}

int cmd_query(const std::string& database, const std::string& queries, std::size_t layer, std::size_t k)
{
    const gah::HammingIndex index = load_index(database, layer);
    const gah::CodeBook q = gah::read_codes(queries);
    const auto q_labels = gah::read_labels(labels_path(queries));
    json results = json::array();
    for (const auto& r : gah::records_from(q, layer, q_labels)) {
        json hits = json::array();
        for (const auto& h : gah::query_topk(index, r.code, k, r.id)) {
            hits.push_back({{"id", h.id}, {"distance", h.distance}});
        }
        results.push_back({{"query", r.id}, {"hits", hits}});
    }
    std::cout << results.dump() << '\n';
    return 0;
}

int cmd_eval(const Global& g, const std::string& database, const std::string& queries, std::size_t layer,
             const std::string& space, std::size_t k)
{
    const gah::CodeBook db = gah::read_codes(database);
    const gah::CodeBook q = gah::read_codes(queries);
    if (layer >= std::min(db.layers(), q.layers())) {
        throw gah::ConfigError("layer " + std::to_string(layer) + " out of range");
    }
    const gah::MapReport r = gah::evaluate_map(db, gah::read_labels(labels_path(database)), q,
                                               gah::read_labels(labels_path(queries)), layer, space, k);
    json report = r;
    report["metric"] = "mAP@k";
    report["layer"] = layer;
    const std::string text = report.dump(2);
    if (g.out) {
        gah::io::write_text(*g.out, text);
    }
    std::cout << text << '\n';
    return 0;
}

int cmd_attn_dump(const Global& g, const std::string& checkpoint, const std::string& split, std::size_t sample,
                  const std::optional<std::string>& dataset)
{
    const gah::RunConfig c = load_config(g, dataset);
    const fs::path out = require_out(g, "attn-dump");
    const gah::AnyModel model = gah::load_any_model(checkpoint);
    const gah::RunData data = gah::prepare_data(c);
    check_dims(model, data);
    const auto& examples = pick_split(data, split);
    if (sample >= examples.size()) {
        throw gah::ConfigError("sample " + std::to_string(sample) + " out of range for split " + split);
    }
    const gah::Example* e = &examples[sample];
    gah::AttentionTrace trace;
    std::visit([&](const auto& m) { (void)m.forward(gah::make_batch(std::span(&e, 1)), gah::Mode::infer, &trace); },
               model);
    json blocks = json::array();
    for (const auto& r : trace) {
        const auto arr = [](const gah::Array& a) { return json{{"shape", a.shape()}, {"data", a.to_vector()}}; };
        blocks.push_back({{"block", r.block},
                          {"visual", arr(r.visual)},
                          {"positional", arr(r.positional)},
                          {"combined", arr(r.combined)}});
    }
    gah::io::write_text(out, json{{"id", e->id}, {"activity", e->activity}, {"blocks", blocks}}.dump());
    std::cout << json{{"attention", out.string()}, {"blocks", trace.size()}}.dump() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Graph-attention video hashing: generate, train, encode, retrieve"};
    app.require_subcommand(1);
    Global g;
    app.add_option("--config", g.config, "Run config JSON")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Override the config seed");
    app.add_option("--out", g.out, "Output file or directory");

    std::optional<std::string> dataset;
    std::optional<std::string> precomputed;
    std::string checkpoint;
    std::string split = "test";
    std::string codes;
    std::string filter;
    std::string database;
    std::string queries;
    std::string space = "activity";
    std::size_t layer = 0;
    std::size_t layers = 0;
    std::size_t k = 10;
    std::size_t sample = 0;
    bool quiet = false;
    gah::FilterFitOptions fit_options;

    auto* generate = app.add_subcommand("generate", "Write a synthetic dataset directory");

    auto* train = app.add_subcommand("train", "Train a model; writes checkpoints, metrics.jsonl and summary.json");
    train->add_option("--dataset", dataset, "Dataset directory (generated in memory otherwise)");
    train->add_option("--precomputed-features", precomputed, "Directory of <sample>.gaha feature tensors");
    train->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

    auto* enc = app.add_subcommand("encode", "Write GAHC codes and a labels sidecar for one split");
    enc->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    enc->add_option("--split", split, "train, validation or test")->capture_default_str();
    enc->add_option("--dataset", dataset, "Dataset directory");
    enc->add_option("--precomputed-features", precomputed, "Directory of <sample>.gaha feature tensors");

    auto* fit = app.add_subcommand("fit-filter", "Fit the filter matrix on a multi-layer code file");
    fit->add_option("--codes", codes, "GAHC file with at least two layers")->required();
    fit->add_option("--steps", fit_options.steps, "Optimizer steps")->capture_default_str();
    fit->add_option("--lr", fit_options.learning_rate, "Optimizer learning rate")->capture_default_str();

    auto* derive = app.add_subcommand("derive-codes", "Derive shallower layers from the deepest codes");
    derive->add_option("--codes", codes, "GAHC file; its deepest layer is used")->required();
    derive->add_option("--filter", filter, "GAHF filter file")->required();
    derive->add_option("--layers", layers, "Layers to produce (default: as many as the input)");

    auto* index = app.add_subcommand("index", "Index one code layer and report class Hamming structure");
    index->add_option("--codes", codes, "GAHC file with labels sidecar")->required();
    index->add_option("--layer", layer, "Layer (0 is the shallowest)")->capture_default_str();
    index->add_option("--label-space", space, "Label space")->capture_default_str();

    auto* query = app.add_subcommand("query", "Top-k Hamming neighbours of every query code");
    query->add_option("--database", database, "Database GAHC file")->required();
    query->add_option("--queries", queries, "Query GAHC file")->required();
    query->add_option("--layer", layer, "Layer")->capture_default_str();
    query->add_option("-k", k, "Neighbours per query")->capture_default_str();

    auto* eval = app.add_subcommand("eval", "mAP@k report as JSON");
    eval->add_option("--database", database, "Database GAHC file")->required();
    eval->add_option("--queries", queries, "Query GAHC file")->required();
    eval->add_option("--layer", layer, "Layer")->capture_default_str();
    eval->add_option("--label-space", space, "activity, appearance or video-id")->capture_default_str();
    eval->add_option("-k", k, "Cutoff")->capture_default_str();

    auto* attn = app.add_subcommand("attn-dump", "Dump every attention map for one sample as JSON");
    attn->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    attn->add_option("--split", split, "train, validation or test")->capture_default_str();
    attn->add_option("--sample", sample, "Index within the split")->capture_default_str();
    attn->add_option("--dataset", dataset, "Dataset directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (generate->parsed()) {
            return cmd_generate(g);
        }
        if (train->parsed()) {
            return cmd_train(g, dataset, precomputed, quiet);
        }
        if (enc->parsed()) {
            return cmd_encode(g, checkpoint, split, dataset, precomputed);
        }
        if (fit->parsed()) {
            return cmd_fit_filter(g, codes, fit_options);
        }
        if (derive->parsed()) {
            return cmd_derive(g, codes, filter, layers);
        }
        if (index->parsed()) {
            return cmd_index(codes, layer, space);
        }
        if (query->parsed()) {
            return cmd_query(database, queries, layer, k);
        }
        if (eval->parsed()) {
            return cmd_eval(g, database, queries, layer, space, k);
        }
        if (attn->parsed()) {
            return cmd_attn_dump(g, checkpoint, split, sample, dataset);
        }
    } catch (const gah::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const gah::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
