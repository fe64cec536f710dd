// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,4] [--allow-fail 6] [--cli path/to/gah] [--work dir] [--report out.json]
//
// Exit status is 0 when every selected criterion passes or is listed in --allow-fail.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "CLI11.hpp"
#include "fixtures.hpp"
#include "gah/gah.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kGraphTolerance = 1e-12;
constexpr std::size_t kGraphTrials = 200;
constexpr std::size_t kRetrievalTrials = 1000;
constexpr double kAccuracyFloor = 0.90;
constexpr double kActivityMapFloor = 0.85;
constexpr double kStvhSeconds = 20.0 * 60.0;
constexpr double kOrderingMargin = 0.05;
constexpr double kDerivedMargin = 0.05;
constexpr double kCompressionRatio = 0.282;
constexpr double kCompressionTolerance = 1e-10;
constexpr std::size_t kQuantBatches = 100;
constexpr std::size_t kMapK = 10;

struct Outcome {
    bool pass = false;
    std::string detail;
    json data = json::object();
};

std::string fmt(double v, int precision = 4)
{
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// 1. gradient integrity

Outcome gradient_integrity()
{
    const auto start = std::chrono::steady_clock::now();
    gah::Rng rng(101);
    json errors;
    for (const auto kind : {gah::ModelKind::stvh, gah::ModelKind::mstvh}) {
        const gah::ModelConfig c = gah::testing::tiny_config(kind);
        const gah::Batch batch = gah::testing::whole_batch(gah::testing::random_examples(rng, c, 3));
        const gah::LossWeights w;
        const gah::AnyModel model = gah::make_model(c);
        errors[gah::to_string(kind)] = std::visit(
            [&](const auto& m) { return gah::grad_check([&] { return m.loss(batch, w).total; }, m.parameters().all()); },
            model);
    }
    const double secs = seconds_since(start);
    const double worst = std::max(errors["stvh"].get<double>(), errors["mstvh"].get<double>());
    return {worst < kGradTolerance && secs < kGradSeconds,
            "max rel err stvh " + fmt(errors["stvh"]) + ", mstvh " + fmt(errors["mstvh"]) + " (< " +
                fmt(kGradTolerance) + "), " + fmt(secs, 3) + " s",
            {{"max_relative_error", errors}, {"seconds", secs}}};
}

// ---------------------------------------------------------------------------
// 2. graph oracles

gah::BoxTrajectorySet random_scene(gah::Rng& rng)
{
    const std::size_t n = 2 + rng.below(6);
    const std::size_t t = 2 + rng.below(9);
    const double extent = rng.uniform(20.0, 200.0);
    const bool clustered = rng.below(10) == 0; // coincident boxes exercise the std floor
    std::vector<gah::Box> boxes;
    gah::Box shared{};
    for (std::size_t j = 0; j < n; ++j) {
        double w = rng.uniform(1.0, extent / 4);
        double h = rng.uniform(1.0, extent / 4);
        double x = rng.uniform(0.0, extent - w);
        double y = rng.uniform(0.0, extent - h);
        for (std::size_t f = 0; f < t; ++f) {
            x = std::clamp(x + rng.uniform(-extent / 20, extent / 20), 0.0, extent - w);
            y = std::clamp(y + rng.uniform(-extent / 20, extent / 20), 0.0, extent - h);
            gah::Box b{x, y, std::min(x + w, extent), std::min(y + h, extent)};
            if (clustered) {
                if (j == 0 && f == 0) {
                    shared = b;
                }
                b = shared;
            }
            boxes.push_back(b);
        }
    }
    return gah::BoxTrajectorySet(n, t, extent, extent, std::move(boxes));
}

Outcome graph_oracles()
{
    gah::Rng rng(202);
    double worst = 0.0;
    std::size_t violations = 0;
    for (std::size_t trial = 0; trial < kGraphTrials; ++trial) {
        const auto traj = random_scene(rng);
        const std::size_t n = traj.objects();
        const std::size_t t = traj.frames();
        const gah::RelationGraphs g = gah::build_graphs(traj);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t t1 = 0; t1 < t; ++t1) {
                for (std::size_t t2 = 0; t2 < t; ++t2) {
                    const double v = g.g_t.at((j * t + t1) * t + t2);
                    worst = std::max(worst, std::abs(v - static_cast<double>(gah::oracle::temporal(traj, j, t1, t2))));
                    const bool ok = v >= 0.0 && v <= 1.0 && (t1 != t2 || v == 1.0) && (t2 <= t1 || v == 0.0);
                    violations += ok ? 0 : 1;
                }
            }
        }
        for (std::size_t f = 0; f < t; ++f) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double v = g.g_s.at((f * n + i) * n + j);
                    worst = std::max(worst, std::abs(v - static_cast<double>(gah::oracle::spatial(traj, f, i, j))));
                    const bool ok = (i != j || v == 1.0) && v == g.g_s.at((f * n + j) * n + i);
                    violations += ok ? 0 : 1;
                }
            }
        }
    }
    return {worst <= kGraphTolerance && violations == 0,
            std::to_string(kGraphTrials) + " trajectories, max |diff| " + fmt(worst) + " (<= " +
                fmt(kGraphTolerance) + "), " + std::to_string(violations) + " invariant violations",
            {{"max_abs_diff", worst}, {"invariant_violations", violations}}};
}

// ---------------------------------------------------------------------------
// 3. retrieval oracle

gah::oracle::Signs random_signs(gah::Rng& rng, std::size_t k, double p_plus)
{
    gah::oracle::Signs s(k);
    for (auto& v : s) {
        v = rng.uniform() < p_plus ? 1 : -1;
    }
    return s;
}

Outcome retrieval_oracle()
{
    gah::Rng rng(303);
    std::size_t mismatches = 0;
    const std::vector<std::size_t> lengths{16, 32, 64, 128};
    for (std::size_t trial = 0; trial < kRetrievalTrials; ++trial) {
        const std::size_t bits = lengths[trial % lengths.size()];
        const std::size_t db_size = 1 + rng.below(60);
        const double bias = rng.uniform(0.05, 0.5);
        const std::size_t classes = 1 + rng.below(4);
        std::vector<std::uint64_t> ids(db_size + 4);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            ids[i] = i * 7 + 3;
        }
        rng.shuffle(ids);
        std::vector<gah::oracle::Entry> db;
        gah::HammingIndex index(bits);
        for (std::size_t i = 0; i < db_size; ++i) {
            db.push_back({ids[i], random_signs(rng, bits, bias), static_cast<std::int64_t>(rng.below(classes))});
            index.add(db.back().id, db.back().code, {{"activity", db.back().label}});
        }
        const std::size_t k = 1 + rng.below(70);
        std::vector<gah::CodeRecord> queries;
        double sum = 0.0;
        std::size_t counted = 0;
        for (std::size_t qi = 0; qi < 4; ++qi) {
            const std::uint64_t id = qi % 2 == 0 ? db[rng.below(db_size)].id : ids[db_size + qi];
            const gah::oracle::Entry q{id, random_signs(rng, bits, bias), static_cast<std::int64_t>(rng.below(classes))};
            queries.push_back(gah::make_record(q.id, q.code, {{"activity", q.label}}));
            auto want = gah::oracle::ranking(db, q.code, q.id);
            want.resize(std::min(k, want.size()));
            mismatches += gah::query_topk(index, queries.back().code, k, q.id) == want ? 0 : 1;
            bool c = false;
            const double ap = gah::oracle::average_precision(db, q, k, &c);
            if (c) {
                sum += ap;
                ++counted;
            }
        }
        const auto report = gah::map_at_k(queries, index, "activity", k);
        const double want = counted == 0 ? 0.0 : sum / static_cast<double>(counted);
        mismatches += (report.value == want && report.per_query.size() == counted) ? 0 : 1;
    }
    const double hand = gah::average_precision({true, false, true, false, false}, 2, 5);
    const bool hand_ok = hand == 5.0 / 6.0;
    return {mismatches == 0 && hand_ok,
            std::to_string(kRetrievalTrials) + " instances, " + std::to_string(mismatches) +
                " mismatches; hand AP " + fmt(hand, 17) + (hand_ok ? " == 5/6" : " != 5/6"),
            {{"mismatches", mismatches}, {"hand_ap", hand}}};
}

// ---------------------------------------------------------------------------
// Trained runs shared by 4/8 and 5/6

struct TrainedRun {
    gah::RunConfig config;
    gah::RunData data;
    gah::AnyModel model;
    gah::TrainResult result;
    gah::CodeBook database; // train split
    gah::CodeBook queries;  // test split
    gah::LabelSidecar database_labels;
    gah::LabelSidecar query_labels;
    double accuracy = 0.0;
    double seconds = 0.0;

    [[nodiscard]] double map(const gah::CodeBook& db, const gah::CodeBook& q, std::size_t layer,
                             const std::string& space) const
    {
        return gah::evaluate_map(db, database_labels, q, query_labels, layer, space, kMapK).value;
    }
};

TrainedRun train_default(gah::ModelKind kind)
{
    gah::RunConfig c;
    c.kind = kind;
    const auto start = std::chrono::steady_clock::now();
    gah::RunData data = gah::prepare_data(c);
    gah::TrainOptions opt;
    opt.on_epoch = [&](const gah::EpochMetrics& m) {
        if (m.epoch % 10 == 0) {
            std::cerr << "  [" << gah::to_string(kind) << "] epoch " << m.epoch << " loss " << fmt(m.loss.at("total"))
                      << " train acc " << fmt(m.train_accuracy, 3) << '\n';
        }
    };
    auto [model, result] = gah::train(c, data, opt);
    const double secs = seconds_since(start);
    TrainedRun run{c, std::move(data), std::move(model), std::move(result), {}, {}, {}, {}, 0.0, secs};
    std::visit(
        [&](const auto& m) {
            run.database = gah::encode_examples(m, run.data.train);
            run.queries = gah::encode_examples(m, run.data.test);
            run.accuracy = gah::activity_accuracy(m, run.data.test);
        },
        run.model);
    run.database_labels = gah::labels_of(run.data.train);
    run.query_labels = gah::labels_of(run.data.test);
    return run;
}

// ---------------------------------------------------------------------------
// 4. desk-scale STVH

Outcome stvh_experiment(const TrainedRun& run)
{
    const double act_map = run.map(run.database, run.queries, 0, "activity");
    const bool pass = run.accuracy >= kAccuracyFloor && act_map >= kActivityMapFloor && run.seconds < kStvhSeconds;
    return {pass,
            "test accuracy " + fmt(run.accuracy) + " (>= " + fmt(kAccuracyFloor) + "), activity mAP@10 " +
                fmt(act_map) + " (>= " + fmt(kActivityMapFloor) + "), " + fmt(run.seconds, 4) + " s",
            {{"test_accuracy", run.accuracy},
             {"activity_map", act_map},
             {"seconds", run.seconds},
             {"best_epoch", run.result.best_epoch}}};
}

// ---------------------------------------------------------------------------
// 8. Hamming structure after the STVH run

Outcome hamming_structure(const TrainedRun& run)
{
    const gah::HammingIndex index =
        gah::build_index(gah::records_from(run.queries, 0, run.query_labels), run.queries.bits());
    const gah::ClassDistances d = gah::mean_hamming_by_class(index, "activity");
    bool pass = true;
    std::string detail;
    for (std::size_t a = 0; a < d.classes.size(); ++a) {
        double nearest_other = INFINITY;
        for (std::size_t b = 0; b < d.classes.size(); ++b) {
            if (b != a) {
                nearest_other = std::min(nearest_other, d.mean[a][b]);
            }
        }
        pass = pass && d.mean[a][a] < nearest_other;
        detail += (a == 0 ? "" : ", ") + std::string("class ") + std::to_string(d.classes[a]) + " within " +
                  fmt(d.mean[a][a], 3) + " < cross " + fmt(nearest_other, 3);
    }
    return {pass, "test codes: " + detail, {{"classes", d.classes}, {"mean_hamming", d.mean}}};
}

// ---------------------------------------------------------------------------
// 5. multi-focus ordering

Outcome multi_focus_ordering(const TrainedRun& run)
{
    const std::size_t last = run.database.layers() - 1;
    const double app_first = run.map(run.database, run.queries, 0, "appearance");
    const double app_last = run.map(run.database, run.queries, last, "appearance");
    const double act_first = run.map(run.database, run.queries, 0, "activity");
    const double act_last = run.map(run.database, run.queries, last, "activity");
    const bool pass = app_first - app_last >= kOrderingMargin && act_last - act_first >= kOrderingMargin;
    return {pass,
            "appearance b_1 " + fmt(app_first) + " vs b_Y " + fmt(app_last) + ", activity b_Y " + fmt(act_last) +
                " vs b_1 " + fmt(act_first) + " (margin >= " + fmt(kOrderingMargin) + ")",
            {{"appearance", {app_first, app_last}}, {"activity", {act_first, act_last}}, {"test_accuracy", run.accuracy}}};
}

// ---------------------------------------------------------------------------
// 6. filter-matrix fidelity

std::uintmax_t payload_bits(const fs::path& file, std::uintmax_t header_bytes)
{
    return (fs::file_size(file) - header_bytes) * 8;
}

Outcome filter_fidelity(const TrainedRun& run, const fs::path& work)
{
    const std::size_t layers = run.database.layers();
    const std::size_t last = layers - 1;
    const gah::FilterFit fit = gah::fit_filter(run.database);
    const gah::CodeBook db = gah::derive_layers(run.database.layer(last), fit.filter, layers);
    const gah::CodeBook q = gah::derive_layers(run.queries.layer(last), fit.filter, layers);

    bool fidelity = true;
    json per_layer = json::array();
    std::string worst;
    double worst_drop = -INFINITY;
    for (std::size_t l = 0; l < last; ++l) {
        json row;
        for (const char* space : {"activity", "appearance"}) {
            const double original = run.map(run.database, run.queries, l, space);
            const double derived = run.map(db, q, l, space);
            row[space] = {{"original", original}, {"derived", derived}};
            fidelity = fidelity && derived >= original - kDerivedMargin;
            if (original - derived > worst_drop) {
                worst_drop = original - derived;
                worst = std::string(space) + " layer " + std::to_string(l + 1) + ": derived " + fmt(derived) +
                        " vs original " + fmt(original);
            }
        }
        per_layer.push_back(row);
    }

    fs::create_directories(work);
    const fs::path codes_file = work / "deepest.gahc";
    const fs::path filter_file = work / "filter.gahf";
    gah::write_codes(codes_file, run.database.layer(last));
    gah::write_filter(filter_file, fit.filter);
    const std::size_t m = run.database.count();
    const std::size_t k = run.database.bits();
    const std::uintmax_t stored = payload_bits(codes_file, 16) + payload_bits(filter_file, 6);
    const bool storage = stored == m * k + k * k;
    const double ratio = gah::compression_ratio(1000, 128, 4);
    const bool ratio_ok = std::abs(ratio - kCompressionRatio) <= kCompressionTolerance;

    return {fidelity && storage && ratio_ok,
            "worst " + worst + " (margin " + fmt(kDerivedMargin) + "); storage " + std::to_string(stored) +
                " bits vs M*K+K^2 " + std::to_string(m * k + k * k) + "; compression_ratio(1000,128,4) " +
                fmt(ratio, 12),
            {{"per_layer", per_layer},
             {"filter_bit_error", fit.bit_error},
             {"storage_bits", stored},
             {"expected_storage_bits", m * k + k * k},
             {"compression_ratio", ratio}}};
}

// ---------------------------------------------------------------------------
// 7. quantization-loss bound

Outcome quantization_bound()
{
    gah::Rng rng(707);
    std::size_t below = 0;
    std::size_t not_strict = 0;
    std::size_t not_equal = 0;
    std::size_t not_monotone = 0;
    for (std::size_t trial = 0; trial < kQuantBatches; ++trial) {
        const std::size_t batch = 1 + rng.below(8);
        const std::size_t bits = std::size_t{8} << rng.below(4);
        std::vector<double> values(batch * bits);
        for (double& v : values) {
            v = rng.uniform(-1.5, 1.5);
        }
        const gah::Array h({batch, bits}, values);
        const gah::Array b = gah::sign(h);
        const double bound = static_cast<double>(batch * batch);
        const double loss = gah::quantization_loss(h, b).item();
        below += loss >= bound ? 0 : 1;
        not_strict += loss > bound ? 0 : 1;
        not_equal += gah::quantization_loss(b, b).item() == bound ? 0 : 1;

        // One entry nudged off +-1 must lift the loss above the bound.
        std::vector<double> nudged = b.to_vector();
        nudged[rng.below(nudged.size())] *= 0.999;
        not_strict += gah::quantization_loss(gah::Array({batch, bits}, nudged), b).item() > bound ? 0 : 1;

        double prev = INFINITY;
        for (int a = 1; a <= 10; ++a) {
            const double v = gah::quantization_loss(gah::scale(b, 0.1 * a), b).item();
            not_monotone += v < prev ? 0 : 1;
            prev = v;
        }
    }
    return {below + not_strict + not_equal + not_monotone == 0,
            std::to_string(kQuantBatches) + " batches: " + std::to_string(below) + " below B^2, " +
                std::to_string(not_strict) + " non-sign h at B^2, " + std::to_string(not_equal) +
                " sign h off B^2, " + std::to_string(not_monotone) + " non-decreasing steps along alpha*b",
            {{"below", below}, {"not_strict", not_strict}, {"not_equal", not_equal}, {"not_monotone", not_monotone}}};
}

// ---------------------------------------------------------------------------
// 9. pipeline determinism

int run_cli(const std::string& cli, const std::string& args, const fs::path& log)
{
    const std::string cmd = "\"" + cli + "\" " + args + " >> \"" + log.string() + "\" 2>&1";
    return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome pipeline_determinism(const std::string& cli, const fs::path& work)
{
    fs::remove_all(work);
    fs::create_directories(work);
    gah::RunConfig c;
    c.kind = gah::ModelKind::mstvh;
    c.objects = 3;
    c.frames = 4;
    c.channels = 8;
    c.dim = 16;
    c.bits = 16;
    c.layers = 3;
    c.train_count = 48;
    c.test_count = 16;
    c.epochs = 3;
    c.loss_weights.hash_warmup_epochs = 1;
    const fs::path config = work / "config.json";
    gah::io::write_text(config, json(c).dump(2));

    const std::string cfg = "--config \"" + config.string() + "\" --seed 4242";
    // Both runs use the same directory (paths end up in manifests) and are moved aside afterwards.
    const fs::path dir = work / "run";
    for (const char* name : {"a", "b"}) {
        const fs::path log = work / (std::string(name) + ".log");
        const auto out = [&](const char* rel) { return " --out \"" + (dir / rel).string() + "\" "; };
        const std::vector<std::string> steps{
            cfg + out("data") + "generate",
            cfg + out("run") + "train --quiet --dataset \"" + (dir / "data").string() + "\"",
            cfg + out("codes/train.gahc") + "encode --split train --checkpoint \"" + (dir / "run/final").string() +
                "\" --dataset \"" + (dir / "data").string() + "\"",
            cfg + out("codes/test.gahc") + "encode --split test --checkpoint \"" + (dir / "run/final").string() +
                "\" --dataset \"" + (dir / "data").string() + "\"",
            out("codes/filter.gahf") + "fit-filter --codes \"" + (dir / "codes/train.gahc").string() + "\"",
            out("codes/derived.gahc") + "derive-codes --codes \"" + (dir / "codes/train.gahc").string() +
                "\" --filter \"" + (dir / "codes/filter.gahf").string() + "\"",
            out("eval.json") + "eval --layer 2 --database \"" + (dir / "codes/train.gahc").string() +
                "\" --queries \"" + (dir / "codes/test.gahc").string() + "\"",
        };
        for (const auto& step : steps) {
            if (run_cli(cli, step, log) != 0) {
                return {false, "pipeline step failed: gah " + step + " (see " + log.string() + ")"};
            }
        }
        fs::rename(dir, work / name);
    }

    std::vector<std::string> compared;
    std::vector<std::string> differing;
    for (const auto& entry : fs::recursive_directory_iterator(work / "a")) {
        if (!entry.is_regular_file()) {
            continue;
        }
        const fs::path rel = fs::relative(entry.path(), work / "a");
        compared.push_back(rel.string());
        if (slurp(entry.path()) != slurp(work / "b" / rel)) {
            differing.push_back(rel.string());
        }
    }
    std::size_t files_b = 0;
    for (const auto& entry : fs::recursive_directory_iterator(work / "b")) {
        files_b += entry.is_regular_file() ? 1 : 0;
    }
    const bool key_files = std::count(compared.begin(), compared.end(), "codes/test.gahc") == 1 &&
                           std::count(compared.begin(), compared.end(), "eval.json") == 1;
    const bool pass = differing.empty() && files_b == compared.size() && key_files;
    std::string detail = std::to_string(compared.size()) + " files compared (codes, filter, checkpoints, metrics, "
                                                           "eval JSON), " +
                         std::to_string(differing.size()) + " differ";
    for (const auto& d : differing) {
        detail += " " + d;
    }
    return {pass, detail, {{"files", compared}, {"differing", differing}}};
}

std::set<int> parse_list(const std::string& s)
{
    std::set<int> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) {
            out.insert(std::stoi(item));
        }
    }
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance criteria"};
    std::string only;
    std::string allow_fail;
    std::string cli = GAH_CLI_PATH;
    std::string work = (fs::temp_directory_path() / ("gah_acceptance_" + std::to_string(::getpid()))).string();
    std::string report_path;
    app.add_option("--only", only, "Comma-separated criteria to run (default all)");
    app.add_option("--allow-fail", allow_fail, "Criteria whose failure does not affect the exit status");
    app.add_option("--cli", cli, "Path of the gah command-line tool")->capture_default_str();
    app.add_option("--work", work, "Scratch directory");
    app.add_option("--report", report_path, "Write the detailed results as JSON");
    CLI11_PARSE(app, argc, argv);

    std::set<int> selected = parse_list(only);
    if (selected.empty()) {
        selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    }
    const std::set<int> allowed = parse_list(allow_fail);
    const auto wanted = [&](int c) { return selected.contains(c); };

    const std::map<int, std::string> names{{1, "gradient integrity"},   {2, "graph oracles"},
                                           {3, "retrieval oracle"},     {4, "desk-scale STVH"},
                                           {5, "multi-focus ordering"}, {6, "filter-matrix fidelity"},
                                           {7, "quantization bound"},   {8, "Hamming structure"},
                                           {9, "pipeline determinism"}};
    std::map<int, Outcome> outcomes;
    const auto record = [&](int c, const std::function<Outcome()>& f) {
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::cout << "criterion " << c << " [" << names.at(c) << "]: " << (o.pass ? "PASS" : "FAIL") << "  "
                  << o.detail << std::endl;
        outcomes[c] = std::move(o);
    };

    if (wanted(1)) {
        record(1, gradient_integrity);
    }
    if (wanted(2)) {
        record(2, graph_oracles);
    }
    if (wanted(3)) {
        record(3, retrieval_oracle);
    }
    if (wanted(7)) {
        record(7, quantization_bound);
    }
    if (wanted(4) || wanted(8)) {
        std::optional<TrainedRun> run;
        try {
            run = train_default(gah::ModelKind::stvh);
        } catch (const std::exception& e) {
            std::cerr << "STVH run failed: " << e.what() << '\n';
        }
        const auto guarded = [&](auto f) {
            return [&, f] { return run ? f(*run) : Outcome{false, "STVH run failed"}; };
        };
        if (wanted(4)) {
            record(4, guarded(stvh_experiment));
        }
        if (wanted(8)) {
            record(8, guarded(hamming_structure));
        }
    }
    if (wanted(5) || wanted(6)) {
        std::optional<TrainedRun> run;
        try {
            run = train_default(gah::ModelKind::mstvh);
        } catch (const std::exception& e) {
            std::cerr << "M-STVH run failed: " << e.what() << '\n';
        }
        if (wanted(5)) {
            record(5, [&] { return run ? multi_focus_ordering(*run) : Outcome{false, "M-STVH run failed"}; });
        }
        if (wanted(6)) {
            record(6, [&] {
                return run ? filter_fidelity(*run, fs::path(work) / "filter") : Outcome{false, "M-STVH run failed"};
            });
        }
    }
    if (wanted(9)) {
        record(9, [&] { return pipeline_determinism(cli, fs::path(work) / "pipeline"); });
    }
    fs::remove_all(work);

    int blocking = 0;
    json report = json::object();
    for (const auto& [c, o] : outcomes) {
        report[std::to_string(c)] = {{"name", names.at(c)}, {"pass", o.pass}, {"detail", o.detail}, {"data", o.data}};
        if (!o.pass && !allowed.contains(c)) {
            ++blocking;
        }
    }
    if (!report_path.empty()) {
        gah::io::write_text(report_path, report.dump(2));
    }
    std::size_t passed = 0;
    for (const auto& [c, o] : outcomes) {
        passed += o.pass ? 1 : 0;
    }
    std::cout << "summary: " << passed << "/" << outcomes.size() << " criteria pass";
    for (const auto& [c, o] : outcomes) {
        if (!o.pass && allowed.contains(c)) {
            std::cout << "; criterion " << c << " fails (listed in --allow-fail)";
        }
    }
    std::cout << std::endl;
    return blocking == 0 ? 0 : 1;
}
