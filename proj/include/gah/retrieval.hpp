#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "gah/codes.hpp"
#include "gah/io.hpp"
#include "gah/parallel.hpp"
#include "json.hpp"

namespace gah {

using Labels = std::map<std::string, std::int64_t>;

struct CodeRecord {
    std::uint64_t id = 0;
    std::vector<std::uint64_t> code;   // packed as in pack_words
    Labels labels;
};

inline CodeRecord make_record(std::uint64_t id, std::span<const std::int8_t> signs, Labels labels = {})
{
    return {id, pack_words(signs), std::move(labels)};
}

inline std::size_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("hamming: codes of " + std::to_string(a.size()) + " and " +
                                    std::to_string(b.size()) + " words");
    }
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += static_cast<std::size_t>(std::popcount(a[i] ^ b[i]));
    }
    return d;
}

struct Hit {
    std::uint64_t id = 0;
    std::size_t distance = 0;

    bool operator==(const Hit&) const = default;
};

using RetrievalResult = std::vector<Hit>;

/// Linear-scan Hamming index. Immutable once built, so concurrent queries are safe.
class HammingIndex {
public:
    explicit HammingIndex(std::size_t bits) : bits_(bits), words_((bits + 63) / 64)
    {
        if (bits == 0) {
            throw std::invalid_argument("index needs at least one bit");
        }
    }

    void add(CodeRecord record)
    {
        if (record.code.size() != words_) {
            throw std::invalid_argument("record " + std::to_string(record.id) + " has " +
                                        std::to_string(record.code.size()) + " words, index expects " +
                                        std::to_string(words_));
        }
        if (!ids_.insert(record.id).second) {
            throw std::invalid_argument("duplicate id " + std::to_string(record.id) + " in index");
        }
        records_.push_back(std::move(record));
    }

    void add(std::uint64_t id, std::span<const std::int8_t> signs, Labels labels = {})
    {
        if (signs.size() != bits_) {
            throw std::invalid_argument("code has " + std::to_string(signs.size()) + " bits, index expects " +
                                        std::to_string(bits_));
        }
        add(make_record(id, signs, std::move(labels)));
    }

    [[nodiscard]] std::size_t bits() const { return bits_; }
    [[nodiscard]] std::size_t words() const { return words_; }
    [[nodiscard]] std::size_t size() const { return records_.size(); }
    [[nodiscard]] bool empty() const { return records_.empty(); }
    [[nodiscard]] const std::vector<CodeRecord>& records() const { return records_; }

private:
    std::size_t bits_;
    std::size_t words_;
    std::vector<CodeRecord> records_;
    std::unordered_set<std::uint64_t> ids_;
};

/// The k nearest records by (distance, id). A record whose id equals exclude_id is skipped.
inline RetrievalResult query_topk(const HammingIndex& index, std::span<const std::uint64_t> q, std::size_t k,
                                  std::optional<std::uint64_t> exclude_id = std::nullopt)
{
    if (k == 0) {
        throw std::invalid_argument("query_topk: k must be at least 1");
    }
    if (index.empty()) {
        throw std::invalid_argument("query_topk: empty index");
    }
    if (q.size() != index.words()) {
        throw std::invalid_argument("query_topk: query has " + std::to_string(q.size()) + " words, index expects " +
                                    std::to_string(index.words()));
    }
    RetrievalResult all;
    all.reserve(index.size());
    for (const auto& r : index.records()) {
        if (exclude_id && r.id == *exclude_id) {
            continue;
        }
        all.push_back({r.id, hamming(q, r.code)});
    }
    const auto before = [](const Hit& a, const Hit& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
    };
    const std::size_t keep = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), before);
    all.resize(keep);
    return all;
}

/// AP over a ranked relevance list: sum of precision@j at relevant ranks j, over min(k, relevant_total).
inline double average_precision(const std::vector<bool>& relevant, std::size_t relevant_total, std::size_t k)
{
    const std::size_t denom = std::min(k, relevant_total);
    if (denom == 0) {
        return 0.0;
    }
    // Extended precision so short hand cases round once, e.g. (1 + 2/3) / 2 gives the double nearest 5/6.
    long double sum = 0.0L;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < std::min(k, relevant.size()); ++j) {
        if (relevant[j]) {
            ++hits;
            sum += static_cast<long double>(hits) / static_cast<long double>(j + 1);
        }
    }
    return static_cast<double>(sum / static_cast<long double>(denom));
}

struct QueryAp {
    std::uint64_t id = 0;
    double ap = 0.0;
};

struct MapReport {
    std::string label_space;
    std::size_t k = 0;
    double value = 0.0;
    std::vector<QueryAp> per_query;   // excluded queries do not appear
    std::size_t excluded = 0;         // queries with no relevant database record
};

inline std::int64_t label_of(const CodeRecord& r, const std::string& space)
{
    const auto it = r.labels.find(space);
    if (it == r.labels.end()) {
        throw std::invalid_argument("record " + std::to_string(r.id) + " has no '" + space + "' label");
    }
    return it->second;
}

/// mAP@k of the queries against the index. A database record with the query's own id is never ranked
/// or counted as relevant.
inline MapReport map_at_k(const std::vector<CodeRecord>& queries, const HammingIndex& index,
                          const std::string& label_space, std::size_t k)
{
    if (queries.empty()) {
        throw std::invalid_argument("map_at_k: empty query set");
    }
    std::map<std::int64_t, std::size_t> class_sizes;
    for (const auto& r : index.records()) {
        ++class_sizes[label_of(r, label_space)];
    }
    std::map<std::uint64_t, std::int64_t> label_by_id;
    for (const auto& r : index.records()) {
        label_by_id[r.id] = label_of(r, label_space);
    }

    std::vector<std::optional<double>> aps(queries.size());
    parallel_for(queries.size(), [&](std::size_t i) {
        const auto& q = queries[i];
        const std::int64_t label = label_of(q, label_space);
        std::size_t relevant_total = class_sizes.contains(label) ? class_sizes.at(label) : 0;
        const auto self = label_by_id.find(q.id);
        if (self != label_by_id.end() && self->second == label) {
            --relevant_total;
        }
        if (relevant_total == 0) {
            return;
        }
        const auto hits = query_topk(index, q.code, k, q.id);
        std::vector<bool> rel;
        for (const auto& h : hits) {
            rel.push_back(label_by_id.at(h.id) == label);
        }
        aps[i] = average_precision(rel, relevant_total, k);
    });

    MapReport report{label_space, k, 0.0, {}, 0};
    double sum = 0.0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (aps[i]) {
            report.per_query.push_back({queries[i].id, *aps[i]});
            sum += *aps[i];
        } else {
            ++report.excluded;
        }
    }
    if (!report.per_query.empty()) {
        report.value = sum / static_cast<double>(report.per_query.size());
    }
    return report;
}

inline void to_json(nlohmann::json& j, const MapReport& r)
{
    nlohmann::json per = nlohmann::json::array();
    for (const auto& q : r.per_query) {
        per.push_back({{"id", q.id}, {"ap", q.ap}});
    }
    j = {{"metric", "mAP@k"},     {"label_space", r.label_space}, {"k", r.k},
         {"value", r.value},      {"per_query", per},             {"excluded_queries", r.excluded}};
}

struct ClassDistances {
    std::vector<std::int64_t> classes;         // ascending
    std::vector<std::vector<double>> mean;     // [c1][c2]
};

/// Mean Hamming distance between every pair of classes; the diagonal skips self-pairs.
inline ClassDistances mean_hamming_by_class(const HammingIndex& index, const std::string& label_space)
{
    if (index.empty()) {
        throw std::invalid_argument("mean_hamming_by_class: empty index");
    }
    std::map<std::int64_t, std::vector<const CodeRecord*>> by_class;
    for (const auto& r : index.records()) {
        by_class[label_of(r, label_space)].push_back(&r);
    }
    ClassDistances out;
    for (const auto& [c, members] : by_class) {
        out.classes.push_back(c);
    }
    const std::size_t n = out.classes.size();
    out.mean.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t a = 0; a < n; ++a) {
        const auto& ra = by_class.at(out.classes[a]);
        for (std::size_t b = a; b < n; ++b) {
            const auto& rb = by_class.at(out.classes[b]);
            double sum = 0.0;
            std::size_t pairs = 0;
            for (std::size_t i = 0; i < ra.size(); ++i) {
                for (std::size_t j = (a == b ? i + 1 : 0); j < rb.size(); ++j) {
                    sum += static_cast<double>(hamming(ra[i]->code, rb[j]->code));
                    ++pairs;
                }
            }
            if (pairs == 0) {
                throw std::invalid_argument("class " + std::to_string(out.classes[a]) +
                                            " has a single record, within-class distance is undefined");
            }
            out.mean[a][b] = out.mean[b][a] = sum / static_cast<double>(pairs);
        }
    }
    return out;
}

// Labels sidecar: {"ids": [row order], "labels": {"<id>": {"activity": 0, ...}}}.

struct LabelSidecar {
    std::vector<std::uint64_t> ids;
    std::map<std::uint64_t, Labels> labels;
};

inline void write_labels(const std::filesystem::path& path, const LabelSidecar& sidecar)
{
    nlohmann::json labels = nlohmann::json::object();
    for (const auto& [id, l] : sidecar.labels) {
        labels[std::to_string(id)] = l;
    }
    io::write_text(path, nlohmann::json{{"ids", sidecar.ids}, {"labels", labels}}.dump(1));
}

inline LabelSidecar read_labels(const std::filesystem::path& path)
{
    LabelSidecar s;
    try {
        const auto j = nlohmann::json::parse(io::read_text(path));
        s.ids = j.at("ids").get<std::vector<std::uint64_t>>();
        for (const auto& [key, value] : j.at("labels").items()) {
            s.labels[std::stoull(key)] = value.get<Labels>();
        }
    } catch (const std::exception& e) {
        throw FormatError("bad labels sidecar " + path.string() + ": " + e.what());
    }
    for (auto id : s.ids) {
        if (!s.labels.contains(id)) {
            throw FormatError(path.string() + ": id " + std::to_string(id) + " has no labels");
        }
    }
    return s;
}

/// Records for one layer of a code book, labelled from the sidecar (rows follow sidecar.ids).
inline std::vector<CodeRecord> records_from(const CodeBook& book, std::size_t layer, const LabelSidecar& sidecar)
{
    if (sidecar.ids.size() != book.count()) {
        throw FormatError("labels list " + std::to_string(sidecar.ids.size()) + " ids for " +
                          std::to_string(book.count()) + " codes");
    }
    std::vector<CodeRecord> out;
    out.reserve(book.count());
    for (std::size_t m = 0; m < book.count(); ++m) {
        out.push_back(make_record(sidecar.ids[m], book.code(m, layer), sidecar.labels.at(sidecar.ids[m])));
    }
    return out;
}

inline HammingIndex build_index(std::vector<CodeRecord> records, std::size_t bits)
{
    HammingIndex index(bits);
    for (auto& r : records) {
        index.add(std::move(r));
    }
    return index;
}

} // namespace gah
