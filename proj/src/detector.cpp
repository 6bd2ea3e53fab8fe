#include "reanno/detector.hpp"

#include "reanno/jsonl.hpp"

#include <algorithm>
#include <map>

namespace reanno {

const char* to_string(Verdict v) {
    return v == Verdict::consistent ? "consistent" : "inconsistent";
}

Verdict verdict_from_string(const std::string& s) {
    if (s == "consistent") return Verdict::consistent;
    if (s == "inconsistent") return Verdict::inconsistent;
    throw ValidationError("unknown verdict '" + s + "'");
}

LabelIndex plurality_label(std::span<const LabelIndex> labels) {
    if (labels.empty()) throw ValidationError("plurality of an empty neighbour list");
    std::map<LabelIndex, std::size_t> counts;
    for (auto l : labels) ++counts[l];
    std::size_t best_count = 0;
    for (const auto& [l, c] : counts) best_count = std::max(best_count, c);
    for (auto l : labels)
        if (counts[l] == best_count) return l;
    return labels.front();
}

std::vector<Verdict> vote_detect(const NeighborIndex& index, const Datastore& store,
                                 std::span<const std::size_t> query_rows, std::size_t k) {
    if (k == 0) throw ValidationError("k must be at least 1");
    std::vector<Verdict> out(query_rows.size());
    parallel_for(query_rows.size(), [&](std::size_t q) {
        const auto row = query_rows[q];
        const auto nl = index.query(store.vector(row), k, store.id(row));
        std::vector<LabelIndex> labels;
        labels.reserve(nl.size());
        for (const auto& n : nl.entries) labels.push_back(store.label(store.row_of(n.id)));
        out[q] = plurality_label(labels) == store.label(row) ? Verdict::consistent : Verdict::inconsistent;
    });
    return out;
}

std::vector<double> psi_from_log_scores(std::span<const double> log_s) {
    std::vector<double> psi(log_s.size(), 1.0);
    if (log_s.empty()) return psi;
    const double top = *std::max_element(log_s.begin(), log_s.end());
    if (!std::isfinite(top)) return psi;  // every score is zero: degenerate cohort
    std::vector<double> s(log_s.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::exp(log_s[i] - top);
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    const double min = *lo, max = *hi;
    if (max == min) return psi;
    for (std::size_t i = 0; i < s.size(); ++i) psi[i] = (s[i] - min) / (max - min);
    return psi;
}

CredibilityReport credibility_scores(const NeighborIndex& index, const DensityModel& density, const Datastore& store,
                                     std::span<const std::size_t> query_rows, std::size_t k_cred) {
    if (query_rows.empty()) throw ValidationError("credibility scoring needs at least one query");
    if (k_cred == 0 || k_cred > index.size())
        throw ValidationError("k_cred=" + std::to_string(k_cred) + " exceeds index size " + std::to_string(index.size()));
    if (density.dim() != store.dim()) throw ValidationError("density model dimension does not match datastore");

    // log f_{label(n)}(e_n) for every key, evaluated at the key's datastore vector.
    std::vector<std::size_t> key_rows(index.size());
    for (std::size_t s = 0; s < index.size(); ++s) key_rows[s] = store.row_of(index.id(s));
    std::vector<double> key_log_f(index.size());
    parallel_for(index.size(), [&](std::size_t s) {
        const auto row = key_rows[s];
        key_log_f[s] = density.log_density(store.label(row), store.vector(row));
    });

    CredibilityReport report;
    report.entries.resize(query_rows.size());
    parallel_for(query_rows.size(), [&](std::size_t q) {
        const auto row = query_rows[q];
        const auto label = store.label(row);
        const std::optional<std::string> self = store.id(row);
        const auto available = index.size() - (index.slot_of(*self) ? 1 : 0);
        const auto nl = index.query(store.vector(row), std::min(k_cred, available), self);
        const double max_d = nl.entries.empty() ? 0.0 : nl.entries.back().distance;
        std::vector<double> terms;
        for (const auto& n : nl.entries) {
            if (store.label(key_rows[n.slot]) != label) continue;
            const double d = max_d > 0.0 ? n.distance / max_d : 0.0;
            terms.push_back(key_log_f[n.slot] - d);
        }
        auto& e = report.entries[q];
        e.id = *self;
        e.log_s = log_sum_exp(Eigen::Map<const VectorXd>(terms.data(), static_cast<Eigen::Index>(terms.size())));
    });

    std::vector<double> log_s(report.entries.size());
    for (std::size_t i = 0; i < log_s.size(); ++i) log_s[i] = report.entries[i].log_s;
    const auto psi = psi_from_log_scores(log_s);
    for (std::size_t i = 0; i < psi.size(); ++i) report.entries[i].psi = psi[i];
    return report;
}

CredibilityReport classify_threshold(CredibilityReport report, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ValidationError("threshold beta must lie in [0, 1]");
    for (auto& e : report.entries) e.verdict = e.psi >= beta ? Verdict::consistent : Verdict::inconsistent;
    return report;
}

RankReport rank_eval(const NeighborIndex& index, const Datastore& store, const RevisionFile& revisions,
                     const std::vector<std::size_t>& k_list, std::optional<std::size_t> depth) {
    if (revisions.entries.empty()) throw ValidationError("rank evaluation needs at least one revision");
    if (k_list.empty()) throw ValidationError("rank evaluation needs at least one k");
    revisions.validate(store);
    const std::size_t want = depth.value_or(*std::max_element(k_list.begin(), k_list.end()));

    std::vector<std::pair<std::string, LabelIndex>> items(revisions.entries.begin(), revisions.entries.end());
    std::vector<std::optional<std::size_t>> ranks(items.size());
    parallel_for(items.size(), [&](std::size_t i) {
        const auto& [id, truth] = items[i];
        const auto row = store.row_of(id);
        const auto available = index.size() - (index.slot_of(id) ? 1 : 0);
        const auto nl = index.query(store.vector(row), std::min(want, available), id);
        for (std::size_t r = 0; r < nl.size(); ++r) {
            if (store.label(store.row_of(nl.entries[r].id)) == truth) {
                ranks[i] = r + 1;
                break;
            }
        }
    });
    return rank_metrics(ranks, k_list);
}

LabelMap detection_gold(const Datastore& store, const RevisionFile& revisions) {
    LabelMap gold;
    for (const auto& [id, truth] : revisions.entries)
        gold[id] = static_cast<LabelIndex>(store.label(store.row_of(id)) == truth ? Verdict::consistent
                                                                                   : Verdict::inconsistent);
    return gold;
}

LabelMap detection_pred(const CredibilityReport& report) {
    LabelMap pred;
    for (const auto& e : report.entries) {
        if (!e.verdict) throw ValidationError("report entry '" + e.id + "' has no verdict");
        pred[e.id] = static_cast<LabelIndex>(*e.verdict);
    }
    return pred;
}

void write_credibility_report(const CredibilityReport& report, const std::filesystem::path& path) {
    std::vector<Json> rows;
    rows.reserve(report.entries.size());
    for (const auto& e : report.entries) {
        Json row{{"id", e.id}, {"psi", e.psi}};
        row["verdict"] = e.verdict ? Json(to_string(*e.verdict)) : Json(nullptr);
        rows.push_back(std::move(row));
    }
    write_jsonl(rows, path);
}

CredibilityReport read_credibility_report(const std::filesystem::path& path) {
    CredibilityReport report;
    for (const auto& row : read_jsonl(path)) {
        try {
            CredibilityEntry e;
            e.id = row.at("id").get<std::string>();
            e.psi = row.at("psi").get<double>();
            if (row.contains("verdict") && !row["verdict"].is_null())
                e.verdict = verdict_from_string(row["verdict"].get<std::string>());
            report.entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError(path.string() + ": malformed report record: " + ex.what());
        }
    }
    return report;
}

}  // namespace reanno
