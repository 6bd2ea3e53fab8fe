#include "reanno/metrics.hpp"

#include "reanno/jsonl.hpp"

#include <cstdio>

namespace reanno {

double ClassCounts::precision() const {
    return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double ClassCounts::recall() const {
    return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double ClassCounts::f1() const {
    const double denom = static_cast<double>(2 * tp + fp + fn);
    return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

namespace {

void require_same_ids(const LabelMap& a, const LabelMap& b) {
    if (a.size() != b.size()) throw ValidationError("metric inputs cover different id sets");
    for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib)
        if (ia->first != ib->first) throw ValidationError("metric inputs cover different id sets ('" + ia->first + "')");
}

}  // namespace

ConfusionTable confusion_table(const LabelMap& pred, const LabelMap& gold, std::size_t n_classes) {
    require_same_ids(pred, gold);
    ConfusionTable t;
    t.n = gold.size();
    t.per_class.resize(n_classes);
    for (auto ip = pred.begin(), ig = gold.begin(); ig != gold.end(); ++ip, ++ig) {
        const auto p = ip->second, g = ig->second;
        if (p >= n_classes || g >= n_classes) throw ValidationError("label index out of range in metric input");
        if (p == g) {
            ++t.per_class[g].tp;
        } else {
            ++t.per_class[p].fp;
            ++t.per_class[g].fn;
        }
    }
    for (auto& c : t.per_class) c.tn = t.n - c.tp - c.fp - c.fn;
    return t;
}

ClassificationReport classification_metrics(const LabelMap& pred, const LabelMap& gold, std::size_t n_classes,
                                            std::optional<LabelIndex> positive_class) {
    if (gold.empty()) throw ValidationError("metrics need at least one item");
    ClassificationReport r;
    r.table = confusion_table(pred, gold, n_classes);
    ClassCounts pooled;
    double f1_sum = 0.0;
    std::size_t present = 0;
    for (const auto& c : r.table.per_class) {
        pooled.tp += c.tp;
        pooled.fp += c.fp;
        pooled.fn += c.fn;
        if (c.tp + c.fn > 0) {
            f1_sum += c.f1();
            ++present;
        }
    }
    r.accuracy = static_cast<double>(pooled.tp) / static_cast<double>(r.table.n);
    r.macro_f1 = present == 0 ? 0.0 : f1_sum / static_cast<double>(present);
    r.micro_f1 = pooled.f1();
    if (positive_class) {
        const auto& c = r.table.per_class.at(*positive_class);
        r.binary_f1 = c.f1();
        r.binary_precision = c.precision();
        r.binary_recall = c.recall();
    }
    return r;
}

double cohen_kappa(const LabelMap& rater_a, const LabelMap& rater_b) {
    require_same_ids(rater_a, rater_b);
    if (rater_a.size() < 2) throw ValidationError("Cohen's kappa needs at least 2 items");
    std::map<LabelIndex, double> freq_a, freq_b;
    std::size_t agree = 0;
    for (auto ia = rater_a.begin(), ib = rater_b.begin(); ia != rater_a.end(); ++ia, ++ib) {
        freq_a[ia->second] += 1.0;
        freq_b[ib->second] += 1.0;
        if (ia->second == ib->second) ++agree;
    }
    const double n = static_cast<double>(rater_a.size());
    const double p_o = static_cast<double>(agree) / n;
    if (p_o == 1.0) return 1.0;
    double p_e = 0.0;
    for (const auto& [label, count] : freq_a)
        if (auto it = freq_b.find(label); it != freq_b.end()) p_e += (count / n) * (it->second / n);
    if (p_e == 1.0) throw ValidationError("Cohen's kappa undefined: expected agreement is 1");
    return (p_o - p_e) / (1.0 - p_e);
}

RankReport rank_metrics(const std::vector<std::optional<std::size_t>>& ranks, const std::vector<std::size_t>& ks) {
    if (ranks.empty()) throw ValidationError("rank metrics need at least one query");
    RankReport r;
    for (auto k : ks) r.hit_at[k] = 0.0;
    double rr = 0.0;
    for (const auto& rank : ranks) {
        if (!rank) continue;
        if (*rank == 0) throw ValidationError("ranks are 1-based");
        rr += 1.0 / static_cast<double>(*rank);
        for (auto& [k, hits] : r.hit_at)
            if (*rank <= k) hits += 1.0;
    }
    const double n = static_cast<double>(ranks.size());
    for (auto& [k, hits] : r.hit_at) hits /= n;
    r.mrr = rr / n;
    return r;
}

std::string format_metric(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_metric_report(const MetricEntries& entries, const std::filesystem::path& path) {
    std::vector<std::pair<std::string, std::string>> kv;
    kv.reserve(entries.size());
    for (const auto& [k, v] : entries) kv.emplace_back(k, format_metric(v));
    write_key_values(kv, path);
}

}  // namespace reanno
