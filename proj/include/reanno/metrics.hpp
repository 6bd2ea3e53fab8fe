#pragma once

#include "reanno/datastore.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace reanno {

using LabelMap = std::map<std::string, LabelIndex>;

struct ClassCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    double precision() const;
    double recall() const;
    /// Harmonic mean of precision and recall; 0 when both are undefined.
    double f1() const;
};

struct ConfusionTable {
    std::size_t n = 0;
    std::vector<ClassCounts> per_class;
};

struct ClassificationReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
    std::optional<double> binary_f1;
    std::optional<double> binary_precision;
    std::optional<double> binary_recall;
    ConfusionTable table;
};

ConfusionTable confusion_table(const LabelMap& pred, const LabelMap& gold, std::size_t n_classes);

/// Macro F1 averages per-class F1 over the classes present in `gold`; micro F1
/// pools counts over every class. Binary scores are reported for
/// `positive_class` when given.
ClassificationReport classification_metrics(const LabelMap& pred, const LabelMap& gold, std::size_t n_classes,
                                            std::optional<LabelIndex> positive_class = std::nullopt);

/// Chance-corrected agreement between two raters over the same ids.
double cohen_kappa(const LabelMap& rater_a, const LabelMap& rater_b);

struct RankReport {
    std::map<std::size_t, double> hit_at;  ///< k -> fraction with rank <= k
    double mrr = 0.0;
};

/// `ranks` are 1-based; std::nullopt means "no match in the retrieved list".
RankReport rank_metrics(const std::vector<std::optional<std::size_t>>& ranks,
                        const std::vector<std::size_t>& ks = {1, 5, 10});

using MetricEntries = std::vector<std::pair<std::string, double>>;
/// Flat "key=value" report, values printed with round-trip precision.
void write_metric_report(const MetricEntries& entries, const std::filesystem::path& path);
std::string format_metric(double v);

}  // namespace reanno
