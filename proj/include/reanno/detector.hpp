#pragma once

#include "reanno/datastore.hpp"
#include "reanno/density.hpp"
#include "reanno/metrics.hpp"
#include "reanno/neighbor_index.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace reanno {

enum class Verdict : LabelIndex { consistent = 0, inconsistent = 1 };

const char* to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

enum class DetectorMode { vote, credibility };

struct DetectorConfig {
    DetectorMode mode = DetectorMode::credibility;
    std::size_t k_vote = 3;
    std::size_t k_cred = 250;
    double beta = 0.5;
    double bandwidth = 0.25;
    /// Positive class for binary F1 reporting.
    Verdict positive = Verdict::inconsistent;
};

struct CredibilityEntry {
    std::string id;
    double log_s = kNegInf;
    double psi = 0.0;
    std::optional<Verdict> verdict;
};

struct CredibilityReport {
    std::vector<CredibilityEntry> entries;
};

/// Plurality label of `labels` (given in rank order). Ties go to the tied label
/// that occurs first, i.e. whose nearest representative is closest.
LabelIndex plurality_label(std::span<const LabelIndex> labels);

/// Consistent iff the query's observed label equals the plurality label of its
/// k nearest neighbours. Queries are store rows; the query itself is excluded
/// when present in the index.
std::vector<Verdict> vote_detect(const NeighborIndex& index, const Datastore& store,
                                 std::span<const std::size_t> query_rows, std::size_t k);

/// Min-max rescaling of exp(log_s - max log_s) over the cohort. A cohort whose
/// scores are all equal maps to 1 everywhere.
std::vector<double> psi_from_log_scores(std::span<const double> log_s);

/// Credibility score of each query row: log s is the log-sum-exp over
/// same-label neighbours n of (log f_{r_i}(e_n) - d_n), where d_n is the
/// squared distance divided by the largest distance in the retrieved list.
/// The cohort for min-max rescaling is the query set. Verdicts are left unset.
CredibilityReport credibility_scores(const NeighborIndex& index, const DensityModel& density, const Datastore& store,
                                     std::span<const std::size_t> query_rows, std::size_t k_cred);

/// Sets verdict = consistent iff psi >= beta.
CredibilityReport classify_threshold(CredibilityReport report, double beta);

/// First-match ranks of the revised labels among each revised id's neighbours,
/// summarised as Hit@k and MRR. `depth` bounds the retrieved list (defaults to
/// the largest k).
RankReport rank_eval(const NeighborIndex& index, const Datastore& store, const RevisionFile& revisions,
                     const std::vector<std::size_t>& k_list, std::optional<std::size_t> depth = std::nullopt);

/// Gold detection labels: inconsistent where the observed label differs from
/// the revision. Only revised ids are included.
LabelMap detection_gold(const Datastore& store, const RevisionFile& revisions);
LabelMap detection_pred(const CredibilityReport& report);

/// One object per line: {"id", "psi", "verdict"}.
void write_credibility_report(const CredibilityReport& report, const std::filesystem::path& path);
CredibilityReport read_credibility_report(const std::filesystem::path& path);

}  // namespace reanno
