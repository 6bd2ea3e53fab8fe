#pragma once

#include "reanno/corrector.hpp"
#include "reanno/detector.hpp"
#include "reanno/jsonl.hpp"
#include "reanno/label_softening.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>

namespace reanno {

enum class ReviewStatus { pending, accepted, rejected, relabeled };
const char* to_string(ReviewStatus s);
ReviewStatus review_status_from_string(const std::string& s);

enum class ReviewAction { accept_suggestion, reject, relabel };
const char* to_string(ReviewAction a);
ReviewAction review_action_from_string(const std::string& s);

struct NeighborPreview {
    std::string id;
    LabelIndex label = 0;
    double distance = 0.0;
};

struct ReviewItem {
    std::string id;
    LabelIndex observed = 0;  ///< current label in the service's datastore
    LabelIndex original = 0;  ///< label when the service started
    double psi = 0.0;
    LabelIndex suggested = 0;
    VectorXd probs;  ///< empty without a correction result
    ReviewStatus status = ReviewStatus::pending;
    std::optional<ExampleMetadata> metadata;
    std::vector<NeighborPreview> neighbors;
    std::optional<std::pair<double, double>> projection;

    /// Suggestion agrees with the current label; the UI offers "confirm".
    bool confirm() const { return suggested == observed; }
};

struct DecisionRecord {
    std::string id;
    ReviewAction action = ReviewAction::reject;
    std::optional<LabelIndex> new_label;
    std::int64_t timestamp = 0;  ///< milliseconds since the Unix epoch
    std::string reviewer;

    bool operator==(const DecisionRecord&) const = default;
};

Json to_json(const DecisionRecord& r);
DecisionRecord decision_from_json(const Json& j);
std::vector<DecisionRecord> read_audit_log(const std::filesystem::path& path);

/// Applies label-changing records to a copy of `original`.
Datastore replay_audit_log(const Datastore& original, const std::vector<DecisionRecord>& records);

struct QueuePage {
    std::size_t total = 0;
    std::vector<ReviewItem> items;  ///< summaries: no neighbours or projection
};

/// Top-2 principal components of a seeded sample; applies to any vector.
struct Projection2d {
    VectorXd mean;
    MatrixXd basis;  ///< d x 2, columns by descending eigenvalue
    std::map<std::string, std::pair<double, double>> coords;

    std::pair<double, double> apply(const VectorXd& v) const;
};

/// PCA of `sample` rows drawn without replacement with `seed`. Each component's
/// sign makes its largest-magnitude entry positive.
Projection2d projection_2d(const Datastore& store, std::size_t sample, std::uint64_t seed);

struct ReviewConfig {
    std::size_t k_cred = 250;
    double bandwidth = 0.25;
    std::size_t preview_neighbors = 10;
    std::size_t projection_sample = 2000;
    std::uint64_t projection_seed = 0;
};

using Clock = std::function<std::int64_t()>;
std::int64_t system_clock_ms();

/// Triage queue over a credibility report. All mutations hold a single writer
/// lock; reads share it. Decisions are appended and flushed to the audit log
/// before they are acknowledged. An existing log is replayed on start.
class ReviewService {
public:
    ReviewService(Datastore store, const CredibilityReport& report, std::optional<CorrectionResult> correction,
                  MetadataMap metadata, ReviewConfig cfg, std::filesystem::path audit_log,
                  Clock clock = system_clock_ms);

    /// Items with `status` by ascending psi (ties by id).
    QueuePage list_queue(std::size_t limit, std::size_t offset, ReviewStatus status = ReviewStatus::pending) const;
    ReviewItem get_item(const std::string& id) const;
    ReviewItem post_decision(const std::string& id, ReviewAction action, std::optional<LabelIndex> new_label,
                             const std::string& reviewer);
    /// Rebuilds index and density over current labels and rescales psi over the
    /// pending items. Returns how many pending psi values changed; 0 and no work
    /// when nothing was decided since the last run.
    std::size_t recompute();
    Projection2d projection(std::size_t sample, std::uint64_t seed) const;

    Datastore current_store() const;
    const Datastore& original_store() const { return original_; }
    /// Ids whose current label differs from the original.
    std::vector<LabelChange> changes() const;
    const LabelSpace& labels() const { return original_.labels(); }
    std::size_t decisions_since_recompute() const;

private:
    struct Entry {
        std::size_t row = 0;
        double psi = 0.0;
        ReviewStatus status = ReviewStatus::pending;
    };

    ReviewItem summary(const std::string& id, const Entry& e) const;
    void apply(const DecisionRecord& r);
    void rebuild_index();
    void append(const DecisionRecord& r);

    mutable std::shared_mutex mutex_;
    Datastore original_;
    Datastore store_;
    std::optional<CorrectionResult> correction_;
    MetadataMap metadata_;
    ReviewConfig cfg_;
    std::filesystem::path audit_path_;
    Clock clock_;
    std::map<std::string, Entry> entries_;
    NeighborIndex index_;
    Projection2d default_projection_;
    std::map<std::string, std::int64_t> last_timestamp_;
    std::size_t dirty_ = 0;
};

}  // namespace reanno
