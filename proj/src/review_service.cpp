#include "reanno/review_service.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>

#include <unistd.h>

namespace reanno {

const char* to_string(ReviewStatus s) {
    switch (s) {
        case ReviewStatus::pending: return "pending";
        case ReviewStatus::accepted: return "accepted";
        case ReviewStatus::rejected: return "rejected";
        case ReviewStatus::relabeled: return "relabeled";
    }
    return "pending";
}

ReviewStatus review_status_from_string(const std::string& s) {
    if (s == "pending") return ReviewStatus::pending;
    if (s == "accepted") return ReviewStatus::accepted;
    if (s == "rejected") return ReviewStatus::rejected;
    if (s == "relabeled") return ReviewStatus::relabeled;
    throw ValidationError("unknown review status '" + s + "'");
}

const char* to_string(ReviewAction a) {
    switch (a) {
        case ReviewAction::accept_suggestion: return "accept-suggestion";
        case ReviewAction::reject: return "reject";
        case ReviewAction::relabel: return "relabel";
    }
    return "reject";
}

ReviewAction review_action_from_string(const std::string& s) {
    if (s == "accept-suggestion") return ReviewAction::accept_suggestion;
    if (s == "reject") return ReviewAction::reject;
    if (s == "relabel") return ReviewAction::relabel;
    throw ValidationError("unknown review action '" + s + "'");
}

Json to_json(const DecisionRecord& r) {
    Json j{{"id", r.id}, {"action", to_string(r.action)}};
    j["new_label"] = r.new_label ? Json(*r.new_label) : Json(nullptr);
    j["timestamp"] = r.timestamp;
    j["reviewer"] = r.reviewer;
    return j;
}

DecisionRecord decision_from_json(const Json& j) {
    try {
        DecisionRecord r;
        r.id = j.at("id").get<std::string>();
        r.action = review_action_from_string(j.at("action").get<std::string>());
        if (j.contains("new_label") && !j["new_label"].is_null()) r.new_label = j["new_label"].get<LabelIndex>();
        r.timestamp = j.at("timestamp").get<std::int64_t>();
        r.reviewer = j.at("reviewer").get<std::string>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed decision record: ") + e.what());
    }
}

std::vector<DecisionRecord> read_audit_log(const std::filesystem::path& path) {
    std::vector<DecisionRecord> out;
    for (const auto& row : read_jsonl(path)) out.push_back(decision_from_json(row));
    return out;
}

Datastore replay_audit_log(const Datastore& original, const std::vector<DecisionRecord>& records) {
    Datastore out = original;
    for (const auto& r : records)
        if (r.action != ReviewAction::reject && r.new_label) out.set_label(out.row_of(r.id), *r.new_label);
    return out;
}

std::pair<double, double> Projection2d::apply(const VectorXd& v) const {
    const Eigen::RowVector2d p = (v - mean).transpose() * basis;
    return {p(0), p(1)};
}

Projection2d projection_2d(const Datastore& store, std::size_t sample, std::uint64_t seed) {
    if (sample < 2) throw ValidationError("projection needs a sample of at least 2 points");
    if (sample > store.size()) throw ValidationError("projection sample exceeds the datastore size");
    std::vector<std::size_t> rows(store.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(rows.begin(), rows.end());
    rows.resize(sample);
    std::sort(rows.begin(), rows.end());

    const auto d = static_cast<Eigen::Index>(store.dim());
    MatrixXd x(static_cast<Eigen::Index>(sample), d);
    for (std::size_t i = 0; i < sample; ++i) x.row(static_cast<Eigen::Index>(i)) = store.vector(rows[i]).cast<double>().transpose();
    Projection2d out;
    out.mean = x.colwise().mean().transpose();
    x.rowwise() -= out.mean.transpose();
    const MatrixXd cov = x.transpose() * x / static_cast<double>(sample - 1);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    out.basis = MatrixXd::Zero(d, 2);
    // Eigenvalues come in ascending order.
    for (Eigen::Index c = 0; c < std::min<Eigen::Index>(2, d); ++c) {
        VectorXd v = eig.eigenvectors().col(d - 1 - c);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        out.basis.col(c) = v;
    }
    const MatrixXd coords = x * out.basis;
    for (std::size_t i = 0; i < sample; ++i)
        out.coords[store.id(rows[i])] = {coords(static_cast<Eigen::Index>(i), 0), coords(static_cast<Eigen::Index>(i), 1)};
    return out;
}

std::int64_t system_clock_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

ReviewService::ReviewService(Datastore store, const CredibilityReport& report,
                             std::optional<CorrectionResult> correction, MetadataMap metadata, ReviewConfig cfg,
                             std::filesystem::path audit_log, Clock clock)
    : original_(store),
      store_(std::move(store)),
      correction_(std::move(correction)),
      metadata_(std::move(metadata)),
      cfg_(cfg),
      audit_path_(std::move(audit_log)),
      clock_(std::move(clock)) {
    if (store_.size() < 2) throw ValidationError("the review service needs at least two datastore records");
    if (correction_ && correction_->ids != store_.ids())
        throw ValidationError("correction result ids do not match the datastore");
    for (const auto& e : report.entries) {
        const auto row = store_.find(e.id);
        if (!row) throw ValidationError("report id '" + e.id + "' is not in the datastore");
        if (!entries_.emplace(e.id, Entry{*row, e.psi, ReviewStatus::pending}).second)
            throw ValidationError("duplicate report id '" + e.id + "'");
    }
    rebuild_index();
    default_projection_ =
        projection_2d(store_, std::min(cfg_.projection_sample, store_.size()), cfg_.projection_seed);
    if (std::filesystem::exists(audit_path_)) {
        for (const auto& r : read_audit_log(audit_path_)) apply(r);
    }
}

void ReviewService::rebuild_index() { index_ = NeighborIndex::build(store_); }

ReviewItem ReviewService::summary(const std::string& id, const Entry& e) const {
    ReviewItem item;
    item.id = id;
    item.observed = store_.label(e.row);
    item.original = original_.label(e.row);
    item.psi = e.psi;
    item.status = e.status;
    if (correction_) {
        item.suggested = correction_->predicted[e.row];
        item.probs = correction_->probs.row(static_cast<Eigen::Index>(e.row)).transpose();
    } else {
        item.suggested = item.original;
    }
    return item;
}

QueuePage ReviewService::list_queue(std::size_t limit, std::size_t offset, ReviewStatus status) const {
    if (limit == 0 || limit > 1000) throw ValidationError("limit must lie in [1, 1000]");
    std::shared_lock lock(mutex_);
    std::vector<std::pair<double, const std::string*>> order;
    for (const auto& [id, e] : entries_)
        if (e.status == status) order.emplace_back(e.psi, &id);
    // entries_ iterates by id, so a stable sort keeps id order among equal psi.
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    QueuePage page;
    page.total = order.size();
    if (offset > order.size()) throw ValidationError("offset beyond the end of the queue");
    for (std::size_t i = offset; i < std::min(order.size(), offset + limit); ++i)
        page.items.push_back(summary(*order[i].second, entries_.at(*order[i].second)));
    return page;
}

ReviewItem ReviewService::get_item(const std::string& id) const {
    std::shared_lock lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw NotFoundError("unknown item '" + id + "'");
    ReviewItem item = summary(id, it->second);
    if (auto m = metadata_.find(id); m != metadata_.end()) item.metadata = m->second;
    const auto k = std::min(cfg_.preview_neighbors, index_.size() - 1);
    const auto nl = index_.query(store_.vector(it->second.row), k, id);
    for (const auto& n : nl.entries) item.neighbors.push_back({n.id, store_.label(store_.row_of(n.id)), n.distance});
    item.projection = default_projection_.apply(store_.vector(it->second.row).cast<double>());
    return item;
}

void ReviewService::append(const DecisionRecord& r) {
    if (!audit_path_.parent_path().empty()) std::filesystem::create_directories(audit_path_.parent_path());
    std::FILE* f = std::fopen(audit_path_.c_str(), "ab");
    if (!f) throw IoError("cannot open audit log " + audit_path_.string());
    const std::string line = to_json(r).dump() + "\n";
    const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0 &&
                    ::fsync(::fileno(f)) == 0;
    std::fclose(f);
    if (!ok) throw IoError("failed to write audit log " + audit_path_.string());
}

void ReviewService::apply(const DecisionRecord& r) {
    const auto it = entries_.find(r.id);
    if (it == entries_.end()) throw ValidationError("audit log names unknown item '" + r.id + "'");
    auto& e = it->second;
    e.status = r.action == ReviewAction::accept_suggestion ? ReviewStatus::accepted
               : r.action == ReviewAction::reject          ? ReviewStatus::rejected
                                                           : ReviewStatus::relabeled;
    if (r.action != ReviewAction::reject && r.new_label) store_.set_label(e.row, *r.new_label);
    auto& last = last_timestamp_[r.reviewer];
    last = std::max(last, r.timestamp);
    ++dirty_;
}

ReviewItem ReviewService::post_decision(const std::string& id, ReviewAction action,
                                        std::optional<LabelIndex> new_label, const std::string& reviewer) {
    std::unique_lock lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw NotFoundError("unknown item '" + id + "'");
    if (it->second.status != ReviewStatus::pending)
        throw ConflictError("item '" + id + "' was already decided (" + to_string(it->second.status) + ")");
    DecisionRecord r;
    r.id = id;
    r.action = action;
    r.reviewer = reviewer;
    switch (action) {
        case ReviewAction::accept_suggestion:
            r.new_label = correction_ ? correction_->predicted[it->second.row] : store_.label(it->second.row);
            break;
        case ReviewAction::relabel:
            if (!new_label) throw ValidationError("relabel needs a label");
            if (!store_.labels().contains(*new_label))
                throw ValidationError("unknown label index " + std::to_string(*new_label));
            r.new_label = new_label;
            break;
        case ReviewAction::reject: break;
    }
    const auto prev = last_timestamp_.find(reviewer);
    r.timestamp = clock_();
    if (prev != last_timestamp_.end()) r.timestamp = std::max(r.timestamp, prev->second);
    append(r);
    apply(r);
    return summary(id, it->second);
}

std::size_t ReviewService::recompute() {
    std::unique_lock lock(mutex_);
    if (dirty_ == 0) return 0;
    dirty_ = 0;
    rebuild_index();
    std::vector<std::size_t> rows;
    std::vector<Entry*> pending;
    for (auto& [id, e] : entries_)
        if (e.status == ReviewStatus::pending) {
            rows.push_back(e.row);
            pending.push_back(&e);
        }
    if (rows.empty()) return 0;
    const auto density = DensityModel::fit(store_, cfg_.bandwidth);
    const auto k = std::min(cfg_.k_cred, index_.size() - 1);
    const auto report = credibility_scores(index_, density, store_, rows, k);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < pending.size(); ++i) {
        if (report.entries[i].psi != pending[i]->psi) ++changed;
        pending[i]->psi = report.entries[i].psi;
    }
    return changed;
}

Projection2d ReviewService::projection(std::size_t sample, std::uint64_t seed) const {
    std::shared_lock lock(mutex_);
    return projection_2d(store_, sample, seed);
}

Datastore ReviewService::current_store() const {
    std::shared_lock lock(mutex_);
    return store_;
}

std::vector<LabelChange> ReviewService::changes() const {
    std::shared_lock lock(mutex_);
    std::vector<LabelChange> out;
    for (std::size_t r = 0; r < store_.size(); ++r)
        if (store_.label(r) != original_.label(r)) out.push_back({store_.id(r), original_.label(r), store_.label(r)});
    return out;
}

std::size_t ReviewService::decisions_since_recompute() const {
    std::shared_lock lock(mutex_);
    return dirty_;
}

}  // namespace reanno
