#include "reanno/neighbor_index.hpp"

#include <algorithm>
#include <numeric>

namespace reanno {

NeighborIndex::NeighborIndex(std::vector<std::string> ids, RowMatrix<double> keys)
    : ids_(std::move(ids)), keys_(std::move(keys)) {
    if (ids_.empty()) throw ValidationError("cannot build a neighbour index over an empty store");
    if (static_cast<std::size_t>(keys_.rows()) != ids_.size())
        throw ValidationError("neighbour index: id count does not match key rows");
    rebuild_lookup();
}

NeighborIndex NeighborIndex::build(const Datastore& store) {
    if (store.empty()) throw ValidationError("cannot build a neighbour index over an empty store");
    return NeighborIndex(store.ids(), store.vectors().cast<double>());
}

NeighborIndex NeighborIndex::build(const Datastore& store, std::span<const std::size_t> rows) {
    if (rows.empty()) throw ValidationError("cannot build a neighbour index over an empty store");
    std::vector<std::string> ids;
    ids.reserve(rows.size());
    RowMatrix<double> keys(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(store.dim()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ids.push_back(store.id(rows[i]));
        keys.row(static_cast<Eigen::Index>(i)) = store.vector(rows[i]).cast<double>().transpose();
    }
    return NeighborIndex(std::move(ids), std::move(keys));
}

void NeighborIndex::rebuild_lookup() {
    slots_.clear();
    for (std::size_t s = 0; s < ids_.size(); ++s)
        if (!slots_.emplace(ids_[s], s).second) throw ValidationError("duplicate id '" + ids_[s] + "' in index");
    id_rank_.assign(ids_.size(), 0);
    std::size_t rank = 0;
    for (const auto& [id, slot] : slots_) id_rank_[slot] = rank++;
}

std::optional<std::size_t> NeighborIndex::slot_of(const std::string& id) const {
    if (auto it = slots_.find(id); it != slots_.end()) return it->second;
    return std::nullopt;
}

NeighborList NeighborIndex::query_impl(const VectorXd& v, std::size_t k,
                                       const std::optional<std::string>& exclude_id) const {
    if (static_cast<std::size_t>(v.size()) != dim())
        throw ValidationError("query dimension " + std::to_string(v.size()) + " does not match index dim " +
                              std::to_string(dim()));
    std::optional<std::size_t> excluded;
    if (exclude_id) excluded = slot_of(*exclude_id);
    const std::size_t available = size() - (excluded ? 1 : 0);
    if (k == 0 || k > available)
        throw ValidationError("k=" + std::to_string(k) + " invalid for " + std::to_string(available) +
                              " available neighbours");

    std::vector<double> dist(size());
    for (std::size_t s = 0; s < size(); ++s) dist[s] = squared_distance(keys_.row(static_cast<Eigen::Index>(s)), v);

    std::vector<std::size_t> order;
    order.reserve(available);
    for (std::size_t s = 0; s < size(); ++s)
        if (!excluded || s != *excluded) order.push_back(s);
    auto before = [&](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return id_rank_[a] < id_rank_[b];
    };
    if (k < order.size()) {
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
        order.resize(k);
    }
    std::sort(order.begin(), order.end(), before);

    NeighborList out;
    out.query_id = exclude_id;
    out.entries.reserve(k);
    for (auto s : order) out.entries.push_back({s, ids_[s], dist[s]});
    return out;
}

std::vector<NeighborList> NeighborIndex::batch_query(const RowMatrix<double>& queries, std::size_t k,
                                                     const std::vector<std::optional<std::string>>& exclude_ids) const {
    if (!exclude_ids.empty() && exclude_ids.size() != static_cast<std::size_t>(queries.rows()))
        throw ValidationError("batch_query: exclusion list length does not match query count");
    std::vector<NeighborList> out(static_cast<std::size_t>(queries.rows()));
    parallel_for(out.size(), [&](std::size_t i) {
        const VectorXd q = queries.row(static_cast<Eigen::Index>(i)).transpose();
        out[i] = query_impl(q, k, exclude_ids.empty() ? std::nullopt : exclude_ids[i]);
    });
    return out;
}

void NeighborIndex::refresh(const std::map<std::string, VectorXd>& updates) {
    for (const auto& [id, v] : updates) {
        if (!slots_.contains(id)) throw NotFoundError("refresh: unknown id '" + id + "'");
        if (static_cast<std::size_t>(v.size()) != dim())
            throw ValidationError("refresh: vector for '" + id + "' has wrong dimension");
    }
    for (const auto& [id, v] : updates) keys_.row(static_cast<Eigen::Index>(slots_.at(id))) = v.transpose();
}

}  // namespace reanno
