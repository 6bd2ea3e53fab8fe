#pragma once

#include "reanno/common.hpp"
#include "reanno/datastore.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace reanno {

struct Neighbor {
    std::size_t slot = 0;  ///< position of the key inside the index
    std::string id;
    double distance = 0.0;  ///< squared Euclidean

    bool operator==(const Neighbor&) const = default;
};

/// Neighbours of one query in ascending distance, ties by ascending id.
struct NeighborList {
    std::optional<std::string> query_id;
    std::vector<Neighbor> entries;

    std::size_t size() const { return entries.size(); }
    bool operator==(const NeighborList&) const = default;
};

/// Exact brute-force k-nearest-neighbour search under squared Euclidean
/// distance. Keys are held in double precision; distances accumulate in index
/// order (see squared_distance) so results are reproducible bit for bit.
class NeighborIndex {
public:
    NeighborIndex() = default;
    NeighborIndex(std::vector<std::string> ids, RowMatrix<double> keys);

    /// Index over every record of the store.
    static NeighborIndex build(const Datastore& store);
    /// Index over the given rows of the store only.
    static NeighborIndex build(const Datastore& store, std::span<const std::size_t> rows);

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(keys_.cols()); }
    const std::string& id(std::size_t slot) const { return ids_.at(slot); }
    std::optional<std::size_t> slot_of(const std::string& id) const;
    auto key(std::size_t slot) const { return keys_.row(static_cast<Eigen::Index>(slot)); }
    const RowMatrix<double>& keys() const { return keys_; }

    template <typename Derived>
    NeighborList query(const Eigen::MatrixBase<Derived>& vector, std::size_t k,
                       const std::optional<std::string>& exclude_id = std::nullopt) const {
        const VectorXd v = vector.template cast<double>();
        return query_impl(v, k, exclude_id);
    }

    /// Runs one query per row of `queries`; parallel execution returns the same
    /// lists as the sequential loop.
    std::vector<NeighborList> batch_query(const RowMatrix<double>& queries, std::size_t k,
                                          const std::vector<std::optional<std::string>>& exclude_ids) const;

    /// Replaces the vectors of existing keys.
    void refresh(const std::map<std::string, VectorXd>& updates);

private:
    NeighborList query_impl(const VectorXd& v, std::size_t k, const std::optional<std::string>& exclude_id) const;
    void rebuild_lookup();

    std::vector<std::string> ids_;
    RowMatrix<double> keys_;
    std::map<std::string, std::size_t> slots_;
    std::vector<std::size_t> id_rank_;  ///< rank of each slot in ascending-id order
};

}  // namespace reanno
