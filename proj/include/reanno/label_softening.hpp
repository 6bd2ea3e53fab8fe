#pragma once

#include "reanno/datastore.hpp"
#include "reanno/density.hpp"
#include "reanno/neighbor_index.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace reanno {

struct SofteningConfig {
    double phi = 0.3;
    std::uint64_t seed = 0;
    std::size_t k_replace = 1;
    double bandwidth = 0.25;
};

enum class Provenance { original, knn_replaced, kde_soft };

const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

/// Either a hard label or a distribution over the label space.
struct TrainingTarget {
    LabelIndex hard = 0;
    VectorXd soft;  ///< empty for hard targets
    Provenance provenance = Provenance::original;

    bool is_soft() const { return soft.size() > 0; }
    /// One-hot or soft distribution of length n_classes.
    VectorXd distribution(std::size_t n_classes) const;
};

struct LabelChange {
    std::string id;
    LabelIndex old_label = 0;
    LabelIndex new_label = 0;

    bool operator==(const LabelChange&) const = default;
};

/// Targets aligned with the rows of the store they were derived from.
struct SoftenedDataset {
    std::size_t n_classes = 0;
    std::vector<std::string> ids;
    std::vector<TrainingTarget> targets;
    std::vector<LabelChange> changes;

    /// Observed labels as hard targets.
    static SoftenedDataset from_observed(const Datastore& store);
    void validate(const Datastore& store) const;
};

/// Stream seed for one id: replacement decisions do not depend on row order.
std::uint64_t per_id_seed(std::uint64_t seed, const std::string& id);

/// With probability phi (drawn per id) the target becomes the plurality label of
/// the k_replace nearest non-self neighbours; otherwise the observed label.
SoftenedDataset knn_replace(const Datastore& store, const NeighborIndex& index, const SofteningConfig& cfg);

/// Every target becomes the normalised KDE class-density vector of its embedding.
SoftenedDataset kde_soften(const Datastore& store, const DensityModel& density);

/// One object per line: {"id", "old", "new"}.
void write_change_log(const std::vector<LabelChange>& changes, const std::filesystem::path& path);

/// One object per line: {"id", "provenance", "label"}, plus "probs" for soft targets.
void write_targets(const SoftenedDataset& data, const std::filesystem::path& path);
SoftenedDataset read_targets(const std::filesystem::path& path, std::size_t n_classes);

}  // namespace reanno
