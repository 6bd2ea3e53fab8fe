#include "reanno/label_softening.hpp"

#include "reanno/detector.hpp"
#include "reanno/jsonl.hpp"

namespace reanno {

const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::original: return "original";
        case Provenance::knn_replaced: return "knn-replaced";
        case Provenance::kde_soft: return "kde-soft";
    }
    return "original";
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "original") return Provenance::original;
    if (s == "knn-replaced") return Provenance::knn_replaced;
    if (s == "kde-soft") return Provenance::kde_soft;
    throw ValidationError("unknown provenance '" + s + "'");
}

VectorXd TrainingTarget::distribution(std::size_t n_classes) const {
    if (is_soft()) {
        if (static_cast<std::size_t>(soft.size()) != n_classes) throw ValidationError("soft target has wrong length");
        return soft;
    }
    VectorXd v = VectorXd::Zero(static_cast<Eigen::Index>(n_classes));
    v(static_cast<Eigen::Index>(hard)) = 1.0;
    return v;
}

SoftenedDataset SoftenedDataset::from_observed(const Datastore& store) {
    SoftenedDataset out;
    out.n_classes = store.labels().size();
    out.ids = store.ids();
    out.targets.reserve(store.size());
    for (std::size_t r = 0; r < store.size(); ++r) out.targets.push_back({store.label(r), {}, Provenance::original});
    return out;
}

void SoftenedDataset::validate(const Datastore& store) const {
    if (ids != store.ids() || targets.size() != store.size())
        throw ValidationError("targets do not cover the datastore ids");
    if (n_classes != store.labels().size()) throw ValidationError("targets use a different label space size");
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& t = targets[i];
        if (t.hard >= n_classes) throw ValidationError("target for '" + ids[i] + "' outside the label space");
        if (t.is_soft()) {
            if (static_cast<std::size_t>(t.soft.size()) != n_classes || (t.soft.array() < 0.0).any() ||
                std::abs(t.soft.sum() - 1.0) > 1e-6)
                throw ValidationError("soft target for '" + ids[i] + "' is not a distribution");
        }
    }
}

std::uint64_t per_id_seed(std::uint64_t seed, const std::string& id) {
    return mix_seed(seed ^ stable_hash(id));
}

SoftenedDataset knn_replace(const Datastore& store, const NeighborIndex& index, const SofteningConfig& cfg) {
    if (!(cfg.phi >= 0.0 && cfg.phi <= 1.0)) throw ValidationError("phi must lie in [0, 1]");
    if (cfg.k_replace == 0) throw ValidationError("k_replace must be positive");
    if (store.size() < 2) throw ValidationError("label replacement needs at least one non-self neighbour");

    SoftenedDataset out = SoftenedDataset::from_observed(store);
    std::vector<char> replaced(store.size(), 0);
    parallel_for(store.size(), [&](std::size_t r) {
        Rng rng(per_id_seed(cfg.seed, store.id(r)));
        if (!(rng.uniform() < cfg.phi)) return;
        const auto nl = index.query(store.vector(r), cfg.k_replace, store.id(r));
        std::vector<LabelIndex> labels;
        for (const auto& n : nl.entries) labels.push_back(store.label(store.row_of(n.id)));
        out.targets[r] = {plurality_label(labels), {}, Provenance::knn_replaced};
        replaced[r] = 1;
    });
    for (std::size_t r = 0; r < store.size(); ++r)
        if (replaced[r] && out.targets[r].hard != store.label(r))
            out.changes.push_back({store.id(r), store.label(r), out.targets[r].hard});
    return out;
}

SoftenedDataset kde_soften(const Datastore& store, const DensityModel& density) {
    SoftenedDataset out = SoftenedDataset::from_observed(store);
    parallel_for(store.size(), [&](std::size_t r) {
        out.targets[r] = {store.label(r), density.soft_label(store.vector(r)).probs, Provenance::kde_soft};
    });
    return out;
}

void write_change_log(const std::vector<LabelChange>& changes, const std::filesystem::path& path) {
    std::vector<Json> rows;
    rows.reserve(changes.size());
    for (const auto& c : changes) rows.push_back(Json{{"id", c.id}, {"old", c.old_label}, {"new", c.new_label}});
    write_jsonl(rows, path);
}

void write_targets(const SoftenedDataset& data, const std::filesystem::path& path) {
    std::vector<Json> rows;
    rows.reserve(data.targets.size());
    for (std::size_t i = 0; i < data.targets.size(); ++i) {
        const auto& t = data.targets[i];
        Json row{{"id", data.ids[i]}, {"provenance", to_string(t.provenance)}, {"label", t.hard}};
        if (t.is_soft()) row["probs"] = std::vector<double>(t.soft.data(), t.soft.data() + t.soft.size());
        rows.push_back(std::move(row));
    }
    write_jsonl(rows, path);
}

SoftenedDataset read_targets(const std::filesystem::path& path, std::size_t n_classes) {
    SoftenedDataset out;
    out.n_classes = n_classes;
    for (const auto& row : read_jsonl(path)) {
        try {
            out.ids.push_back(row.at("id").get<std::string>());
            TrainingTarget t;
            t.provenance = provenance_from_string(row.at("provenance").get<std::string>());
            t.hard = row.at("label").get<LabelIndex>();
            if (row.contains("probs")) {
                const auto probs = row["probs"].get<std::vector<double>>();
                t.soft = Eigen::Map<const VectorXd>(probs.data(), static_cast<Eigen::Index>(probs.size()));
            }
            out.targets.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ": malformed target record: " + e.what());
        }
    }
    return out;
}

}  // namespace reanno
