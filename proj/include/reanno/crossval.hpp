#pragma once

#include "reanno/corrector.hpp"
#include "reanno/label_softening.hpp"

#include <optional>
#include <set>

namespace reanno {

enum class TargetMode { hard, knn_replaced, kde_soft };
const char* to_string(TargetMode m);
TargetMode target_mode_from_string(const std::string& s);

struct TrainConfig {
    std::size_t n_folds = 4;
    std::size_t epochs = 5;
    double lr = 5e-4;
    double dropout = 0.2;
    double warmup_ratio = 0.1;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    double weight_decay = 0.01;
    /// Share of each fold's training rows kept aside for epoch selection.
    double validation_fraction = 0.1;
    bool projection_bias = true;
    TargetMode target_mode = TargetMode::hard;
    /// Used when targets are derived per fold (knn-replaced, kde-soft).
    SofteningConfig softening;

    void validate() const;
};

/// Which ids each fold's trainer read. `trained` receives gradient updates
/// (directly or as injected peers); `validation` only scores epochs.
struct FoldAudit {
    std::set<std::string> trained;
    std::set<std::string> validation;
    std::set<std::string> held_out;
    std::size_t best_epoch = 0;
};

struct CrossvalAudit {
    std::vector<FoldAudit> folds;
};

/// Training targets for the rows of `fit` derived only from those rows.
SoftenedDataset fold_targets(const Datastore& fit, const TrainConfig& cfg);

/// Cross-validated relabelling. Targets are built per fold from the training
/// rows according to cfg.target_mode.
CorrectionResult train_crossval(const Datastore& store, const TrainConfig& cfg,
                                const std::optional<ContrastiveConfig>& contrastive = std::nullopt,
                                const std::optional<NeighborEncoderConfig>& encoder = std::nullopt,
                                CrossvalAudit* audit = nullptr);

/// Same, with precomputed targets aligned to the store rows.
CorrectionResult train_crossval(const Datastore& store, const SoftenedDataset& targets, const TrainConfig& cfg,
                                const std::optional<ContrastiveConfig>& contrastive = std::nullopt,
                                const std::optional<NeighborEncoderConfig>& encoder = std::nullopt,
                                CrossvalAudit* audit = nullptr);

/// Parameters of every fold after training, for checkpoint export.
struct FoldModels {
    std::vector<nn::ParamSet> params;
};

CorrectionResult train_crossval(const Datastore& store, const std::optional<SoftenedDataset>& targets,
                                const TrainConfig& cfg, const std::optional<ContrastiveConfig>& contrastive,
                                const std::optional<NeighborEncoderConfig>& encoder, CrossvalAudit* audit,
                                FoldModels* models);

}  // namespace reanno
