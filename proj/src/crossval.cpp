#include "reanno/crossval.hpp"

#include "reanno/metrics.hpp"
#include "reanno/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace reanno {

using nn::Graph;
using nn::ParamSet;
using nn::Tensor;
using nn::Var;

const char* to_string(TargetMode m) {
    switch (m) {
        case TargetMode::hard: return "hard";
        case TargetMode::knn_replaced: return "knn-replaced";
        case TargetMode::kde_soft: return "kde-soft";
    }
    return "hard";
}

TargetMode target_mode_from_string(const std::string& s) {
    if (s == "hard") return TargetMode::hard;
    if (s == "knn-replaced") return TargetMode::knn_replaced;
    if (s == "kde-soft") return TargetMode::kde_soft;
    throw ValidationError("unknown target mode '" + s + "'");
}

void TrainConfig::validate() const {
    if (n_folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
    if (epochs == 0) throw ValidationError("epochs must be positive");
    if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
    if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw ValidationError("warmup ratio must lie in [0, 1]");
    if (batch_size == 0) throw ValidationError("batch size must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw ValidationError("validation fraction must lie in [0, 1)");
}

namespace {

Datastore subset(const Datastore& store, std::span<const std::size_t> rows) {
    Datastore out(store.dim(), store.labels());
    for (auto r : rows) out.add(store.record(r));
    return out;
}

struct FoldSetup {
    const Datastore& store;
    const RowMatrix<double>& embeddings;
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> held_out;
    /// Indexed by store row; only training rows are read.
    std::vector<TrainingTarget> targets;
    std::uint32_t fold = 0;
};

struct FoldOutput {
    ParamSet params;
    RowMatrix<double> probs;  ///< rows follow setup.held_out
    FoldAudit audit;
};

class FoldTrainer {
public:
    FoldTrainer(const FoldSetup& s, const TrainConfig& cfg, const std::optional<ContrastiveConfig>& con,
                const std::optional<NeighborEncoderConfig>& enc)
        : s_(s), cfg_(cfg), con_(con), enc_(enc), n_classes_(s.store.labels().size()) {
        const auto dim = s_.store.dim();
        // Same initialiser stream for every fold.
        Rng init(mix_seed(cfg_.seed ^ 0x1f0a7c3e5b9d2468ULL));
        init_classifier_head(params_, dim, n_classes_, init, cfg_.projection_bias);
        if (enc_) init_neighbor_encoder(params_, dim, *enc_, init);
        if (con_) init_projection_head(params_, dim, con_->projection_dim, init);

        if (enc_ || use_contrastive()) keybase_ = NeighborIndex::build(s_.store, s_.train);
        if (enc_) build_contexts();
        if (use_contrastive()) {
            const auto density = DensityModel::fit(s_.store, s_.train, con_->bandwidth);
            key_soft_.resize(static_cast<Eigen::Index>(s_.train.size()), static_cast<Eigen::Index>(n_classes_));
            parallel_for(s_.train.size(), [&](std::size_t i) {
                key_soft_.row(static_cast<Eigen::Index>(i)) =
                    density.soft_label(s_.store.vector(s_.train[i])).probs.transpose();
            });
        }
    }

    FoldOutput run() {
        FoldOutput out;
        for (auto r : s_.train) out.audit.trained.insert(s_.store.id(r));
        for (auto r : s_.validation) out.audit.validation.insert(s_.store.id(r));
        for (auto r : s_.held_out) out.audit.held_out.insert(s_.store.id(r));

        const std::size_t n = s_.train.size();
        const std::size_t steps_per_epoch = (n + cfg_.batch_size - 1) / cfg_.batch_size;
        const auto total = static_cast<std::uint64_t>(steps_per_epoch * cfg_.epochs);
        const auto warmup = static_cast<std::uint64_t>(std::ceil(cfg_.warmup_ratio * static_cast<double>(total)));
        nn::AdamWConfig opt_cfg;
        opt_cfg.lr = cfg_.lr;
        opt_cfg.weight_decay = cfg_.weight_decay;
        auto opt = nn::OptimizerState::init(params_, opt_cfg);

        double best_f1 = -1.0;
        ParamSet best = params_;
        std::uint64_t step = 0;
        std::vector<std::size_t> order(n);
        for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            if (use_contrastive()) select_peers();
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng shuffle(mix_seed(cfg_.seed ^ (0x5bd1e995ULL * (s_.fold + 1)) ^ (epoch << 32)));
            shuffle.shuffle(order.begin(), order.end());
            for (std::size_t b = 0; b < n; b += cfg_.batch_size) {
                const std::size_t end = std::min(n, b + cfg_.batch_size);
                std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
                train_step(batch, step, out.audit);
                opt.config.lr = nn::warmup_lr(cfg_.lr, step, warmup);
                nn::adamw_step(params_, opt);
                ++step;
            }
            if (use_contrastive() && con_->embedding_mode == EmbeddingMode::dynamic_keys) refresh_keybase();

            if (s_.validation.empty()) {
                best = params_;
                out.audit.best_epoch = epoch;
                continue;
            }
            const auto probs = predict(s_.validation);
            LabelMap pred, gold;
            for (std::size_t i = 0; i < s_.validation.size(); ++i) {
                Eigen::Index arg = 0;
                probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
                pred[s_.store.id(s_.validation[i])] = static_cast<LabelIndex>(arg);
                gold[s_.store.id(s_.validation[i])] = s_.store.label(s_.validation[i]);
            }
            const double f1 = classification_metrics(pred, gold, n_classes_).macro_f1;
            if (f1 > best_f1) {
                best_f1 = f1;
                best = params_;
                out.audit.best_epoch = epoch;
            }
        }
        params_ = best;
        out.probs = predict(s_.held_out);
        out.params = std::move(params_);
        return out;
    }

private:
    bool use_contrastive() const { return con_.has_value() && con_->mu > 0.0; }

    void build_contexts() {
        std::vector<std::size_t> rows = s_.train;
        rows.insert(rows.end(), s_.validation.begin(), s_.validation.end());
        rows.insert(rows.end(), s_.held_out.begin(), s_.held_out.end());
        contexts_.assign(s_.store.size(), Tensor());
        parallel_for(rows.size(), [&](std::size_t i) {
            const auto r = rows[i];
            const auto& id = s_.store.id(r);
            const bool in_keys = keybase_.slot_of(id).has_value();
            const auto k = std::min(enc_->k_context, keybase_.size() - (in_keys ? 1 : 0));
            Tensor ctx(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s_.store.dim()));
            if (k > 0) {
                const auto nl = keybase_.query(s_.embeddings.row(static_cast<Eigen::Index>(r)), k,
                                               in_keys ? std::optional<std::string>(id) : std::nullopt);
                for (std::size_t j = 0; j < nl.size(); ++j)
                    ctx.row(static_cast<Eigen::Index>(j)) = keybase_.key(nl.entries[j].slot);
            }
            contexts_[r] = std::move(ctx);
        });
    }

    /// Input representation of store rows: raw embeddings, or encoder outputs.
    Var represent(Graph& g, std::span<const std::size_t> rows) {
        const auto dim = static_cast<Eigen::Index>(s_.store.dim());
        if (!enc_) {
            Tensor e(static_cast<Eigen::Index>(rows.size()), dim);
            for (std::size_t i = 0; i < rows.size(); ++i)
                e.row(static_cast<Eigen::Index>(i)) = s_.embeddings.row(static_cast<Eigen::Index>(rows[i]));
            return g.input(std::move(e));
        }
        std::vector<Var> parts;
        parts.reserve(rows.size());
        for (auto r : rows)
            parts.push_back(encode_with_neighbors(g, params_, *enc_,
                                                  g.input(Tensor(s_.embeddings.row(static_cast<Eigen::Index>(r)))),
                                                  contexts_[r]));
        return nn::concat_rows(parts);
    }

    void train_step(const std::vector<std::size_t>& batch, std::uint64_t step, FoldAudit& audit) {
        const auto seed = mix_seed(cfg_.seed ^ (static_cast<std::uint64_t>(s_.fold) << 48) ^ (step + 1));
        Graph g(seed, true);
        params_.zero_grad();
        std::vector<std::size_t> rows;
        rows.reserve(batch.size());
        for (auto i : batch) rows.push_back(s_.train[i]);

        Var hidden = head_hidden(g, params_, represent(g, rows));
        Var logits = head_logits(g, params_, nn::dropout(hidden, cfg_.dropout));
        Tensor targets(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_classes_));
        std::vector<LabelIndex> labels;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& t = s_.targets[rows[i]];
            targets.row(static_cast<Eigen::Index>(i)) = t.distribution(n_classes_).transpose();
            labels.push_back(t.hard);
        }
        Var loss = nn::softmax_xent(logits, targets);

        if (use_contrastive()) {
            std::vector<std::size_t> peer_rows, owner;
            for (std::size_t i = 0; i < batch.size(); ++i)
                for (auto slot : peers_[batch[i]]) {
                    peer_rows.push_back(s_.train[slot]);
                    owner.push_back(i);
                    audit.trained.insert(s_.store.id(s_.train[slot]));
                }
            Var z = project(g, params_, hidden);
            Var zp = peer_rows.empty() ? g.input(Tensor(0, static_cast<Eigen::Index>(con_->projection_dim)))
                                       : project(g, params_, head_hidden(g, params_, represent(g, peer_rows)));
            Var ncl = contrastive_loss(z, labels, zp, owner, con_->tau, con_->denominator);
            loss = nn::add(loss, nn::scale(ncl, con_->mu));
        }
        g.backward(loss);
    }

    /// Distant peers for every training row against the current keybase.
    void select_peers() {
        peers_.assign(s_.train.size(), {});
        const std::size_t avail = keybase_.size() - 1;
        const std::size_t n_ret = std::min(con_->n_retrieved, avail);
        const std::size_t n_peers = std::min(con_->n_peers, n_ret);
        if (n_peers == 0) return;
        parallel_for(s_.train.size(), [&](std::size_t i) {
            const auto& id = s_.store.id(s_.train[i]);
            const auto nl = keybase_.query(keybase_.key(i), n_ret, id);
            MatrixXd soft(static_cast<Eigen::Index>(nl.size()), static_cast<Eigen::Index>(n_classes_));
            for (std::size_t j = 0; j < nl.size(); ++j)
                soft.row(static_cast<Eigen::Index>(j)) = key_soft_.row(static_cast<Eigen::Index>(nl.entries[j].slot));
            for (const auto& p : select_distant_peers(nl, soft, n_peers)) peers_[i].push_back(nl.entries[p.position].slot);
        });
    }

    void refresh_keybase() {
        const auto h = hidden_of(s_.train);
        std::map<std::string, VectorXd> updates;
        for (std::size_t i = 0; i < s_.train.size(); ++i)
            updates.emplace(s_.store.id(s_.train[i]), h.row(static_cast<Eigen::Index>(i)).transpose());
        keybase_.refresh(updates);
    }

    Tensor hidden_of(std::span<const std::size_t> rows) {
        Graph g(0, false);
        return head_hidden(g, params_, represent(g, rows)).value();
    }

    RowMatrix<double> predict(std::span<const std::size_t> rows) {
        RowMatrix<double> out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_classes_));
        constexpr std::size_t chunk = 256;
        for (std::size_t b = 0; b < rows.size(); b += chunk) {
            const auto part = rows.subspan(b, std::min(chunk, rows.size() - b));
            Graph g(0, false);
            Var logits = head_logits(g, params_, head_hidden(g, params_, represent(g, part)));
            out.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(part.size())) =
                reanno::softmax_rows(logits.value());
        }
        return out;
    }

    const FoldSetup& s_;
    const TrainConfig& cfg_;
    const std::optional<ContrastiveConfig>& con_;
    const std::optional<NeighborEncoderConfig>& enc_;
    std::size_t n_classes_;
    ParamSet params_;
    NeighborIndex keybase_;
    MatrixXd key_soft_;
    std::vector<Tensor> contexts_;
    std::vector<std::vector<std::size_t>> peers_;  ///< keybase slots per training position
};

void check_modes(const std::optional<ContrastiveConfig>& con, const std::optional<NeighborEncoderConfig>& enc) {
    if (con) con->validate();
    if (!enc) return;
    if (enc->embedding_mode != EmbeddingMode::static_keys)
        throw ValidationError("the neighbour encoder requires static neighbour embeddings");
    if (con && con->mu > 0.0 && con->embedding_mode == EmbeddingMode::dynamic_keys)
        throw ValidationError("contradictory embedding modes: the neighbour encoder forces static keys");
    nn::EncoderBlockConfig b = enc->block(2);
    b.validate();
}

}  // namespace

SoftenedDataset fold_targets(const Datastore& fit, const TrainConfig& cfg) {
    switch (cfg.target_mode) {
        case TargetMode::hard: return SoftenedDataset::from_observed(fit);
        case TargetMode::knn_replaced: return knn_replace(fit, NeighborIndex::build(fit), cfg.softening);
        case TargetMode::kde_soft: return kde_soften(fit, DensityModel::fit(fit, cfg.softening.bandwidth));
    }
    return SoftenedDataset::from_observed(fit);
}

CorrectionResult train_crossval(const Datastore& store, const TrainConfig& cfg,
                                const std::optional<ContrastiveConfig>& contrastive,
                                const std::optional<NeighborEncoderConfig>& encoder, CrossvalAudit* audit) {
    return train_crossval(store, std::nullopt, cfg, contrastive, encoder, audit, nullptr);
}

CorrectionResult train_crossval(const Datastore& store, const SoftenedDataset& targets, const TrainConfig& cfg,
                                const std::optional<ContrastiveConfig>& contrastive,
                                const std::optional<NeighborEncoderConfig>& encoder, CrossvalAudit* audit) {
    return train_crossval(store, std::optional<SoftenedDataset>(targets), cfg, contrastive, encoder, audit, nullptr);
}

CorrectionResult train_crossval(const Datastore& store, const std::optional<SoftenedDataset>& targets,
                                const TrainConfig& cfg, const std::optional<ContrastiveConfig>& contrastive,
                                const std::optional<NeighborEncoderConfig>& encoder, CrossvalAudit* audit,
                                FoldModels* models) {
    cfg.validate();
    check_modes(contrastive, encoder);
    if (encoder && store.dim() % encoder->heads != 0)
        throw ValidationError("encoder heads must divide the embedding dimension");
    if (targets) targets->validate(store);
    const auto split = make_folds(store, cfg.n_folds, cfg.seed);
    split.validate(store);

    const RowMatrix<double> embeddings = store.vectors().cast<double>();
    std::vector<FoldSetup> setups;
    for (std::uint32_t f = 0; f < cfg.n_folds; ++f) {
        FoldSetup s{store, embeddings, {}, {}, split.rows_in(f), {}, f};
        std::vector<std::size_t> fit = split.rows_not_in(f);
        Rng pick(mix_seed(cfg.seed ^ 0x7e3a9c1d00000000ULL ^ f));
        std::vector<std::size_t> shuffled = fit;
        pick.shuffle(shuffled.begin(), shuffled.end());
        const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(fit.size())));
        s.validation.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));
        s.train.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_val), shuffled.end());
        std::sort(s.validation.begin(), s.validation.end());
        std::sort(s.train.begin(), s.train.end());
        if (s.train.size() < 2) throw ValidationError("too few training rows in fold " + std::to_string(f));

        s.targets.assign(store.size(), TrainingTarget{});
        if (targets) {
            for (auto r : s.train) s.targets[r] = targets->targets[r];
        } else {
            const auto local = fold_targets(subset(store, s.train), cfg);
            for (std::size_t i = 0; i < s.train.size(); ++i) s.targets[s.train[i]] = local.targets[i];
        }
        setups.push_back(std::move(s));
    }

    std::vector<FoldOutput> outputs(cfg.n_folds);
    // Folds run concurrently; inner loops fall back to sequential execution.
    parallel_for(cfg.n_folds, [&](std::size_t f) {
        FoldTrainer trainer(setups[f], cfg, contrastive, encoder);
        outputs[f] = trainer.run();
    });

    CorrectionResult result;
    result.ids = store.ids();
    result.predicted.assign(store.size(), 0);
    result.fold.assign(store.size(), 0);
    result.probs.resize(static_cast<Eigen::Index>(store.size()), static_cast<Eigen::Index>(store.labels().size()));
    for (std::uint32_t f = 0; f < cfg.n_folds; ++f) {
        const auto& s = setups[f];
        for (std::size_t i = 0; i < s.held_out.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(s.held_out[i]);
            result.probs.row(r) = outputs[f].probs.row(static_cast<Eigen::Index>(i));
            Eigen::Index arg = 0;
            result.probs.row(r).maxCoeff(&arg);
            result.predicted[s.held_out[i]] = static_cast<LabelIndex>(arg);
            result.fold[s.held_out[i]] = f;
        }
    }
    if (audit) {
        audit->folds.clear();
        for (auto& o : outputs) audit->folds.push_back(std::move(o.audit));
    }
    if (models) {
        models->params.clear();
        for (auto& o : outputs) models->params.push_back(std::move(o.params));
    }
    return result;
}

}  // namespace reanno
