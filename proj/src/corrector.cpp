#include "reanno/corrector.hpp"

#include "reanno/jsonl.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

namespace reanno {

using nn::Graph;
using nn::ParamSet;
using nn::Tensor;
using nn::Var;

const char* to_string(EmbeddingMode m) {
    return m == EmbeddingMode::static_keys ? "static" : "dynamic";
}

EmbeddingMode embedding_mode_from_string(const std::string& s) {
    if (s == "static") return EmbeddingMode::static_keys;
    if (s == "dynamic") return EmbeddingMode::dynamic_keys;
    throw ValidationError("unknown embedding mode '" + s + "'");
}

const char* to_string(DenominatorMode m) {
    return m == DenominatorMode::standard ? "standard" : "literal";
}

DenominatorMode denominator_mode_from_string(const std::string& s) {
    if (s == "standard") return DenominatorMode::standard;
    if (s == "literal") return DenominatorMode::literal;
    throw ValidationError("unknown denominator mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// Head

void init_classifier_head(ParamSet& params, std::size_t dim, std::size_t n_classes, Rng& rng, bool projection_bias) {
    nn::init_linear(params, "head.proj", dim, dim, rng, projection_bias);
    nn::init_linear(params, "head.out", dim, n_classes, rng, true);
}

Var head_hidden(Graph& g, ParamSet& params, Var e) {
    return nn::relu(nn::linear(g, params, "head.proj", e));
}

Var head_logits(Graph& g, ParamSet& params, Var hidden) {
    return nn::linear(g, params, "head.out", hidden);
}

VectorXd classify_head(const ParamSet& params, const VectorXd& e) {
    const auto& w = params.value("head.proj.W");
    if (e.size() != w.rows())
        throw ValidationError("classifier input has dimension " + std::to_string(e.size()) + ", expected " +
                              std::to_string(w.rows()));
    Eigen::RowVectorXd h = e.transpose() * w;
    if (params.contains("head.proj.b")) h += params.value("head.proj.b").row(0);
    h = h.cwiseMax(0.0);
    Eigen::RowVectorXd logits = h * params.value("head.out.W") + params.value("head.out.b").row(0);
    return reanno::softmax_rows(logits).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Encoder

nn::EncoderBlockConfig NeighborEncoderConfig::block(std::size_t dim) const {
    nn::EncoderBlockConfig b;
    b.dim = dim;
    b.heads = heads;
    b.ff_dim = ff_dim;
    b.dropout = dropout;
    return b;
}

void init_neighbor_encoder(ParamSet& params, std::size_t dim, const NeighborEncoderConfig& cfg, Rng& rng) {
    if (cfg.layers == 0) throw ValidationError("encoder needs at least one layer");
    for (std::size_t l = 0; l < cfg.layers; ++l)
        nn::init_encoder_block(params, "enc.L" + std::to_string(l), cfg.block(dim), rng);
}

Var encode_with_neighbors(Graph& g, ParamSet& params, const NeighborEncoderConfig& cfg, Var query,
                          const Tensor& neighbors) {
    const auto dim = static_cast<std::size_t>(query.cols());
    if (query.rows() != 1) throw ValidationError("encoder query must be a single row");
    if (neighbors.rows() > 0 && static_cast<std::size_t>(neighbors.cols()) != dim)
        throw ValidationError("neighbour vectors have dimension " + std::to_string(neighbors.cols()) + ", expected " +
                              std::to_string(dim));
    if (static_cast<std::size_t>(neighbors.rows()) > cfg.k_context)
        throw ValidationError("more neighbours than the encoder context allows");
    Var seq = query;
    if (neighbors.rows() > 0) {
        const Var parts[] = {query, g.input(neighbors)};
        seq = nn::concat_rows(parts);
    }
    Var x = nn::add(seq, g.input(nn::sincos_positions(static_cast<std::size_t>(seq.rows()), dim)));
    const auto block = cfg.block(dim);
    for (std::size_t l = 0; l < cfg.layers; ++l)
        x = nn::attention_encoder_block(g, params, "enc.L" + std::to_string(l), x, block);
    return nn::slice_rows(x, 0, 1);
}

VectorXd encode_with_neighbors(const ParamSet& params, const NeighborEncoderConfig& cfg, const VectorXd& query,
                               const Tensor& neighbors) {
    Graph g(0, false);
    ParamSet copy = params;
    Var out = encode_with_neighbors(g, copy, cfg, g.input(query.transpose()), neighbors);
    return out.value().row(0).transpose();
}

// ---------------------------------------------------------------------------
// Peers

VectorXd peer_distances(const std::vector<double>& distances, const MatrixXd& soft_labels) {
    if (static_cast<std::size_t>(soft_labels.rows()) != distances.size())
        throw ValidationError("soft-label matrix rows must match the neighbour count");
    VectorXd log_d(static_cast<Eigen::Index>(distances.size()));
    for (std::size_t i = 0; i < distances.size(); ++i)
        log_d(static_cast<Eigen::Index>(i)) = std::log(std::max(distances[i], kMinPeerDistance));
    // L (L^T log D) avoids forming the N x N co-occurrence matrix.
    return soft_labels * (soft_labels.transpose() * log_d);
}

std::vector<PeerChoice> select_distant_peers(const NeighborList& neighbors, const MatrixXd& soft_labels,
                                             std::size_t n_peers) {
    if (neighbors.size() < n_peers)
        throw ValidationError("need at least " + std::to_string(n_peers) + " neighbours, got " +
                              std::to_string(neighbors.size()));
    if (static_cast<std::size_t>(soft_labels.rows()) != neighbors.size())
        throw ValidationError("soft-label matrix rows must match the neighbour count");
    // Sums run in id order so lambda is bit-identical however the list is presented.
    std::vector<std::size_t> canon(neighbors.size());
    std::iota(canon.begin(), canon.end(), std::size_t{0});
    std::sort(canon.begin(), canon.end(),
              [&](std::size_t a, std::size_t b) { return neighbors.entries[a].id < neighbors.entries[b].id; });
    std::vector<double> dist;
    dist.reserve(neighbors.size());
    MatrixXd soft(soft_labels.rows(), soft_labels.cols());
    for (std::size_t i = 0; i < canon.size(); ++i) {
        dist.push_back(neighbors.entries[canon[i]].distance);
        soft.row(static_cast<Eigen::Index>(i)) = soft_labels.row(static_cast<Eigen::Index>(canon[i]));
    }
    const VectorXd canon_lambda = peer_distances(dist, soft);
    VectorXd lambda(canon_lambda.size());
    for (std::size_t i = 0; i < canon.size(); ++i)
        lambda(static_cast<Eigen::Index>(canon[i])) = canon_lambda(static_cast<Eigen::Index>(i));
    std::vector<std::size_t> order(neighbors.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double la = lambda(static_cast<Eigen::Index>(a)), lb = lambda(static_cast<Eigen::Index>(b));
        if (la != lb) return la > lb;
        return neighbors.entries[a].id < neighbors.entries[b].id;
    });
    std::vector<PeerChoice> out;
    for (std::size_t i = 0; i < n_peers; ++i)
        out.push_back({order[i], neighbors.entries[order[i]].id, lambda(static_cast<Eigen::Index>(order[i]))});
    return out;
}

std::vector<PeerChoice> select_distant_peers(const NeighborList& neighbors, const DensityModel& density,
                                             const Datastore& store, std::size_t n_peers) {
    MatrixXd soft(static_cast<Eigen::Index>(neighbors.size()), static_cast<Eigen::Index>(density.n_classes()));
    for (std::size_t i = 0; i < neighbors.size(); ++i)
        soft.row(static_cast<Eigen::Index>(i)) =
            density.soft_label(store.vector(store.row_of(neighbors.entries[i].id))).probs.transpose();
    return select_distant_peers(neighbors, soft, n_peers);
}

// ---------------------------------------------------------------------------
// Contrastive loss

void ContrastiveConfig::validate() const {
    if (!(tau > 0.0)) throw ValidationError("contrastive temperature must be positive");
    if (!(mu >= 0.0)) throw ValidationError("contrastive weight must be non-negative");
    if (n_peers > n_retrieved) throw ValidationError("n_peers must not exceed n_retrieved");
    if (projection_dim == 0) throw ValidationError("projection dimension must be positive");
    if (!(bandwidth > 0.0)) throw ValidationError("peer KDE bandwidth must be positive");
}

ContrastiveResult contrastive_loss_value(const Tensor& z, std::span<const LabelIndex> labels, const Tensor& peers,
                                         std::span<const std::size_t> peer_owner, double tau, DenominatorMode mode) {
    if (!(tau > 0.0)) throw ValidationError("contrastive temperature must be positive");
    const Eigen::Index batch = z.rows();
    if (static_cast<std::size_t>(batch) != labels.size()) throw ValidationError("label count must match batch size");
    if (static_cast<std::size_t>(peers.rows()) != peer_owner.size())
        throw ValidationError("peer owner list must match peer rows");
    if (peers.rows() > 0 && peers.cols() != z.cols()) throw ValidationError("peer projections have wrong width");
    // An all-zero row is what normalisation leaves when every ReLU unit of the
    // projection is off; such rows take no part in the loss.
    auto active_rows = [](const Tensor& t, const char* what) {
        std::vector<char> active(static_cast<std::size_t>(t.rows()), 1);
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            if (t.row(r).isZero(0.0)) {
                active[static_cast<std::size_t>(r)] = 0;
                continue;
            }
            if (std::abs(t.row(r).norm() - 1.0) > 1e-6)
                throw ValidationError(std::string(what) + " row " + std::to_string(r) + " is not unit norm");
        }
        return active;
    };
    const auto z_active = active_rows(z, "projection");
    const auto peer_active = active_rows(peers, "peer projection");

    std::vector<std::vector<std::size_t>> owned(static_cast<std::size_t>(batch));
    for (std::size_t p = 0; p < peer_owner.size(); ++p) {
        if (peer_owner[p] >= static_cast<std::size_t>(batch)) throw ValidationError("peer owner out of range");
        owned[peer_owner[p]].push_back(p);
    }

    ContrastiveResult res;
    res.grad_z = Tensor::Zero(z.rows(), z.cols());
    res.grad_peers = Tensor::Zero(peers.rows(), peers.cols());
    const Tensor sim = z * z.transpose() / tau;
    const Tensor peer_sim = peers.rows() > 0 ? Tensor(z * peers.transpose() / tau) : Tensor(batch, 0);

    struct Term {
        bool peer;
        Eigen::Index j;
        double s;
        bool positive;
    };
    std::vector<std::pair<std::size_t, std::vector<Term>>> anchors;
    for (Eigen::Index i = 0; i < batch; ++i) {
        if (!z_active[static_cast<std::size_t>(i)]) continue;
        std::vector<Term> terms;
        std::size_t n_pos = 0, n_den = 0;
        for (Eigen::Index j = 0; j < batch; ++j) {
            if (j == i || !z_active[static_cast<std::size_t>(j)]) continue;
            const bool pos = labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)];
            terms.push_back({false, j, sim(i, j), pos});
        }
        for (auto p : owned[static_cast<std::size_t>(i)])
            if (peer_active[p]) terms.push_back({true, static_cast<Eigen::Index>(p), peer_sim(i, static_cast<Eigen::Index>(p)), true});
        for (const auto& t : terms) {
            n_pos += t.positive ? 1 : 0;
            n_den += (mode == DenominatorMode::standard || !t.positive) ? 1 : 0;
        }
        if (n_pos == 0 || n_den == 0) continue;
        anchors.emplace_back(static_cast<std::size_t>(i), std::move(terms));
    }
    res.contributing = anchors.size();
    if (anchors.empty()) return res;

    const double inv_anchors = 1.0 / static_cast<double>(anchors.size());
    for (const auto& [i, terms] : anchors) {
        std::vector<double> den_s;
        double pos_sum = 0.0;
        std::size_t n_pos = 0;
        for (const auto& t : terms) {
            if (t.positive) {
                pos_sum += t.s;
                ++n_pos;
            }
            if (mode == DenominatorMode::standard || !t.positive) den_s.push_back(t.s);
        }
        const double log_den =
            log_sum_exp(Eigen::Map<const VectorXd>(den_s.data(), static_cast<Eigen::Index>(den_s.size())));
        const double np = static_cast<double>(n_pos);
        res.loss += (log_den - pos_sum / np) * inv_anchors;

        const auto ii = static_cast<Eigen::Index>(i);
        for (const auto& t : terms) {
            const bool in_den = mode == DenominatorMode::standard || !t.positive;
            double ds = (t.positive ? -1.0 / np : 0.0) + (in_den ? std::exp(t.s - log_den) : 0.0);
            ds *= inv_anchors / tau;
            if (ds == 0.0) continue;
            if (t.peer) {
                res.grad_z.row(ii) += ds * peers.row(t.j);
                res.grad_peers.row(t.j) += ds * z.row(ii);
            } else {
                res.grad_z.row(ii) += ds * z.row(t.j);
                res.grad_z.row(t.j) += ds * z.row(ii);
            }
        }
    }
    return res;
}

Var contrastive_loss(Var z, std::span<const LabelIndex> labels, Var peers, std::span<const std::size_t> peer_owner,
                     double tau, DenominatorMode mode) {
    if (z.graph != peers.graph) throw ValidationError("operands belong to different graphs");
    auto res = contrastive_loss_value(z.value(), labels, peers.value(), peer_owner, tau, mode);
    Tensor out(1, 1);
    out(0, 0) = res.loss;
    return z.graph->emplace(std::move(out), {z.id, peers.id},
                            [zi = z.id, pi = peers.id, gz = std::move(res.grad_z),
                             gp = std::move(res.grad_peers)](Graph& g, std::size_t self) {
                                const double up = g.node_grad(self)(0, 0);
                                g.accumulate(zi, gz * up);
                                if (gp.size() > 0) g.accumulate(pi, gp * up);
                            });
}

void init_projection_head(ParamSet& params, std::size_t dim, std::size_t projection_dim, Rng& rng) {
    nn::init_linear(params, "proj.l1", dim, dim, rng);
    nn::init_linear(params, "proj.l2", dim, projection_dim, rng);
}

Var project(Graph& g, ParamSet& params, Var hidden) {
    Var a = nn::relu(nn::linear(g, params, "proj.l1", hidden));
    return nn::l2_normalize_rows(nn::linear(g, params, "proj.l2", a));
}

// ---------------------------------------------------------------------------
// Corrections

bool CorrectionResult::operator==(const CorrectionResult& other) const {
    return ids == other.ids && predicted == other.predicted && fold == other.fold && probs.rows() == other.probs.rows() &&
           probs.cols() == other.probs.cols() &&
           std::memcmp(probs.data(), other.probs.data(), sizeof(double) * static_cast<std::size_t>(probs.size())) == 0;
}

AppliedCorrections apply_corrections(const Datastore& store, const CorrectionResult& result) {
    if (result.ids != store.ids()) throw ValidationError("correction result ids do not match the datastore");
    AppliedCorrections out{store, {}};
    for (std::size_t r = 0; r < store.size(); ++r) {
        const auto pred = result.predicted[r];
        if (pred == store.label(r)) continue;
        out.store.set_label(r, pred);
        out.changes.push_back({store.id(r), store.label(r), pred,
                               result.probs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(pred))});
    }
    return out;
}

void write_correction_result(const CorrectionResult& result, const Datastore& store,
                             const std::filesystem::path& path) {
    if (result.ids != store.ids()) throw ValidationError("correction result ids do not match the datastore");
    std::vector<Json> rows;
    rows.reserve(result.ids.size());
    for (std::size_t r = 0; r < result.ids.size(); ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        std::vector<double> probs(result.probs.row(ri).data(), result.probs.row(ri).data() + result.probs.cols());
        rows.push_back(Json{{"id", result.ids[r]},
                            {"old", store.label(r)},
                            {"new", result.predicted[r]},
                            {"prob", result.probs(ri, static_cast<Eigen::Index>(result.predicted[r]))},
                            {"fold", result.fold[r]},
                            {"probs", probs}});
    }
    write_jsonl(rows, path);
}

CorrectionResult read_correction_result(const std::filesystem::path& path, std::size_t n_classes) {
    const auto rows = read_jsonl(path);
    CorrectionResult out;
    out.probs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_classes));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        try {
            const auto& row = rows[r];
            out.ids.push_back(row.at("id").get<std::string>());
            out.predicted.push_back(row.at("new").get<LabelIndex>());
            out.fold.push_back(row.value("fold", 0u));
            const auto probs = row.at("probs").get<std::vector<double>>();
            if (probs.size() != n_classes) throw ValidationError("probability vector has wrong length");
            for (std::size_t c = 0; c < n_classes; ++c)
                out.probs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = probs[c];
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ": malformed correction record: " + e.what());
        }
    }
    return out;
}

void write_correction_changes(const std::vector<CorrectionChange>& changes, const std::filesystem::path& path) {
    std::vector<Json> rows;
    rows.reserve(changes.size());
    for (const auto& c : changes)
        rows.push_back(Json{{"id", c.id}, {"old", c.old_label}, {"new", c.new_label}, {"prob", c.prob}});
    write_jsonl(rows, path);
}

}  // namespace reanno
