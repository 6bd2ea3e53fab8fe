#pragma once

#include "reanno/datastore.hpp"
#include "reanno/density.hpp"
#include "reanno/neighbor_index.hpp"
#include "reanno/nn/graph.hpp"
#include "reanno/nn/layers.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace reanno {

enum class EmbeddingMode { static_keys, dynamic_keys };
const char* to_string(EmbeddingMode m);
EmbeddingMode embedding_mode_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Classifier head: p = softmax(W_out ReLU(W_proj e + b_proj) + b_out).
// Parameters: head.proj.W (d x d), head.proj.b (1 x d, optional),
//             head.out.W (d x R), head.out.b (1 x R).

void init_classifier_head(nn::ParamSet& params, std::size_t dim, std::size_t n_classes, Rng& rng,
                          bool projection_bias = true);
/// ReLU(e W_proj + b_proj) for a batch of row embeddings.
nn::Var head_hidden(nn::Graph& g, nn::ParamSet& params, nn::Var e);
nn::Var head_logits(nn::Graph& g, nn::ParamSet& params, nn::Var hidden);
/// Class probabilities for one embedding, dropout off.
VectorXd classify_head(const nn::ParamSet& params, const VectorXd& e);

// ---------------------------------------------------------------------------
// Rank-aware neighbour encoder.

struct NeighborEncoderConfig {
    std::size_t layers = 2;
    std::size_t heads = 8;
    std::size_t k_context = 10;
    double dropout = 0.1;
    std::size_t ff_dim = 0;  ///< 0 means 4 * dim
    EmbeddingMode embedding_mode = EmbeddingMode::static_keys;

    nn::EncoderBlockConfig block(std::size_t dim) const;
};

void init_neighbor_encoder(nn::ParamSet& params, std::size_t dim, const NeighborEncoderConfig& cfg, Rng& rng);

/// Encodes [e_q; neighbours in rank order] + sinusoidal positions through the
/// encoder blocks and returns the first output row (1 x d). Neighbour vectors
/// enter as constants.
nn::Var encode_with_neighbors(nn::Graph& g, nn::ParamSet& params, const NeighborEncoderConfig& cfg, nn::Var query,
                              const nn::Tensor& neighbors);
VectorXd encode_with_neighbors(const nn::ParamSet& params, const NeighborEncoderConfig& cfg, const VectorXd& query,
                               const nn::Tensor& neighbors);

// ---------------------------------------------------------------------------
// Distant peers.

struct PeerChoice {
    std::size_t position = 0;  ///< index into the neighbour list
    std::string id;
    double lambda = 0.0;
};

inline constexpr double kMinPeerDistance = 1e-12;

/// lambda = L L^T log(D): L holds one soft-label row per neighbour, D the
/// neighbour distances clamped to >= 1e-12. Returns the n_peers largest lambda,
/// ties by ascending id.
std::vector<PeerChoice> select_distant_peers(const NeighborList& neighbors, const MatrixXd& soft_labels,
                                             std::size_t n_peers);
/// Soft labels come from `density` evaluated at each neighbour's vector in `store`.
std::vector<PeerChoice> select_distant_peers(const NeighborList& neighbors, const DensityModel& density,
                                             const Datastore& store, std::size_t n_peers);

/// lambda for every neighbour (same order as the list).
VectorXd peer_distances(const std::vector<double>& distances, const MatrixXd& soft_labels);

// ---------------------------------------------------------------------------
// Supervised contrastive loss with injected positives.

enum class DenominatorMode { standard, literal };
const char* to_string(DenominatorMode m);
DenominatorMode denominator_mode_from_string(const std::string& s);

struct ContrastiveConfig {
    double tau = 0.1;
    double mu = 0.35;
    std::size_t n_retrieved = 100;
    std::size_t n_peers = 5;
    std::size_t projection_dim = 189;
    DenominatorMode denominator = DenominatorMode::standard;
    EmbeddingMode embedding_mode = EmbeddingMode::dynamic_keys;
    /// KDE bandwidth used for the neighbour soft labels in lambda.
    double bandwidth = 0.25;

    void validate() const;
};

struct ContrastiveResult {
    double loss = 0.0;
    nn::Tensor grad_z;
    nn::Tensor grad_peers;
    std::size_t contributing = 0;
};

/// For anchor i: P(i) = other batch rows with the same label plus the peer rows
/// owned by i; N(i) = batch rows with a different label. The denominator sums
/// exp(z_i . z_a / tau) over P(i) and N(i) (standard) or N(i) only (literal).
/// Anchors with empty P(i) or an empty denominator are skipped; the loss is the
/// mean over the remaining anchors. Rows of z and peers must be unit norm;
/// all-zero rows (a projection whose ReLU units are all off) are left out.
ContrastiveResult contrastive_loss_value(const nn::Tensor& z, std::span<const LabelIndex> labels,
                                         const nn::Tensor& peers, std::span<const std::size_t> peer_owner, double tau,
                                         DenominatorMode mode);

nn::Var contrastive_loss(nn::Var z, std::span<const LabelIndex> labels, nn::Var peers,
                         std::span<const std::size_t> peer_owner, double tau, DenominatorMode mode);

/// Projection head z = normalize(W2 ReLU(W1 h + b1) + b2); params proj.l1, proj.l2.
void init_projection_head(nn::ParamSet& params, std::size_t dim, std::size_t projection_dim, Rng& rng);
nn::Var project(nn::Graph& g, nn::ParamSet& params, nn::Var hidden);

// ---------------------------------------------------------------------------
// Corrections.

/// Held-out predictions merged across folds, aligned with store rows.
struct CorrectionResult {
    std::vector<std::string> ids;
    std::vector<LabelIndex> predicted;
    RowMatrix<double> probs;
    std::vector<std::uint32_t> fold;

    bool operator==(const CorrectionResult& other) const;
};

struct CorrectionChange {
    std::string id;
    LabelIndex old_label = 0;
    LabelIndex new_label = 0;
    double prob = 0.0;
};

struct AppliedCorrections {
    Datastore store;
    std::vector<CorrectionChange> changes;
};

/// Replaces every observed label with its predicted label.
AppliedCorrections apply_corrections(const Datastore& store, const CorrectionResult& result);

/// One object per line for every id: {"id", "old", "new", "prob", "fold", "probs"}.
void write_correction_result(const CorrectionResult& result, const Datastore& store,
                             const std::filesystem::path& path);
CorrectionResult read_correction_result(const std::filesystem::path& path, std::size_t n_classes);
/// One object per line for changed ids: {"id", "old", "new", "prob"}.
void write_correction_changes(const std::vector<CorrectionChange>& changes, const std::filesystem::path& path);

}  // namespace reanno
