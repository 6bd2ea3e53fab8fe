#include "reanno/cli.hpp"

#include "reanno/crossval.hpp"
#include "reanno/detector.hpp"
#include "reanno/jsonl.hpp"
#include "reanno/label_softening.hpp"
#include "reanno/metrics.hpp"
#include "reanno/nn/checkpoint.hpp"
#include "reanno/review_http.hpp"
#include "reanno/review_service.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace reanno::cli {

namespace {

const std::vector<std::string> kProfiles = {"tacred-like", "docred-like"};

/// Tunable values of one subcommand. A value comes from its flag, else the
/// --config file, else the active profile.
class Settings {
public:
    explicit Settings(CLI::App* app) : app_(app) {}

    void add(const std::string& key, const std::string& help, const std::string& tacred, const std::string& docred,
             const std::string& note) {
        auto& e = entries_[key];
        e.defaults = {tacred, docred};
        std::string text = help;
        if (tacred == docred) {
            if (!tacred.empty()) text += " [default: " + tacred + "]";
        } else {
            text += " [tacred-like: " + tacred + ", docred-like: " + docred + "]";
        }
        if (!note.empty()) text += " (" + note + ")";
        e.opt = app_->add_option("--" + key, e.flag_value, text);
    }
    void add(const std::string& key, const std::string& help, const std::string& dflt, const std::string& note) {
        add(key, help, dflt, dflt, note);
    }
    void add_flag(const std::string& key, const std::string& help) {
        auto& e = entries_[key];
        e.defaults = {"false", "false"};
        e.is_flag = true;
        e.opt = app_->add_flag("--" + key, e.flag_bool, help + " [default: off]");
    }

    bool knows(const std::string& key) const { return entries_.contains(key); }

    void resolve(std::size_t profile, const std::map<std::string, std::string>& config) {
        for (auto& [key, e] : entries_) {
            e.explicit_value = true;
            if (e.opt->count() > 0) {
                e.value = e.is_flag ? (e.flag_bool ? "true" : "false") : e.flag_value;
            } else if (auto it = config.find(key); it != config.end()) {
                e.value = it->second;
            } else {
                e.value = e.defaults[profile];
                e.explicit_value = false;
            }
        }
    }

    const std::string& str(const std::string& key) const { return entries_.at(key).value; }
    bool given(const std::string& key) const { return entries_.at(key).explicit_value; }
    const std::string& path(const std::string& key) const {
        const auto& v = str(key);
        if (v.empty()) throw ValidationError("--" + key + " is required");
        return v;
    }
    double num(const std::string& key) const {
        const auto& v = str(key);
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used == v.size()) return d;
        } catch (const std::exception&) {
        }
        throw ValidationError("--" + key + " expects a number, got '" + v + "'");
    }
    std::uint64_t u64(const std::string& key) const {
        const auto& v = str(key);
        try {
            std::size_t used = 0;
            if (!v.empty() && v[0] != '-') {
                const auto n = std::stoull(v, &used);
                if (used == v.size()) return n;
            }
        } catch (const std::exception&) {
        }
        throw ValidationError("--" + key + " expects a non-negative integer, got '" + v + "'");
    }
    std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }
    bool flag(const std::string& key) const {
        const auto& v = str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ValidationError("--" + key + " expects true or false, got '" + v + "'");
    }

private:
    struct Entry {
        std::array<std::string, 2> defaults;
        bool is_flag = false;
        std::string flag_value;
        bool flag_bool = false;
        CLI::Option* opt = nullptr;
        std::string value;
        bool explicit_value = false;
    };
    CLI::App* app_;
    std::map<std::string, Entry> entries_;
};

constexpr const char* kRef = "reference setting";
constexpr const char* kEngine = "engine choice";

std::string json_line(const Json& j) { return j.dump(); }

std::vector<std::size_t> all_rows(const Datastore& store) {
    std::vector<std::size_t> rows(store.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
}

std::vector<std::size_t> parse_size_list(const std::string& s, const std::string& key) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(part, &used);
            if (used != part.size() || v == 0) throw std::invalid_argument(part);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ValidationError("--" + key + " expects a comma-separated list of positive integers");
        }
    }
    if (out.empty()) throw ValidationError("--" + key + " must not be empty");
    return out;
}

MetricEntries classification_entries(const ClassificationReport& r, std::size_t n) {
    MetricEntries e{{"n", static_cast<double>(n)},
                    {"accuracy", r.accuracy},
                    {"macro_f1", r.macro_f1},
                    {"micro_f1", r.micro_f1}};
    if (r.binary_f1) {
        e.emplace_back("binary_precision", *r.binary_precision);
        e.emplace_back("binary_recall", *r.binary_recall);
        e.emplace_back("binary_f1", *r.binary_f1);
    }
    return e;
}

Json entries_json(const MetricEntries& entries) {
    Json j = Json::object();
    for (const auto& [k, v] : entries) j[k] = v;
    return j;
}

/// Labels from a one-object-per-line file: "new", "revised_label" or "label".
LabelMap read_label_file(const std::filesystem::path& path) {
    LabelMap out;
    for (const auto& row : read_jsonl(path)) {
        try {
            const auto id = row.at("id").get<std::string>();
            const char* field = row.contains("new") ? "new" : row.contains("revised_label") ? "revised_label" : "label";
            if (!out.emplace(id, row.at(field).get<LabelIndex>()).second)
                throw ValidationError(path.string() + ": duplicate id '" + id + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ": malformed label record: " + e.what());
        }
    }
    return out;
}

std::size_t class_bound(const LabelMap& a, const LabelMap& b) {
    LabelIndex m = 0;
    for (const auto& [id, l] : a) m = std::max(m, l);
    for (const auto& [id, l] : b) m = std::max(m, l);
    return static_cast<std::size_t>(m) + 1;
}

// ---------------------------------------------------------------------------
// Subcommands

struct Command {
    CLI::App* app;
    std::unique_ptr<Settings> settings;
    std::function<Json(const Settings&)> run;
};

void add_synth(CLI::App& root, std::vector<Command>& cmds) {
    auto* app = root.add_subcommand("synth", "Generate a synthetic noisy datastore and its true labels");
    auto s = std::make_unique<Settings>(app);
    s->add("clusters", "Number of Gaussian clusters (one label each)", "5", kEngine);
    s->add("dim", "Embedding dimension", "16", kEngine);
    s->add("per-cluster", "Points per cluster", "400", kEngine);
    s->add("flip", "Fraction of labels flipped to another class", "0.1", kEngine);
    s->add("spread", "Standard deviation of points around their centre", "0.35", kEngine);
    s->add("center-scale", "Standard deviation of cluster centres", "1.0", kEngine);
    s->add("seed", "Random seed", "7", kEngine);
    s->add("store", "Output datastore", "datastore.rann", "");
    s->add("revisions", "Output file of true labels", "revisions.jsonl", "");
    cmds.push_back({app, std::move(s), [](const Settings& s) {
                        SynthConfig cfg;
                        cfg.clusters = s.size("clusters");
                        cfg.dim = s.size("dim");
                        cfg.per_cluster = s.size("per-cluster");
                        cfg.flip_rate = s.num("flip");
                        cfg.spread = s.num("spread");
                        cfg.center_scale = s.num("center-scale");
                        cfg.seed = s.u64("seed");
                        const auto data = synth_generate(cfg);
                        write_datastore(data.store, s.path("store"));
                        write_revisions(data.truth, s.path("revisions"));
                        std::size_t flipped = 0;
                        for (std::size_t r = 0; r < data.store.size(); ++r)
                            flipped += data.truth.entries.at(data.store.id(r)) != data.store.label(r);
                        return Json{{"records", data.store.size()},
                                    {"flipped", flipped},
                                    {"min_center_separation_sigma", min_center_separation(data, cfg.spread)},
                                    {"store", s.str("store")},
                                    {"revisions", s.str("revisions")}};
                    }});
}

void add_detect(CLI::App& root, std::vector<Command>& cmds) {
    auto* app = root.add_subcommand("detect", "Flag inconsistent labels by neighbour vote or credibility score");
    auto s = std::make_unique<Settings>(app);
    s->add("store", "Input datastore", "", "");
    s->add("mode", "Detector: vote or credibility", "credibility", kEngine);
    s->add("k-vote", "Neighbours consulted by the vote detector", "3", kRef);
    s->add("k-cred", "Neighbours retrieved for the credibility score", "250", kRef);
    s->add("beta", "Credibility threshold; consistent iff psi >= beta", "0.5", kRef);
    s->add("bandwidth", "KDE bandwidth h", "0.25", kRef);
    s->add("out", "Output report {id, psi, verdict}", "report.jsonl", "");
    s->add("revisions", "Optional true labels for scoring the report", "", "");
    s->add("positive", "Positive class for binary F1: inconsistent or consistent", "inconsistent", kEngine);
    s->add("metrics", "Metric report written when --revisions is given", "detect_metrics.txt", "");
    cmds.push_back({app, std::move(s), [](const Settings& s) {
                        const auto store = read_datastore(s.path("store"));
                        const auto index = NeighborIndex::build(store);
                        const auto rows = all_rows(store);
                        CredibilityReport report;
                        const auto mode = s.str("mode");
                        if (mode == "vote") {
                            const auto verdicts = vote_detect(index, store, rows, s.size("k-vote"));
                            for (std::size_t r = 0; r < store.size(); ++r) {
                                const double psi = verdicts[r] == Verdict::consistent ? 1.0 : 0.0;
                                report.entries.push_back({store.id(r), kNegInf, psi, verdicts[r]});
                            }
                        } else if (mode == "credibility") {
                            const auto density = DensityModel::fit(store, s.num("bandwidth"));
                            report = classify_threshold(
                                credibility_scores(index, density, store, rows, s.size("k-cred")), s.num("beta"));
                        } else {
                            throw ValidationError("--mode must be vote or credibility");
                        }
                        write_credibility_report(report, s.path("out"));
                        std::size_t flagged = 0;
                        for (const auto& e : report.entries) flagged += *e.verdict == Verdict::inconsistent;
                        Json summary{{"mode", mode}, {"records", store.size()}, {"flagged", flagged},
                                     {"out", s.str("out")}};
                        if (!mode.empty() && mode == "credibility")
                            summary["params"] = Json{{"k_cred", s.size("k-cred")},
                                                     {"bandwidth", s.num("bandwidth")},
                                                     {"beta", s.num("beta")}};
                        else
                            summary["params"] = Json{{"k_vote", s.size("k-vote")}};
                        if (!s.str("revisions").empty()) {
                            const auto revisions = read_revisions(s.str("revisions"));
                            revisions.validate(store);
                            const auto positive = verdict_from_string(s.str("positive"));
                            const auto gold = detection_gold(store, revisions);
                            LabelMap pred;
                            for (const auto& [id, l] : detection_pred(report))
                                if (gold.contains(id)) pred.emplace(id, l);
                            const auto m = classification_metrics(pred, gold, 2, static_cast<LabelIndex>(positive));
                            const auto entries = classification_entries(m, gold.size());
                            write_metric_report(entries, s.path("metrics"));
                            summary["metrics"] = entries_json(entries);
                        }
                        return summary;
                    }});
}

void add_rank_eval(CLI::App& root, std::vector<Command>& cmds) {
    auto* app = root.add_subcommand("rank-eval", "Hit@k and MRR of the true label among each example's neighbours");
    auto s = std::make_unique<Settings>(app);
    s->add("store", "Input datastore", "", "");
    s->add("revisions", "True labels", "", "");
    s->add("k-list", "Comma-separated cut-offs", "1,5,10", kRef);
    s->add("depth", "Retrieved list length (0 = largest cut-off)", "0", kEngine);
    s->add("out", "Metric report", "rank_metrics.txt", "");
    cmds.push_back({app, std::move(s), [](const Settings& s) {
                        const auto store = read_datastore(s.path("store"));
                        const auto revisions = read_revisions(s.path("revisions"));
                        revisions.validate(store);
                        const auto ks = parse_size_list(s.str("k-list"), "k-list");
                        const auto depth = s.size("depth");
                        const auto r = rank_eval(NeighborIndex::build(store), store, revisions, ks,
                                                 depth == 0 ? std::nullopt : std::optional<std::size_t>(depth));
                        MetricEntries entries{{"n", static_cast<double>(revisions.entries.size())}};
                        for (const auto& [k, v] : r.hit_at) entries.emplace_back("hit@" + std::to_string(k), v);
                        entries.emplace_back("mrr", r.mrr);
                        write_metric_report(entries, s.path("out"));
                        return Json{{"metrics", entries_json(entries)}, {"out", s.str("out")}};
                    }});
}

void add_soften(CLI::App& root, std::vector<Command>& cmds) {
    auto* app = root.add_subcommand("soften", "Derive training targets by KNN label replacement or KDE soft labels");
    auto s = std::make_unique<Settings>(app);
    s->add("store", "Input datastore", "", "");
    s->add("mode", "knn-replaced or kde-soft", "kde-soft", kEngine);
    s->add("phi", "Replacement probability threshold", "0.3", "0.15", kRef);
    s->add("k-replace", "Neighbours voting on a replacement label", "1", kRef);
    s->add("bandwidth", "KDE bandwidth for soft labels", "0.25", "0.1", kRef);
    s->add("seed", "Seed of the per-id replacement streams", "0", kEngine);
    s->add("out", "Output targets", "targets.jsonl", "");
    s->add("change-log", "Output change log {id, old, new}", "changes.jsonl", "");
    cmds.push_back({app, std::move(s), [](const Settings& s) {
                        const auto store = read_datastore(s.path("store"));
                        SofteningConfig cfg;
                        cfg.phi = s.num("phi");
                        cfg.k_replace = s.size("k-replace");
                        cfg.bandwidth = s.num("bandwidth");
                        cfg.seed = s.u64("seed");
                        const auto mode = target_mode_from_string(s.str("mode"));
                        SoftenedDataset data;
                        if (mode == TargetMode::knn_replaced)
                            data = knn_replace(store, NeighborIndex::build(store), cfg);
                        else if (mode == TargetMode::kde_soft)
                            data = kde_soften(store, DensityModel::fit(store, cfg.bandwidth));
                        else
                            throw ValidationError("--mode must be knn-replaced or kde-soft");
                        write_targets(data, s.path("out"));
                        write_change_log(data.changes, s.path("change-log"));
                        return Json{{"mode", s.str("mode")},
                                    {"records", store.size()},
                                    {"replaced", data.changes.size()},
                                    {"out", s.str("out")},
                                    {"change_log", s.str("change-log")}};
                    }});
}

void add_correct(CLI::App& root, std::vector<Command>& cmds) {
    auto* app = root.add_subcommand("correct", "Cross-validated relabelling of every example");
    auto s = std::make_unique<Settings>(app);
    s->add("store", "Input datastore", "", "");
    s->add("targets", "Precomputed targets from `soften` (overrides --target-mode)", "", "");
    s->add("target-mode", "Per-fold targets: hard, knn-replaced or kde-soft", "hard", kEngine);
    s->add("phi", "Replacement probability threshold for knn-replaced targets", "0.3", "0.15", kRef);
    s->add("k-replace", "Neighbours voting on a replacement label", "1", kRef);
    s->add("soft-bandwidth", "KDE bandwidth for kde-soft targets", "0.25", "0.1", kRef);
    s->add("folds", "Cross-validation folds", "4", kRef);
    s->add("epochs", "Training epochs per fold", "5", kRef);
    s->add("lr", "Peak learning rate", "5e-4", kRef);
    s->add("dropout", "Dropout on the classifier hidden layer", "0.2", kRef);
    s->add("warmup", "Share of steps with linear learning-rate warm-up", "0.1", kRef);
    s->add("batch-size", "Mini-batch size", "16", kEngine);
    s->add("weight-decay", "Decoupled weight decay", "0.01", kEngine);
    s->add("validation-fraction", "Share of training rows used to pick the epoch", "0.1", kEngine);
    s->add("seed", "Seed for folds, initialisation and shuffling", "0", kEngine);
    s->add_flag("no-projection-bias", "Drop the bias of the classifier projection layer");
    s->add_flag("contrastive", "Add the distant-peer contrastive loss");
    s->add("mu", "Weight of the contrastive loss", "0.35", "0.02", kRef);
    s->add("tau", "Contrastive temperature", "0.1", kEngine);
    s->add("n-retrieved", "Neighbours retrieved for peer selection", "100", kRef);
    s->add("n-peers", "Distant peers injected per anchor", "5", kRef);
    s->add("projection-dim", "Contrastive projection dimension", "189", kRef);
    s->add("denominator", "Contrastive denominator: standard or literal", "standard", kEngine);
    s->add("embedding-mode", "Keybase for peers: dynamic or static", "dynamic", kRef);
    s->add("peer-bandwidth", "KDE bandwidth for neighbour soft labels in peer selection", "0.25", "0.1", kRef);
    s->add_flag("encoder", "Encode each example with its nearest neighbours");
    s->add("encoder-layers", "Encoder blocks", "2", kEngine);
    s->add("encoder-heads", "Attention heads", "8", kRef);
    s->add("k-context", "Neighbours fed to the encoder", "10", kRef);
    s->add("encoder-dropout", "Dropout inside encoder blocks", "0.1", kRef);
    s->add("ff-dim", "Encoder feed-forward width (0 = 4 x dim)", "0", kEngine);
    s->add("out", "Output predictions {id, old, new, prob, fold, probs}", "corrections.jsonl", "");
    s->add("changes", "Output change log {id, old, new, prob}", "", "");
    s->add("checkpoint-dir", "Directory for per-fold parameter checkpoints", "", "");
    cmds.push_back({app, std::move(s), [](const Settings& s) {
                        const auto store = read_datastore(s.path("store"));
                        TrainConfig cfg;
                        cfg.n_folds = s.size("folds");
                        cfg.epochs = s.size("epochs");
                        cfg.lr = s.num("lr");
                        cfg.dropout = s.num("dropout");
                        cfg.warmup_ratio = s.num("warmup");
                        cfg.batch_size = s.size("batch-size");
                        cfg.weight_decay = s.num("weight-decay");
                        cfg.validation_fraction = s.num("validation-fraction");
                        cfg.seed = s.u64("seed");
                        cfg.projection_bias = !s.flag("no-projection-bias");
                        cfg.target_mode = target_mode_from_string(s.str("target-mode"));
                        cfg.softening.phi = s.num("phi");
                        cfg.softening.k_replace = s.size("k-replace");
                        cfg.softening.bandwidth = s.num("soft-bandwidth");
                        cfg.softening.seed = cfg.seed;

                        std::optional<NeighborEncoderConfig> enc;
                        if (s.flag("encoder")) {
                            NeighborEncoderConfig e;
                            e.layers = s.size("encoder-layers");
                            e.heads = s.size("encoder-heads");
                            e.k_context = s.size("k-context");
                            e.dropout = s.num("encoder-dropout");
                            e.ff_dim = s.size("ff-dim");
                            enc = e;
                        }
                        std::optional<ContrastiveConfig> con;
                        if (s.flag("contrastive")) {
                            ContrastiveConfig c;
                            c.mu = s.num("mu");
                            c.tau = s.num("tau");
                            c.n_retrieved = s.size("n-retrieved");
                            c.n_peers = s.size("n-peers");
                            c.projection_dim = s.size("projection-dim");
                            c.denominator = denominator_mode_from_string(s.str("denominator"));
                            c.embedding_mode = embedding_mode_from_string(s.str("embedding-mode"));
                            c.bandwidth = s.num("peer-bandwidth");
                            // The encoder reads a frozen keybase; only an explicit request for
                            // dynamic keys conflicts with it.
                            if (enc && !s.given("embedding-mode")) c.embedding_mode = EmbeddingMode::static_keys;
                            con = c;
                        } else if (enc && s.given("embedding-mode") && s.str("embedding-mode") == "dynamic") {
                            throw ValidationError("contradictory embedding modes: the neighbour encoder forces static keys");
                        }

                        std::optional<SoftenedDataset> targets;
                        if (!s.str("targets").empty()) targets = read_targets(s.str("targets"), store.labels().size());
                        FoldModels models;
                        const auto result = train_crossval(store, targets, cfg, con, enc, nullptr, &models);
                        write_correction_result(result, store, s.path("out"));
                        const auto applied = apply_corrections(store, result);
                        if (!s.str("changes").empty()) write_correction_changes(applied.changes, s.str("changes"));
                        if (!s.str("checkpoint-dir").empty()) {
                            const std::filesystem::path dir = s.str("checkpoint-dir");
                            for (std::size_t f = 0; f < models.params.size(); ++f)
                                nn::write_checkpoint(models.params[f], dir / ("fold" + std::to_string(f) + ".rpck"));
                        }
                        return Json{{"records", store.size()},
                                    {"changed", applied.changes.size()},
                                    {"targets", targets ? "file" : to_string(cfg.target_mode)},
                                    {"contrastive", con.has_value()},
                                    {"encoder", enc.has_value()},
                                    {"out", s.str("out")}};
                    }});
}

void add_apply(CLI::App& root, std::vector<Command>& cmds) {
    auto* app = root.add_subcommand("apply", "Write a corrected datastore from predictions");
    auto s = std::make_unique<Settings>(app);
    s->add("store", "Input datastore", "", "");
    s->add("corrections", "Predictions from `correct`", "", "");
    s->add("out", "Corrected datastore", "corrected.rann", "");
    s->add("changes", "Output change log {id, old, new, prob}", "applied_changes.jsonl", "");
    cmds.push_back({app, std::move(s), [](const Settings& s) {
                        const auto store = read_datastore(s.path("store"));
                        const auto result = read_correction_result(s.path("corrections"), store.labels().size());
                        const auto applied = apply_corrections(store, result);
                        write_datastore(applied.store, s.path("out"));
                        write_correction_changes(applied.changes, s.path("changes"));
                        return Json{{"records", store.size()},
                                    {"changed", applied.changes.size()},
                                    {"out", s.str("out")},
                                    {"changes", s.str("changes")}};
                    }});
}

void add_eval(CLI::App& root, std::vector<Command>& cmds) {
    auto* app = root.add_subcommand("eval", "Score predictions or a detection report against true labels");
    auto s = std::make_unique<Settings>(app);
    s->add("pred", "Predicted labels (corrections or any {id, label} file)", "", "");
    s->add("report", "Detection report to score instead of --pred (needs --store)", "", "");
    s->add("store", "Datastore with observed labels", "", "");
    s->add("gold", "True labels {id, revised_label}", "", "");
    s->add("positive", "Positive class for detection F1: inconsistent or consistent", "inconsistent", kEngine);
    s->add("out", "Metric report", "metrics.txt", "");
    cmds.push_back({app, std::move(s), [](const Settings& s) {
                        const auto gold_file = read_revisions(s.path("gold"));
                        LabelMap gold(gold_file.entries.begin(), gold_file.entries.end());
                        ClassificationReport report;
                        std::size_t n = 0;
                        if (!s.str("report").empty()) {
                            const auto store = read_datastore(s.path("store"));
                            gold_file.validate(store);
                            const auto det = read_credibility_report(s.str("report"));
                            const auto det_gold = detection_gold(store, gold_file);
                            LabelMap pred, g;
                            for (const auto& [id, l] : detection_pred(det))
                                if (det_gold.contains(id)) {
                                    pred.emplace(id, l);
                                    g.emplace(id, det_gold.at(id));
                                }
                            if (g.empty()) throw ValidationError("report and gold share no ids");
                            const auto positive = verdict_from_string(s.str("positive"));
                            report = classification_metrics(pred, g, 2, static_cast<LabelIndex>(positive));
                            n = g.size();
                        } else {
                            const auto all = read_label_file(s.path("pred"));
                            LabelMap pred;
                            for (const auto& [id, l] : gold) {
                                const auto it = all.find(id);
                                if (it == all.end()) throw ValidationError("no prediction for gold id '" + id + "'");
                                pred.emplace(id, it->second);
                            }
                            std::size_t classes = class_bound(pred, gold);
                            if (!s.str("store").empty())
                                classes = std::max(classes, read_datastore(s.str("store")).labels().size());
                            report = classification_metrics(pred, gold, classes);
                            n = gold.size();
                        }
                        const auto entries = classification_entries(report, n);
                        write_metric_report(entries, s.path("out"));
                        return Json{{"metrics", entries_json(entries)}, {"out", s.str("out")}};
                    }});
}

void add_kappa(CLI::App& root, std::vector<Command>& cmds) {
    auto* app = root.add_subcommand("kappa", "Cohen's kappa between two label files");
    auto s = std::make_unique<Settings>(app);
    s->add("a", "First rater {id, revised_label}", "", "");
    s->add("b", "Second rater {id, revised_label}", "", "");
    s->add("out", "Metric report", "kappa.txt", "");
    cmds.push_back({app, std::move(s), [](const Settings& s) {
                        const auto a = read_label_file(s.path("a"));
                        const auto b = read_label_file(s.path("b"));
                        const double k = cohen_kappa(a, b);
                        const MetricEntries entries{{"n", static_cast<double>(a.size())}, {"kappa", k}};
                        write_metric_report(entries, s.path("out"));
                        return Json{{"metrics", entries_json(entries)}, {"out", s.str("out")}};
                    }});
}

void add_serve(CLI::App& root, std::vector<Command>& cmds, std::ostream& out) {
    auto* app = root.add_subcommand("serve", "Run the review service over HTTP");
    auto s = std::make_unique<Settings>(app);
    s->add("store", "Input datastore", "", "");
    s->add("report", "Credibility report from `detect`", "", "");
    s->add("corrections", "Optional predictions from `correct`", "", "");
    s->add("metadata", "Optional metadata sidecar", "", "");
    s->add("audit-log", "Append-only decision log (replayed when present)", "audit.jsonl", "");
    s->add("host", "Bind address", "127.0.0.1", "");
    s->add("port", "Port", "8080", "");
    s->add("k-cred", "Neighbours retrieved when recomputing psi", "250", kRef);
    s->add("bandwidth", "KDE bandwidth when recomputing psi", "0.25", kRef);
    s->add("projection-sample", "Points used for the 2-D projection", "2000", kEngine);
    s->add("seed", "Projection sample seed", "0", kEngine);
    cmds.push_back({app, std::move(s), [&out](const Settings& s) {
                        auto store = read_datastore(s.path("store"));
                        const auto report = read_credibility_report(s.path("report"));
                        std::optional<CorrectionResult> correction;
                        if (!s.str("corrections").empty())
                            correction = read_correction_result(s.str("corrections"), store.labels().size());
                        MetadataMap metadata;
                        if (!s.str("metadata").empty()) metadata = read_metadata(s.str("metadata"));
                        ReviewConfig cfg;
                        cfg.k_cred = s.size("k-cred");
                        cfg.bandwidth = s.num("bandwidth");
                        cfg.projection_sample = s.size("projection-sample");
                        cfg.projection_seed = s.u64("seed");
                        const auto port = s.size("port");
                        if (port == 0 || port > 65535) throw ValidationError("--port must lie in [1, 65535]");
                        ReviewService service(std::move(store), report, std::move(correction), std::move(metadata),
                                              cfg, s.str("audit-log"));
                        out << json_line(Json{{"command", "serve"},
                                              {"status", "listening"},
                                              {"host", s.str("host")},
                                              {"port", port}})
                            << std::endl;
                        serve_review(service, s.str("host"), static_cast<int>(port));
                        return Json{{"status", "stopped"}};
                    }});
}

unsigned threads_from(const std::string& flag) {
    std::string v = flag;
    if (v.empty()) {
        if (const char* env = std::getenv("REANNO_THREADS")) v = env;
    }
    if (v.empty()) return 0;
    try {
        std::size_t used = 0;
        const auto n = std::stoul(v, &used);
        if (used == v.size() && n > 0) return static_cast<unsigned>(n);
    } catch (const std::exception&) {
    }
    throw ValidationError("thread count must be a positive integer, got '" + v + "'");
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Annotation-noise detection and correction over embedding datastores", "reanno"};
    app.require_subcommand(1);
    app.fallthrough();
    app.get_formatter()->column_width(40);
    std::string profile = "", config, threads;
    auto* profile_opt = app.add_option("--profile", profile, "Default set: tacred-like or docred-like [default: tacred-like]");
    app.add_option("--config", config, "key=value file; flags override it, it overrides the profile");
    app.add_option("--threads", threads, "Worker cap (falls back to REANNO_THREADS)");

    std::vector<Command> cmds;
    add_synth(app, cmds);
    add_detect(app, cmds);
    add_rank_eval(app, cmds);
    add_soften(app, cmds);
    add_correct(app, cmds);
    add_apply(app, cmds);
    add_eval(app, cmds);
    add_kappa(app, cmds);
    add_serve(app, cmds, out);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 1;
    }

    try {
        std::map<std::string, std::string> cfg;
        if (!config.empty()) {
            for (const auto& [k, v] : read_key_values(config)) {
                const bool known = k == "profile" || k == "threads" ||
                                   std::any_of(cmds.begin(), cmds.end(),
                                               [&k](const Command& c) { return c.settings->knows(k); });
                if (!known) throw ValidationError(config + ": unknown key '" + k + "'");
                cfg[k] = v;
            }
        }
        if (profile_opt->count() == 0 && cfg.contains("profile")) profile = cfg["profile"];
        if (profile.empty()) profile = kProfiles[0];
        const auto pit = std::find(kProfiles.begin(), kProfiles.end(), profile);
        if (pit == kProfiles.end()) throw ValidationError("unknown profile '" + profile + "'");
        if (threads.empty() && cfg.contains("threads")) threads = cfg["threads"];
        if (const auto n = threads_from(threads); n > 0) set_thread_limit(n);

        for (auto& c : cmds) {
            if (!c.app->parsed()) continue;
            c.settings->resolve(static_cast<std::size_t>(pit - kProfiles.begin()), cfg);
            Json summary{{"command", c.app->get_name()}, {"profile", profile}};
            const Json result = c.run(*c.settings);
            for (const auto& [k, v] : result.items()) summary[k] = v;
            out << json_line(summary) << std::endl;
            return 0;
        }
        throw ValidationError("no subcommand given");
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

}  // namespace reanno::cli
