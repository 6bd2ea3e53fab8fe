#include "reanno/datastore.hpp"

#include "reanno/jsonl.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

namespace reanno {

// ---------------------------------------------------------------------------
// LabelSpace

LabelSpace::LabelSpace(std::vector<std::string> names) {
    for (auto& n : names) add(n);
}

LabelIndex LabelSpace::add(const std::string& name) {
    if (index_.contains(name)) throw ValidationError("duplicate label name '" + name + "'");
    const auto idx = static_cast<LabelIndex>(names_.size());
    names_.push_back(name);
    index_.emplace(name, idx);
    return idx;
}

std::optional<LabelIndex> LabelSpace::find(const std::string& name) const {
    if (auto it = index_.find(name); it != index_.end()) return it->second;
    return std::nullopt;
}

LabelIndex LabelSpace::index_of(const std::string& name) const {
    if (auto idx = find(name)) return *idx;
    throw ValidationError("unknown label '" + name + "'");
}

// ---------------------------------------------------------------------------
// ExampleMetadata

void ExampleMetadata::validate(const std::string& id) const {
    auto check = [&](const auto& span, const char* which) {
        if (span.first > span.second || span.second > context.size())
            throw ValidationError("metadata for '" + id + "': " + which + " span out of context bounds");
    };
    check(head_span, "head");
    check(tail_span, "tail");
    if (head_span == tail_span) throw ValidationError("metadata for '" + id + "': head and tail spans coincide");
}

// ---------------------------------------------------------------------------
// Datastore

Datastore::Datastore(std::size_t dim, LabelSpace labels) : dim_(dim), labels_(std::move(labels)) {
    if (dim_ == 0) throw ValidationError("datastore dimension must be positive");
}

void Datastore::add(const std::string& id, std::span<const float> vector, LabelIndex label) {
    if (vector.size() != dim_)
        throw ValidationError("record '" + id + "': vector length " + std::to_string(vector.size()) +
                              " does not match dim " + std::to_string(dim_));
    if (!labels_.contains(label))
        throw ValidationError("record '" + id + "': label index " + std::to_string(label) +
                              " outside label space of size " + std::to_string(labels_.size()));
    for (float v : vector)
        if (!std::isfinite(v)) throw ValidationError("record '" + id + "': non-finite vector component");
    if (rows_.contains(id)) throw ValidationError("duplicate id '" + id + "'");
    rows_.emplace(id, ids_.size());
    ids_.push_back(id);
    observed_.push_back(label);
    data_.insert(data_.end(), vector.begin(), vector.end());
}

void Datastore::add(const EmbeddingRecord& record) {
    add(record.id, std::span<const float>(record.vector.data(), static_cast<std::size_t>(record.vector.size())),
        record.observed_label);
}

void Datastore::set_label(std::size_t row, LabelIndex label) {
    if (!labels_.contains(label)) throw ValidationError("label index " + std::to_string(label) + " out of range");
    observed_.at(row) = label;
}

Datastore::ConstRow Datastore::vector(std::size_t row) const {
    if (row >= size()) throw ValidationError("row out of range");
    return ConstRow(data_.data() + row * dim_, static_cast<Eigen::Index>(dim_));
}

Datastore::ConstRows Datastore::vectors() const {
    return ConstRows(data_.data(), static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(dim_));
}

EmbeddingRecord Datastore::record(std::size_t row) const {
    return {id(row), vector(row), label(row)};
}

std::optional<std::size_t> Datastore::find(const std::string& id) const {
    if (auto it = rows_.find(id); it != rows_.end()) return it->second;
    return std::nullopt;
}

std::size_t Datastore::row_of(const std::string& id) const {
    if (auto r = find(id)) return *r;
    throw NotFoundError("unknown id '" + id + "'");
}

bool Datastore::operator==(const Datastore& other) const {
    return dim_ == other.dim_ && labels_ == other.labels_ && ids_ == other.ids_ && observed_ == other.observed_ &&
           data_.size() == other.data_.size() &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

// ---------------------------------------------------------------------------
// Binary encoding

namespace {

static_assert(sizeof(float) == 4);

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_ += s;
    }
    void raw(std::string_view s) { out_ += s; }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    bool has(std::size_t n) const { return in_.size() - pos_ >= n; }
    std::size_t remaining() const { return in_.size() - pos_; }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string str(const char* what) {
        const auto n = u32(what);
        need(n, what);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::string_view raw(std::size_t n, const char* what) {
        need(n, what);
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n, const char* what) const {
        if (!has(n)) throw IoError(std::string("corrupt datastore: truncated ") + what);
    }

    std::string_view in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_datastore(const Datastore& store) {
    Writer w;
    w.raw("RANN");
    w.u32(kDatastoreVersion);
    w.u32(static_cast<std::uint32_t>(store.dim()));
    w.u64(store.size());
    w.u32(static_cast<std::uint32_t>(store.labels().size()));
    for (const auto& name : store.labels().names()) w.str(name);
    for (std::size_t r = 0; r < store.size(); ++r) {
        w.str(store.id(r));
        w.u32(store.label(r));
        const auto v = store.vector(r);
        for (Eigen::Index j = 0; j < v.size(); ++j) w.f32(v(j));
    }
    return w.take();
}

Datastore decode_datastore(std::string_view bytes) {
    Reader rd(bytes);
    if (rd.raw(4, "magic") != "RANN") throw IoError("corrupt datastore: bad magic");
    const auto version = rd.u32("version");
    if (version != kDatastoreVersion)
        throw IoError("corrupt datastore: unsupported format version " + std::to_string(version));
    const auto dim = rd.u32("dim");
    if (dim == 0) throw IoError("corrupt datastore: zero dimension");
    const auto count = rd.u64("record count");
    const auto n_labels = rd.u32("label count");
    std::vector<std::string> names;
    names.reserve(n_labels);
    for (std::uint32_t i = 0; i < n_labels; ++i) names.push_back(rd.str("label name"));

    Datastore store(dim, LabelSpace(std::move(names)));
    std::vector<float> buf(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto id = rd.str("record id");
        const auto label = rd.u32("record label");
        if (!rd.has(static_cast<std::size_t>(dim) * 4))
            throw ValidationError("record '" + id + "': vector has " + std::to_string(rd.remaining() / 4) +
                                  " components, expected dim " + std::to_string(dim));
        for (std::uint32_t j = 0; j < dim; ++j) buf[j] = rd.f32("vector");
        if (label >= n_labels)
            throw ValidationError("record '" + id + "': label index " + std::to_string(label) +
                                  " outside label space of size " + std::to_string(n_labels));
        store.add(id, buf, label);
    }
    if (rd.remaining() != 0) throw IoError("corrupt datastore: trailing bytes after last record");
    return store;
}

Datastore read_datastore(const std::filesystem::path& path) {
    return decode_datastore(read_text(path));
}

void write_datastore(const Datastore& store, const std::filesystem::path& path) {
    write_text(path, encode_datastore(store));
}

// ---------------------------------------------------------------------------
// Folds

std::vector<std::size_t> SplitSpec::rows_in(std::uint32_t f) const {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < fold.size(); ++r)
        if (fold[r] == f) rows.push_back(r);
    return rows;
}

std::vector<std::size_t> SplitSpec::rows_not_in(std::uint32_t f) const {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < fold.size(); ++r)
        if (fold[r] != f) rows.push_back(r);
    return rows;
}

std::vector<std::size_t> SplitSpec::fold_sizes() const {
    std::vector<std::size_t> sizes(n_folds, 0);
    for (auto f : fold) ++sizes.at(f);
    return sizes;
}

void SplitSpec::validate(const Datastore& store) const {
    if (n_folds == 0) throw ValidationError("split has zero folds");
    if (ids != store.ids() || fold.size() != store.size())
        throw ValidationError("fold assignment does not cover the datastore ids");
    for (auto f : fold)
        if (f >= n_folds) throw ValidationError("fold index out of range");
}

SplitSpec make_folds(const Datastore& store, std::size_t n_folds, std::uint64_t seed) {
    if (n_folds == 0) throw ValidationError("n_folds must be positive");
    if (n_folds > store.size())
        throw ValidationError("n_folds " + std::to_string(n_folds) + " exceeds record count " +
                              std::to_string(store.size()));
    std::vector<std::size_t> order(store.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
    SplitSpec split;
    split.n_folds = n_folds;
    split.ids = store.ids();
    split.fold.assign(store.size(), 0);
    for (std::size_t pos = 0; pos < order.size(); ++pos)
        split.fold[order[pos]] = static_cast<std::uint32_t>(pos % n_folds);
    return split;
}

// ---------------------------------------------------------------------------
// Revisions and metadata

void RevisionFile::validate(const Datastore& store) const {
    for (const auto& [id, label] : entries) {
        if (!store.find(id)) throw ValidationError("revision id '" + id + "' not in datastore");
        if (!store.labels().contains(label))
            throw ValidationError("revision for '" + id + "': label index out of range");
    }
}

RevisionFile read_revisions(const std::filesystem::path& path) {
    RevisionFile rev;
    for (const auto& row : read_jsonl(path)) {
        try {
            const auto id = row.at("id").get<std::string>();
            if (!rev.entries.emplace(id, row.at("revised_label").get<LabelIndex>()).second)
                throw ValidationError("duplicate revision id '" + id + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ": malformed revision record: " + e.what());
        }
    }
    return rev;
}

void write_revisions(const RevisionFile& revisions, const std::filesystem::path& path) {
    std::vector<Json> rows;
    rows.reserve(revisions.entries.size());
    for (const auto& [id, label] : revisions.entries) rows.push_back(Json{{"id", id}, {"revised_label", label}});
    write_jsonl(rows, path);
}

MetadataMap read_metadata(const std::filesystem::path& path) {
    MetadataMap out;
    for (const auto& row : read_jsonl(path)) {
        try {
            ExampleMetadata m;
            const auto id = row.at("id").get<std::string>();
            m.context = row.at("context").get<std::string>();
            m.head_span = {row.at("head_span").at(0).get<std::size_t>(), row.at("head_span").at(1).get<std::size_t>()};
            m.tail_span = {row.at("tail_span").at(0).get<std::size_t>(), row.at("tail_span").at(1).get<std::size_t>()};
            if (row.contains("head_type")) m.head_type = row["head_type"].get<std::string>();
            if (row.contains("tail_type")) m.tail_type = row["tail_type"].get<std::string>();
            m.validate(id);
            out.emplace(id, std::move(m));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ": malformed metadata record: " + e.what());
        }
    }
    return out;
}

void write_metadata(const MetadataMap& metadata, const std::filesystem::path& path) {
    std::vector<Json> rows;
    for (const auto& [id, m] : metadata) {
        Json row{{"id", id},
                 {"context", m.context},
                 {"head_span", {m.head_span.first, m.head_span.second}},
                 {"tail_span", {m.tail_span.first, m.tail_span.second}}};
        if (m.head_type) row["head_type"] = *m.head_type;
        if (m.tail_type) row["tail_type"] = *m.tail_type;
        rows.push_back(std::move(row));
    }
    write_jsonl(rows, path);
}

// ---------------------------------------------------------------------------
// Synthetic generator

SynthDataset synth_generate(const SynthConfig& cfg) {
    if (!(cfg.flip_rate >= 0.0 && cfg.flip_rate < 1.0)) throw ValidationError("flip rate must lie in [0, 1)");
    if (cfg.clusters < 2 && cfg.flip_rate > 0.0)
        throw ValidationError("label flips need at least 2 clusters");
    if (cfg.clusters == 0 || cfg.dim == 0 || cfg.per_cluster == 0)
        throw ValidationError("clusters, dim and per_cluster must be positive");
    if (!(cfg.spread >= 0.0)) throw ValidationError("spread must be non-negative");

    Rng rng(cfg.seed);
    std::vector<std::string> names;
    for (std::size_t c = 0; c < cfg.clusters; ++c) names.push_back("class_" + std::to_string(c));

    SynthDataset out{Datastore(cfg.dim, LabelSpace(names)), {}, RowMatrix<double>(cfg.clusters, cfg.dim)};
    for (std::size_t c = 0; c < cfg.clusters; ++c)
        for (std::size_t j = 0; j < cfg.dim; ++j) out.centers(c, j) = cfg.center_scale * rng.normal();

    const std::size_t n = cfg.clusters * cfg.per_cluster;
    const int width = static_cast<int>(std::to_string(n).size());
    std::vector<LabelIndex> truth(n);
    std::vector<float> v(cfg.dim);
    std::vector<std::vector<float>> vectors(n);
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = i % cfg.clusters;  // interleave clusters in row order
        truth[i] = static_cast<LabelIndex>(c);
        for (std::size_t j = 0; j < cfg.dim; ++j) v[j] = static_cast<float>(out.centers(c, j) + cfg.spread * rng.normal());
        vectors[i] = v;
        std::string num = std::to_string(i);
        ids[i] = "ex-" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
    }

    std::vector<LabelIndex> observed = truth;
    const auto n_flip = static_cast<std::size_t>(std::floor(cfg.flip_rate * static_cast<double>(n)));
    if (n_flip > 0) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order.begin(), order.end());
        for (std::size_t k = 0; k < n_flip; ++k) {
            const auto i = order[k];
            const auto offset = 1 + rng.below(cfg.clusters - 1);
            observed[i] = static_cast<LabelIndex>((truth[i] + offset) % cfg.clusters);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        out.store.add(ids[i], vectors[i], observed[i]);
        out.truth.entries.emplace(ids[i], truth[i]);
    }
    return out;
}

double min_center_separation(const SynthDataset& data, double spread) {
    double best = std::numeric_limits<double>::infinity();
    const auto& c = data.centers;
    for (Eigen::Index a = 0; a < c.rows(); ++a)
        for (Eigen::Index b = a + 1; b < c.rows(); ++b) best = std::min(best, (c.row(a) - c.row(b)).norm());
    return best / spread;
}

}  // namespace reanno
