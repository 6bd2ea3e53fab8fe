#pragma once

#include "reanno/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace reanno {

using LabelIndex = std::uint32_t;

/// Ordered set of label names with contiguous indices 0..size()-1.
class LabelSpace {
public:
    LabelSpace() = default;
    explicit LabelSpace(std::vector<std::string> names);

    /// Appends a new name; throws on duplicates.
    LabelIndex add(const std::string& name);
    LabelIndex index_of(const std::string& name) const;
    std::optional<LabelIndex> find(const std::string& name) const;
    const std::string& name(LabelIndex i) const { return names_.at(i); }
    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return names_.size(); }
    bool contains(LabelIndex i) const { return i < names_.size(); }

    bool operator==(const LabelSpace& other) const { return names_ == other.names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, LabelIndex> index_;
};

struct EmbeddingRecord {
    std::string id;
    Eigen::VectorXf vector;
    LabelIndex observed_label = 0;
};

/// Context text and entity spans for one example. Spans are [begin, end)
/// character offsets into `context`.
struct ExampleMetadata {
    std::string context;
    std::pair<std::size_t, std::size_t> head_span{0, 0};
    std::pair<std::size_t, std::size_t> tail_span{0, 0};
    std::optional<std::string> head_type;
    std::optional<std::string> tail_type;

    void validate(const std::string& id) const;
    bool operator==(const ExampleMetadata&) const = default;
};

/// Id-indexed embedding vectors with observed labels. Vectors live in one
/// contiguous row-major float buffer; rows keep insertion order.
class Datastore {
public:
    using ConstRow = Eigen::Map<const Eigen::VectorXf>;
    using ConstRows = Eigen::Map<const RowMatrix<float>>;

    Datastore() = default;
    Datastore(std::size_t dim, LabelSpace labels);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    const LabelSpace& labels() const { return labels_; }

    /// Validates and appends one record.
    void add(const std::string& id, std::span<const float> vector, LabelIndex label);
    void add(const EmbeddingRecord& record);

    const std::string& id(std::size_t row) const { return ids_.at(row); }
    const std::vector<std::string>& ids() const { return ids_; }
    LabelIndex label(std::size_t row) const { return observed_.at(row); }
    const std::vector<LabelIndex>& observed_labels() const { return observed_; }
    void set_label(std::size_t row, LabelIndex label);

    ConstRow vector(std::size_t row) const;
    ConstRows vectors() const;
    EmbeddingRecord record(std::size_t row) const;

    std::optional<std::size_t> find(const std::string& id) const;
    /// Throws NotFoundError for unknown ids.
    std::size_t row_of(const std::string& id) const;

    bool operator==(const Datastore& other) const;

private:
    std::size_t dim_ = 0;
    LabelSpace labels_;
    std::vector<std::string> ids_;
    std::vector<LabelIndex> observed_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> rows_;
};

/// Binary layout (little-endian):
///   "RANN" | u32 version | u32 dim | u64 count | u32 n_labels | n_labels x (u32 len, bytes)
///   count x (u32 id_len, id bytes, u32 label, dim x f32)
inline constexpr std::uint32_t kDatastoreVersion = 1;

Datastore read_datastore(const std::filesystem::path& path);
void write_datastore(const Datastore& store, const std::filesystem::path& path);
std::string encode_datastore(const Datastore& store);
Datastore decode_datastore(std::string_view bytes);

/// Fold assignment aligned with the rows of the store it was made from.
struct SplitSpec {
    std::size_t n_folds = 0;
    std::vector<std::string> ids;
    std::vector<std::uint32_t> fold;

    std::vector<std::size_t> rows_in(std::uint32_t f) const;
    std::vector<std::size_t> rows_not_in(std::uint32_t f) const;
    std::vector<std::size_t> fold_sizes() const;
    /// Throws unless every row has exactly one fold in [0, n_folds).
    void validate(const Datastore& store) const;
    bool operator==(const SplitSpec&) const = default;
};

/// Seeded shuffle of rows followed by round-robin assignment.
SplitSpec make_folds(const Datastore& store, std::size_t n_folds, std::uint64_t seed);

struct RevisionFile {
    std::map<std::string, LabelIndex> entries;

    void validate(const Datastore& store) const;
    bool operator==(const RevisionFile&) const = default;
};

/// One object per line: {"id": ..., "revised_label": <index>}.
RevisionFile read_revisions(const std::filesystem::path& path);
void write_revisions(const RevisionFile& revisions, const std::filesystem::path& path);

using MetadataMap = std::map<std::string, ExampleMetadata>;
/// One object per line: {"id", "context", "head_span", "tail_span", "head_type"?, "tail_type"?}.
MetadataMap read_metadata(const std::filesystem::path& path);
void write_metadata(const MetadataMap& metadata, const std::filesystem::path& path);

struct SynthConfig {
    std::size_t clusters = 5;
    std::size_t dim = 16;
    std::size_t per_cluster = 400;
    double flip_rate = 0.1;
    /// Standard deviation of points around their cluster centre.
    double spread = 0.35;
    /// Standard deviation of the cluster centres around the origin.
    double center_scale = 1.0;
    std::uint64_t seed = 7;
};

struct SynthDataset {
    Datastore store;
    RevisionFile truth;
    RowMatrix<double> centers;
};

/// Gaussian clusters with one true label each; exactly floor(flip_rate * N)
/// records get a different, uniformly chosen observed label.
SynthDataset synth_generate(const SynthConfig& cfg);

/// Smallest distance between two cluster centres, in units of the spread.
double min_center_separation(const SynthDataset& data, double spread);

}  // namespace reanno
