#include "reanno/nn/checkpoint.hpp"

#include "reanno/jsonl.hpp"

#include <bit>

namespace reanno::nn {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get(std::string_view in, std::size_t& pos, int bytes) {
    if (in.size() - pos < static_cast<std::size_t>(bytes)) throw IoError("corrupt checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += static_cast<std::size_t>(bytes);
    return v;
}

}  // namespace

std::string encode_checkpoint(const ParamSet& params) {
    std::string out = "RPCK";
    put(out, kCheckpointVersion, 4);
    put(out, params.size(), 4);
    for (const auto& name : params.names()) {
        const auto& t = params.value(name);
        put(out, name.size(), 4);
        out += name;
        put(out, 2, 4);
        put(out, static_cast<std::uint64_t>(t.rows()), 8);
        put(out, static_cast<std::uint64_t>(t.cols()), 8);
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) put(out, std::bit_cast<std::uint64_t>(t(r, c)), 8);
    }
    return out;
}

ParamSet decode_checkpoint(std::string_view bytes) {
    if (bytes.substr(0, 4) != "RPCK") throw IoError("corrupt checkpoint: bad magic");
    std::size_t pos = 4;
    if (get(bytes, pos, 4) != kCheckpointVersion) throw IoError("corrupt checkpoint: unsupported version");
    const auto count = get(bytes, pos, 4);
    ParamSet params;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = get(bytes, pos, 4);
        if (bytes.size() - pos < len) throw IoError("corrupt checkpoint: truncated name");
        std::string name(bytes.substr(pos, len));
        pos += len;
        if (get(bytes, pos, 4) != 2) throw IoError("corrupt checkpoint: only rank-2 tensors are supported");
        const auto rows = static_cast<Eigen::Index>(get(bytes, pos, 8));
        const auto cols = static_cast<Eigen::Index>(get(bytes, pos, 8));
        Tensor t(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) t(r, c) = std::bit_cast<double>(get(bytes, pos, 8));
        params.add(name, std::move(t));
    }
    if (pos != bytes.size()) throw IoError("corrupt checkpoint: trailing bytes");
    return params;
}

void write_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
    write_text(path, encode_checkpoint(params));
}

ParamSet read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_text(path));
}

}  // namespace reanno::nn
