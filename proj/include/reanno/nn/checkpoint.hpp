#pragma once

#include "reanno/nn/graph.hpp"

#include <filesystem>
#include <string>

namespace reanno::nn {

/// Little-endian: "RPCK" | u32 version | u32 count | count x
/// (u32 name_len, name, u32 rank = 2, u64 rows, u64 cols, rows*cols f64 row-major).
std::string encode_checkpoint(const ParamSet& params);
ParamSet decode_checkpoint(std::string_view bytes);

void write_checkpoint(const ParamSet& params, const std::filesystem::path& path);
ParamSet read_checkpoint(const std::filesystem::path& path);

}  // namespace reanno::nn
