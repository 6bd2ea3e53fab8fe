#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace reanno {

using Json = nlohmann::ordered_json;

/// Reads one JSON object per non-empty line. Parse failures name the line.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
/// Writes one compact object per line, '\n'-terminated.
void write_jsonl(const std::vector<Json>& rows, const std::filesystem::path& path);

/// Flat "key=value" text files; '#' starts a comment line.
std::vector<std::pair<std::string, std::string>> read_key_values(const std::filesystem::path& path);
void write_key_values(const std::vector<std::pair<std::string, std::string>>& entries,
                      const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& bytes);
std::string read_text(const std::filesystem::path& path);

}  // namespace reanno
