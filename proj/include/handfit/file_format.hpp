#pragma once

// Helpers shared by every versioned file the library reads or writes. Each
// document (or JSONL record) carries "format" and "version" ("major.minor").

#include <filesystem>
#include <string>

#include <json.hpp>

namespace handfit {

// Throws SchemaViolation on a wrong format tag and UnsupportedVersion when the
// major version differs from `major`.
void check_header(const nlohmann::json& j, const std::string& format, int major);

// Throws MissingFile / SchemaViolation.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

// Doubles are printed with round-trip precision by nlohmann::json.
std::string dump_compact(const nlohmann::json& j);

}  // namespace handfit
