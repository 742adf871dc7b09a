#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "apps/value_head.hpp"

// File-format helpers: JSON configs, JSONL record streams, CSV tables.
// All writers produce byte-stable output for identical inputs.

namespace apps {

/** Parse a JSON file. Throws ConfigError on missing file or bad syntax. */
nlohmann::json read_json_file(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);

/** One compact JSON object per line. */
std::string to_jsonl(const std::vector<nlohmann::json>& records);
std::vector<nlohmann::json> parse_jsonl(const std::string& content);

/** Supervision rows as JSONL: {"group", "features", "target"} per line. */
std::string dataset_to_jsonl(const Dataset& data);
Dataset dataset_from_jsonl(const std::string& content);

/** Simple CSV assembly; fields are written verbatim. */
std::string to_csv(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows);

/** Shortest-roundtrip decimal formatting, stable across runs. */
std::string format_double(double v);

}  // namespace apps
