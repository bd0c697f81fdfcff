#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace palette {

using json = nlohmann::json;

namespace log {

using Sink = std::function<void(std::string_view level, std::string_view message)>;

/// Replaces the process-wide sink (stderr by default). Returns the previous one.
Sink set_sink(Sink sink);
void warn(std::string_view message);
void info(std::string_view message);

}  // namespace log

/// Rounds to 9 significant digits. Serializing the result with a shortest
/// round-trip printer yields at most 9 digits.
double round9(double value);

/// `value` formatted with `%.9g`.
std::string format9(double value);

/// Comma-joined `format9` values.
std::string join9(const std::vector<double>& values);

/// JSON number rounded with `round9`; non-finite values become null.
json json_number(double value);

/// Deterministic JSON text: sorted keys, invalid UTF-8 replaced.
std::string dump_json(const json& value, int indent = 2);

/// Writes bytes to a sibling temp file then renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Parses one JSON value per non-blank line. Throws ParseError with the line number.
std::vector<json> read_jsonl(const std::filesystem::path& path);

/// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

std::vector<double> parse_double_list(std::string_view text);

}  // namespace palette
