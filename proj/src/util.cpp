#include "palette/util.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include "palette/error.hpp"

namespace palette {

namespace log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current_sink() {
  static Sink sink = [](std::string_view level, std::string_view message) {
    std::cerr << "[" << level << "] " << message << "\n";
  };
  return sink;
}

void emit(std::string_view level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (current_sink()) current_sink()(level, message);
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink previous = std::move(current_sink());
  current_sink() = std::move(sink);
  return previous;
}

void warn(std::string_view message) { emit("warn", message); }
void info(std::string_view message) { emit("info", message); }

}  // namespace log

double round9(double value) {
  if (!std::isfinite(value)) return value;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return std::strtod(buf, nullptr);
}

std::string format9(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

std::string join9(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format9(values[i]);
  }
  return out;
}

json json_number(double value) {
  if (!std::isfinite(value)) return nullptr;
  return round9(value);
}

namespace {

// Shortest %.Ng (N <= 9) that reads back as the 9-digit rounding of `value`.
std::string float_text(double value) {
  if (!std::isfinite(value)) return "null";
  const double target = round9(value);
  char buf[64];
  for (int p = 1; p <= 9; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, target);
    if (std::strtod(buf, nullptr) == target) break;
  }
  std::string out(buf);
  if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
  return out;
}

void write_value(const json& v, int indent, int depth, std::string& out) {
  auto newline = [&](int d) {
    if (indent < 0) return;
    out.push_back('\n');
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (v.type()) {
    case json::value_t::object: {
      if (v.empty()) {
        out += "{}";
        return;
      }
      out.push_back('{');
      bool first = true;
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (!first) out.push_back(',');
        first = false;
        newline(depth + 1);
        out += json(it.key()).dump(-1, ' ', false, json::error_handler_t::replace);
        out += indent < 0 ? ":" : ": ";
        write_value(it.value(), indent, depth + 1, out);
      }
      newline(depth);
      out.push_back('}');
      return;
    }
    case json::value_t::array: {
      if (v.empty()) {
        out += "[]";
        return;
      }
      out.push_back('[');
      bool first = true;
      for (const auto& e : v) {
        if (!first) out.push_back(',');
        first = false;
        newline(depth + 1);
        write_value(e, indent, depth + 1, out);
      }
      newline(depth);
      out.push_back(']');
      return;
    }
    case json::value_t::number_float:
      out += float_text(v.get<double>());
      return;
    default:
      out += v.dump(-1, ' ', false, json::error_handler_t::replace);
  }
}

}  // namespace

std::string dump_json(const json& value, int indent) {
  std::string out;
  write_value(value, indent, 0, out);
  return out;
}

void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open for writing", tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorCode::IoFailure, "write failed", tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::IoFailure, "rename failed", path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open for reading", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ParseError, e.what(),
                  path.string() + ":" + std::to_string(line_no));
    }
  }
  return rows;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<double> parse_double_list(std::string_view text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    std::string piece(text.substr(pos, comma - pos));
    if (piece.find_first_not_of(" \t") != std::string::npos) {
      char* end = nullptr;
      double v = std::strtod(piece.c_str(), &end);
      while (end && (*end == ' ' || *end == '\t')) ++end;
      if (end == piece.c_str() || (end && *end != '\0'))
        throw Error(ErrorCode::ParseError, "not a number: '" + piece + "'");
      out.push_back(v);
    }
    pos = comma + 1;
  }
  return out;
}

}  // namespace palette
