#include "palette/templates.hpp"

#include <algorithm>

#include "palette/error.hpp"
#include "palette/util.hpp"

namespace palette {

// Generated at configure time from templates/.
const std::map<std::string, std::string>& builtin_template_texts();
const char* builtin_template_version();

namespace {

bool name_char(char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'; }

// Length of the placeholder name starting after '{' at `pos`, or 0.
std::size_t placeholder_at(std::string_view s, std::size_t pos) {
  std::size_t end = pos;
  while (end < s.size() && name_char(s[end])) ++end;
  if (end == pos || end >= s.size() || s[end] != '}') return 0;
  return end - pos;
}

}  // namespace

TemplateSet TemplateSet::builtin() {
  TemplateSet set;
  for (const auto& [k, v] : builtin_template_texts()) set.texts_.emplace(k, v);
  set.version_ = builtin_template_version();
  return set;
}

TemplateSet TemplateSet::with_overrides(const std::filesystem::path& dir) {
  TemplateSet set = builtin();
  if (!std::filesystem::is_directory(dir))
    throw Error(ErrorCode::TemplateError, "template directory not found", dir.string());
  for (auto& [name, text] : set.texts_) {
    const auto file = dir / (name + ".txt");
    if (std::filesystem::exists(file)) text = read_file(file);
  }
  set.version_ = dir.filename().string();
  return set;
}

const std::string& TemplateSet::get(std::string_view name) const {
  auto it = texts_.find(name);
  if (it == texts_.end()) throw Error(ErrorCode::TemplateError, "unknown template", std::string(name));
  return it->second;
}

std::vector<std::string> TemplateSet::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : texts_) out.push_back(k);
  return out;
}

std::vector<std::string> placeholders(std::string_view tmpl) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] != '{') continue;
    if (auto n = placeholder_at(tmpl, i + 1)) {
      std::string name(tmpl.substr(i + 1, n));
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
      i += n + 1;
    }
  }
  return out;
}

std::string render(std::string_view tmpl, const TemplateValues& values) {
  std::vector<std::string> missing;
  for (const auto& name : placeholders(tmpl))
    if (!values.count(name)) missing.push_back(name);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ",") + m;
    throw Error(ErrorCode::TemplateError, "unfilled placeholders", list);
  }
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{') {
      if (auto n = placeholder_at(tmpl, i + 1)) {
        out += values.at(std::string(tmpl.substr(i + 1, n)));
        i += n + 1;
        continue;
      }
    }
    out.push_back(tmpl[i]);
  }
  return out;
}

}  // namespace palette
