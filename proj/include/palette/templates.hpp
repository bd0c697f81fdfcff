#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace palette {

using TemplateValues = std::map<std::string, std::string>;

/// Named prompt templates with `{name}` placeholders.
class TemplateSet {
 public:
  /// Templates compiled into the binary.
  static TemplateSet builtin();
  /// Builtin set with any `<name>.txt` found in `dir` overriding it.
  static TemplateSet with_overrides(const std::filesystem::path& dir);

  /// Throws TemplateError for unknown names.
  const std::string& get(std::string_view name) const;
  std::vector<std::string> names() const;
  const std::string& version() const noexcept { return version_; }

 private:
  std::map<std::string, std::string, std::less<>> texts_;
  std::string version_;
};

/// Placeholder names in order of first appearance.
std::vector<std::string> placeholders(std::string_view tmpl);

/// Single-pass substitution: substituted text is never rescanned. Throws
/// TemplateError naming every placeholder without a value.
std::string render(std::string_view tmpl, const TemplateValues& values);

}  // namespace palette
