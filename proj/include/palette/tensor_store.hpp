#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace palette {

enum class DType { F32 };

/// A dense row-major F32 tensor.
struct TensorSpec {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const noexcept;
  /// Throws ShapeMismatch if product(shape) != data.size(), or a dim is < 1.
  void validate() const;
};

bool bit_equal(const TensorSpec& a, const TensorSpec& b) noexcept;

/// Named tensor collection. `std::map` keeps iteration lexicographic.
struct Checkpoint {
  std::map<std::string, TensorSpec> tensors;
  std::map<std::string, std::string> metadata;

  /// Inserts a tensor, throwing DuplicateName if the name is taken.
  void add(TensorSpec tensor);
  const TensorSpec& at(const std::string& name) const;
  TensorSpec& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  std::vector<std::string> names() const;
};

bool bit_equal(const Checkpoint& a, const Checkpoint& b) noexcept;

/// Throws SchemaMismatch unless names, shapes and dtypes agree.
void require_same_schema(const Checkpoint& a, const Checkpoint& b, std::string_view what = {});

/// Names matched by a glob, lexicographic.
struct TensorSubset {
  std::set<std::string> names;
  bool contains(const std::string& name) const { return names.count(name) != 0; }
  bool empty() const noexcept { return names.empty(); }
};

// Container format: u64 LE header length, JSON header, raw LE buffer.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::byte> bytes);
Checkpoint parse_checkpoint(std::string_view bytes);

Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Validates first; nothing is written when validation fails.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// a - b, element-wise over every tensor.
Checkpoint delta(const Checkpoint& a, const Checkpoint& b);

/// Matches `*` (any run) and `?` (one char). Other characters are literal.
bool glob_match(std::string_view pattern, std::string_view text) noexcept;

/// Names matching `pattern`. An empty result logs an EmptySelection warning.
TensorSubset select_ffn(const Checkpoint& ckpt, std::string_view pattern);

inline constexpr std::string_view kDefaultFfnPattern = "*.ffn.*";

}  // namespace palette
