#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "palette/gate.hpp"
#include "palette/merge.hpp"
#include "palette/model.hpp"
#include "palette/tensor_store.hpp"

#ifndef PALETTE_TEST_DATA
#define PALETTE_TEST_DATA "tests/data"
#endif

namespace support {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "palette-test-XXXXXX").string();
    path_ = ::mkdtemp(tmpl.data()) ? fs::path(tmpl) : fs::path{};
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline fs::path data_path(const std::string& name) { return fs::path(PALETTE_TEST_DATA) / name; }

inline float uniform(std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return static_cast<float>(std::uniform_real_distribution<double>(lo, hi)(rng));
}

/// Up to `max_tensors` tensors of at most `max_elems` entries, a mix of FFN
/// and shared names, plus a little metadata.
inline palette::Checkpoint random_checkpoint(std::mt19937_64& rng, int max_tensors = 5, int max_elems = 16) {
  palette::Checkpoint c;
  const int n = 1 + static_cast<int>(rng() % max_tensors);
  for (int i = 0; i < n; ++i) {
    palette::TensorSpec t;
    t.name = (rng() % 2 ? "layer" + std::to_string(i) + ".ffn.w" : "layer" + std::to_string(i) + ".attn.w");
    const int rows = 1 + static_cast<int>(rng() % 4);
    const int cols = 1 + static_cast<int>(rng() % (max_elems / rows));
    t.shape = {rows, cols};
    for (int k = 0; k < rows * cols; ++k) t.data.push_back(uniform(rng));
    c.add(std::move(t));
  }
  c.metadata["seed"] = std::to_string(rng() % 1000);
  return c;
}

/// Same schema as `base`, fresh values.
inline palette::Checkpoint random_like(const palette::Checkpoint& base, std::mt19937_64& rng) {
  palette::Checkpoint c = base;
  for (auto& [name, t] : c.tensors)
    for (auto& v : t.data) v = uniform(rng);
  return c;
}

inline palette::ModelConfig tiny_config(int d = 16, int layers = 1, int heads = 2, int max_seq = 64) {
  palette::ModelConfig c;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = heads;
  c.max_seq = max_seq;
  return c;
}

/// Five continent experts that differ from `base` only in FFN tensors.
inline std::vector<palette::Expert> ffn_experts(const palette::Checkpoint& base, std::uint64_t seed,
                                                double scale = 0.05) {
  std::mt19937_64 rng(seed);
  std::vector<palette::Expert> out;
  for (auto c : palette::kContinents) {
    palette::Expert e{std::string(c), base};
    for (auto& [name, t] : e.params.tensors) {
      if (!palette::glob_match(palette::kDefaultFfnPattern, name)) continue;
      for (auto& v : t.data) v += uniform(rng, -scale, scale);
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<double> as_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

}  // namespace support
