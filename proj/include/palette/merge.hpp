#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "palette/tensor_store.hpp"

namespace palette {

struct Expert {
  std::string label;
  Checkpoint params;
};

enum class MergeMethod { TaskArithmetic, Ties, ModelStock, MoErges };

MergeMethod parse_merge_method(std::string_view name);
std::string_view to_string(MergeMethod method) noexcept;

/// base + sum_k coeffs[k] * (expert_k - base).
Checkpoint task_arithmetic(const Checkpoint& base, std::span<const Expert> experts,
                           std::span<const double> coeffs);

/// TIES merging with per-tensor trimming. Magnitude ties keep the lower index;
/// an exact-zero sign sum elects "+".
Checkpoint ties_merge(const Checkpoint& base, std::span<const Expert> experts, double density,
                      double scale);

/// Model Stock: base + t * mean(tau), t = k cos / (1 + (k-1) cos) clamped to
/// [0, 1], cos averaged over distinct expert pairs, per tensor.
Checkpoint model_stock(const Checkpoint& base, std::span<const Expert> experts);

struct MoErgesOptions {
  std::string ffn_pattern{kDefaultFfnPattern};
  /// Fuse base + sum g_c (expert_c - base) instead of the pure weighted sum.
  bool delta_mode = false;
};

inline constexpr double kGateTolerance = 1e-6;

/// Gate-weighted fusion of the FFN tensors; every other tensor is copied from
/// base unchanged. Records the gate in metadata["gate"].
Checkpoint moerges_fuse(const Checkpoint& base, std::span<const Expert> experts,
                        std::span<const double> gate, const MoErgesOptions& options = {});

/// The raw combination behind moerges_fuse, without gate validation. Used to
/// check linearity in the weights.
Checkpoint moerges_combine(const Checkpoint& base, std::span<const Expert> experts,
                           std::span<const double> weights, const MoErgesOptions& options = {});

}  // namespace palette
