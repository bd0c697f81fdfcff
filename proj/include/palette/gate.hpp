#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "palette/model.hpp"
#include "palette/tensor_store.hpp"

namespace palette {

inline constexpr std::size_t kContinentCount = 5;
inline constexpr std::array<std::string_view, kContinentCount> kContinents = {
    "Africa", "America", "Asia", "Europe", "Oceania"};

/// Index of a continent label in the fixed order; throws LabelError.
std::size_t continent_index(std::string_view label);

/// The d_model x 5 routing matrix, column c belonging to kContinents[c].
struct GateMatrix {
  Matrix matrix;
  std::vector<std::string> labels;
  bool normalized = true;

  /// Checks shape, finiteness and (when normalized) unit columns.
  void validate() const;
  std::vector<double> column(std::size_t c) const;
};

/// A point strictly inside the 5-simplex, aligned with GateMatrix::labels.
struct GateWeights {
  std::vector<double> values;
  std::vector<std::string> labels;

  std::size_t argmax() const;
};

struct GateOptions {
  bool normalize_columns = true;
  double temperature = 1.0;
};

/// Default system prompt for a continent column.
std::string continent_system_prompt(std::string_view continent);

/// Column c = (optionally L2-normalized) mean-pooled hidden state of prompt c.
GateMatrix init_gate(const Transformer& model, std::span<const std::string> system_prompts,
                     const GateOptions& options = {});
GateMatrix init_gate(const Checkpoint& model, std::span<const std::string> system_prompts,
                     const GateOptions& options = {});

/// softmax(hidden^T W_g / temperature), max-subtracted.
GateWeights route(std::span<const double> hidden, const GateMatrix& gate, double temperature = 1.0);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

GateWeights route_prompt(const Transformer& model, const GateMatrix& gate, std::string_view prompt,
                         double temperature = 1.0);
GateWeights route_prompt(const Checkpoint& model, const GateMatrix& gate, std::string_view prompt,
                         double temperature = 1.0);

/// Stored as a single tensor "W_g" of shape [d, 5] with labels in metadata.
Checkpoint gate_to_checkpoint(const GateMatrix& gate);
GateMatrix gate_from_checkpoint(const Checkpoint& ckpt);

}  // namespace palette
