#include "palette/gate.hpp"

#include <algorithm>
#include <cmath>

#include "palette/error.hpp"
#include "palette/util.hpp"

namespace palette {

std::size_t continent_index(std::string_view label) {
  for (std::size_t i = 0; i < kContinents.size(); ++i)
    if (kContinents[i] == label) return i;
  throw Error(ErrorCode::LabelError, "unknown continent label", std::string(label));
}

void GateMatrix::validate() const {
  if (matrix.cols != static_cast<int>(kContinentCount) || labels.size() != kContinentCount)
    throw Error(ErrorCode::DimensionMismatch, "gate must have exactly 5 labelled columns");
  for (double v : matrix.data)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "gate matrix has non-finite entries");
  if (normalized) {
    for (std::size_t c = 0; c < kContinentCount; ++c) {
      double ss = 0.0;
      for (double v : column(c)) ss += v * v;
      if (std::abs(std::sqrt(ss) - 1.0) > 1e-6)
        throw Error(ErrorCode::DimensionMismatch, "gate column is not unit length", labels[c]);
    }
  }
}

std::vector<double> GateMatrix::column(std::size_t c) const {
  std::vector<double> out(matrix.rows);
  for (int r = 0; r < matrix.rows; ++r) out[r] = matrix(r, static_cast<int>(c));
  return out;
}

std::size_t GateWeights::argmax() const {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::string continent_system_prompt(std::string_view continent) {
  const std::string c(continent);
  return "You are a knowledge chatbot about " + c + ". Answer from the cultural perspective of " + c +
         ", respecting its traditions, values and history.";
}

GateMatrix init_gate(const Transformer& model, std::span<const std::string> system_prompts,
                     const GateOptions& options) {
  if (system_prompts.size() != kContinentCount)
    throw Error(ErrorCode::DimensionMismatch, "exactly 5 system prompts are required");
  GateMatrix gate;
  gate.matrix = Matrix(model.config().d_model, static_cast<int>(kContinentCount));
  gate.normalized = options.normalize_columns;
  for (std::size_t c = 0; c < kContinentCount; ++c) {
    const auto& prompt = system_prompts[c];
    if (prompt.empty()) throw Error(ErrorCode::EmptyPrompt, "system prompt is empty", std::string(kContinents[c]));
    auto hidden = model.pooled_hidden(tokenize(prompt, model.config().max_seq));
    if (options.normalize_columns) {
      double ss = 0.0;
      for (double v : hidden) ss += v * v;
      const double norm = std::sqrt(ss);
      if (norm == 0.0) throw Error(ErrorCode::NonFiniteInput, "zero hidden state", std::string(kContinents[c]));
      for (auto& v : hidden) v /= norm;
    }
    for (int r = 0; r < gate.matrix.rows; ++r) gate.matrix(r, static_cast<int>(c)) = hidden[r];
    gate.labels.emplace_back(kContinents[c]);
  }
  gate.validate();
  return gate;
}

GateMatrix init_gate(const Checkpoint& model, std::span<const std::string> system_prompts,
                     const GateOptions& options) {
  return init_gate(Transformer(model), system_prompts, options);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (auto& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : out) v /= sum;
  return out;
}

GateWeights route(std::span<const double> hidden, const GateMatrix& gate, double temperature) {
  if (static_cast<int>(hidden.size()) != gate.matrix.rows)
    throw Error(ErrorCode::DimensionMismatch, "hidden has " + std::to_string(hidden.size()) +
                                                  " entries, gate expects " + std::to_string(gate.matrix.rows));
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error(ErrorCode::NonFiniteInput, "temperature must be positive and finite");
  for (double v : hidden)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "hidden state has non-finite entries");

  std::vector<double> logits(gate.matrix.cols, 0.0);
  for (int r = 0; r < gate.matrix.rows; ++r)
    for (int c = 0; c < gate.matrix.cols; ++c) logits[c] += hidden[r] * gate.matrix(r, c);
  for (auto& l : logits) l /= temperature;
  return {softmax(logits), gate.labels};
}

GateWeights route_prompt(const Transformer& model, const GateMatrix& gate, std::string_view prompt,
                         double temperature) {
  return route(model.pooled_hidden(tokenize(prompt, model.config().max_seq)), gate, temperature);
}

GateWeights route_prompt(const Checkpoint& model, const GateMatrix& gate, std::string_view prompt,
                         double temperature) {
  return route_prompt(Transformer(model), gate, prompt, temperature);
}

Checkpoint gate_to_checkpoint(const GateMatrix& gate) {
  gate.validate();
  Checkpoint ckpt;
  TensorSpec t;
  t.name = "W_g";
  t.shape = {gate.matrix.rows, gate.matrix.cols};
  t.data.assign(gate.matrix.data.begin(), gate.matrix.data.end());
  ckpt.add(std::move(t));
  std::string labels;
  for (std::size_t i = 0; i < gate.labels.size(); ++i) labels += (i ? "," : "") + gate.labels[i];
  ckpt.metadata["labels"] = labels;
  ckpt.metadata["normalized"] = gate.normalized ? "true" : "false";
  return ckpt;
}

GateMatrix gate_from_checkpoint(const Checkpoint& ckpt) {
  const auto& t = ckpt.at("W_g");
  if (t.shape.size() != 2 || t.shape[1] != static_cast<std::int64_t>(kContinentCount))
    throw Error(ErrorCode::DimensionMismatch, "W_g must have shape [d, 5]");
  GateMatrix gate;
  gate.matrix = Matrix(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
  gate.matrix.data.assign(t.data.begin(), t.data.end());
  auto it = ckpt.metadata.find("labels");
  std::string labels = it == ckpt.metadata.end() ? "Africa,America,Asia,Europe,Oceania" : it->second;
  std::size_t pos = 0;
  while (pos <= labels.size()) {
    auto comma = labels.find(',', pos);
    if (comma == std::string::npos) comma = labels.size();
    gate.labels.push_back(labels.substr(pos, comma - pos));
    pos = comma + 1;
  }
  auto norm = ckpt.metadata.find("normalized");
  gate.normalized = norm == ckpt.metadata.end() || norm->second == "true";
  // Stored as F32, so unit columns hold only to float precision.
  if (gate.normalized) {
    for (std::size_t c = 0; c < kContinentCount && static_cast<int>(c) < gate.matrix.cols; ++c) {
      double ss = 0.0;
      for (int r = 0; r < gate.matrix.rows; ++r) ss += gate.matrix(r, static_cast<int>(c)) * gate.matrix(r, static_cast<int>(c));
      const double n = std::sqrt(ss);
      if (n > 0.0)
        for (int r = 0; r < gate.matrix.rows; ++r) gate.matrix(r, static_cast<int>(c)) /= n;
    }
  }
  gate.validate();
  return gate;
}

}  // namespace palette
