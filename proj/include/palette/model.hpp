#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "palette/tensor_store.hpp"
#include "palette/util.hpp"

namespace palette {

/// Hyperparameters of the reference decoder. Stored as JSON under
/// metadata["config"] of every model checkpoint.
struct ModelConfig {
  int vocab_size = 260;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq = 256;
  std::uint64_t seed = 42;

  int d_ff() const noexcept { return 4 * d_model; }
  int head_dim() const noexcept { return d_model / n_heads; }
  /// Throws BadConfig.
  void validate() const;
  json to_json() const;
  static ModelConfig from_json(const json& j);
};

namespace token {
inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kPad = 258;
inline constexpr int kSep = 259;
}  // namespace token

using Tokens = std::vector<int>;

/// UTF-8 bytes wrapped as BOS ... EOS. Throws TooLong past `max_seq`.
Tokens tokenize(std::string_view text, int max_seq);
/// BOS bytes SEP: the conditioning side of a (prompt, response) pair.
Tokens encode_prompt(std::string_view text);
/// bytes EOS: the predicted side of a (prompt, response) pair.
Tokens encode_response(std::string_view text);
/// Bytes of non-special tokens, in order.
std::string detokenize(std::span<const int> tokens);

/// Row-major dense matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  double* row(int r) noexcept { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const noexcept { return data.data() + static_cast<std::size_t>(r) * cols; }
  double& operator()(int r, int c) noexcept { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const noexcept { return data[static_cast<std::size_t>(r) * cols + c]; }
};

struct ForwardResult {
  Matrix hidden;  // seq x d_model, final-norm output (the pre-head states)
  Matrix logits;  // seq x vocab
};

/// One named parameter tensor in double precision.
struct Param {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

/// Parameters in a fixed layout: embeddings, per-layer blocks, final norm, head.
struct Weights {
  std::vector<Param> params;

  static Weights zeros_like(const Weights& other);
  std::size_t numel() const noexcept;
};

/// Double-precision working copy of a model checkpoint. Pure and thread-safe
/// for const use.
class Transformer {
 public:
  explicit Transformer(const Checkpoint& ckpt);
  Transformer(ModelConfig config, Weights weights);

  const ModelConfig& config() const noexcept { return config_; }
  const Weights& weights() const noexcept { return weights_; }
  Weights& mutable_weights() noexcept { return weights_; }

  ForwardResult forward(std::span<const int> tokens) const;

  /// Mean over positions of the final hidden states.
  std::vector<double> pooled_hidden(std::span<const int> tokens) const;

  /// Sum over continuation positions of log p(token | prefix), in nats.
  double sequence_logprob(std::span<const int> prompt, std::span<const int> continuation) const;

  /// Same value as sequence_logprob; also adds scale * d(logprob)/d(theta)
  /// into `grads`, which must share this model's layout.
  double sequence_logprob_grad(std::span<const int> prompt, std::span<const int> continuation,
                               double scale, Weights& grads) const;

  /// Greedy decoding. The prompt is left-truncated so prompt + output fits max_seq.
  Tokens generate(std::span<const int> prompt, int max_new_tokens) const;

  Checkpoint to_checkpoint() const;

 private:
  struct Cache;
  void run(std::span<const int> tokens, Cache* cache, ForwardResult& out) const;
  void check_sequence(std::span<const int> prompt, std::span<const int> continuation) const;

  ModelConfig config_;
  Weights weights_;
};

/// Seeded N(0, 0.02) initialization (norm gains start at 1). Same config, same bytes.
Checkpoint init_model(const ModelConfig& config);

/// Reads metadata["config"]; throws BadConfig when absent or invalid.
ModelConfig model_config(const Checkpoint& ckpt);

/// Tensor names of the reference architecture, in layout order.
std::vector<std::string> model_tensor_names(const ModelConfig& config);

// Free-function conveniences over a checkpoint.
ForwardResult forward(const Checkpoint& params, std::span<const int> tokens);
double sequence_logprob(const Checkpoint& params, std::span<const int> prompt,
                        std::span<const int> continuation);

}  // namespace palette
