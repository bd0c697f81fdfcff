#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "palette/model.hpp"
#include "palette/util.hpp"

namespace palette {

struct ChatMessage {
  std::string role;
  std::string content;
};

/// Prompt text as seen by a backend: "[role]\ncontent" blocks joined by newlines.
std::string render_messages(std::span<const ChatMessage> messages);

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual std::string chat(std::span<const ChatMessage> messages) = 0;

  /// Distribution over `options` as continuations of `prompt`, or nullopt
  /// when the backend can only answer in text.
  virtual std::optional<std::vector<double>> score_options(std::string_view prompt,
                                                           std::span<const std::string> options);

  virtual std::string kind() const = 0;
};

struct MockCall {
  std::string prompt;
  std::string response;
};

/// Canned responses matched by substring. Rules are tried in order; each
/// rule's responses are consumed in turn and the last one repeats.
class ScriptedMock final : public ModelBackend {
 public:
  struct Rule {
    std::vector<std::string> contains;
    std::vector<std::string> responses;
    bool fail = false;
    std::size_t next = 0;
  };

  explicit ScriptedMock(std::string name = "mock");

  /// {"rules":[{"contains":[...],"responses":[...],"fail":bool}], "default": str, "echo": bool}
  static std::unique_ptr<ScriptedMock> from_json(const json& spec, std::string name = "mock");

  ScriptedMock& add_rule(std::vector<std::string> contains, std::vector<std::string> responses, bool fail = false);
  ScriptedMock& set_default(std::string response);
  /// Unmatched prompts return the last message's content.
  ScriptedMock& set_echo(bool echo);

  std::string chat(std::span<const ChatMessage> messages) override;
  std::string kind() const override { return "mock"; }

  const std::string& name() const noexcept { return name_; }
  std::vector<MockCall> calls() const;
  std::size_t call_count() const;

 private:
  std::string name_;
  mutable std::mutex mu_;
  std::vector<Rule> rules_;
  std::optional<std::string> default_;
  bool echo_ = false;
  std::vector<MockCall> log_;
};

struct RemoteChatConfig {
  std::string base_url;
  std::string model;
  std::string api_key_env = "PALETTE_API_KEY";
  std::chrono::milliseconds timeout{60000};
};

/// OpenAI-style chat completions endpoint at temperature 0.
class RemoteChat final : public ModelBackend {
 public:
  explicit RemoteChat(RemoteChatConfig config);
  std::string chat(std::span<const ChatMessage> messages) override;
  std::string kind() const override { return "remote"; }

 private:
  RemoteChatConfig config_;
};

/// Greedy decoding with the reference transformer.
class LocalReference final : public ModelBackend {
 public:
  explicit LocalReference(std::shared_ptr<const Transformer> model, int max_new_tokens = 64);

  std::string chat(std::span<const ChatMessage> messages) override;
  /// Softmax over length-normalized option log-probabilities.
  std::optional<std::vector<double>> score_options(std::string_view prompt,
                                                   std::span<const std::string> options) override;
  std::string kind() const override { return "local"; }

  const Transformer& model() const noexcept { return *model_; }

 private:
  std::shared_ptr<const Transformer> model_;
  int max_new_tokens_;
};

/// BOS plus the last tokens of `prompt` so that `room` tokens remain free.
Tokens fit_prompt(const Tokens& prompt, int max_seq, std::size_t room);

}  // namespace palette
