#include "palette/backend.hpp"

#include <cmath>

#include "palette/error.hpp"
#include "palette/gate.hpp"
#include "palette/http.hpp"

namespace palette {

std::string render_messages(std::span<const ChatMessage> messages) {
  std::string out;
  for (const auto& m : messages) {
    if (!out.empty()) out += "\n";
    out += "[" + m.role + "]\n" + m.content;
  }
  return out;
}

std::optional<std::vector<double>> ModelBackend::score_options(std::string_view, std::span<const std::string>) {
  return std::nullopt;
}

ScriptedMock::ScriptedMock(std::string name) : name_(std::move(name)) {}

std::unique_ptr<ScriptedMock> ScriptedMock::from_json(const json& spec, std::string name) {
  auto mock = std::make_unique<ScriptedMock>(std::move(name));
  try {
    for (const auto& r : spec.value("rules", json::array())) {
      mock->add_rule(r.value("contains", std::vector<std::string>{}),
                     r.value("responses", std::vector<std::string>{}), r.value("fail", false));
    }
    if (spec.contains("default")) mock->set_default(spec["default"].get<std::string>());
    mock->set_echo(spec.value("echo", false));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad mock script: ") + e.what());
  }
  return mock;
}

ScriptedMock& ScriptedMock::add_rule(std::vector<std::string> contains, std::vector<std::string> responses,
                                     bool fail) {
  if (responses.empty() && !fail) throw Error(ErrorCode::BadConfig, "mock rule needs responses or fail");
  std::lock_guard lock(mu_);
  rules_.push_back({std::move(contains), std::move(responses), fail, 0});
  return *this;
}

ScriptedMock& ScriptedMock::set_default(std::string response) {
  std::lock_guard lock(mu_);
  default_ = std::move(response);
  return *this;
}

ScriptedMock& ScriptedMock::set_echo(bool echo) {
  std::lock_guard lock(mu_);
  echo_ = echo;
  return *this;
}

std::string ScriptedMock::chat(std::span<const ChatMessage> messages) {
  const std::string prompt = render_messages(messages);
  std::lock_guard lock(mu_);
  std::optional<std::string> reply;
  for (auto& rule : rules_) {
    bool match = true;
    for (const auto& needle : rule.contains) match = match && prompt.find(needle) != std::string::npos;
    if (!match) continue;
    if (rule.fail) {
      log_.push_back({prompt, "<failure>"});
      throw Error(ErrorCode::BackendFailure, "scripted failure", name_);
    }
    reply = rule.responses[std::min(rule.next, rule.responses.size() - 1)];
    ++rule.next;
    break;
  }
  if (!reply && echo_) reply = messages.empty() ? std::string{} : messages.back().content;
  if (!reply && default_) reply = *default_;
  if (!reply) {
    log_.push_back({prompt, "<unmatched>"});
    throw Error(ErrorCode::BackendFailure, "no scripted response matches the prompt", name_);
  }
  log_.push_back({prompt, *reply});
  return *reply;
}

std::vector<MockCall> ScriptedMock::calls() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::size_t ScriptedMock::call_count() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

RemoteChat::RemoteChat(RemoteChatConfig config) : config_(std::move(config)) {
  (void)Url::parse(config_.base_url);
  if (config_.model.empty()) throw Error(ErrorCode::BadConfig, "remote backend needs a model name");
}

std::string RemoteChat::chat(std::span<const ChatMessage> messages) {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  const json body = {{"model", config_.model}, {"messages", msgs}, {"temperature", 0}};
  HttpOptions opts;
  opts.timeout = config_.timeout;
  opts.bearer_token = env_or_empty(config_.api_key_env);
  HttpResponse res;
  try {
    res = http_post_json(Url::parse(config_.base_url), "/v1/chat/completions", body, opts);
  } catch (const Error& e) {
    throw Error(ErrorCode::BackendFailure, e.what(), config_.base_url);
  }
  if (res.status != 200)
    throw Error(ErrorCode::BackendFailure, "chat endpoint returned HTTP " + std::to_string(res.status),
                res.body.substr(0, 200));
  try {
    return json::parse(res.body).at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::BackendFailure, "chat response lacks choices[0].message.content", res.body.substr(0, 200));
  }
}

Tokens fit_prompt(const Tokens& prompt, int max_seq, std::size_t room) {
  const std::size_t limit = static_cast<std::size_t>(max_seq) > room ? max_seq - room : 0;
  if (limit < 2) throw Error(ErrorCode::TooLong, "no room for the prompt");
  if (prompt.size() <= limit) return prompt;
  Tokens out;
  out.reserve(limit);
  out.push_back(token::kBos);
  out.insert(out.end(), prompt.end() - static_cast<std::ptrdiff_t>(limit - 1), prompt.end());
  return out;
}

LocalReference::LocalReference(std::shared_ptr<const Transformer> model, int max_new_tokens)
    : model_(std::move(model)), max_new_tokens_(max_new_tokens) {
  if (!model_) throw Error(ErrorCode::BadConfig, "local backend needs a model");
  if (max_new_tokens_ < 1) throw Error(ErrorCode::BadConfig, "max_new_tokens must be >= 1");
}

std::string LocalReference::chat(std::span<const ChatMessage> messages) {
  std::string text;
  for (const auto& m : messages) {
    if (!text.empty()) text += "\n";
    text += m.content;
  }
  const Tokens prompt = encode_prompt(text);
  const auto out = model_->generate(prompt, max_new_tokens_);
  return detokenize(out);
}

std::optional<std::vector<double>> LocalReference::score_options(std::string_view prompt,
                                                                 std::span<const std::string> options) {
  const int max_seq = model_->config().max_seq;
  const Tokens full = encode_prompt(prompt);
  std::vector<double> scores;
  for (const auto& opt : options) {
    Tokens cont = encode_response(opt);
    if (static_cast<int>(cont.size()) > max_seq - 2)
      cont.erase(cont.begin() + (max_seq - 3), cont.end() - 1);
    const Tokens p = fit_prompt(full, max_seq, cont.size());
    scores.push_back(model_->sequence_logprob(p, cont) / static_cast<double>(cont.size()));
  }
  return softmax(scores);
}

}  // namespace palette
