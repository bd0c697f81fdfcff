#include "palette/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <future>

#include "palette/error.hpp"

namespace palette {

void CountryQuery::validate() const {
  if (country.empty()) throw Error(ErrorCode::BadConfig, "country is empty");
  if (query.empty()) throw Error(ErrorCode::BadConfig, "query is empty");
}

void Draft::validate() const {
  if (entries.size() != kContinentCount)
    throw Error(ErrorCode::InvalidDraft, "draft has " + std::to_string(entries.size()) + " entries, expected 5");
  for (std::size_t i = 0; i < kContinentCount; ++i) {
    if (entries[i].continent != kContinents[i])
      throw Error(ErrorCode::InvalidDraft, "draft entry " + std::to_string(i) + " is not " +
                                               std::string(kContinents[i]), entries[i].continent);
    if (entries[i].response.empty())
      throw Error(ErrorCode::InvalidDraft, "empty draft response", entries[i].continent);
  }
}

std::string Draft::render() const {
  std::string out;
  for (const auto& e : entries) {
    if (!out.empty()) out += "\n\n";
    out += e.continent + " Culture perspective: " + e.response;
  }
  return out;
}

std::string option_letter(std::size_t index) {
  std::string out;
  std::size_t n = index + 1;
  while (n > 0) {
    out.insert(out.begin(), static_cast<char>('A' + (n - 1) % 26));
    n = (n - 1) / 26;
  }
  return out;
}

namespace {

std::string lettered_options(const OpinionItem& item) {
  std::string out;
  for (std::size_t i = 0; i < item.options.size(); ++i) {
    if (i) out += "\n";
    out += option_letter(i) + ". " + item.options[i];
  }
  return out;
}

}  // namespace

std::string item_query(const OpinionItem& item) {
  return "Question: " + item.question + "\nOptions:\n" + lettered_options(item);
}

std::vector<OpinionItem> parse_opinion_items(std::span<const json> rows, const std::string& country) {
  std::vector<OpinionItem> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& row = rows[i];
    const std::string id = row.contains("id") ? (row["id"].is_string() ? row["id"].get<std::string>()
                                                                         : row["id"].dump())
                                              : "q" + std::to_string(i + 1);
    try {
      const std::string q = row.at("question").get<std::string>();
      auto options = row.at("options").get<std::vector<std::string>>();
      const json& sel = row.at("selections");
      std::string c = country.empty() ? row.value("country", std::string{}) : country;
      if (c.empty()) {
        if (sel.size() != 1) throw Error(ErrorCode::InvalidItem, "item names no country", id);
        c = sel.begin().key();
      }
      if (!sel.contains(c)) {
        if (!country.empty()) continue;
        throw Error(ErrorCode::InvalidItem, "no selections for " + c, id);
      }
      auto gold = sel[c].get<std::vector<double>>();
      if (gold.size() != options.size()) {
        const std::size_t n = std::min(gold.size(), options.size());
        log::warn("item " + id + ": " + std::to_string(options.size()) + " options vs " +
                  std::to_string(gold.size()) + " gold entries, truncated to " + std::to_string(n));
        gold.resize(n);
        options.resize(n);
      }
      if (options.size() < 2) throw Error(ErrorCode::InvalidItem, "fewer than 2 options", id);
      double sum = 0.0;
      for (double g : gold) sum += g;
      if (std::abs(sum - 1.0) > kDistributionTolerance && sum > 0.0)
        log::warn("item " + id + ": gold renormalized from sum " + format9(sum));
      out.push_back({id, q, std::move(options), normalize_distribution(gold), c});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidItem, std::string("malformed opinion item: ") + e.what(), id);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidItem) throw;
      throw Error(ErrorCode::InvalidItem, e.what(), id);
    }
  }
  return out;
}

std::vector<OpinionItem> load_opinion_items(const std::filesystem::path& path, const std::string& country) {
  const auto rows = read_jsonl(path);
  return parse_opinion_items(rows, country);
}

namespace {

std::string call(ModelBackend& backend, std::span<const ChatMessage> messages, const std::string& label) {
  try {
    return backend.chat(messages);
  } catch (const Error& e) {
    throw Error(ErrorCode::BackendFailure, e.what(), label);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::BackendFailure, e.what(), label);
  }
}

std::vector<ChatMessage> user_message(std::string content) { return {ChatMessage{"user", std::move(content)}}; }

}  // namespace

Draft draft(const AgentSet& agents, const CountryQuery& cq, const TemplateSet& templates) {
  cq.validate();
  for (std::size_t i = 0; i < kContinentCount; ++i)
    if (!agents[i]) throw Error(ErrorCode::BadConfig, "agent not configured", std::string(kContinents[i]));

  std::array<std::string, kContinentCount> prompts;
  for (std::size_t i = 0; i < kContinentCount; ++i)
    prompts[i] = render(templates.get("draft"),
                        {{"continent", std::string(kContinents[i])}, {"country", cq.country}, {"query", cq.query}});

  std::array<std::future<std::string>, kContinentCount> futures;
  for (std::size_t i = 0; i < kContinentCount; ++i) {
    futures[i] = std::async(std::launch::async, [&, i] {
      return call(*agents[i], user_message(prompts[i]), std::string(kContinents[i]));
    });
  }
  Draft out;
  std::optional<Error> failure;
  for (std::size_t i = 0; i < kContinentCount; ++i) {
    try {
      std::string r = futures[i].get();
      if (r.empty()) throw Error(ErrorCode::BackendFailure, "empty draft response", std::string(kContinents[i]));
      out.entries.push_back({std::string(kContinents[i]), std::move(r)});
    } catch (const Error& e) {
      if (!failure) failure = e;
    }
  }
  if (failure) throw *failure;
  out.validate();
  return out;
}

std::string self_regulate(ModelBackend& meta, const Draft& d, const CountryQuery& cq, const TemplateSet& templates) {
  d.validate();
  cq.validate();
  const auto prompt = render(templates.get("regulate"),
                             {{"country", cq.country}, {"query", cq.query}, {"drafts", d.render()}});
  auto out = call(meta, user_message(prompt), "meta");
  if (out.empty()) throw Error(ErrorCode::BackendFailure, "empty regulation answer", "meta");
  return out;
}

std::string direct_answer(ModelBackend& meta, const CountryQuery& cq, const TemplateSet& templates) {
  cq.validate();
  const auto prompt = render(templates.get("direct"), {{"country", cq.country}, {"query", cq.query}});
  auto out = call(meta, user_message(prompt), "meta");
  if (out.empty()) throw Error(ErrorCode::BackendFailure, "empty direct answer", "meta");
  return out;
}

std::optional<std::vector<double>> parse_distribution(std::string_view text, std::size_t count) {
  for (std::size_t open = text.find('['); open != std::string_view::npos; open = text.find('[', open + 1)) {
    const auto close = text.find(']', open);
    if (close == std::string_view::npos) break;
    const json arr = json::parse(text.substr(open, close - open + 1), nullptr, false);
    if (!arr.is_array() || arr.size() != count) continue;
    std::vector<double> out;
    for (const auto& v : arr) {
      if (!v.is_number()) break;
      const double x = v.get<double>();
      if (!std::isfinite(x) || x < 0.0) break;
      out.push_back(x);
    }
    if (out.size() == count) return out;
  }
  return std::nullopt;
}

namespace {

Decision decide(const OpinionItem& item, std::vector<double> raw, int attempts) {
  Distribution d = normalize_distribution(raw);
  Decision out;
  out.p_gen.assign(d.probs().begin(), d.probs().end());
  const auto best = static_cast<std::size_t>(std::max_element(out.p_gen.begin(), out.p_gen.end()) - out.p_gen.begin());
  out.answer = option_letter(best);
  out.answer_text = item.options[best];
  out.attempts = attempts;
  return out;
}

}  // namespace

Decision final_decision(ModelBackend& meta, const std::optional<std::string>& context, const OpinionItem& item,
                        const TemplateSet& templates, int max_reprompts) {
  if (context && context->empty()) throw Error(ErrorCode::BadConfig, "regulated answer is empty");
  if (item.options.size() < 2) throw Error(ErrorCode::InvalidItem, "fewer than 2 options", item.id);
  const std::string country = item.country.empty() ? std::string("the target country") : item.country;
  TemplateValues values = {{"country", country},
                           {"question", item.question},
                           {"options", lettered_options(item)},
                           {"option_count", std::to_string(item.options.size())}};
  if (context) values["context"] = *context;
  const std::string prompt = render(templates.get(context ? "final" : "prompting"), values);

  try {
    if (auto scored = meta.score_options(prompt, item.options)) return decide(item, std::move(*scored), 0);
  } catch (const Error& e) {
    throw Error(ErrorCode::BackendFailure, e.what(), "meta");
  }

  std::vector<ChatMessage> messages = user_message(prompt);
  for (int attempt = 1; attempt <= max_reprompts + 1; ++attempt) {
    const std::string reply = call(meta, messages, "meta");
    if (auto parsed = parse_distribution(reply, item.options.size())) return decide(item, std::move(*parsed), attempt);
    log::warn("item " + item.id + ": unparseable distribution on attempt " + std::to_string(attempt));
    messages.push_back({"assistant", reply});
    messages.push_back({"user", "Reply with only a JSON array of " + std::to_string(item.options.size()) +
                                    " non-negative probabilities, one per option."});
  }
  throw Error(ErrorCode::UnparseableDistribution,
              "no usable distribution after " + std::to_string(max_reprompts) + " re-prompts", item.id);
}

Decision prompting_baseline(ModelBackend& meta, const OpinionItem& item, const TemplateSet& templates,
                            int max_reprompts) {
  return final_decision(meta, std::nullopt, item, templates, max_reprompts);
}

std::string country_preamble(const std::string& country) {
  return "You are answering on behalf of people in " + country + ".";
}

std::string route_text(const CountryQuery& cq, RouteCondition condition) {
  if (condition == RouteCondition::CountryOnly) return country_preamble(cq.country);
  return country_preamble(cq.country) + "\n" + cq.query;
}

GateWeights route_text_gate(const Transformer& base, const GateMatrix& gate, std::string_view text,
                            double temperature) {
  const int max_seq = base.config().max_seq;
  // Keep the head so the country preamble always reaches the gate.
  Tokens toks{token::kBos};
  const std::size_t body = std::min(text.size(), static_cast<std::size_t>(max_seq - 2));
  for (std::size_t i = 0; i < body; ++i) toks.push_back(static_cast<unsigned char>(text[i]));
  toks.push_back(token::kEos);
  return route(base.pooled_hidden(toks), gate, temperature);
}

Checkpoint fuse_meta(const Checkpoint& base, std::span<const Expert> experts, const GateConfig& config,
                     const CountryQuery& cq) {
  const Transformer model(base);
  const auto text = config.mode == GateMode::PerCountry ? country_preamble(cq.country)
                                                        : route_text(cq, config.condition);
  const auto g = route_text_gate(model, config.gate, text, config.temperature);
  return moerges_fuse(base, experts, g.values, config.merge);
}

FusedMetaProvider::FusedMetaProvider(Checkpoint base, std::vector<Expert> experts, GateConfig config,
                                     int max_new_tokens)
    : base_(std::move(base)),
      base_model_(base_),
      experts_(std::move(experts)),
      config_(std::move(config)),
      max_new_tokens_(max_new_tokens) {
  if (experts_.size() != kContinentCount) throw Error(ErrorCode::TooFewExperts, "meta fusion needs 5 experts");
  for (const auto& e : experts_) require_same_schema(base_, e.params, e.label);
  config_.gate.validate();
}

GateWeights FusedMetaProvider::gate_for(const CountryQuery& cq) const {
  const auto text = config_.mode == GateMode::PerCountry ? country_preamble(cq.country)
                                                         : route_text(cq, config_.condition);
  return route_text_gate(base_model_, config_.gate, text, config_.temperature);
}

std::shared_ptr<const Transformer> FusedMetaProvider::model_for(const CountryQuery& cq) {
  auto build = [&] {
    auto fused = moerges_fuse(base_, experts_, gate_for(cq).values, config_.merge);
    return std::make_shared<const Transformer>(fused);
  };
  if (config_.mode == GateMode::PerRequest) {
    auto m = build();
    std::lock_guard lock(mu_);
    ++builds_;
    return m;
  }
  std::lock_guard lock(mu_);
  auto it = cache_.find(cq.country);
  if (it != cache_.end()) return it->second;
  auto m = build();
  ++builds_;
  cache_.emplace(cq.country, m);
  return m;
}

std::shared_ptr<ModelBackend> FusedMetaProvider::backend_for(const CountryQuery& cq) {
  return std::make_shared<LocalReference>(model_for(cq), max_new_tokens_);
}

std::size_t FusedMetaProvider::builds() const {
  std::lock_guard lock(mu_);
  return builds_;
}

MetaSource fixed_meta(std::shared_ptr<ModelBackend> backend) {
  return [backend = std::move(backend)](const CountryQuery&) { return backend; };
}

json AlignmentReport::to_json() const {
  json rows = json::array();
  for (const auto& q : per_question) {
    json pg = json::array(), pd = json::array();
    for (double v : q.p_gen) pg.push_back(json_number(v));
    for (double v : q.p_gold) pd.push_back(json_number(v));
    rows.push_back({{"id", q.id}, {"p_gen", pg}, {"p_gold", pd}, {"s_align", json_number(q.s_align)},
                    {"answer", q.answer}});
  }
  return {{"country", country},
          {"per_question", rows},
          {"mean_s_align", json_number(mean_s_align)},
          {"pearson_r", pearson_r ? json_number(*pearson_r) : json(nullptr)},
          {"config_fingerprint", config_fingerprint}};
}

Pipeline::Pipeline(AgentSet agents, MetaSource meta, MetaSource meta_unfused, TemplateSet templates,
                   PipelineOptions options)
    : agents_(std::move(agents)),
      meta_(std::move(meta)),
      meta_unfused_(std::move(meta_unfused)),
      templates_(std::move(templates)),
      options_(std::move(options)) {
  if (!meta_) throw Error(ErrorCode::BadConfig, "pipeline needs a meta backend");
  if (options_.flags.no_moerges && !meta_unfused_)
    throw Error(ErrorCode::BadConfig, "no_moerges needs an unfused meta backend");
  if (!options_.flags.no_draft)
    for (std::size_t i = 0; i < kContinentCount; ++i)
      if (!agents_[i]) throw Error(ErrorCode::BadConfig, "agent not configured", std::string(kContinents[i]));
}

Decision Pipeline::run_item(const OpinionItem& item) const {
  const CountryQuery cq{item.country, item_query(item)};
  cq.validate();
  const auto& flags = options_.flags;
  auto meta = flags.no_moerges ? meta_unfused_(cq) : meta_(cq);

  std::optional<std::string> context;
  if (!flags.no_draft) {
    const Draft d = draft(agents_, cq, templates_);
    context = flags.no_regulate ? d.render() : self_regulate(*meta, d, cq, templates_);
  } else if (!flags.no_regulate) {
    context = direct_answer(*meta, cq, templates_);
  }
  return final_decision(*meta, context, item, templates_, options_.max_reprompts);
}

std::string Pipeline::fingerprint() const {
  json cfg = {{"no_draft", options_.flags.no_draft},
              {"no_regulate", options_.flags.no_regulate},
              {"no_moerges", options_.flags.no_moerges},
              {"max_reprompts", options_.max_reprompts},
              {"pooling", options_.pooling == PearsonPooling::Concatenate ? "concatenate" : "mean"},
              {"templates", templates_.version()},
              {"config", options_.config}};
  std::string texts;
  for (const auto& n : templates_.names()) texts += n + "\n" + templates_.get(n) + "\n";
  cfg["template_hash"] = fnv1a_hex(texts);
  return fnv1a_hex(dump_json(cfg, -1));
}

AlignmentReport Pipeline::evaluate_country(std::span<const OpinionItem> items, const std::string& country) const {
  if (items.empty()) throw Error(ErrorCode::EmptyItems, "no items to evaluate", country);
  AlignmentReport report;
  report.country = country;
  report.config_fingerprint = fingerprint();
  std::vector<DistributionPair> pairs;
  double sum = 0.0;
  for (const auto& item : items) {
    if (!country.empty() && item.country != country)
      throw Error(ErrorCode::InvalidItem, "item belongs to " + item.country + ", not " + country, item.id);
    try {
      Decision d = run_item(item);
      QuestionResult r;
      r.id = item.id;
      r.p_gen = d.p_gen;
      r.p_gold.assign(item.gold.probs().begin(), item.gold.probs().end());
      r.s_align = alignment_score(r.p_gen, r.p_gold);
      r.answer = d.answer;
      sum += r.s_align;
      pairs.push_back({r.p_gen, r.p_gold});
      report.per_question.push_back(std::move(r));
    } catch (const Error& e) {
      throw Error(e.code(), e.what(), "item " + item.id + (e.context().empty() ? "" : ": " + e.context()));
    }
  }
  report.mean_s_align = sum / static_cast<double>(items.size());
  report.pearson_r = country_pearson(pairs, options_.pooling);
  return report;
}

}  // namespace palette
