#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "palette/backend.hpp"
#include "palette/gate.hpp"
#include "palette/merge.hpp"
#include "palette/metrics.hpp"
#include "palette/templates.hpp"

namespace palette {

struct CountryQuery {
  std::string country;
  std::string query;

  /// Throws BadConfig when either field is empty.
  void validate() const;
};

struct DraftEntry {
  std::string continent;
  std::string response;
};

/// Five tagged responses in fixed continental order.
struct Draft {
  std::vector<DraftEntry> entries;

  /// Throws InvalidDraft.
  void validate() const;
  /// "<Continent> Culture perspective: <response>" blocks.
  std::string render() const;
};

struct OpinionItem {
  std::string id;
  std::string question;
  std::vector<std::string> options;
  Distribution gold;
  std::string country;
};

/// Question plus lettered options, one per line.
std::string item_query(const OpinionItem& item);
std::string option_letter(std::size_t index);

/// Rows of {"question","options","selections":{country:[...]},"country"[,"id"]}.
/// Gold is read from selections[country]; options and gold are truncated to a
/// common length and renormalized, with a warning per adjusted item. Rows
/// without selections for `country` are skipped when `country` is given.
std::vector<OpinionItem> parse_opinion_items(std::span<const json> rows, const std::string& country = {});
std::vector<OpinionItem> load_opinion_items(const std::filesystem::path& path, const std::string& country = {});

using AgentSet = std::array<std::shared_ptr<ModelBackend>, kContinentCount>;

/// Stage 1. All five agents are called concurrently; any failure aborts the stage.
Draft draft(const AgentSet& agents, const CountryQuery& cq, const TemplateSet& templates);

/// Stage 2, one meta call over the tagged drafts.
std::string self_regulate(ModelBackend& meta, const Draft& draft, const CountryQuery& cq,
                          const TemplateSet& templates);

/// Stage 2 without drafts: the meta agent reasons on its own.
std::string direct_answer(ModelBackend& meta, const CountryQuery& cq, const TemplateSet& templates);

struct Decision {
  std::string answer;       // option letter
  std::string answer_text;  // option text
  std::vector<double> p_gen;
  int attempts = 0;         // meta calls spent; 0 when options were scored directly
};

/// Stage 3. Without a context this is the plain prompting baseline prompt.
/// Text-only backends must reply with a JSON array; replies that do not parse
/// are re-prompted up to `max_reprompts` times.
Decision final_decision(ModelBackend& meta, const std::optional<std::string>& context, const OpinionItem& item,
                        const TemplateSet& templates, int max_reprompts = 3);

/// Single-call baseline: the final prompt with the diversity instruction.
Decision prompting_baseline(ModelBackend& meta, const OpinionItem& item, const TemplateSet& templates,
                            int max_reprompts = 3);

/// First bracketed JSON array of exactly `count` non-negative numbers.
std::optional<std::vector<double>> parse_distribution(std::string_view text, std::size_t count);

enum class GateMode { PerRequest, PerCountry };
enum class RouteCondition { FullPrompt, CountryOnly };

struct GateConfig {
  GateMatrix gate;
  double temperature = 1.0;
  GateMode mode = GateMode::PerRequest;
  RouteCondition condition = RouteCondition::FullPrompt;
  MoErgesOptions merge;
};

/// Short system preamble naming the target country.
std::string country_preamble(const std::string& country);

/// Text the gate is conditioned on.
std::string route_text(const CountryQuery& cq, RouteCondition condition);

/// Gate weights G(P) from the base model's pooled encoding of `text`.
GateWeights route_text_gate(const Transformer& base, const GateMatrix& gate, std::string_view text,
                            double temperature);

/// Fuses the meta agent's parameters for one request.
Checkpoint fuse_meta(const Checkpoint& base, std::span<const Expert> experts, const GateConfig& config,
                     const CountryQuery& cq);

/// Builds (and in per-country mode caches) fused meta models.
class FusedMetaProvider {
 public:
  FusedMetaProvider(Checkpoint base, std::vector<Expert> experts, GateConfig config, int max_new_tokens = 64);

  std::shared_ptr<const Transformer> model_for(const CountryQuery& cq);
  std::shared_ptr<ModelBackend> backend_for(const CountryQuery& cq);
  GateWeights gate_for(const CountryQuery& cq) const;
  std::size_t builds() const;

 private:
  Checkpoint base_;
  Transformer base_model_;
  std::vector<Expert> experts_;
  GateConfig config_;
  int max_new_tokens_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Transformer>> cache_;
  std::size_t builds_ = 0;
};

struct PipelineFlags {
  bool no_draft = false;
  bool no_regulate = false;
  bool no_moerges = false;
};

using MetaSource = std::function<std::shared_ptr<ModelBackend>(const CountryQuery&)>;

/// Meta source that always returns the same backend.
MetaSource fixed_meta(std::shared_ptr<ModelBackend> backend);

struct QuestionResult {
  std::string id;
  std::vector<double> p_gen;
  std::vector<double> p_gold;
  double s_align = 0.0;
  std::string answer;
};

struct AlignmentReport {
  std::string country;
  std::vector<QuestionResult> per_question;
  double mean_s_align = 0.0;
  std::optional<double> pearson_r;
  std::string config_fingerprint;

  json to_json() const;
};

struct PipelineOptions {
  PipelineFlags flags;
  int max_reprompts = 3;
  PearsonPooling pooling = PearsonPooling::Concatenate;
  /// Extra configuration folded into the report fingerprint.
  json config = json::object();
};

class Pipeline {
 public:
  Pipeline(AgentSet agents, MetaSource meta, MetaSource meta_unfused, TemplateSet templates,
           PipelineOptions options = {});

  /// draft -> regulate -> decide for one item, honouring the ablation flags.
  Decision run_item(const OpinionItem& item) const;

  /// Throws EmptyItems; stage errors carry the item id in their context.
  AlignmentReport evaluate_country(std::span<const OpinionItem> items, const std::string& country) const;

  std::string fingerprint() const;
  const PipelineOptions& options() const noexcept { return options_; }

 private:
  AgentSet agents_;
  MetaSource meta_;
  MetaSource meta_unfused_;
  TemplateSet templates_;
  PipelineOptions options_;
};

}  // namespace palette
