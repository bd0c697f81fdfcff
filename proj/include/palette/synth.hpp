#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <fstream>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "palette/align.hpp"
#include "palette/backend.hpp"
#include "palette/templates.hpp"

namespace palette {

struct SynthQuery {
  std::string id;
  std::string query;
};

/// Rows of {"id","query"}.
std::vector<SynthQuery> load_synth_queries(const std::filesystem::path& path);

/// PRISM questions from JSONL or CSV. Ids come from conversation_id / id /
/// question_id, text from opening_prompt / query / question / prompt.
std::vector<SynthQuery> import_prism(const std::filesystem::path& path);

struct Exemplar {
  std::string question;
  std::string answer;
};

struct SynthConfig {
  int max_rounds = 3;
  std::uint64_t seed = 42;
  int workers = 1;
  std::vector<Exemplar> exemplars;

  void validate() const;
};

struct SynthRecord {
  std::string id;
  std::string query;
  std::string continent;
  std::string base_response;
  std::string feedback;
  std::string aggregated;
  std::string final_response;
  int rounds_used = 0;
  bool approved = false;

  json to_json() const;
  static SynthRecord from_json(const json& j);
};

std::string generate_response(ModelBackend& backend, const std::string& query, const std::string& continent,
                              std::span<const Exemplar> exemplars, const TemplateSet& templates);

/// Throws LabelError unless `other_continents` are exactly the four others.
std::string cross_feedback(ModelBackend& backend, const std::string& response, const std::string& continent,
                           std::span<const std::string> other_continents, const TemplateSet& templates);

std::string aggregate(ModelBackend& backend, const std::string& query, const std::string& base_response,
                      const std::string& feedback, const std::string& continent, const TemplateSet& templates);

enum class Verdict { Approved, Revise, Ambiguous };

/// "[Revise]" wins when both markers appear, so a revision is never skipped.
Verdict parse_verdict(std::string_view reply);

struct JudgeOutcome {
  std::string final_response;
  int rounds_used = 0;
  bool approved = false;
};

/// Optional memo for backend calls, keyed by step name.
using StepCache = std::function<std::string(const std::string& step, const std::function<std::string()>& produce)>;

/// Judge, and on a revise verdict refine with the judge's explanation, for at
/// most `max_rounds` rounds.
JudgeOutcome self_judge_refine(ModelBackend& backend, const std::string& query, const std::string& response,
                               const std::string& continent, int max_rounds, const TemplateSet& templates,
                               const StepCache& cache = {});

/// Append-only log of completed backend steps, keyed by query id, continent
/// and step. Reopening a directory replays the log.
class SynthStore {
 public:
  explicit SynthStore(const std::filesystem::path& dir);

  std::optional<std::string> get(const std::string& id, const std::string& continent, const std::string& step) const;
  void put(const std::string& id, const std::string& continent, const std::string& step, const std::string& output);
  std::size_t size() const;

 private:
  static std::string key(const std::string& id, const std::string& continent, const std::string& step);

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> done_;
  std::ofstream out_;
};

/// Runs the four steps for every (query, continent) cell, reusing any step
/// already in `store`. Records come back in query order, continents in fixed order.
std::vector<SynthRecord> run_synthesis(ModelBackend& backend, std::span<const SynthQuery> queries,
                                       const SynthConfig& config, const TemplateSet& templates, SynthStore& store);

/// Writes records_<Continent>.jsonl under `dir`.
void write_synth_records(const std::filesystem::path& dir, std::span<const SynthRecord> records);
std::vector<SynthRecord> load_synth_records(const std::filesystem::path& path);

/// Own continent preferred, the other four rejected. Throws IncompleteQuery.
std::vector<PreferenceRecord> build_preference_pairs(std::span<const SynthRecord> records);

struct PairCounts {
  std::uint64_t queries = 0;
  std::uint64_t preference_records = 0;
  std::uint64_t rejections_per_record = 4;
  std::uint64_t rejection_pairs_per_continent = 0;
  std::uint64_t rejection_pairs_total = 0;
  std::uint64_t qa_pairs = 0;
  std::map<std::string, std::uint64_t> per_continent;  // rejection pairs

  json to_json() const;
};

/// Dataset arithmetic for n queries without generating anything.
PairCounts count_pairs(std::uint64_t n);
PairCounts count_pairs(std::span<const PreferenceRecord> records);

}  // namespace palette
