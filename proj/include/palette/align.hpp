#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "palette/model.hpp"
#include "palette/util.hpp"

namespace palette {

/// One query with its own-continent answer and the four other continents'
/// answers as rejections.
struct PreferenceRecord {
  std::string query;
  std::string preferred;
  std::vector<std::string> rejected;  // exactly 4
  std::string continent;

  json to_json() const;
  static PreferenceRecord from_json(const json& j);
};

std::vector<PreferenceRecord> load_preference_records(const std::filesystem::path& path);
std::string preference_records_jsonl(std::span<const PreferenceRecord> records);

/// How the contrastive term compares preferred and rejected likelihoods.
enum class RatioMode {
  Probability,  // log p(pref) - log p(rej)
  Odds,         // log odds(pref) - log odds(rej)
};

/// Whether sequence log-probabilities inside the ratio are per-token means or sums.
enum class LogprobNorm { Mean, Sum };

struct LossOptions {
  double lambda = 0.1;
  RatioMode ratio = RatioMode::Probability;
  LogprobNorm norm = LogprobNorm::Mean;
};

struct LossBreakdown {
  double sft = 0.0;          // mean token NLL of the preferred response
  double contrastive = 0.0;  // sum_k -log sigmoid(ratio_k)
  double total = 0.0;        // sft + lambda * contrastive
  std::array<double, 4> ratios{};
};

LossBreakdown orpo_loss(const Transformer& model, const PreferenceRecord& record, const LossOptions& options = {});
LossBreakdown orpo_loss(const Checkpoint& params, const PreferenceRecord& record, double lambda);

/// Loss plus scale * d(total)/d(theta) accumulated into `grads`.
LossBreakdown orpo_loss_grad(const Transformer& model, const PreferenceRecord& record,
                             const LossOptions& options, double scale, Weights& grads);

struct GradCheckOptions {
  double epsilon = 1e-4;
  int samples = 64;
  std::uint64_t seed = 42;
  /// Denominator floor for the relative error of near-zero gradients.
  double abs_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int nonzero = 0;  // sampled entries with a non-zero analytic gradient
};

/// Analytic gradient of the total loss vs central finite differences.
GradCheckResult grad_check(const Transformer& model, const PreferenceRecord& record, const LossOptions& loss,
                           const GradCheckOptions& options = {});
GradCheckResult grad_check(const Checkpoint& params, const PreferenceRecord& record, double lambda,
                           double epsilon);

struct TrainConfig {
  double lambda = 0.1;
  double learning_rate = 5e-5;
  int epochs = 2;
  int batch_size = 8;
  std::uint64_t seed = 42;
  double momentum = 0.9;
  RatioMode ratio = RatioMode::Probability;
  LogprobNorm norm = LogprobNorm::Mean;

  void validate() const;
  LossOptions loss_options() const { return {lambda, ratio, norm}; }
  json to_json() const;
};

struct EpochStats {
  double total = 0.0;
  double sft = 0.0;
  double contrastive = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double initial_margin = 0.0;
  double final_margin = 0.0;
  json config;

  json to_json() const;
};

struct TrainResult {
  Checkpoint params;
  TrainReport report;
};

/// Momentum SGD with per-epoch seeded shuffling. Deterministic for a fixed seed.
TrainResult train(const Checkpoint& params, std::span<const PreferenceRecord> dataset, const TrainConfig& config);

/// Mean over records and rejections of the ratio inside the sigmoid.
double mean_margin(const Transformer& model, std::span<const PreferenceRecord> dataset, const LossOptions& options);

/// Synthetic five-continent preference set: `queries` prompts, each asked with
/// every continent's tag, giving 5 * queries records.
std::vector<PreferenceRecord> make_toy_preferences(int queries, std::uint64_t seed);

}  // namespace palette
