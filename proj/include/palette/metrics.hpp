#pragma once

#include <chrono>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace palette {

class LocalServer;

inline constexpr double kDistributionTolerance = 1e-9;

/// Probabilities over answer options: non-negative, length >= 2, sum 1.
class Distribution {
 public:
  /// Throws InvalidDistribution or NegativeEntry.
  explicit Distribution(std::vector<double> probs);

  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const noexcept { return probs_[i]; }

 private:
  std::vector<double> probs_;
};

/// KL divergence in bits. Throws LengthMismatch, SupportViolation.
double kl(std::span<const double> p, std::span<const double> q);
double kl(const Distribution& p, const Distribution& q);

/// 1 - JSD in bits: 1 - kl(p, M)/2 - kl(q, M)/2 with M the midpoint.
double alignment_score(std::span<const double> p_gen, std::span<const double> p_gold);
double alignment_score(const Distribution& p_gen, const Distribution& p_gold);

/// Sample Pearson r. std::nullopt when both inputs are constant or the
/// correlation is otherwise undefined. Throws LengthMismatch.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

enum class PearsonPooling {
  Concatenate,      // one r over all entries of all questions
  MeanPerQuestion,  // mean of the defined per-question r values
};

struct DistributionPair {
  std::vector<double> generated;
  std::vector<double> gold;
};

std::optional<double> country_pearson(std::span<const DistributionPair> pairs,
                                      PearsonPooling pooling = PearsonPooling::Concatenate);

/// (raw + epsilon) / sum. Throws NegativeEntry, AllZero, InvalidDistribution.
Distribution normalize_distribution(std::span<const double> raw, double epsilon = 0.0);

struct NliScorerEndpoint {
  std::string base_url;
  std::chrono::milliseconds timeout{30000};
  std::string token_env = "PALETTE_NLI_TOKEN";
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{200};
};

/// Entailment probability from an external scorer. Retries transient failures
/// with exponential backoff. Throws EmptyText, EndpointUnreachable,
/// MalformedScorerResponse.
double semantic_score(const NliScorerEndpoint& endpoint, std::string_view r_gold, std::string_view r_llm);

/// Jaccard overlap of lowercase word sets; identical texts give 1.
double overlap_score(std::string_view premise, std::string_view hypothesis);

/// Installs the scorer contract on `server`. A fixed score, when given,
/// replaces the overlap heuristic.
void install_mock_scorer(LocalServer& server, std::optional<double> fixed_score = std::nullopt);

}  // namespace palette
