#include "palette/align.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "palette/error.hpp"
#include "palette/gate.hpp"

namespace palette {

json PreferenceRecord::to_json() const {
  return {{"query", query}, {"preferred", preferred}, {"rejected", rejected}, {"continent", continent}};
}

PreferenceRecord PreferenceRecord::from_json(const json& j) {
  PreferenceRecord r;
  try {
    r.query = j.at("query").get<std::string>();
    r.preferred = j.at("preferred").get<std::string>();
    r.rejected = j.at("rejected").get<std::vector<std::string>>();
    r.continent = j.value("continent", std::string{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad preference record: ") + e.what());
  }
  if (r.rejected.size() != 4)
    throw Error(ErrorCode::WrongRejectionCount,
                "expected 4 rejected responses, got " + std::to_string(r.rejected.size()));
  return r;
}

std::vector<PreferenceRecord> load_preference_records(const std::filesystem::path& path) {
  std::vector<PreferenceRecord> out;
  for (const auto& row : read_jsonl(path)) out.push_back(PreferenceRecord::from_json(row));
  return out;
}

std::string preference_records_jsonl(std::span<const PreferenceRecord> records) {
  std::string out;
  for (const auto& r : records) out += dump_json(r.to_json(), -1) + "\n";
  return out;
}

namespace {

struct Encoded {
  Tokens prompt;
  std::array<Tokens, 5> responses;  // [0] preferred, [1..4] rejected
};

Encoded encode(const PreferenceRecord& record, int max_seq) {
  if (record.rejected.size() != 4)
    throw Error(ErrorCode::WrongRejectionCount,
                "expected 4 rejected responses, got " + std::to_string(record.rejected.size()));
  Encoded e;
  e.prompt = encode_prompt(record.query);
  e.responses[0] = encode_response(record.preferred);
  for (int k = 0; k < 4; ++k) e.responses[k + 1] = encode_response(record.rejected[k]);
  for (const auto& r : e.responses) {
    if (static_cast<long long>(e.prompt.size() + r.size()) > max_seq)
      throw Error(ErrorCode::TooLong, "query plus response exceed max_seq " + std::to_string(max_seq));
  }
  return e;
}

// -log sigmoid(x), stable for large |x|.
double neg_log_sigmoid(double x) { return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

// sigmoid(-x)
double sigmoid_neg(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(x));
}

struct Score {
  double value;       // quantity entering the ratio
  double d_logprob;   // d value / d (summed sequence logprob)
};

Score score(double logprob_sum, std::size_t length, const LossOptions& opt) {
  const double n = static_cast<double>(length);
  double s = opt.norm == LogprobNorm::Mean ? logprob_sum / n : logprob_sum;
  double ds = opt.norm == LogprobNorm::Mean ? 1.0 / n : 1.0;
  if (opt.ratio == RatioMode::Odds) {
    // log odds = s - log(1 - e^s); d/ds = 1 / (1 - e^s)
    const double one_minus_p = -std::expm1(s);
    return {s - std::log(one_minus_p), ds / one_minus_p};
  }
  return {s, ds};
}

struct Assembled {
  LossBreakdown loss;
  std::array<double, 5> coeffs{};  // d total / d logprob_sum per sequence
};

Assembled assemble(const std::array<double, 5>& logprobs, const Encoded& e, const LossOptions& opt) {
  Assembled a;
  const double t_pref = static_cast<double>(e.responses[0].size());
  a.loss.sft = -logprobs[0] / t_pref;
  a.coeffs[0] = -1.0 / t_pref;
  const Score pref = score(logprobs[0], e.responses[0].size(), opt);
  for (int k = 0; k < 4; ++k) {
    const Score rej = score(logprobs[k + 1], e.responses[k + 1].size(), opt);
    const double ratio = pref.value - rej.value;
    a.loss.ratios[k] = ratio;
    a.loss.contrastive += neg_log_sigmoid(ratio);
    const double dterm = -sigmoid_neg(ratio);  // d(-log sigma(r))/dr
    a.coeffs[0] += opt.lambda * dterm * pref.d_logprob;
    a.coeffs[k + 1] = -opt.lambda * dterm * rej.d_logprob;
  }
  a.loss.total = a.loss.sft + opt.lambda * a.loss.contrastive;
  return a;
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::BadTrainConfig, "lambda must be >= 0");
}

}  // namespace

LossBreakdown orpo_loss(const Transformer& model, const PreferenceRecord& record, const LossOptions& options) {
  check_lambda(options.lambda);
  const Encoded e = encode(record, model.config().max_seq);
  std::array<double, 5> lp{};
  for (int i = 0; i < 5; ++i) lp[i] = model.sequence_logprob(e.prompt, e.responses[i]);
  return assemble(lp, e, options).loss;
}

LossBreakdown orpo_loss(const Checkpoint& params, const PreferenceRecord& record, double lambda) {
  LossOptions opt;
  opt.lambda = lambda;
  return orpo_loss(Transformer(params), record, opt);
}

LossBreakdown orpo_loss_grad(const Transformer& model, const PreferenceRecord& record, const LossOptions& options,
                             double scale, Weights& grads) {
  check_lambda(options.lambda);
  const Encoded e = encode(record, model.config().max_seq);
  std::array<double, 5> lp{};
  std::array<Weights, 5> parts;
  for (int i = 0; i < 5; ++i) {
    parts[i] = Weights::zeros_like(model.weights());
    lp[i] = model.sequence_logprob_grad(e.prompt, e.responses[i], 1.0, parts[i]);
  }
  const Assembled a = assemble(lp, e, options);
  for (int i = 0; i < 5; ++i) {
    const double c = scale * a.coeffs[i];
    if (c == 0.0) continue;
    for (std::size_t p = 0; p < grads.params.size(); ++p) {
      auto& dst = grads.params[p].data;
      const auto& src = parts[i].params[p].data;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += c * src[j];
    }
  }
  return a.loss;
}

GradCheckResult grad_check(const Transformer& model, const PreferenceRecord& record, const LossOptions& loss,
                           const GradCheckOptions& options) {
  if (!(options.epsilon >= 1e-5 && options.epsilon <= 1e-2))
    throw Error(ErrorCode::BadEpsilon, "epsilon must lie in [1e-5, 1e-2]");
  Weights grads = Weights::zeros_like(model.weights());
  orpo_loss_grad(model, record, loss, 1.0, grads);

  // Half the samples come from entries with a non-zero analytic gradient so the
  // check is not dominated by untouched embedding rows; the rest are uniform.
  std::vector<std::pair<std::size_t, std::size_t>> nonzero;
  for (std::size_t p = 0; p < grads.params.size(); ++p)
    for (std::size_t j = 0; j < grads.params[p].data.size(); ++j)
      if (grads.params[p].data[j] != 0.0) nonzero.emplace_back(p, j);

  std::mt19937_64 rng(options.seed);
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  const int samples = std::max(options.samples, 50);
  for (int s = 0; s < samples; ++s) {
    if (s % 2 == 0 && !nonzero.empty()) {
      picks.push_back(nonzero[rng() % nonzero.size()]);
    } else {
      const std::size_t p = rng() % grads.params.size();
      picks.emplace_back(p, rng() % grads.params[p].data.size());
    }
  }

  Transformer probe = model;
  GradCheckResult result;
  for (auto [p, j] : picks) {
    double& w = probe.mutable_weights().params[p].data[j];
    const double saved = w;
    w = saved + options.epsilon;
    const double up = orpo_loss(probe, record, loss).total;
    w = saved - options.epsilon;
    const double down = orpo_loss(probe, record, loss).total;
    w = saved;
    const double numeric = (up - down) / (2.0 * options.epsilon);
    const double analytic = grads.params[p].data[j];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
    ++result.checked;
    if (analytic != 0.0) ++result.nonzero;
  }
  return result;
}

GradCheckResult grad_check(const Checkpoint& params, const PreferenceRecord& record, double lambda, double epsilon) {
  LossOptions loss;
  loss.lambda = lambda;
  GradCheckOptions opt;
  opt.epsilon = epsilon;
  return grad_check(Transformer(params), record, loss, opt);
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::BadTrainConfig, "lambda must be >= 0");
  if (!(learning_rate >= 0.0)) throw Error(ErrorCode::BadTrainConfig, "learning_rate must be non-negative");
  if (epochs < 1) throw Error(ErrorCode::BadTrainConfig, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::BadTrainConfig, "batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::BadTrainConfig, "momentum must lie in [0, 1)");
}

json TrainConfig::to_json() const {
  return {{"lambda", json_number(lambda)},
          {"learning_rate", json_number(learning_rate)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"momentum", json_number(momentum)},
          {"ratio", ratio == RatioMode::Probability ? "probability" : "odds"},
          {"norm", norm == LogprobNorm::Mean ? "mean" : "sum"}};
}

json TrainReport::to_json() const {
  json ep = json::array();
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    ep.push_back({{"epoch", i + 1},
                  {"total", json_number(epochs[i].total)},
                  {"sft", json_number(epochs[i].sft)},
                  {"contrastive", json_number(epochs[i].contrastive)}});
  }
  return {{"epochs", ep},
          {"initial_margin", json_number(initial_margin)},
          {"final_margin", json_number(final_margin)},
          {"config", config}};
}

double mean_margin(const Transformer& model, std::span<const PreferenceRecord> dataset, const LossOptions& options) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "dataset is empty");
  double sum = 0.0;
  for (const auto& r : dataset) {
    auto loss = orpo_loss(model, r, options);
    for (double x : loss.ratios) sum += x;
  }
  return sum / (4.0 * static_cast<double>(dataset.size()));
}

TrainResult train(const Checkpoint& params, std::span<const PreferenceRecord> dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "training dataset is empty");
  const LossOptions loss = config.loss_options();

  Transformer model(params);
  for (const auto& r : dataset) (void)encode(r, model.config().max_seq);

  TrainResult result;
  result.report.config = config.to_json();
  result.report.initial_margin = mean_margin(model, dataset, loss);

  Weights velocity = Weights::zeros_like(model.weights());
  Weights grads = Weights::zeros_like(model.weights());
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(config.seed);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    EpochStats stats;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& g : grads.params) std::fill(g.data.begin(), g.data.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        auto l = orpo_loss_grad(model, dataset[order[b]], loss, scale, grads);
        stats.total += l.total;
        stats.sft += l.sft;
        stats.contrastive += l.contrastive;
      }
      auto& w = model.mutable_weights();
      for (std::size_t p = 0; p < w.params.size(); ++p) {
        auto& v = velocity.params[p].data;
        auto& wd = w.params[p].data;
        const auto& g = grads.params[p].data;
        for (std::size_t j = 0; j < wd.size(); ++j) {
          v[j] = config.momentum * v[j] + g[j];
          wd[j] -= config.learning_rate * v[j];
        }
      }
    }
    const double n = static_cast<double>(dataset.size());
    result.report.epochs.push_back({stats.total / n, stats.sft / n, stats.contrastive / n});
  }

  Checkpoint out = model.to_checkpoint();
  for (const auto& [k, v] : params.metadata)
    if (!out.metadata.count(k)) out.metadata[k] = v;
  // Measured on the saved F32 weights.
  result.report.final_margin = mean_margin(Transformer(out), dataset, loss);
  result.params = std::move(out);
  return result;
}

std::vector<PreferenceRecord> make_toy_preferences(int queries, std::uint64_t seed) {
  static const std::array<std::array<const char*, 5>, 5> kWords = {{
      {"ubuntu", "elders", "drums", "village", "ancestors"},
      {"freedom", "frontier", "jazz", "liberty", "choice"},
      {"harmony", "karma", "family", "rice", "temples"},
      {"heritage", "reason", "cafes", "welfare", "debate"},
      {"ocean", "mana", "canoes", "whenua", "reef"},
  }};
  static const std::array<const char*, 10> kTopics = {"death", "marriage", "food",  "work",  "music",
                                                      "elders", "festivals", "land", "school", "money"};
  std::mt19937_64 rng(seed);
  std::vector<PreferenceRecord> out;
  for (int q = 0; q < queries; ++q) {
    const std::string topic = kTopics[rng() % kTopics.size()];
    std::array<std::string, 5> answers;
    for (std::size_t c = 0; c < 5; ++c) {
      const auto& words = kWords[c];
      const std::string a = words[rng() % 5];
      const std::string b = words[rng() % 5];
      answers[c] = "In " + std::string(kContinents[c]) + ", " + topic + " means " + a + " and " + b + ".";
    }
    for (std::size_t c = 0; c < 5; ++c) {
      PreferenceRecord r;
      r.continent = std::string(kContinents[c]);
      r.query = "[" + r.continent + "] What matters about " + topic + " #" + std::to_string(q) + "?";
      r.preferred = answers[c];
      for (std::size_t k = 0; k < 5; ++k)
        if (k != c) r.rejected.push_back(answers[k]);
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace palette
