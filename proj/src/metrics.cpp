#include "palette/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

#include "palette/error.hpp"
#include "palette/http.hpp"
#include "palette/util.hpp"

namespace palette {

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) throw Error(ErrorCode::InvalidDistribution, "distribution needs at least 2 entries");
  double sum = 0.0;
  for (double p : probs_) {
    if (!std::isfinite(p)) throw Error(ErrorCode::InvalidDistribution, "non-finite probability");
    if (p < 0.0) throw Error(ErrorCode::NegativeEntry, "negative probability " + format9(p));
    sum += p;
  }
  if (std::abs(sum - 1.0) > kDistributionTolerance)
    throw Error(ErrorCode::InvalidDistribution, "probabilities sum to " + format9(sum));
}

double kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw Error(ErrorCode::LengthMismatch,
                "lengths " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
  double out = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) throw Error(ErrorCode::SupportViolation, "q is zero where p is positive at " + std::to_string(i));
    out += p[i] * std::log2(p[i] / q[i]);
  }
  return out;
}

double kl(const Distribution& p, const Distribution& q) { return kl(p.probs(), q.probs()); }

double alignment_score(std::span<const double> p_gen, std::span<const double> p_gold) {
  if (p_gen.size() != p_gold.size())
    throw Error(ErrorCode::LengthMismatch,
                "lengths " + std::to_string(p_gen.size()) + " and " + std::to_string(p_gold.size()));
  std::vector<double> m(p_gen.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (p_gen[i] + p_gold[i]);
  const double s = 1.0 - 0.5 * kl(p_gen, m) - 0.5 * kl(p_gold, m);
  return std::clamp(s, 0.0, 1.0);
}

double alignment_score(const Distribution& p_gen, const Distribution& p_gold) {
  return alignment_score(p_gen.probs(), p_gold.probs());
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw Error(ErrorCode::LengthMismatch, "lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  if (x.size() < 2) throw Error(ErrorCode::LengthMismatch, "pearson needs at least 2 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  // A single constant side still leaves r undefined (0/0).
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::optional<double> country_pearson(std::span<const DistributionPair> pairs, PearsonPooling pooling) {
  if (pooling == PearsonPooling::Concatenate) {
    std::vector<double> x, y;
    for (const auto& p : pairs) {
      if (p.generated.size() != p.gold.size()) throw Error(ErrorCode::LengthMismatch, "pair lengths differ");
      x.insert(x.end(), p.generated.begin(), p.generated.end());
      y.insert(y.end(), p.gold.begin(), p.gold.end());
    }
    return pearson(x, y);
  }
  double sum = 0.0;
  int count = 0;
  for (const auto& p : pairs) {
    if (auto r = pearson(p.generated, p.gold)) {
      sum += *r;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

Distribution normalize_distribution(std::span<const double> raw, double epsilon) {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw Error(ErrorCode::NegativeEntry, "smoothing must be >= 0");
  if (raw.size() < 2) throw Error(ErrorCode::InvalidDistribution, "distribution needs at least 2 entries");
  bool positive = false;
  for (double v : raw) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidDistribution, "non-finite entry");
    if (v < 0.0) throw Error(ErrorCode::NegativeEntry, "negative entry " + format9(v));
    positive = positive || v > 0.0;
  }
  if (!positive) throw Error(ErrorCode::AllZero, "all entries are zero");
  std::vector<double> out(raw.begin(), raw.end());
  double sum = 0.0;
  for (auto& v : out) sum += (v += epsilon);
  // Inputs already summing to one are kept as given.
  if (std::abs(sum - 1.0) > kDistributionTolerance)
    for (auto& v : out) v /= sum;
  return Distribution(std::move(out));
}

namespace {

bool transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

double parse_score(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    throw Error(ErrorCode::MalformedScorerResponse, "response is not JSON", body.substr(0, 200));
  }
  if (!j.is_object() || !j.contains("score") || !j["score"].is_number())
    throw Error(ErrorCode::MalformedScorerResponse, "response lacks a numeric score", body.substr(0, 200));
  const double s = j["score"].get<double>();
  if (!(s >= 0.0 && s <= 1.0)) throw Error(ErrorCode::MalformedScorerResponse, "score outside [0, 1]", format9(s));
  return s;
}

std::set<std::string> word_set(std::string_view text) {
  std::set<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.insert(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.insert(std::move(cur));
  return out;
}

}  // namespace

double semantic_score(const NliScorerEndpoint& endpoint, std::string_view r_gold, std::string_view r_llm) {
  if (r_gold.empty() || r_llm.empty()) throw Error(ErrorCode::EmptyText, "both texts must be non-empty");
  const Url url = Url::parse(endpoint.base_url);
  HttpOptions opts;
  opts.timeout = endpoint.timeout;
  opts.bearer_token = env_or_empty(endpoint.token_env);
  const json body = {{"premise", r_gold}, {"hypothesis", r_llm}};

  auto backoff = endpoint.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    try {
      auto res = http_post_json(url, "/score", body, opts);
      if (res.status == 200) return parse_score(res.body);
      if (!transient_status(res.status))
        throw Error(ErrorCode::MalformedScorerResponse, "scorer returned HTTP " + std::to_string(res.status),
                    res.body.substr(0, 200));
      last_error = "HTTP " + std::to_string(res.status);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EndpointUnreachable) throw;
      last_error = e.what();
    }
    log::warn("scorer attempt " + std::to_string(attempt + 1) + " failed: " + last_error);
  }
  throw Error(ErrorCode::EndpointUnreachable,
              "scorer unreachable after " + std::to_string(endpoint.max_retries) + " retries: " + last_error,
              endpoint.base_url);
}

double overlap_score(std::string_view premise, std::string_view hypothesis) {
  if (premise == hypothesis) return 1.0;
  const auto a = word_set(premise);
  const auto b = word_set(hypothesis);
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& w : a) common += b.count(w);
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

void install_mock_scorer(LocalServer& server, std::optional<double> fixed_score) {
  server.post("/score", [fixed_score](const std::string& body, const std::string&) -> HttpResponse {
    json req;
    try {
      req = json::parse(body);
    } catch (const json::exception&) {
      return {400, R"({"error":"invalid JSON"})"};
    }
    if (!req.contains("premise") || !req.contains("hypothesis") || !req["premise"].is_string() ||
        !req["hypothesis"].is_string())
      return {400, R"({"error":"premise and hypothesis are required"})"};
    const double s = fixed_score ? *fixed_score
                                 : overlap_score(req["premise"].get<std::string>(), req["hypothesis"].get<std::string>());
    return {200, json{{"score", s}}.dump()};
  });
}

}  // namespace palette
