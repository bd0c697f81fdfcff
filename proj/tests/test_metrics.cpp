#include <doctest.h>

#include <atomic>
#include <cmath>

#include "palette/error.hpp"
#include "palette/http.hpp"
#include "palette/metrics.hpp"
#include "support.hpp"

using namespace palette;

namespace {

using V = std::vector<double>;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

V random_simplex(std::mt19937_64& rng, std::size_t n, bool sparse) {
  V v(n);
  double s = 0;
  for (auto& x : v) {
    x = (sparse && rng() % 3 == 0) ? 0.0 : support::uniform(rng, 0, 1);
    s += x;
  }
  if (s == 0) {
    v[0] = 1;
    s = 1;
  }
  for (auto& x : v) x /= s;
  return v;
}

NliScorerEndpoint endpoint_for(const LocalServer& server) {
  NliScorerEndpoint e;
  e.base_url = server.base_url();
  e.timeout = std::chrono::milliseconds(2000);
  e.initial_backoff = std::chrono::milliseconds(1);
  return e;
}

}  // namespace

TEST_CASE("kl closed forms") {
  CHECK(kl(V{1, 0}, V{0.5, 0.5}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(kl(V{0.5, 0.5}, V{0.5, 0.5}) == 0.0);
  CHECK(kl(V{0.25, 0.75}, V{0.5, 0.5}) == doctest::Approx(1.0 - (-0.25 * std::log2(0.25) - 0.75 * std::log2(0.75))));
  CHECK(code_of([] { kl(V{0.5, 0.5}, V{1, 0}); }) == ErrorCode::SupportViolation);
  CHECK(code_of([] { kl(V{0.5, 0.5}, V{0.2, 0.3, 0.5}); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("alignment score closed forms") {
  CHECK(alignment_score(V{0.3, 0.7}, V{0.3, 0.7}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(alignment_score(V{1, 0}, V{0, 1}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(alignment_score(V{1, 0}, V{0.5, 0.5}) - 0.6887218755408673) < 1e-12);
  CHECK(std::abs(alignment_score(V{1, 0}, V{0.5, 0.5}) - alignment_score(V{0.5, 0.5}, V{1, 0})) < 1e-15);
}

TEST_CASE("alignment score stays in [0, 1] and is symmetric") {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t n = 2 + rng() % 7;
    const auto p = random_simplex(rng, n, true);
    const auto q = random_simplex(rng, n, true);
    const double s = alignment_score(p, q);
    CHECK((s >= 0.0 && s <= 1.0));
    CHECK(std::abs(s - alignment_score(q, p)) < 1e-12);
    CHECK(std::abs(alignment_score(p, p) - 1.0) < 1e-12);
  }
}

TEST_CASE("Table 4 case scores against the renormalized gold") {
  // Gold lists five options; the fifth is dropped and the rest renormalized.
  const V gold_raw{0.671, 0.242, 0.061, 0.0, 0.026};
  V gold(gold_raw.begin(), gold_raw.begin() + 4);
  double s = 0;
  for (double v : gold) s += v;
  for (auto& v : gold) v /= s;
  const V pred{0.6049056212210604, 0.3230594648058141, 0.060349139731253465, 0.0116857742428727};
  const auto p = normalize_distribution(pred);
  CHECK(std::abs(alignment_score(p, Distribution(gold)) - 0.9886511772117591) < 1e-6);
}

TEST_CASE("pearson") {
  const V v{0.1, 0.5, 0.2, 0.9};
  V neg;
  for (double x : v) neg.push_back(-x);
  CHECK(*pearson(v, v) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*pearson(v, neg) == doctest::Approx(-1.0).epsilon(1e-12));
  // sum dx dy = 5, sum dx^2 = 2, sum dy^2 = 38/3
  CHECK(std::abs(*pearson(V{1, 2, 3}, V{2, 4, 7}) - 5.0 / std::sqrt(2.0 * 38.0 / 3.0)) < 1e-12);
  CHECK(std::abs(*pearson(V{1, 2, 3}, V{2, 4, 7}) - 0.993399268) < 1e-8);
  CHECK_FALSE(pearson(V{1, 1, 1}, V{1, 2, 3}).has_value());
  CHECK_FALSE(pearson(V{1, 1, 1}, V{2, 2, 2}).has_value());
  CHECK(code_of([] { pearson(V{1, 2}, V{1, 2, 3}); }) == ErrorCode::LengthMismatch);

  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    V x(6), y(6);
    for (auto& a : x) a = support::uniform(rng);
    for (auto& a : y) a = support::uniform(rng);
    const double r = *pearson(x, y);
    CHECK((r >= -1.0 - 1e-12 && r <= 1.0 + 1e-12));
    const double a = support::uniform(rng, 0.1, 10), b = support::uniform(rng, -5, 5);
    V xt = x;
    for (auto& e : xt) e = a * e + b;
    CHECK(std::abs(*pearson(xt, y) - r) < 1e-9);
  }
}

TEST_CASE("country pearson pooling") {
  const std::vector<DistributionPair> pairs{{{0.6, 0.4}, {0.7, 0.3}}, {{0.2, 0.8}, {0.1, 0.9}}};
  const V gen{0.6, 0.4, 0.2, 0.8}, gold{0.7, 0.3, 0.1, 0.9};
  CHECK(*country_pearson(pairs) == doctest::Approx(*pearson(gen, gold)).epsilon(1e-12));
  CHECK(*country_pearson(pairs, PearsonPooling::MeanPerQuestion) == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<DistributionPair> flat{{{0.5, 0.5}, {0.7, 0.3}}};
  CHECK_FALSE(country_pearson(flat, PearsonPooling::MeanPerQuestion).has_value());
}

TEST_CASE("distribution validation and normalization") {
  CHECK(code_of([] { Distribution(V{1.0}); }) == ErrorCode::InvalidDistribution);
  CHECK(code_of([] { Distribution(V{0.5, 0.6}); }) == ErrorCode::InvalidDistribution);
  CHECK(code_of([] { Distribution(V{1.5, -0.5}); }) == ErrorCode::NegativeEntry);
  CHECK_NOTHROW(Distribution(V{0.5, 0.5 + 1e-10}));
  const auto d = normalize_distribution(V{1, 3});
  CHECK(d[0] == 0.25);
  CHECK(d[1] == 0.75);
  const auto eps = normalize_distribution(V{0, 1}, 1.0);
  CHECK(eps[0] == doctest::Approx(1.0 / 3.0));
  CHECK(code_of([] { normalize_distribution(V{0, 0}); }) == ErrorCode::AllZero);
  CHECK(code_of([] { normalize_distribution(V{-1, 2}); }) == ErrorCode::NegativeEntry);
}

TEST_CASE("overlap heuristic") {
  CHECK(overlap_score("Same Text", "same text") == 1.0);
  CHECK(overlap_score("a b", "c d") == 0.0);
  CHECK(overlap_score("a b c", "a b d") == doctest::Approx(0.5));
}

TEST_CASE("semantic score against a mock scorer") {
  LocalServer server;
  install_mock_scorer(server, 0.8927);
  server.start();
  CHECK(semantic_score(endpoint_for(server), "gold answer", "model answer") == doctest::Approx(0.8927).epsilon(1e-12));
  CHECK(code_of([&] { semantic_score(endpoint_for(server), "", "x"); }) == ErrorCode::EmptyText);

  LocalServer overlap;
  install_mock_scorer(overlap);
  overlap.start();
  CHECK(semantic_score(endpoint_for(overlap), "the same words", "the same words") == 1.0);
}

TEST_CASE("semantic score retries transient failures") {
  LocalServer server;
  std::atomic<int> calls{0};
  server.post("/score", [&](const std::string& body, const std::string&) {
    const auto j = json::parse(body);
    CHECK(j.contains("premise"));
    CHECK(j.contains("hypothesis"));
    if (++calls < 3) return HttpResponse{503, "busy"};
    return HttpResponse{200, R"({"score":0.25})"};
  });
  server.start();
  CHECK(semantic_score(endpoint_for(server), "a", "b") == 0.25);
  CHECK(calls == 3);
}

TEST_CASE("semantic score errors") {
  LocalServer server;
  std::atomic<int> calls{0};
  server.post("/score", [&](const std::string& body, const std::string&) {
    ++calls;
    const auto premise = json::parse(body).at("premise").get<std::string>();
    if (premise == "bad-json") return HttpResponse{200, "not json"};
    if (premise == "out-of-range") return HttpResponse{200, R"({"score":1.5})"};
    if (premise == "forbidden") return HttpResponse{403, "no"};
    return HttpResponse{503, "down"};
  });
  server.start();
  const auto e = endpoint_for(server);
  CHECK(code_of([&] { semantic_score(e, "bad-json", "x"); }) == ErrorCode::MalformedScorerResponse);
  CHECK(code_of([&] { semantic_score(e, "out-of-range", "x"); }) == ErrorCode::MalformedScorerResponse);
  CHECK(code_of([&] { semantic_score(e, "forbidden", "x"); }) == ErrorCode::MalformedScorerResponse);
  calls = 0;
  CHECK(code_of([&] { semantic_score(e, "always-down", "x"); }) == ErrorCode::EndpointUnreachable);
  CHECK(calls == e.max_retries + 1);

  int port = 0;
  {
    LocalServer gone;
    port = gone.start();
    gone.stop();
  }
  NliScorerEndpoint dead;
  dead.base_url = "http://127.0.0.1:" + std::to_string(port);
  dead.timeout = std::chrono::milliseconds(300);
  dead.max_retries = 1;
  dead.initial_backoff = std::chrono::milliseconds(1);
  CHECK(code_of([&] { semantic_score(dead, "a", "b"); }) == ErrorCode::EndpointUnreachable);
}

TEST_CASE("bearer token is taken from the environment") {
  LocalServer server;
  std::string seen;
  server.post("/score", [&](const std::string&, const std::string& auth) {
    seen = auth;
    return HttpResponse{200, R"({"score":0.5})"};
  });
  server.start();
  auto e = endpoint_for(server);
  e.token_env = "PALETTE_TEST_NLI_TOKEN";
  ::setenv("PALETTE_TEST_NLI_TOKEN", "s3cret", 1);
  semantic_score(e, "a", "b");
  ::unsetenv("PALETTE_TEST_NLI_TOKEN");
  CHECK(seen == "Bearer s3cret");
}
