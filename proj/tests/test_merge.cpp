#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "palette/error.hpp"
#include "palette/gate.hpp"
#include "palette/merge.hpp"
#include "support.hpp"

using namespace palette;

namespace {

Checkpoint scalar_ckpt(std::initializer_list<std::pair<const char*, std::vector<float>>> tensors) {
  Checkpoint c;
  for (const auto& [name, data] : tensors) {
    TensorSpec t;
    t.name = name;
    t.shape = {static_cast<std::int64_t>(data.size())};
    t.data = data;
    c.add(std::move(t));
  }
  return c;
}

std::vector<Expert> experts_of(std::initializer_list<Checkpoint> cs) {
  std::vector<Expert> out;
  int i = 0;
  for (const auto& c : cs) out.push_back({"e" + std::to_string(i++), c});
  return out;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

}  // namespace

TEST_CASE("task arithmetic hand cases") {
  const auto base = scalar_ckpt({{"w", {0}}});
  const auto ex = experts_of({scalar_ckpt({{"w", {2}}}), scalar_ckpt({{"w", {4}}})});
  const std::vector<double> half{0.5, 0.5};
  CHECK(task_arithmetic(base, ex, half).at("w").data[0] == 3.0f);
  const std::vector<double> zero{0.0, 0.0};
  CHECK(bit_equal(task_arithmetic(base, ex, zero).at("w"), base.at("w")));

  std::mt19937_64 rng(1);
  const auto b = support::random_checkpoint(rng);
  const std::vector<Expert> one{{"x", support::random_like(b, rng)}};
  const std::vector<double> unit{1.0};
  const auto r = task_arithmetic(b, one, unit);
  for (const auto& [n, t] : r.tensors) CHECK(bit_equal(t, one[0].params.at(n)));

  const std::vector<double> wrong{1.0, 2.0};
  CHECK(code_of([&] { task_arithmetic(b, one, wrong); }) == ErrorCode::BadCoefficients);
}

TEST_CASE("ties hand cases") {
  const auto base = scalar_ckpt({{"w", {0, 0}}});
  const auto ex = experts_of({scalar_ckpt({{"w", {2, -1}}}), scalar_ckpt({{"w", {1, 3}}})});
  const auto r = ties_merge(base, ex, 1.0, 1.0);
  CHECK(r.at("w").data[0] == 1.5f);
  CHECK(r.at("w").data[1] == 3.0f);

  CHECK(code_of([&] { ties_merge(base, ex, 0.0, 1.0); }) == ErrorCode::BadDensity);
  CHECK(code_of([&] { ties_merge(base, ex, 1.5, 1.0); }) == ErrorCode::BadDensity);

  // Opposite equal deltas sum to zero, which elects "+".
  const auto tie = experts_of({scalar_ckpt({{"w", {1, 0}}}), scalar_ckpt({{"w", {-1, 0}}})});
  CHECK(ties_merge(base, tie, 1.0, 1.0).at("w").data[0] == 1.0f);
}

TEST_CASE("ties reduces to task arithmetic for one expert at full density") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto b = support::random_checkpoint(rng);
    const std::vector<Expert> one{{"x", support::random_like(b, rng)}};
    const std::vector<double> unit{1.0};
    const auto t = ties_merge(b, one, 1.0, 1.0);
    const auto a = task_arithmetic(b, one, unit);
    for (const auto& [n, tensor] : a.tensors) CHECK(bit_equal(tensor, t.at(n)));
  }
}

TEST_CASE("ties matches the oracle on all small integer vectors") {
  // Every pair of 2-element integer task vectors in [-2, 2], densities 0.5 and 1.
  const auto base = scalar_ckpt({{"w", {0, 0}}});
  for (int a0 = -2; a0 <= 2; ++a0)
    for (int a1 = -2; a1 <= 2; ++a1)
      for (int b0 = -2; b0 <= 2; ++b0)
        for (int b1 = -2; b1 <= 2; ++b1)
          for (double density : {0.5, 1.0}) {
            const auto ex = experts_of({scalar_ckpt({{"w", {float(a0), float(a1)}}}),
                                        scalar_ckpt({{"w", {float(b0), float(b1)}}})});
            const auto got = ties_merge(base, ex, density, 1.0);
            CHECK(oracle::max_abs_diff(got, oracle::ties(base, ex, density, 1.0)) == 0.0);
          }
}

TEST_CASE("model stock hand cases") {
  const auto base = scalar_ckpt({{"w", {0, 0}}});
  const auto ex = experts_of({scalar_ckpt({{"w", {1, 0}}}), scalar_ckpt({{"w", {1, 1}}})});
  const auto r = model_stock(base, ex);
  const double c = 1.0 / std::sqrt(2.0);
  const double t = 2 * c / (1 + c);
  CHECK(t == doctest::Approx(0.8284).epsilon(1e-4));
  CHECK(r.at("w").data[0] == doctest::Approx(t * 1.0).epsilon(1e-6));
  CHECK(r.at("w").data[1] == doctest::Approx(t * 0.5).epsilon(1e-6));

  const auto same = experts_of({scalar_ckpt({{"w", {3, 4}}}), scalar_ckpt({{"w", {3, 4}}})});
  CHECK(model_stock(base, same).at("w").data == std::vector<float>{3, 4});

  const auto ortho = experts_of({scalar_ckpt({{"w", {1, 0}}}), scalar_ckpt({{"w", {0, 1}}})});
  CHECK(model_stock(base, ortho).at("w").data == std::vector<float>{0, 0});

  const auto single = experts_of({scalar_ckpt({{"w", {1, 0}}})});
  CHECK(code_of([&] { model_stock(base, single); }) == ErrorCode::TooFewExperts);
}

TEST_CASE("moerges hand cases and gate validation") {
  const auto base = scalar_ckpt({{"l.attn.w", {9}}, {"l.ffn.w", {0}}});
  const auto ex = experts_of({scalar_ckpt({{"l.attn.w", {1}}, {"l.ffn.w", {2}}}),
                              scalar_ckpt({{"l.attn.w", {1}}, {"l.ffn.w", {4}}})});
  const std::vector<double> half{0.5, 0.5};
  const auto r = moerges_fuse(base, ex, half);
  CHECK(r.at("l.ffn.w").data[0] == 3.0f);
  CHECK(bit_equal(r.at("l.attn.w"), base.at("l.attn.w")));
  CHECK(r.metadata.at("gate") == "0.5,0.5");

  const std::vector<double> bad_sum{0.5, 0.6};
  CHECK(code_of([&] { moerges_fuse(base, ex, bad_sum); }) == ErrorCode::UnnormalizedGate);
  const std::vector<double> wrong_len{1.0};
  CHECK(code_of([&] { moerges_fuse(base, ex, wrong_len); }) == ErrorCode::GateDimensionMismatch);

  const auto other = scalar_ckpt({{"l.attn.w", {1}}, {"l.ffn.w", {2, 3}}});
  const std::vector<Expert> mismatched{{"a", ex[0].params}, {"b", other}};
  CHECK(code_of([&] { moerges_fuse(base, mismatched, half); }) == ErrorCode::SchemaMismatch);

  MoErgesOptions delta;
  delta.delta_mode = true;
  CHECK(moerges_fuse(base, ex, half, delta).at("l.ffn.w").data[0] == 3.0f);
}

TEST_CASE("moerges over identical experts is idempotent and linear in the gate") {
  std::mt19937_64 rng(4);
  const auto base = support::random_checkpoint(rng);
  const auto e = support::random_like(base, rng);
  std::vector<Expert> same;
  for (auto c : kContinents) same.push_back({std::string(c), e});
  const std::vector<double> uniform(5, 0.2);
  const auto r = moerges_fuse(base, same, uniform);
  for (const auto& name : select_ffn(base, kDefaultFfnPattern).names)
    for (std::size_t i = 0; i < e.at(name).data.size(); ++i)
      CHECK(r.at(name).data[i] == doctest::Approx(e.at(name).data[i]).epsilon(1e-6));

  std::vector<Expert> ex;
  for (int i = 0; i < 3; ++i) ex.push_back({"e" + std::to_string(i), support::random_like(base, rng)});
  const std::vector<double> g1{0.1, 0.5, 0.2}, g2{0.3, -0.2, 0.4}, g12{0.4, 0.3, 0.6};
  const auto a = moerges_combine(base, ex, g1), b = moerges_combine(base, ex, g2), ab = moerges_combine(base, ex, g12);
  for (const auto& name : select_ffn(base, kDefaultFfnPattern).names)
    for (std::size_t i = 0; i < ab.at(name).data.size(); ++i)
      CHECK(a.at(name).data[i] + b.at(name).data[i] == doctest::Approx(ab.at(name).data[i]).epsilon(1e-5));
}

TEST_CASE("merges are permutation-equivariant") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto base = support::random_checkpoint(rng);
    std::vector<Expert> ex;
    for (int i = 0; i < 4; ++i) ex.push_back({"e" + std::to_string(i), support::random_like(base, rng)});
    std::vector<double> w{0.1, 0.2, 0.3, 0.4};
    std::vector<std::size_t> perm{2, 0, 3, 1};
    std::vector<Expert> pex;
    std::vector<double> pw;
    for (auto p : perm) {
      pex.push_back(ex[p]);
      pw.push_back(w[p]);
    }
    auto close = [](const Checkpoint& x, const Checkpoint& y) {
      for (const auto& [n, t] : x.tensors)
        for (std::size_t i = 0; i < t.data.size(); ++i)
          if (std::abs(t.data[i] - y.at(n).data[i]) > 1e-6) return false;
      return true;
    };
    CHECK(close(task_arithmetic(base, ex, w), task_arithmetic(base, pex, pw)));
    CHECK(close(ties_merge(base, ex, 0.5, 1.0), ties_merge(base, pex, 0.5, 1.0)));
    CHECK(close(model_stock(base, ex), model_stock(base, pex)));
    CHECK(close(moerges_fuse(base, ex, w), moerges_fuse(base, pex, pw)));
  }
}

TEST_CASE("all merges agree with the brute-force oracles on random instances") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto base = support::random_checkpoint(rng);
    const int k = 2 + static_cast<int>(rng() % 4);
    std::vector<Expert> ex;
    for (int i = 0; i < k; ++i) ex.push_back({"e" + std::to_string(i), support::random_like(base, rng)});
    std::vector<double> coeffs(k);
    for (auto& c : coeffs) c = support::uniform(rng);
    std::vector<double> gate(k);
    for (auto& g : gate) g = support::uniform(rng, 0.01, 1.0);
    const double s = std::accumulate(gate.begin(), gate.end(), 0.0);
    for (auto& g : gate) g /= s;
    const double density = support::uniform(rng, 0.05, 1.0);

    CHECK(oracle::max_abs_diff(task_arithmetic(base, ex, coeffs), oracle::task_arithmetic(base, ex, coeffs)) < 1e-6);
    CHECK(oracle::max_abs_diff(ties_merge(base, ex, density, 0.7), oracle::ties(base, ex, density, 0.7)) < 1e-6);
    CHECK(oracle::max_abs_diff(model_stock(base, ex), oracle::model_stock(base, ex)) < 1e-6);
    CHECK(oracle::max_abs_diff(moerges_fuse(base, ex, gate), oracle::moerges(base, ex, gate)) < 1e-6);
  }
}

TEST_CASE("merge method names") {
  CHECK(parse_merge_method("ties") == MergeMethod::Ties);
  CHECK(to_string(MergeMethod::ModelStock) == "stock");
  CHECK_THROWS_AS(parse_merge_method("dare"), Error);
}
