#include "palette/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "palette/error.hpp"
#include "palette/util.hpp"

namespace palette {

MergeMethod parse_merge_method(std::string_view name) {
  if (name == "task") return MergeMethod::TaskArithmetic;
  if (name == "ties") return MergeMethod::Ties;
  if (name == "stock") return MergeMethod::ModelStock;
  if (name == "moerges") return MergeMethod::MoErges;
  throw Error(ErrorCode::BadConfig, "unknown merge method", std::string(name));
}

std::string_view to_string(MergeMethod method) noexcept {
  switch (method) {
    case MergeMethod::TaskArithmetic: return "task";
    case MergeMethod::Ties: return "ties";
    case MergeMethod::ModelStock: return "stock";
    case MergeMethod::MoErges: return "moerges";
  }
  return "?";
}

namespace {

void check_experts(const Checkpoint& base, std::span<const Expert> experts) {
  if (experts.empty()) throw Error(ErrorCode::TooFewExperts, "at least one expert is required");
  std::vector<std::string> labels;
  for (const auto& e : experts) {
    require_same_schema(base, e.params, e.label);
    labels.push_back(e.label);
  }
  std::sort(labels.begin(), labels.end());
  if (std::adjacent_find(labels.begin(), labels.end()) != labels.end())
    throw Error(ErrorCode::BadConfig, "expert labels must be unique");
}

Checkpoint with_metadata(const Checkpoint& base, MergeMethod method) {
  Checkpoint out;
  out.metadata = base.metadata;
  out.metadata["merge_method"] = std::string(to_string(method));
  return out;
}

// tau_k[i] = expert_k[i] - base[i], computed in double.
std::vector<std::vector<double>> task_vectors(const std::string& name, const TensorSpec& base,
                                              std::span<const Expert> experts) {
  std::vector<std::vector<double>> taus;
  taus.reserve(experts.size());
  for (const auto& e : experts) {
    const auto& t = e.params.at(name);
    std::vector<double> tau(base.data.size());
    for (std::size_t i = 0; i < tau.size(); ++i)
      tau[i] = static_cast<double>(t.data[i]) - static_cast<double>(base.data[i]);
    taus.push_back(std::move(tau));
  }
  return taus;
}

TensorSpec apply(const TensorSpec& base, const std::vector<double>& update, double scale) {
  TensorSpec out{base.name, DType::F32, base.shape, std::vector<float>(base.data.size())};
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<float>(static_cast<double>(base.data[i]) + scale * update[i]);
  return out;
}

std::vector<double> trim_top_density(const std::vector<double>& tau, double density) {
  const std::size_t n = tau.size();
  // The epsilon keeps e.g. 0.3 * 10 from rounding up to 4.
  auto keep = static_cast<std::size_t>(std::ceil(density * static_cast<double>(n) - 1e-9));
  keep = std::clamp<std::size_t>(keep, 1, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(tau[a]) > std::abs(tau[b]);
  });
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < keep; ++j) out[order[j]] = tau[order[j]];
  return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace

Checkpoint task_arithmetic(const Checkpoint& base, std::span<const Expert> experts,
                           std::span<const double> coeffs) {
  check_experts(base, experts);
  if (coeffs.size() != experts.size())
    throw Error(ErrorCode::BadCoefficients, "need one coefficient per expert");
  for (double c : coeffs)
    if (!std::isfinite(c)) throw Error(ErrorCode::BadCoefficients, "coefficients must be finite");

  Checkpoint out = with_metadata(base, MergeMethod::TaskArithmetic);
  for (const auto& [name, b] : base.tensors) {
    auto taus = task_vectors(name, b, experts);
    std::vector<double> update(b.data.size(), 0.0);
    for (std::size_t k = 0; k < taus.size(); ++k)
      for (std::size_t i = 0; i < update.size(); ++i) update[i] += coeffs[k] * taus[k][i];
    out.add(apply(b, update, 1.0));
  }
  return out;
}

Checkpoint ties_merge(const Checkpoint& base, std::span<const Expert> experts, double density,
                      double scale) {
  if (!(density > 0.0 && density <= 1.0))
    throw Error(ErrorCode::BadDensity, "density must lie in (0, 1], got " + format9(density));
  check_experts(base, experts);

  Checkpoint out = with_metadata(base, MergeMethod::Ties);
  out.metadata["density"] = format9(density);
  for (const auto& [name, b] : base.tensors) {
    auto taus = task_vectors(name, b, experts);
    for (auto& tau : taus) tau = trim_top_density(tau, density);

    std::vector<double> merged(b.data.size(), 0.0);
    for (std::size_t i = 0; i < merged.size(); ++i) {
      double sum = 0.0;
      for (const auto& tau : taus) sum += tau[i];
      const bool positive = sum >= 0.0;
      double acc = 0.0;
      int count = 0;
      for (const auto& tau : taus) {
        if ((positive && tau[i] > 0.0) || (!positive && tau[i] < 0.0)) {
          acc += tau[i];
          ++count;
        }
      }
      merged[i] = count ? acc / count : 0.0;
    }
    out.add(apply(b, merged, scale));
  }
  return out;
}

Checkpoint model_stock(const Checkpoint& base, std::span<const Expert> experts) {
  if (experts.size() < 2) throw Error(ErrorCode::TooFewExperts, "model stock needs at least 2 experts");
  check_experts(base, experts);

  const double k = static_cast<double>(experts.size());
  Checkpoint out = with_metadata(base, MergeMethod::ModelStock);
  for (const auto& [name, b] : base.tensors) {
    auto taus = task_vectors(name, b, experts);
    double cos_sum = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < taus.size(); ++a)
      for (std::size_t c = a + 1; c < taus.size(); ++c) {
        cos_sum += cosine(taus[a], taus[c]);
        ++pairs;
      }
    const double cos = cos_sum / pairs;
    const double t = std::clamp(k * cos / (1.0 + (k - 1.0) * cos), 0.0, 1.0);

    std::vector<double> mean(b.data.size(), 0.0);
    for (const auto& tau : taus)
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += tau[i];
    for (auto& m : mean) m /= k;
    out.add(apply(b, mean, t));
  }
  return out;
}

Checkpoint moerges_combine(const Checkpoint& base, std::span<const Expert> experts,
                           std::span<const double> weights, const MoErgesOptions& options) {
  check_experts(base, experts);
  if (weights.size() != experts.size())
    throw Error(ErrorCode::GateDimensionMismatch,
                "gate has " + std::to_string(weights.size()) + " entries for " +
                    std::to_string(experts.size()) + " experts");
  auto ffn = select_ffn(base, options.ffn_pattern);

  Checkpoint out = with_metadata(base, MergeMethod::MoErges);
  for (const auto& [name, b] : base.tensors) {
    if (!ffn.contains(name)) {
      out.add(b);
      continue;
    }
    TensorSpec fused{name, DType::F32, b.shape, std::vector<float>(b.data.size())};
    for (std::size_t i = 0; i < fused.data.size(); ++i) {
      const double base_v = b.data[i];
      double acc = options.delta_mode ? base_v : 0.0;
      for (std::size_t c = 0; c < experts.size(); ++c) {
        const double e = experts[c].params.at(name).data[i];
        acc += weights[c] * (options.delta_mode ? e - base_v : e);
      }
      fused.data[i] = static_cast<float>(acc);
    }
    out.add(std::move(fused));
  }
  out.metadata["gate"] = join9(std::vector<double>(weights.begin(), weights.end()));
  out.metadata["ffn_pattern"] = options.ffn_pattern;
  if (options.delta_mode) out.metadata["delta_mode"] = "true";
  return out;
}

Checkpoint moerges_fuse(const Checkpoint& base, std::span<const Expert> experts,
                        std::span<const double> gate, const MoErgesOptions& options) {
  if (gate.size() != experts.size())
    throw Error(ErrorCode::GateDimensionMismatch,
                "gate has " + std::to_string(gate.size()) + " entries for " +
                    std::to_string(experts.size()) + " experts");
  double sum = 0.0;
  for (double g : gate) {
    if (!std::isfinite(g) || g < 0.0) throw Error(ErrorCode::UnnormalizedGate, "gate entries must be finite and non-negative");
    sum += g;
  }
  if (std::abs(sum - 1.0) > kGateTolerance)
    throw Error(ErrorCode::UnnormalizedGate, "gate sums to " + format9(sum));
  return moerges_combine(base, experts, gate, options);
}

}  // namespace palette
