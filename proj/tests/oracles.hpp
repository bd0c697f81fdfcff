#pragma once

// Straightforward re-implementations of the merge rules, written without
// sharing code with the library, used as brute-force references.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "palette/merge.hpp"

namespace oracle {

using Tensors = std::map<std::string, std::vector<double>>;

inline std::vector<double> vec(const palette::Checkpoint& c, const std::string& n) {
  const auto& d = c.at(n).data;
  return {d.begin(), d.end()};
}

inline Tensors task_arithmetic(const palette::Checkpoint& base, const std::vector<palette::Expert>& experts,
                               const std::vector<double>& coeffs) {
  Tensors out;
  for (const auto& name : base.names()) {
    auto b = vec(base, name);
    std::vector<double> r = b;
    for (std::size_t k = 0; k < experts.size(); ++k) {
      auto e = vec(experts[k].params, name);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] += coeffs[k] * (e[i] - b[i]);
    }
    out[name] = r;
  }
  return out;
}

inline Tensors ties(const palette::Checkpoint& base, const std::vector<palette::Expert>& experts, double density,
                    double scale) {
  Tensors out;
  for (const auto& name : base.names()) {
    auto b = vec(base, name);
    const std::size_t n = b.size();
    std::size_t keep = static_cast<std::size_t>(std::ceil(density * static_cast<double>(n) - 1e-9));
    if (keep < 1) keep = 1;
    if (keep > n) keep = n;
    std::vector<std::vector<double>> trimmed;
    for (const auto& ex : experts) {
      auto e = vec(ex.params, name);
      std::vector<double> tau(n), kept(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) tau[i] = e[i] - b[i];
      for (std::size_t i = 0; i < n; ++i) {
        // Rank by magnitude; equal magnitudes favour the lower index.
        std::size_t rank = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (std::abs(tau[j]) > std::abs(tau[i]) || (std::abs(tau[j]) == std::abs(tau[i]) && j < i)) ++rank;
        }
        if (rank < keep) kept[i] = tau[i];
      }
      trimmed.push_back(kept);
    }
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (const auto& t : trimmed) sum += t[i];
      const double sign = sum >= 0.0 ? 1.0 : -1.0;
      double acc = 0.0;
      int count = 0;
      for (const auto& t : trimmed) {
        if (t[i] != 0.0 && (t[i] > 0.0) == (sign > 0.0)) {
          acc += t[i];
          ++count;
        }
      }
      r[i] = b[i] + scale * (count ? acc / count : 0.0);
    }
    out[name] = r;
  }
  return out;
}

inline Tensors model_stock(const palette::Checkpoint& base, const std::vector<palette::Expert>& experts) {
  Tensors out;
  const double k = static_cast<double>(experts.size());
  for (const auto& name : base.names()) {
    auto b = vec(base, name);
    std::vector<std::vector<double>> taus;
    for (const auto& ex : experts) {
      auto e = vec(ex.params, name);
      for (std::size_t i = 0; i < e.size(); ++i) e[i] -= b[i];
      taus.push_back(e);
    }
    double cos_sum = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < taus.size(); ++a) {
      for (std::size_t c = a + 1; c < taus.size(); ++c) {
        double dot = 0.0, na = 0.0, nc = 0.0;
        for (std::size_t i = 0; i < b.size(); ++i) {
          dot += taus[a][i] * taus[c][i];
          na += taus[a][i] * taus[a][i];
          nc += taus[c][i] * taus[c][i];
        }
        cos_sum += (na == 0.0 || nc == 0.0) ? 0.0 : dot / std::sqrt(na * nc);
        ++pairs;
      }
    }
    const double cos = cos_sum / pairs;
    double t = k * cos / (1.0 + (k - 1.0) * cos);
    if (!(t > 0.0)) t = 0.0;
    if (t > 1.0) t = 1.0;
    std::vector<double> r(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
      double avg = 0.0;
      for (const auto& tau : taus) avg += tau[i];
      r[i] = b[i] + t * avg / k;
    }
    out[name] = r;
  }
  return out;
}

inline Tensors moerges(const palette::Checkpoint& base, const std::vector<palette::Expert>& experts,
                       const std::vector<double>& gate) {
  Tensors out;
  for (const auto& name : base.names()) {
    const bool ffn = name.find(".ffn.") != std::string::npos;
    auto b = vec(base, name);
    if (!ffn) {
      out[name] = b;
      continue;
    }
    std::vector<double> r(b.size(), 0.0);
    for (std::size_t c = 0; c < experts.size(); ++c) {
      auto e = vec(experts[c].params, name);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] += gate[c] * e[i];
    }
    out[name] = r;
  }
  return out;
}

inline double max_abs_diff(const palette::Checkpoint& got, const Tensors& want) {
  double worst = 0.0;
  if (got.tensors.size() != want.size()) return INFINITY;
  for (const auto& [name, w] : want) {
    if (!got.contains(name)) return INFINITY;
    const auto& g = got.at(name).data;
    if (g.size() != w.size()) return INFINITY;
    for (std::size_t i = 0; i < w.size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(g[i]) - w[i]));
  }
  return worst;
}

}  // namespace oracle
