#pragma once

// Independent scalar-loop reference implementations used by the tests and the
// acceptance suite. Deliberately naive: no shared code with the library.

#include "emofilm/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

// Every monotone warping path through the |a|×|b| grid, by plain recursion.
inline double dtw_exhaustive(const std::vector<double>& a, const std::vector<double>& b) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::pair<std::size_t, std::size_t>> path;
  auto walk = [&](auto&& self, std::size_t i, std::size_t j, double cost) -> void {
    cost += std::abs(a[i] - b[j]);
    if (i + 1 == a.size() && j + 1 == b.size()) {
      best = std::min(best, cost);
      return;
    }
    if (i + 1 < a.size()) self(self, i + 1, j, cost);
    if (j + 1 < b.size()) self(self, i, j + 1, cost);
    if (i + 1 < a.size() && j + 1 < b.size()) self(self, i + 1, j + 1, cost);
  };
  walk(walk, 0, 0, 0.0);
  return best;
}

inline std::vector<double> softmax_row(const emofilm::Matrix& m, std::size_t r) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < m.cols(); ++k) mx = std::max(mx, m(r, k));
  double z = 0.0;
  for (std::size_t k = 0; k < m.cols(); ++k) z += std::exp(m(r, k) - mx);
  std::vector<double> p(m.cols());
  for (std::size_t k = 0; k < m.cols(); ++k) p[k] = std::exp(m(r, k) - mx) / z;
  return p;
}

// -(1/M) Σ_i Σ_t Σ_k q(y,k) log p(k), q = (1-ε)[k=y] + ε/V.
inline double tts_loss(const std::vector<emofilm::Matrix>& logits, const std::vector<std::vector<int>>& targets,
                       double eps) {
  double total = 0.0;
  double M = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double V = static_cast<double>(logits[i].cols());
    for (std::size_t t = 0; t < targets[i].size(); ++t) {
      const auto p = softmax_row(logits[i], t);
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double q = (1.0 - eps) * (static_cast<int>(k) == targets[i][t] ? 1.0 : 0.0) + eps / V;
        total -= q * std::log(p[k]);
      }
      M += 1.0;
    }
  }
  return total / M;
}

// -(1/N) Σ_i Σ_t log p(y).
inline double emo_loss(const std::vector<emofilm::Matrix>& logits, const std::vector<std::vector<int>>& labels) {
  double total = 0.0;
  double N = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    for (std::size_t t = 0; t < labels[i].size(); ++t) {
      const auto p = softmax_row(logits[i], t);
      total -= std::log(p[static_cast<std::size_t>(labels[i][t])]);
      N += 1.0;
    }
  return total / N;
}

}  // namespace oracle
