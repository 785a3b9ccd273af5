#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gemft/gem.hpp"

namespace gemft::testing {

// Exact minimiser of ‖z − g‖² over {z : Gz ≥ 0} by enumerating active sets.
inline std::vector<double> kkt_oracle(const std::vector<float>& g, const GradientMatrix& G) {
  const int K = static_cast<int>(G.size()), n = static_cast<int>(g.size());
  auto d = [](const auto& a, const auto& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
  };
  std::vector<double> best;
  double best_dist = 1e300;
  for (int mask = 0; mask < (1 << K); ++mask) {
    std::vector<int> S;
    for (int k = 0; k < K; ++k)
      if (mask & (1 << k)) S.push_back(k);
    std::vector<double> v(S.size(), 0.0);
    if (S.size() == 1) {
      v[0] = -d(G[S[0]], g) / d(G[S[0]], G[S[0]]);
    } else if (S.size() == 2) {
      const double a = d(G[S[0]], G[S[0]]), b = d(G[S[0]], G[S[1]]), c = d(G[S[1]], G[S[1]]);
      const double det = a * c - b * b;
      if (std::fabs(det) < 1e-12 * a * c) continue;
      const double r0 = -d(G[S[0]], g), r1 = -d(G[S[1]], g);
      v[0] = (c * r0 - b * r1) / det;
      v[1] = (a * r1 - b * r0) / det;
    }
    if (std::any_of(v.begin(), v.end(), [](double x) { return x < 0; })) continue;
    std::vector<double> z(g.begin(), g.end());
    for (std::size_t s = 0; s < S.size(); ++s)
      for (int i = 0; i < n; ++i) z[i] += v[s] * G[S[s]][i];
    bool feasible = true;
    for (int k = 0; k < K; ++k) feasible = feasible && d(G[k], z) >= -1e-9 * std::sqrt(d(G[k], G[k]) * d(g, g));
    if (!feasible) continue;
    double dist = 0;
    for (int i = 0; i < n; ++i) dist += (z[i] - g[i]) * (z[i] - g[i]);
    if (dist < best_dist) {
      best_dist = dist;
      best = z;
    }
  }
  return best;
}

}  // namespace gemft::testing
