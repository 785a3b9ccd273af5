#include <cmath>
#include <sstream>

#include "gemft/gem.hpp"

namespace gemft {

namespace {

void check_dims(std::span<const float> g, const GradientMatrix& G, const char* what) {
  for (std::size_t k = 0; k < G.size(); ++k)
    if (G[k].size() != g.size()) {
      std::ostringstream msg;
      msg << what << ": constraint " << k << " has dimension " << G[k].size() << ", gradient has " << g.size();
      throw ShapeError(msg.str());
    }
}

}  // namespace

double normalized_inner(std::span<const float> a, std::span<const float> gk, double g_norm) {
  const double denom = g_norm * norm(gk);
  return denom > 0 ? dot(a, gk) / denom : 0.0;
}

std::vector<int> detect_violations(std::span<const float> g, const GradientMatrix& G, double margin) {
  if (margin < 0) throw ConfigError("GEM margin must be non-negative");
  check_dims(g, G, "detect_violations");
  std::vector<int> out;
  for (std::size_t k = 0; k < G.size(); ++k)
    if (dot(g, G[k]) < -margin) out.push_back(static_cast<int>(k));
  return out;
}

GradientVector project_single(std::span<const float> g, std::span<const float> gk) {
  if (g.size() != gk.size()) throw ShapeError("project_single: dimension mismatch");
  const double kk = dot(gk, gk);
  if (!(kk > 0)) throw NumericError("project_single: zero-norm constraint gradient");
  const double c = dot(g, gk) / kk;
  GradientVector out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = static_cast<float>(g[i] - c * gk[i]);
  return out;
}

ProjectionResult project_dual_qp(std::span<const float> g, const GradientMatrix& G, const QpOptions& opt) {
  check_dims(g, G, "project_dual_qp");
  const int K = static_cast<int>(G.size());
  if (K == 0) throw ShapeError("project_dual_qp: no constraints");
  std::vector<double> Q(static_cast<std::size_t>(K) * K), p(K);
  bool all_zero = true;
  for (int a = 0; a < K; ++a) {
    p[a] = dot(G[a], g);
    for (int b = a; b < K; ++b) Q[a * K + b] = Q[b * K + a] = dot(G[a], G[b]);
    all_zero = all_zero && Q[a * K + a] == 0.0;
  }
  if (all_zero) throw NumericError("project_dual_qp: every constraint gradient is zero");

  ProjectionResult r;
  r.violated = detect_violations(g, G);
  r.dual.assign(K, 0.0);
  std::vector<double>& v = r.dual;
  double change = 0.0;
  for (r.sweeps = 1; r.sweeps <= opt.max_sweeps; ++r.sweeps) {
    change = 0.0;
    for (int a = 0; a < K; ++a) {
      if (Q[a * K + a] == 0.0) continue;
      double grad = p[a];
      for (int b = 0; b < K; ++b) grad += Q[a * K + b] * v[b];
      const double next = std::max(0.0, v[a] - grad / Q[a * K + a]);
      change = std::max(change, std::fabs(next - v[a]));
      v[a] = next;
    }
    if (change <= opt.tolerance) break;
  }
  if (r.sweeps > opt.max_sweeps) {
    std::ostringstream msg;
    msg << "project_dual_qp: no convergence after " << opt.max_sweeps << " sweeps (last change " << change << ")";
    throw NumericError(msg.str());
  }

  r.projected.resize(g.size());
  double dist2 = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    double z = g[i];
    for (int a = 0; a < K; ++a) z += v[a] * G[a][i];
    r.projected[i] = static_cast<float>(z);
    dist2 += (z - g[i]) * (z - g[i]);
  }
  r.distance = std::sqrt(dist2);
  return r;
}

}  // namespace gemft
