#pragma once

// Brute-force reference implementations used only by the tests. They share no
// code paths with the library beyond the data containers.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "edgecause/edgecause.hpp"

namespace oracle {

using edgecause::CovariateTable;
using edgecause::Network;
using edgecause::StatisticSpec;
using edgecause::TermKind;

inline double binom(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  double r = 1.0;
  for (std::size_t t = 1; t <= k; ++t) r = r * static_cast<double>(n - k + t) / static_cast<double>(t);
  return r;
}

using Adj = std::vector<std::vector<int>>;

inline Adj dense(const Network& net) {
  Adj a(net.size(), std::vector<int>(net.size(), 0));
  for (std::size_t i = 0; i < net.size(); ++i)
    for (std::size_t j = 0; j < net.size(); ++j) a[i][j] = net.has_edge(i, j) ? 1 : 0;
  return a;
}

/// Statistics by direct loops. Gwesp uses the literal alternating binomial
/// sum 3*triangles + sum_{k>=2} (-e^tau)^{-(k-1)} sum_{i<j} a_ij C(L_ij, k).
/// With blocks, non-between terms see only within-block dyads and partners.
inline std::vector<double> statistics(const Network& net, const CovariateTable& cov, const StatisticSpec& spec,
                                      const std::vector<int>& blocks = {}) {
  const std::size_t n = net.size();
  const Adj a = dense(net);
  auto same = [&](std::size_t i, std::size_t j) { return blocks.empty() || blocks[i] == blocks[j]; };
  std::vector<double> out;
  for (const auto& t : spec.terms) {
    double s = 0.0;
    const bool between = t.kind == TermKind::BetweenEdges || t.kind == TermKind::BetweenNodeCov;
    if (t.kind == TermKind::Gwesp) {
      double tri = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          for (std::size_t k = j + 1; k < n; ++k)
            if (same(i, j) && same(i, k) && a[i][j] && a[i][k] && a[j][k]) tri += 1.0;
      s = 3.0 * tri;
      for (std::size_t k = 2; k + 2 <= n; ++k) {
        double inner = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = i + 1; j < n; ++j) {
            if (!a[i][j] || !same(i, j)) continue;
            std::size_t L = 0;
            for (std::size_t m = 0; m < n; ++m)
              if (m != i && m != j && same(i, m) && a[i][m] && a[m][j]) ++L;
            inner += binom(L, k);
          }
        s += std::pow(-std::exp(t.decay), -static_cast<double>(k - 1)) * inner;
      }
      out.push_back(s);
      continue;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!a[i][j]) continue;
        if (blocks.empty() ? between : between == same(i, j)) continue;
        const std::size_t p = t.covariate;
        switch (t.kind) {
          case TermKind::Edges:
          case TermKind::BetweenEdges: s += 1.0; break;
          case TermKind::NodeCov:
          case TermKind::BetweenNodeCov: s += cov(i, p) + cov(j, p); break;
          case TermKind::AbsDiff: s += std::abs(cov(i, p) - cov(j, p)); break;
          case TermKind::NodeMatch: s += cov(i, p) == cov(j, p) ? 1.0 : 0.0; break;
          default: break;
        }
      }
    out.push_back(s);
  }
  return out;
}

/// Exact law by enumeration of all subsets of the eligible dyads, scored with
/// the brute-force statistics above. Index = bitmask over space.dyads().
/// Shared-parameter models only.
inline std::vector<double> exact_law(const edgecause::ErgmModel& model) {
  const auto& dyads = model.space().dyads();
  const std::vector<int> blocks(model.blocks().begin(), model.blocks().end());
  const std::size_t count = std::size_t{1} << dyads.size();
  std::vector<double> logw(count);
  double mx = -INFINITY;
  for (std::size_t mask = 0; mask < count; ++mask) {
    Network net(model.units());
    for (std::size_t d = 0; d < dyads.size(); ++d)
      if ((mask >> d) & 1U) net.set_edge(dyads[d].first, dyads[d].second, true);
    const auto g = statistics(net, model.covariates(), model.spec(), blocks);
    double lw = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) lw += model.eta()[static_cast<Eigen::Index>(k)] * g[k];
    logw[mask] = lw;
    mx = std::max(mx, lw);
  }
  double z = 0.0;
  for (double v : logw) z += std::exp(v - mx);
  std::vector<double> p(count);
  for (std::size_t m = 0; m < count; ++m) p[m] = std::exp(logw[m] - mx) / z;
  return p;
}

/// Random network on n units with edge probability q.
inline Network random_network(std::size_t n, double q, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(q);
  Network net(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (coin(rng)) net.set_edge(i, j, true);
  return net;
}

inline CovariateTable random_covariates(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> cat(0, 2);
  std::vector<double> x1(n), x2(n), c(n);
  for (std::size_t i = 0; i < n; ++i) {
    x1[i] = normal(rng);
    x2[i] = normal(rng);
    c[i] = cat(rng);
  }
  CovariateTable cov(n);
  cov.add_column("x1", x1);
  cov.add_column("x2", x2);
  cov.add_column("c", c, true);
  return cov;
}

/// Generic convex maximization by gradient ascent with backtracking, used as
/// an independent check of Newton-type fits.
template <class F, class G>
Eigen::VectorXd gradient_ascent(F f, G grad, Eigen::VectorXd x, int iters = 200000, double tol = 1e-11) {
  double step = 1.0;
  double fx = f(x);
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd g = grad(x);
    if (g.norm() < tol) break;
    for (;;) {
      const Eigen::VectorXd cand = x + step * g;
      const double fc = f(cand);
      if (fc >= fx + 0.25 * step * g.squaredNorm()) {
        x = cand;
        fx = fc;
        step *= 2.0;
        break;
      }
      step *= 0.5;
      if (step < 1e-300) return x;
    }
  }
  return x;
}

}  // namespace oracle
