#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "edgecause/ergm.hpp"
#include "edgecause/error.hpp"
#include "edgecause/network.hpp"

namespace edgecause {

/// Stochastic intervention that shifts the log odds of adding one edge to a
/// local treatment by lambda.
struct InterventionPolicy {
  double lambda = 0.0;

  explicit InterventionPolicy(double l) : lambda(l) {
    if (!std::isfinite(l)) throw ValidationError("intervention lambda must be finite");
  }
};

/// q(a) ∝ p(a) exp{e(a) lambda}, computed in log space. Zero-probability
/// values stay at zero.
inline LocalDistribution tilt_distribution(const LocalDistribution& dist, double lambda) {
  double total = 0.0;
  for (double p : dist.prob) total += p;
  if (total <= 0.0) throw ValidationError("cannot tilt an all-zero distribution");
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("distribution does not sum to one");
  if (lambda == 0.0) return dist;
  std::vector<double> logq(dist.prob.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < dist.prob.size(); ++k)
    if (dist.prob[k] > 0.0)
      logq[k] = std::log(dist.prob[k]) + static_cast<double>(LocalDistribution::edges(dist.codes[k])) * lambda;
  const double lse = log_sum_exp(logq);
  LocalDistribution out = dist;
  for (std::size_t k = 0; k < out.prob.size(); ++k) out.prob[k] = dist.prob[k] > 0.0 ? std::exp(logq[k] - lse) : 0.0;
  return out;
}

struct DenominatorEstimate {
  double value = 1.0;
  double mcse = 0.0;
};

/// (1/M) sum_m exp{e_m lambda} with its Monte Carlo standard error.
inline DenominatorEstimate denominator_estimate(std::span<const std::size_t> edge_counts, double lambda) {
  if (edge_counts.empty()) throw ValidationError("denominator estimate needs at least one draw");
  const double m = static_cast<double>(edge_counts.size());
  std::vector<double> terms(edge_counts.size());
  for (std::size_t k = 0; k < edge_counts.size(); ++k) terms[k] = static_cast<double>(edge_counts[k]) * lambda;
  DenominatorEstimate out;
  out.value = std::exp(log_sum_exp(terms) - std::log(m));
  if (edge_counts.size() > 1) {
    double ss = 0.0;
    for (double t : terms) ss += (std::exp(t) - out.value) * (std::exp(t) - out.value);
    out.mcse = std::sqrt(ss / (m - 1.0) / m);
  }
  return out;
}

/// E[exp{e(A_i) lambda}] under a local distribution; the standard error is
/// reported when the distribution is empirical (samples > 0).
inline DenominatorEstimate denominator_from_distribution(const LocalDistribution& dist, double lambda) {
  if (lambda == 0.0) return {1.0, 0.0};
  std::vector<double> terms;
  for (std::size_t k = 0; k < dist.prob.size(); ++k)
    if (dist.prob[k] > 0.0)
      terms.push_back(std::log(dist.prob[k]) + static_cast<double>(LocalDistribution::edges(dist.codes[k])) * lambda);
  DenominatorEstimate out;
  out.value = std::exp(log_sum_exp(terms));
  if (dist.samples > 1) {
    double second = 0.0;
    for (std::size_t k = 0; k < dist.prob.size(); ++k)
      second += dist.prob[k] * std::exp(2.0 * static_cast<double>(LocalDistribution::edges(dist.codes[k])) * lambda);
    const double m = static_cast<double>(dist.samples);
    out.mcse = std::sqrt(std::max(0.0, second - out.value * out.value) * m / (m - 1.0) / m);
  }
  return out;
}

struct WeightSet {
  std::vector<double> w;
  std::vector<double> denominator;
  std::vector<double> denominator_mcse;
  std::size_t mc_samples = 0;

  double max_denominator_mcse() const {
    double m = 0.0;
    for (double v : denominator_mcse) m = std::max(m, v);
    return m;
  }
};

/// w_i = exp{e(A_i) lambda} / D_i.
inline WeightSet ipw_weights(std::span<const std::size_t> observed_edges, double lambda,
                             std::span<const DenominatorEstimate> denominators, std::size_t mc_samples = 0) {
  if (observed_edges.size() != denominators.size()) throw ValidationError("weights: dimension mismatch");
  WeightSet out;
  out.mc_samples = mc_samples;
  const std::size_t n = observed_edges.size();
  out.w.resize(n);
  out.denominator.resize(n);
  out.denominator_mcse.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = denominators[i].value;
    if (!(d > 0.0) || !std::isfinite(d))
      throw ValidationError("nonpositive denominator for unit " + std::to_string(i));
    out.w[i] = std::exp(static_cast<double>(observed_edges[i]) * lambda - std::log(d));
    out.denominator[i] = d;
    out.denominator_mcse[i] = denominators[i].mcse;
  }
  return out;
}

/// Observed local edge counts e(A_i) for every unit.
inline std::vector<std::size_t> local_edge_counts(const Network& net, const NeighborhoodSystem& nbhds) {
  std::vector<std::size_t> e(nbhds.size(), 0);
  for (std::size_t i = 0; i < nbhds.size(); ++i) {
    const auto& m = nbhds.members(i);
    for (std::size_t k = 0; k < m.size(); ++k)
      for (std::size_t l = k + 1; l < m.size(); ++l) e[i] += net.has_edge(m[k], m[l]) ? 1 : 0;
  }
  return e;
}

enum class DenominatorMethod { Auto, MonteCarlo, Exact };

struct DenominatorConfig {
  DenominatorMethod method = DenominatorMethod::Auto;
  std::size_t mc_samples = 20000;
  std::uint64_t seed = 1;
};

/// Per-lambda, per-unit denominators E[exp{e(A_i) lambda}] under `model`.
/// Exact uses the product form for dyad-independent models and full
/// enumeration otherwise; MonteCarlo reuses one chain of mc_samples draws for
/// all units and all lambdas; Auto picks the product form when available.
inline std::vector<std::vector<DenominatorEstimate>> compute_denominators(const ErgmModel& model,
                                                                          const NeighborhoodSystem& nbhds,
                                                                          std::span<const double> lambdas,
                                                                          const DenominatorConfig& cfg) {
  const std::size_t n = model.units();
  if (nbhds.size() != n) throw ValidationError("neighborhood system size differs from model");
  std::vector<std::vector<DenominatorEstimate>> out(lambdas.size(), std::vector<DenominatorEstimate>(n));

  const bool product = model.dyad_independent() && cfg.method != DenominatorMethod::MonteCarlo;
  if (product) {
    const auto p = dyad_probabilities(model);
    const auto& dyads = model.space().dyads();
    std::vector<std::vector<double>> probs(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& m = nbhds.members(i);
      for (std::size_t k = 0; k < m.size(); ++k)
        for (std::size_t l = k + 1; l < m.size(); ++l) {
          Dyad d{std::min(m[k], m[l]), std::max(m[k], m[l])};
          auto it = std::lower_bound(dyads.begin(), dyads.end(), d);
          if (it != dyads.end() && *it == d) probs[i].push_back(p[static_cast<std::size_t>(it - dyads.begin())]);
        }
    }
    for (std::size_t a = 0; a < lambdas.size(); ++a) {
      const double shift = std::expm1(lambdas[a]);
      for (std::size_t i = 0; i < n; ++i) {
        double logd = 0.0;
        for (double q : probs[i]) logd += std::log1p(q * shift);
        out[a][i] = {std::exp(logd), 0.0};
      }
    }
    return out;
  }

  std::vector<LocalDistribution> locals;
  if (cfg.method == DenominatorMethod::Exact) {
    const auto exact = exact_distribution(model);
    for (std::size_t i = 0; i < n; ++i) locals.push_back(exact_local_marginal(exact, nbhds, i));
  } else {
    const std::size_t D = model.space().dyads().size();
    SamplerConfig sc{10 * D, std::max<std::size_t>(1, D), cfg.mc_samples, derive_seed(cfg.seed, "denominators")};
    locals = local_marginals(model, nbhds, sc);
  }
  for (std::size_t a = 0; a < lambdas.size(); ++a)
    for (std::size_t i = 0; i < n; ++i) out[a][i] = denominator_from_distribution(locals[i], lambdas[a]);
  return out;
}

}  // namespace edgecause
