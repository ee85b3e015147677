#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <span>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "edgecause/ergm.hpp"
#include "edgecause/error.hpp"
#include "edgecause/estimators.hpp"
#include "edgecause/intervention.hpp"
#include "edgecause/netstats.hpp"
#include "edgecause/network.hpp"
#include "edgecause/parallel.hpp"
#include "edgecause/rng.hpp"

namespace edgecause {

/// lambda in {-log 2, -log 1.5, 0, log 1.5, log 2}.
inline std::vector<double> default_lambda_grid() {
  return {-std::log(2.0), -std::log(1.5), 0.0, std::log(1.5), std::log(2.0)};
}

enum class Scenario { Bernoulli, LocalDependence };

inline const char* scenario_name(Scenario s) { return s == Scenario::Bernoulli ? "bernoulli" : "localdep"; }

enum class TruthMode { Auto, Exact, MonteCarlo };

struct DgpConfig {
  std::size_t n = 300;
  std::size_t l = 3;
  std::uint64_t seed = 1;
  std::vector<double> lambda_grid = default_lambda_grid();
  Scenario scenario = Scenario::Bernoulli;
  std::size_t reps = 1000;
  std::size_t block_mean_size = 50;
  double cutoff = 0.2;
  bool nbhd_includes_self = true;

  // Generating parameters. Within-block (or global) terms: edges, nodecov x1,
  // nodecov x2, and for the local-dependence scenario gwesp(decay).
  std::vector<double> eta = {-1.5, 0.5, -0.5};
  double gwesp_coef = 0.5;
  double gwesp_decay = 0.3;
  std::vector<double> eta_between = {-1.5, 0.5, -0.5};

  /// Branch (a): refit eta in every replication.
  bool refit = true;
  FitConfig refit_config = [] {
    FitConfig f;
    f.draws = 2000;
    return f;
  }();
  std::size_t denominator_draws = 20000;
  TruthMode truth_mode = TruthMode::Auto;
  std::size_t truth_draws = 1000000;
  double level = 0.95;
  std::size_t threads = 1;

  void validate() const {
    if (l < 1 || n < l) throw ValidationError("need n >= l >= 1");
    if (reps < 1) throw ValidationError("need reps >= 1");
    if (lambda_grid.empty()) throw ValidationError("lambda grid is empty");
    for (double v : lambda_grid)
      if (!std::isfinite(v)) throw ValidationError("lambda grid contains a non-finite value");
    if (eta.size() != 3 || eta_between.size() != 3) throw ValidationError("generating parameter vectors need 3 entries");
    if (scenario == Scenario::LocalDependence && block_mean_size < 1) throw ValidationError("block size must be positive");
  }
};

/// Fixed design: locations, covariates, frozen potential outcomes, the true
/// model and the neighborhood structures.
struct SyntheticStudy {
  DgpConfig cfg;
  std::vector<double> loc_x, loc_y;
  std::shared_ptr<const CovariateTable> covariates;
  std::vector<double> noise;
  /// Y_i(a_i) = baseline_i + sum_{j in N_i, j != i} a_ij edge_effect_j.
  std::vector<double> baseline;
  std::vector<double> edge_effect;
  DistanceMatrix distances;
  std::shared_ptr<const RestrictedSpace> space;
  NeighborhoodSystem nbhds;
  DependenceSystem dep;
  std::vector<int> blocks;
  std::optional<ErgmModel> model;

  std::size_t size() const { return baseline.size(); }

  double outcome(std::size_t i, std::uint64_t code) const {
    const auto& m = nbhds.members(i);
    double y = baseline[i];
    for (std::size_t k = 1; k < m.size(); ++k)
      if ((code >> (k - 1)) & 1ULL) y += edge_effect[m[k]];
    return y;
  }

  std::vector<double> outcomes(const Network& net) const {
    std::vector<double> y(size());
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& m = nbhds.members(i);
      y[i] = baseline[i];
      for (std::size_t k = 1; k < m.size(); ++k)
        if (net.has_edge(i, m[k])) y[i] += edge_effect[m[k]];
    }
    return y;
  }

  /// Digest of the potential-outcome ingredients.
  std::uint64_t outcome_digest() const {
    std::uint64_t h = fnv1a("outcomes");
    auto mix = [&](double v) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = splitmix64(h ^ bits);
    };
    for (double v : baseline) mix(v);
    for (double v : edge_effect) mix(v);
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j : nbhds.members(i)) h = splitmix64(h ^ j);
    return h;
  }
};

inline SyntheticStudy generate_dgp(const DgpConfig& cfg) {
  cfg.validate();
  SyntheticStudy s;
  s.cfg = cfg;
  const std::size_t n = cfg.n;

  {
    Rng rng = make_rng(cfg.seed, "locations");
    s.loc_x.resize(n);
    s.loc_y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      s.loc_x[i] = uniform01(rng);
      s.loc_y[i] = uniform01(rng);
    }
  }
  std::vector<double> x1(n), x2(n);
  {
    Rng rng = make_rng(cfg.seed, "covariates");
    std::normal_distribution<double> normal;
    for (std::size_t i = 0; i < n; ++i) {
      x1[i] = normal(rng);
      x2[i] = normal(rng);
    }
  }
  {
    Rng rng = make_rng(cfg.seed, "noise");
    std::normal_distribution<double> normal;
    s.noise.resize(n);
    for (double& e : s.noise) e = normal(rng);
  }
  s.baseline.resize(n);
  s.edge_effect.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.baseline[i] = 1.0 + 2.0 * x1[i] + 1.5 * x2[i] + s.noise[i];
    s.edge_effect[i] = x1[i] + x2[i];
  }
  auto cov = std::make_shared<CovariateTable>(n);
  cov->add_column("x1", x1);
  cov->add_column("x2", x2);
  s.covariates = cov;

  s.distances = DistanceMatrix::euclidean(s.loc_x, s.loc_y);
  s.space = std::make_shared<RestrictedSpace>(eligibility_from_distance(s.distances, cfg.cutoff));

  StatisticSpec spec;
  spec.terms = {Term::edges(), Term::nodecov(0), Term::nodecov(1)};
  if (cfg.scenario == Scenario::Bernoulli) {
    s.nbhds = knn_neighborhoods(s.distances, cfg.l, cfg.nbhd_includes_self);
    s.dep = dependence_from_overlap(s.nbhds);
    Eigen::VectorXd eta = Eigen::Map<const Eigen::VectorXd>(cfg.eta.data(), 3);
    s.model.emplace(spec, eta, s.space, s.covariates);
  } else {
    const auto blocks = static_cast<int>(std::max<long>(2, std::lround(static_cast<double>(n) / static_cast<double>(cfg.block_mean_size))));
    Rng rng = make_rng(cfg.seed, "blocks");
    std::vector<int> raw(n);
    for (auto& b : raw) b = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(blocks)));
    // Consecutive labels over the non-empty blocks.
    std::map<int, int> relabel;
    for (int b : raw) relabel.try_emplace(b, 0);
    int next = 0;
    for (auto& kv : relabel) kv.second = next++;
    s.blocks.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.blocks[i] = relabel[raw[i]];

    s.nbhds = knn_neighborhoods(s.distances, cfg.l, cfg.nbhd_includes_self, s.blocks);
    s.dep = dependence_from_blocks(s.blocks);
    spec.terms.push_back(Term::gwesp(cfg.gwesp_decay));
    spec.terms.push_back(Term::between_edges());
    spec.terms.push_back(Term::between_nodecov(0));
    spec.terms.push_back(Term::between_nodecov(1));
    Eigen::VectorXd eta(7);
    eta << cfg.eta[0], cfg.eta[1], cfg.eta[2], cfg.gwesp_coef, cfg.eta_between[0], cfg.eta_between[1],
        cfg.eta_between[2];
    s.model.emplace(spec, eta, s.space, s.covariates, s.blocks);
  }
  return s;
}

/// Exact marginal laws of every A_i: product form for dyad-independent models
/// (each unit's support is enumerated), full enumeration otherwise.
inline std::vector<LocalDistribution> exact_local_marginals(const ErgmModel& model, const NeighborhoodSystem& nbhds) {
  const std::size_t n = model.units();
  std::vector<LocalDistribution> out;
  out.reserve(n);
  if (!model.dyad_independent()) {
    const auto exact = exact_distribution(model);
    for (std::size_t i = 0; i < n; ++i) out.push_back(exact_local_marginal(exact, nbhds, i));
    return out;
  }
  const auto p = dyad_probabilities(model);
  const auto& dyads = model.space().dyads();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = nbhds.members(i);
    if (m.size() > kMaxLocalMembers) throw ValidationError("neighborhood too large for exact enumeration");
    std::vector<std::pair<std::size_t, double>> bits;  // local bit, edge probability
    for (std::size_t k = 0; k < m.size(); ++k)
      for (std::size_t l = k + 1; l < m.size(); ++l) {
        Dyad d{std::min(m[k], m[l]), std::max(m[k], m[l])};
        auto it = std::lower_bound(dyads.begin(), dyads.end(), d);
        if (it != dyads.end() && *it == d)
          bits.emplace_back(pair_index(k, l, m.size()), p[static_cast<std::size_t>(it - dyads.begin())]);
      }
    if (bits.size() > kMaxEnumerableDyads)
      throw ValidationError("exact local law refused: unit " + std::to_string(i) + " has " +
                            std::to_string(bits.size()) + " eligible dyads in its neighborhood");
    LocalDistribution dist;
    dist.owner = i;
    dist.members = m;
    std::vector<std::pair<std::uint64_t, double>> items;
    for (std::uint64_t mask = 0; mask < (1ULL << bits.size()); ++mask) {
      std::uint64_t code = 0;
      double prob = 1.0;
      for (std::size_t b = 0; b < bits.size(); ++b) {
        const bool on = (mask >> b) & 1ULL;
        prob *= on ? bits[b].second : 1.0 - bits[b].second;
        if (on) code |= (1ULL << bits[b].first);
      }
      items.emplace_back(code, prob);
    }
    std::sort(items.begin(), items.end());
    for (const auto& [c, q] : items) {
      dist.codes.push_back(c);
      dist.prob.push_back(q);
    }
    out.push_back(std::move(dist));
  }
  return out;
}

struct TruthValue {
  double value = 0.0;
  double mcse = 0.0;
};

/// theta^delta = n^{-1} sum_i sum_{a_i} Y_i(a_i) P(A_i^delta = a_i) for every lambda.
inline double theta_from_marginals(const SyntheticStudy& study, const std::vector<LocalDistribution>& locals,
                                   double lambda) {
  double total = 0.0;
  for (std::size_t i = 0; i < study.size(); ++i) {
    const auto q = tilt_distribution(locals[i], lambda);
    double yi = 0.0;
    for (std::size_t k = 0; k < q.codes.size(); ++k) yi += q.prob[k] * study.outcome(i, q.codes[k]);
    total += yi;
  }
  return total / static_cast<double>(study.size());
}

/// True estimands. Exact mode enumerates local supports; Monte Carlo mode
/// reweights local draws from the untilted model and reports a batch-means
/// standard error over 20 batches; draws are spaced D/10 steps apart and the
/// batch means absorb the remaining autocorrelation. Auto uses exact mode when
/// it is feasible.
inline std::vector<TruthValue> true_theta(const SyntheticStudy& study, std::span<const double> lambdas,
                                          TruthMode mode = TruthMode::Auto, std::size_t draws = 1000000,
                                          std::uint64_t seed = 0) {
  const ErgmModel& model = *study.model;
  std::vector<TruthValue> out(lambdas.size());
  if (mode != TruthMode::MonteCarlo) {
    const bool feasible = model.dyad_independent() || model.space().dyads().size() <= kMaxEnumerableDyads;
    if (feasible) {
      const auto locals = exact_local_marginals(model, study.nbhds);
      for (std::size_t a = 0; a < lambdas.size(); ++a) out[a] = {theta_from_marginals(study, locals, lambdas[a]), 0.0};
      return out;
    }
    if (mode == TruthMode::Exact)
      throw ValidationError("exact truth refused: model has " + std::to_string(model.space().dyads().size()) +
                            " dependent eligible dyads");
  }

  constexpr std::size_t kBatches = 20;
  if (draws < kBatches) throw ValidationError("Monte Carlo truth needs at least 20 draws");
  const std::size_t n = study.size();
  const std::size_t per_batch = draws / kBatches;
  std::vector<std::vector<std::unordered_map<std::uint64_t, double>>> counts(
      kBatches, std::vector<std::unordered_map<std::uint64_t, double>>(n));
  const std::size_t D = model.space().dyads().size();
  SamplerConfig sc{10 * D, std::max<std::size_t>(1, D / 10), per_batch * kBatches, derive_seed(seed ? seed : study.cfg.seed, "truth")};
  std::size_t m = 0;
  const bool ran = run_chain(model, sc, std::nullopt, [&](const Network& net, const Eigen::VectorXd&) {
    auto& batch = counts[m++ / per_batch];
    for (std::size_t i = 0; i < n; ++i) batch[i][local_code(net, study.nbhds.members(i))] += 1.0;
  });
  if (!ran)
    for (auto& batch : counts)
      for (auto& c : batch) c[0] = static_cast<double>(per_batch);

  auto to_locals = [&](const std::vector<std::unordered_map<std::uint64_t, double>>& c) {
    std::vector<LocalDistribution> locals;
    for (std::size_t i = 0; i < n; ++i)
      locals.push_back(detail::from_counts(i, study.nbhds.members(i), c[i], per_batch));
    return locals;
  };
  std::vector<std::unordered_map<std::uint64_t, double>> pooled(n);
  for (const auto& batch : counts)
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& [code, w] : batch[i]) pooled[i][code] += w;
  const auto all = to_locals(pooled);
  std::vector<std::vector<double>> batch_theta(lambdas.size());
  for (const auto& batch : counts) {
    const auto locals = to_locals(batch);
    for (std::size_t a = 0; a < lambdas.size(); ++a) batch_theta[a].push_back(theta_from_marginals(study, locals, lambdas[a]));
  }
  for (std::size_t a = 0; a < lambdas.size(); ++a) {
    out[a].value = theta_from_marginals(study, all, lambdas[a]);
    double mean = 0.0;
    for (double t : batch_theta[a]) mean += t;
    mean /= kBatches;
    double ss = 0.0;
    for (double t : batch_theta[a]) ss += (t - mean) * (t - mean);
    out[a].mcse = std::sqrt(ss / (kBatches - 1) / kBatches);
  }
  return out;
}

/// One treatment draw from the true model: a fresh chain from the empty
/// network run for 10 sweeps of the eligible dyads.
inline Network draw_treatment(const ErgmModel& model, std::uint64_t seed) {
  const std::size_t D = model.space().dyads().size();
  MhSampler chain(model, Network(model.units()), seed);
  chain.advance(10 * D);
  return chain.state();
}

struct SummaryRow {
  double lambda = 0.0;
  EstimatorKind kind = EstimatorKind::Hajek;
  double theta_true = 0.0;
  double theta_true_mcse = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
  double mean_se_hat = 0.0;
  double true_se_refit = std::numeric_limits<double>::quiet_NaN();
  double true_se_fixed = 0.0;
  double coverage = 0.0;
  std::size_t excluded_reps = 0;
  std::size_t used_reps = 0;
  /// Monte Carlo standard error of `bias` across replications.
  double bias_mcse = 0.0;
};

struct StudySummary {
  Scenario scenario = Scenario::Bernoulli;
  std::size_t n = 0;
  std::size_t l = 0;
  std::vector<SummaryRow> rows;
  std::map<std::string, std::string> metadata;

  const SummaryRow& row(double lambda, EstimatorKind kind) const {
    for (const auto& r : rows)
      if (r.kind == kind && std::abs(r.lambda - lambda) < 1e-12) return r;
    throw ValidationError("no summary row for the requested lambda");
  }
};

struct ReplicationResult {
  std::vector<EstimateReport> fixed;
  std::vector<EstimateReport> refit;
  bool refit_ok = false;
};

/// Full simulation: per replication, draw A from the true model, compute
/// observed outcomes from the frozen potential outcomes, then estimate with
/// (b) the true eta and, when cfg.refit is set, (a) a refitted eta.
/// Bias, RMSE, mean estimated SE and coverage come from branch (a) when it
/// runs and from branch (b) otherwise.
inline StudySummary run_study(const DgpConfig& cfg) {
  const SyntheticStudy study = generate_dgp(cfg);
  const ErgmModel& model = *study.model;
  const std::uint64_t digest = study.outcome_digest();
  const auto& grid = cfg.lambda_grid;

  const auto truth = true_theta(study, grid, cfg.truth_mode, cfg.truth_draws, derive_seed(cfg.seed, "truth"));
  DenominatorConfig dc{DenominatorMethod::Auto, cfg.denominator_draws, derive_seed(cfg.seed, "denominators-true")};
  const auto true_denoms = compute_denominators(model, study.nbhds, grid, dc);
  const OmegaMatrix omega = omega_matrix(study.dep);

  auto estimate_all = [&](const Network& net, const std::vector<std::vector<DenominatorEstimate>>& denoms,
                          std::size_t mc) {
    const auto y = study.outcomes(net);
    const auto e = local_edge_counts(net, study.nbhds);
    std::vector<WeightSet> ws;
    for (std::size_t a = 0; a < grid.size(); ++a) ws.push_back(ipw_weights(e, grid[a], denoms[a], mc));
    return report(grid, ws, y, omega, cfg.level);
  };
  const std::size_t mc_true = model.dyad_independent() ? 0 : cfg.denominator_draws;

  std::vector<ReplicationResult> reps(cfg.reps);
  parallel_for(cfg.reps, cfg.threads, [&](std::size_t r) {
    const Network net = draw_treatment(model, derive_seed(cfg.seed, "treatment", r));
    if (study.outcome_digest() != digest) throw std::logic_error("potential outcomes changed between replications");
    ReplicationResult& out = reps[r];
    out.fixed = estimate_all(net, true_denoms, mc_true);
    if (!cfg.refit) return;
    try {
      FitConfig fc = cfg.refit_config;
      fc.seed = derive_seed(cfg.seed, "refit", r);
      const FitResult fit = mcmc_mle(model, net, fc);
      const ErgmModel fitted = model.with_eta(fit.eta_hat);
      DenominatorConfig rdc{DenominatorMethod::Auto, cfg.denominator_draws, derive_seed(cfg.seed, "denominators-refit", r)};
      const auto denoms = compute_denominators(fitted, study.nbhds, grid, rdc);
      out.refit = estimate_all(net, denoms, fitted.dyad_independent() ? 0 : cfg.denominator_draws);
      out.refit_ok = true;
    } catch (const NumericalError&) {
      out.refit_ok = false;
    }
  });

  StudySummary summary;
  summary.scenario = cfg.scenario;
  summary.n = cfg.n;
  summary.l = cfg.l;
  summary.metadata["reps"] = std::to_string(cfg.reps);
  summary.metadata["refit"] = cfg.refit ? "true" : "false";
  summary.metadata["refit_draws"] = std::to_string(cfg.refit_config.draws);
  summary.metadata["denominator_draws"] = std::to_string(cfg.denominator_draws);
  summary.metadata["eligible_dyads"] = std::to_string(model.space().dyads().size());

  auto sd = [](const std::vector<double>& v) {
    if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
  };

  std::size_t excluded = 0;
  for (const auto& r : reps) excluded += (cfg.refit && !r.refit_ok) ? 1 : 0;

  std::size_t row_index = 0;
  for (std::size_t a = 0; a < grid.size(); ++a) {
    for (EstimatorKind kind : {EstimatorKind::HorvitzThompson, EstimatorKind::Hajek}) {
      SummaryRow row;
      row.lambda = grid[a];
      row.kind = kind;
      row.theta_true = truth[a].value;
      row.theta_true_mcse = truth[a].mcse;
      row.excluded_reps = excluded;
      std::vector<double> fixed_est, refit_est, primary_est, primary_se;
      std::size_t covered = 0;
      for (const auto& r : reps) {
        const auto& f = r.fixed[row_index];
        fixed_est.push_back(f.estimate);
        if (r.refit_ok) refit_est.push_back(r.refit[row_index].estimate);
        const EstimateReport* p = cfg.refit ? (r.refit_ok ? &r.refit[row_index] : nullptr) : &f;
        if (!p) continue;
        primary_est.push_back(p->estimate);
        primary_se.push_back(p->se);
        covered += (p->ci_low <= row.theta_true && row.theta_true <= p->ci_high) ? 1 : 0;
      }
      const double used = static_cast<double>(primary_est.size());
      row.used_reps = primary_est.size();
      if (used > 0) {
        double sum = 0.0, sq = 0.0, se_sum = 0.0;
        for (std::size_t k = 0; k < primary_est.size(); ++k) {
          const double err = primary_est[k] - row.theta_true;
          sum += err;
          sq += err * err;
          se_sum += primary_se[k];
        }
        row.bias = sum / used;
        row.rmse = std::sqrt(sq / used);
        row.mean_se_hat = se_sum / used;
        row.coverage = static_cast<double>(covered) / used;
        row.bias_mcse = sd(primary_est) / std::sqrt(used);
      } else {
        row.bias = row.rmse = row.mean_se_hat = row.coverage = std::numeric_limits<double>::quiet_NaN();
      }
      row.true_se_fixed = sd(fixed_est);
      if (cfg.refit) row.true_se_refit = sd(refit_est);
      summary.rows.push_back(row);
      ++row_index;
    }
  }
  return summary;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void emit_summary(const StudySummary& summary, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write summary to '" + path + "'");
  out << "scenario,n,l,lambda,estimator,bias,rmse,mean_se_hat,true_se_refit,true_se_fixed,coverage,excluded_reps\n";
  for (const auto& r : summary.rows) {
    out << scenario_name(summary.scenario) << ',' << summary.n << ',' << summary.l << ',' << format_double(r.lambda)
        << ',' << estimator_name(r.kind) << ',' << format_double(r.bias) << ',' << format_double(r.rmse) << ','
        << format_double(r.mean_se_hat) << ',' << format_double(r.true_se_refit) << ','
        << format_double(r.true_se_fixed) << ',' << format_double(r.coverage) << ',' << r.excluded_reps << '\n';
  }
  if (!out) throw ValidationError("failed writing summary to '" + path + "'");
}

}  // namespace edgecause
