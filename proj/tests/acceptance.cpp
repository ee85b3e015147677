// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <string>

#include "edgecause/edgecause.hpp"

using namespace edgecause;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const double kLog2 = std::log(2.0);
const double kLog15 = std::log(1.5);

// n = 6, complete eligibility, edges + nodecov x1 + nodecov x2 at (-1.5, 0.5, -0.5).
SyntheticStudy toy_study() {
  DgpConfig cfg;
  cfg.n = 6;
  cfg.l = 3;
  cfg.seed = 2024;
  cfg.cutoff = 2.0;
  return generate_dgp(cfg);
}

Outcome sampler_tv() {
  const auto study = toy_study();
  const ErgmModel& model = *study.model;
  const auto exact = exact_distribution(model);
  SamplerConfig sc{10000, 10, 100000, derive_seed(2024, "acceptance-sampler")};
  std::vector<double> freq(exact.prob.size(), 0.0);
  std::vector<double> edge_freq(exact.dyads.size() + 1, 0.0), edge_exact(exact.dyads.size() + 1, 0.0);
  run_chain(model, sc, std::nullopt, [&](const Network& net, const Eigen::VectorXd&) {
    freq[exact.mask_of(net)] += 1.0;
    edge_freq[net.edge_count()] += 1.0;
  });
  const double draws = static_cast<double>(sc.n_draws);
  double tv = 0.0, floor = 0.0, tv_edges = 0.0;
  for (std::size_t s = 0; s < freq.size(); ++s) {
    tv += std::abs(freq[s] / draws - exact.prob[s]);
    floor += std::sqrt(2.0 * exact.prob[s] * (1.0 - exact.prob[s]) / (std::numbers::pi * draws));
    edge_exact[static_cast<std::size_t>(std::popcount(static_cast<std::uint64_t>(s)))] += exact.prob[s];
  }
  for (std::size_t k = 0; k < edge_freq.size(); ++k) tv_edges += std::abs(edge_freq[k] / draws - edge_exact[k]);
  tv *= 0.5;
  floor *= 0.5;
  tv_edges *= 0.5;
  return {tv <= 0.02, fmt("TV=%.4f over %zu networks (iid sampling floor %.4f; edge-count law TV=%.4f)", tv,
                          exact.prob.size(), floor, tv_edges)};
}

Outcome estimand_oracle() {
  const auto study = toy_study();
  const ErgmModel& model = *study.model;
  const std::vector<double> grid{-kLog2, 0.0, kLog2};
  const auto truth = true_theta(study, grid, TruthMode::Exact);
  const auto denoms = compute_denominators(model, study.nbhds, grid, DenominatorConfig{DenominatorMethod::Exact, 0, 1});
  constexpr std::size_t kDraws = 2000;
  std::vector<std::vector<double>> est(grid.size());
  for (std::size_t r = 0; r < kDraws; ++r) {
    const Network net = draw_treatment(model, derive_seed(2024, "acceptance-estimand", r));
    const auto y = study.outcomes(net);
    const auto e = local_edge_counts(net, study.nbhds);
    for (std::size_t a = 0; a < grid.size(); ++a) est[a].push_back(horvitz_thompson(ipw_weights(e, grid[a], denoms[a]).w, y));
  }
  bool pass = true;
  std::string detail;
  for (std::size_t a = 0; a < grid.size(); ++a) {
    double m = 0.0, ss = 0.0;
    for (double v : est[a]) m += v;
    m /= kDraws;
    for (double v : est[a]) ss += (v - m) * (v - m);
    const double mcse = std::sqrt(ss / (kDraws - 1) / kDraws);
    const double z = (m - truth[a].value) / mcse;
    pass = pass && std::abs(z) <= 3.0;
    detail += fmt("lambda=%+.3f exact=%.5f mean=%.5f z=%+.2f; ", grid[a], truth[a].value, m, z);
  }
  return {pass, detail};
}

Outcome weight_identity() {
  DgpConfig cfg;
  cfg.n = 300;
  cfg.seed = 99;
  bool pass = true;
  std::size_t checked = 0;
  for (Scenario sc : {Scenario::Bernoulli, Scenario::LocalDependence}) {
    cfg.scenario = sc;
    const auto study = generate_dgp(cfg);
    const std::vector<double> grid{0.0};
    const auto denoms = compute_denominators(*study.model, study.nbhds, grid, DenominatorConfig{DenominatorMethod::Auto, 2000, 5});
    for (std::size_t r = 0; r < 5; ++r) {
      const Network net = draw_treatment(*study.model, derive_seed(99, "acceptance-identity", r));
      const auto y = study.outcomes(net);
      const auto ws = ipw_weights(local_edge_counts(net, study.nbhds), 0.0, denoms[0]);
      for (double w : ws.w) pass = pass && w == 1.0;
      double mean = 0.0;
      for (double v : y) mean += v;
      mean /= static_cast<double>(y.size());
      pass = pass && horvitz_thompson(ws.w, y) == mean && hajek(ws.w, y) == mean;
      ++checked;
    }
  }
  return {pass, fmt("%zu treatment draws across both scenarios: all w_i == 1 and HT == Hajek == mean(Y) bit-exactly", checked)};
}

Outcome mle_recovery() {
  DgpConfig cfg;
  cfg.n = 200;
  cfg.seed = 4;
  const auto study = generate_dgp(cfg);
  StatisticSpec spec;
  spec.terms = {Term::edges()};
  Eigen::VectorXd eta(1);
  eta << -1.5;
  const ErgmModel model(spec, eta, study.space, study.covariates);
  const double dyads = static_cast<double>(study.space->dyads().size());
  std::size_t within = 0, failed = 0;
  double worst = 0.0;
  for (std::uint64_t s = 1; s <= 100; ++s) {
    const Network net = draw_treatment(model, derive_seed(s, "acceptance-mle"));
    const double density = static_cast<double>(net.edge_count()) / dyads;
    const double oracle = std::log(density / (1.0 - density));
    FitConfig fc;
    fc.seed = derive_seed(s, "acceptance-mle-fit");
    try {
      const FitResult fit = mcmc_mle(model, net, fc);
      const double z = std::abs(fit.eta_hat[0] - oracle) / fit.se[0];
      worst = std::max(worst, z);
      within += z <= 3.0 ? 1 : 0;
    } catch (const NumericalError&) {
      ++failed;
    }
  }
  return {within >= 95, fmt("%zu/100 seeds within 3 SE of logit(density) (%zu fit failures, max |z|=%.3f, %.0f eligible dyads)",
                            within, failed, worst, dyads)};
}

Outcome variance_equivalence() {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> u;
  std::normal_distribution<double> normal;
  std::size_t ok = 0;
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = rep % 2 ? 50 : 20;
    std::vector<double> x(n), z(n), w(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = u(rng);
      z[i] = u(rng);
      w[i] = std::exp(0.5 * normal(rng));
      y[i] = 1.0 + normal(rng);
    }
    const auto omega = omega_matrix(dependence_from_overlap(knn_neighborhoods(DistanceMatrix::euclidean(x, z), 3)));
    const double theta = horvitz_thompson(w, y);
    const double closed = variance_closed_form(w, y, theta, omega);
    const double boot = wild_bootstrap(w, y, theta, omega, 20000, derive_seed(20, "acceptance-boot", rep));
    const double rel = std::abs(boot - closed) / closed;
    worst = std::max(worst, rel);
    ok += rel <= 0.05 ? 1 : 0;
  }
  return {ok == 10, fmt("%zu/10 instances within 5%% (max relative error %.4f)", ok, worst)};
}

DgpConfig study_config(Scenario sc, std::size_t n, std::size_t reps, bool refit, std::uint64_t seed) {
  DgpConfig cfg;
  cfg.scenario = sc;
  cfg.n = n;
  cfg.l = 3;
  cfg.reps = reps;
  cfg.refit = refit;
  cfg.seed = seed;
  return cfg;
}

std::string rows_text(const StudySummary& s) {
  std::string t;
  for (const auto& r : s.rows)
    if (r.kind == EstimatorKind::Hajek)
      t += fmt("\n      hajek lambda=%+.4f bias=%+.5f rmse=%.5f se_hat=%.5f se_refit=%.5f se_fixed=%.5f cover=%.3f", r.lambda,
               r.bias, r.rmse, r.mean_se_hat, r.true_se_refit, r.true_se_fixed, r.coverage);
  return t;
}

Outcome bernoulli_pattern() {
  const auto s = run_study(study_config(Scenario::Bernoulli, 300, 500, true, 300));
  const auto& h0 = s.row(0.0, EstimatorKind::Hajek);
  const bool a = std::abs(h0.bias) <= h0.rmse / 3.0;
  const bool b = s.row(kLog2, EstimatorKind::Hajek).rmse >= h0.rmse && s.row(-kLog2, EstimatorKind::Hajek).rmse >= h0.rmse;
  bool c = true;
  for (const auto& r : s.rows) c = c && r.mean_se_hat >= 0.95 * r.true_se_refit && r.mean_se_hat >= 0.95 * r.true_se_fixed;
  const bool d = h0.coverage >= 0.93 && s.row(0.0, EstimatorKind::HorvitzThompson).coverage >= 0.93;
  return {a && b && c && d, fmt("(a) %s (b) %s (c) %s (d) %s; excluded refits %zu", a ? "ok" : "FAIL", b ? "ok" : "FAIL",
                                c ? "ok" : "FAIL", d ? "ok" : "FAIL", h0.excluded_reps) +
                                rows_text(s)};
}

Outcome sample_size() {
  const auto small = run_study(study_config(Scenario::Bernoulli, 300, 300, true, 700));
  const auto large = run_study(study_config(Scenario::Bernoulli, 1000, 300, true, 700));
  const double r300 = small.row(kLog15, EstimatorKind::Hajek).rmse;
  const double r1000 = large.row(kLog15, EstimatorKind::Hajek).rmse;
  const double h300 = small.row(kLog15, EstimatorKind::HorvitzThompson).rmse;
  const double h1000 = large.row(kLog15, EstimatorKind::HorvitzThompson).rmse;
  return {r1000 < r300, fmt("Hajek RMSE at log 1.5: n=300 %.5f -> n=1000 %.5f (HT %.5f -> %.5f)", r300, r1000, h300, h1000)};
}

Outcome local_dependence() {
  const auto s = run_study(study_config(Scenario::LocalDependence, 300, 300, false, 800));
  const auto& h0 = s.row(0.0, EstimatorKind::Hajek);
  const bool a = std::abs(h0.bias) <= h0.rmse / 3.0;
  const bool b = s.row(kLog2, EstimatorKind::Hajek).rmse >= h0.rmse && s.row(-kLog2, EstimatorKind::Hajek).rmse >= h0.rmse;
  return {a && b, fmt("(a) %s (b) %s; truth MCSE at 0 = %.5f, %s eligible dyads", a ? "ok" : "FAIL", b ? "ok" : "FAIL",
                      h0.theta_true_mcse, s.metadata.at("eligible_dyads").c_str()) +
                      rows_text(s)};
}

Outcome property_suites() {
  const std::string unit = std::string(EDGECAUSE_UNIT_TESTS) + " --gtest_brief=1 > /dev/null 2>&1";
  const std::string cli = std::string(EDGECAUSE_CLI_TESTS) + " --gtest_brief=1 > /dev/null 2>&1";
  const int u = std::system(unit.c_str());
  const int c = std::system(cli.c_str());
  return {u == 0 && c == 0, fmt("unit suite %s, cli suite %s", u == 0 ? "passed" : "FAILED", c == 0 ? "passed" : "FAILED")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"sampler matches exact law on n=6 toy", sampler_tv},
      {"estimand oracle on n=6 toy", estimand_oracle},
      {"lambda=0 weight identity", weight_identity},
      {"edges-only MLE recovery, n=200", mle_recovery},
      {"closed-form variance vs wild bootstrap", variance_equivalence},
      {"Bernoulli simulation pattern, n=300", bernoulli_pattern},
      {"RMSE decreases from n=300 to n=1000", sample_size},
      {"local-dependence simulation pattern, n=300", local_dependence},
      {"property suites", property_suites},
  };
  std::set<int> only;
  for (int k = 1; k < argc; ++k) only.insert(std::atoi(argv[k]));

  bool all = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[k].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %d %s: %s [%.1fs] %s\n", id, criteria[k].first, out.pass ? "PASS" : "FAIL", secs,
                out.detail.c_str());
    std::fflush(stdout);
    all = all && out.pass;
  }
  return all ? 0 : 1;
}
