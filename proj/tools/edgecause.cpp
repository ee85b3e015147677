// edgecause: fit, estimate, simulate, gof and oracle subcommands.

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "edgecause/edgecause.hpp"
#include "edgecause/io.hpp"
#include "json.hpp"

#ifndef EDGECAUSE_VERSION
#define EDGECAUSE_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace edgecause;

namespace {

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read '" + path + "' for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char tmp[3];
  for (unsigned int k = 0; k < len; ++k) {
    std::snprintf(tmp, sizeof tmp, "%02x", md[k]);
    hex += tmp;
  }
  return hex;
}

std::string manifest_path(const std::string& out) {
  fs::path p(out);
  return (p.parent_path() / (p.stem().string() + ".manifest.json")).string();
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> grid;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = detail::trim(item);
    if (t.empty()) continue;
    grid.push_back(detail::parse_number(t, "--lambda-grid"));
  }
  if (grid.empty()) throw ValidationError("--lambda-grid is empty");
  return grid;
}

std::string fmt(double v) { return format_double(v); }

struct Globals {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  double level = 0.95;
  bool no_standardize = false;
};

/// Records flags, inputs and outputs of one run.
class Manifest {
 public:
  Manifest(std::string command, const CLI::App& app, const CLI::App& sub, const Globals& g)
      : command_(std::move(command)), seed_(g.seed) {
    for (const CLI::App* a : {&app, &sub})
      for (const CLI::Option* opt : a->get_options()) {
        if (opt->count() == 0 || opt->get_lnames().empty()) continue;
        const std::string name = "--" + opt->get_lnames().front();
        if (name == "--help") continue;
        flags_[name] = opt->get_expected_min() == 0 ? json(true) : json(opt->as<std::string>());
      }
  }
  void input(const std::string& path) {
    if (!path.empty()) inputs_.push_back({{"path", path}, {"sha256", sha256_file(path)}});
  }
  void write(const std::string& out, double seconds) const {
    json j;
    j["command"] = command_;
    j["flags"] = flags_;
    j["seed"] = seed_;
    j["inputs"] = inputs_;
    j["outputs"] = json::array({{{"path", out}, {"sha256", sha256_file(out)}}});
    j["version"] = EDGECAUSE_VERSION;
    j["duration_s"] = seconds;
    std::ofstream f(manifest_path(out), std::ios::binary | std::ios::trunc);
    if (!f) throw ValidationError("cannot write manifest for '" + out + "'");
    f << j.dump(2) << '\n';
  }

 private:
  std::string command_;
  std::uint64_t seed_;
  json flags_ = json::object();
  json inputs_ = json::array();
};

struct DataArgs {
  std::string nodes, edges, model, distances;
};

struct LoadedData {
  NodeTable nodes;
  std::optional<DistanceMatrix> distances;
  ModelConfig config;
  ModelSetup setup;
  Network observed;
};

LoadedData load_data(const DataArgs& a, const Globals& g, bool need_edges) {
  LoadedData d;
  d.nodes = read_nodes(a.nodes);
  if (!a.distances.empty()) d.distances = read_distances(a.distances, d.nodes.n);
  d.config = read_model_config(a.model);
  d.setup = build_setup(d.config, d.nodes, d.distances, !g.no_standardize);
  if (need_edges) {
    const auto edges = read_edges(a.edges, d.nodes.n);
    d.observed = build_network(d.nodes.n, edges);
    if (!d.setup.space->admits(d.observed))
      throw ValidationError("observed network contains a dyad outside the restricted space");
  } else {
    d.observed = Network(d.nodes.n);
  }
  return d;
}

DistanceMatrix unit_distances(const LoadedData& d) {
  if (d.distances) return *d.distances;
  if (!d.nodes.loc_x) throw ValidationError("neighborhoods need loc_x/loc_y or --distances");
  return DistanceMatrix::euclidean(*d.nodes.loc_x, *d.nodes.loc_y);
}

Eigen::VectorXd eta_from_fit_or_config(const std::string& fit_path, const LoadedData& d) {
  if (!fit_path.empty()) return read_fit(fit_path).eta_hat;
  if (!d.config.eta) throw ValidationError("parameters needed: pass --fit or give 'eta' in the model config");
  return Eigen::Map<const Eigen::VectorXd>(d.config.eta->data(), static_cast<Eigen::Index>(d.config.eta->size()));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot write '" + path + "'");
  f << text;
  if (!f) throw ValidationError("failed writing '" + path + "'");
}

// ---- subcommands ------------------------------------------------------------

struct FitArgs {
  DataArgs data;
  std::string out;
  std::size_t draws = 5000;
  std::size_t max_iters = 30;
  double trust_radius = 0.5;
  double tol = 1e-4;
};

void run_fit(const FitArgs& a, const Globals& g, Manifest& m) {
  const LoadedData d = load_data(a.data, g, true);
  m.input(a.data.nodes);
  m.input(a.data.edges);
  m.input(a.data.model);
  m.input(a.data.distances);
  const ErgmModel structure = d.setup.structure();
  FitConfig fc;
  fc.draws = a.draws;
  fc.max_iters = a.max_iters;
  fc.trust_radius = a.trust_radius;
  fc.tol = a.tol;
  fc.seed = derive_seed(g.seed, "fit");
  const FitResult fit = mcmc_mle(structure, d.observed, fc);
  FitRecord rec{fit.eta_hat, fit.se, fit.converged, fit.iterations, g.seed};
  write_text(a.out, fit_to_json(rec, structure.parameter_names()).dump(2) + "\n");
}

struct EstimateArgs {
  DataArgs data;
  std::string fit, out, outcome_col = "y", lambda_grid = "-0.6931,-0.4055,0,0.4055,0.6931", denominators = "auto";
  std::size_t nbhd_l = 3;
  std::size_t mc_samples = 20000;
  bool includes_self = true;
};

void run_estimate(const EstimateArgs& a, const Globals& g, Manifest& m) {
  LoadedData d = load_data(a.data, g, true);
  m.input(a.data.nodes);
  m.input(a.data.edges);
  m.input(a.data.model);
  m.input(a.data.distances);
  m.input(a.fit);
  const auto grid = parse_grid(a.lambda_grid);
  const ErgmModel model = d.setup.model(eta_from_fit_or_config(a.fit, d));

  const auto ycol = d.nodes.columns->index(a.outcome_col);
  const auto ys = d.nodes.columns->column(ycol);
  const std::vector<double> y(ys.begin(), ys.end());

  const DistanceMatrix dist = unit_distances(d);
  const NeighborhoodSystem nbhds = d.setup.blocks.empty()
                                       ? knn_neighborhoods(dist, a.nbhd_l, a.includes_self)
                                       : knn_neighborhoods(dist, a.nbhd_l, a.includes_self, d.setup.blocks);
  const DependenceSystem dep =
      d.setup.blocks.empty() ? dependence_from_overlap(nbhds) : dependence_from_blocks(d.setup.blocks);

  DenominatorConfig dc;
  if (a.denominators == "auto")
    dc.method = DenominatorMethod::Auto;
  else if (a.denominators == "mc")
    dc.method = DenominatorMethod::MonteCarlo;
  else if (a.denominators == "exact")
    dc.method = DenominatorMethod::Exact;
  else
    throw ValidationError("--denominators must be auto, mc or exact");
  dc.mc_samples = a.mc_samples;
  dc.seed = derive_seed(g.seed, "estimate");
  const auto denoms = compute_denominators(model, nbhds, grid, dc);
  const bool mc_used = dc.method == DenominatorMethod::MonteCarlo ||
                       (dc.method == DenominatorMethod::Auto && !model.dyad_independent());
  const auto e = local_edge_counts(d.observed, nbhds);
  std::vector<WeightSet> ws;
  for (std::size_t k = 0; k < grid.size(); ++k) ws.push_back(ipw_weights(e, grid[k], denoms[k], mc_used ? a.mc_samples : 0));
  const auto rows = report(grid, ws, y, omega_matrix(dep), g.level);

  std::ostringstream out;
  out << "lambda,estimator,estimate,se,ci_low,ci_high,contrast_vs_zero,contrast_se,denominator_mcse_max\n";
  for (const auto& r : rows)
    out << fmt(r.lambda) << ',' << estimator_name(r.kind) << ',' << fmt(r.estimate) << ',' << fmt(r.se) << ','
        << fmt(r.ci_low) << ',' << fmt(r.ci_high) << ',' << fmt(r.contrast_vs_zero) << ',' << fmt(r.contrast_se) << ','
        << fmt(r.denominator_mcse_max) << '\n';
  write_text(a.out, out.str());
}

struct SimulateArgs {
  std::string scenario = "bernoulli", out, lambda_grid;
  std::size_t n = 300, l = 3, reps = 1000, block_size = 50;
  std::size_t refit_draws = 2000, mc_samples = 20000, truth_draws = 1000000;
  bool exact_truth = false, known_eta = false;
};

void run_simulate(const SimulateArgs& a, const Globals& g, Manifest&) {
  DgpConfig cfg;
  if (a.scenario == "bernoulli")
    cfg.scenario = Scenario::Bernoulli;
  else if (a.scenario == "localdep")
    cfg.scenario = Scenario::LocalDependence;
  else
    throw ValidationError("--scenario must be bernoulli or localdep");
  cfg.n = a.n;
  cfg.l = a.l;
  cfg.reps = a.reps;
  cfg.block_mean_size = a.block_size;
  cfg.seed = g.seed;
  cfg.threads = g.threads;
  cfg.level = g.level;
  if (!a.lambda_grid.empty()) cfg.lambda_grid = parse_grid(a.lambda_grid);
  cfg.refit = !a.known_eta;
  cfg.refit_config.draws = a.refit_draws;
  cfg.denominator_draws = a.mc_samples;
  cfg.truth_draws = a.truth_draws;
  cfg.truth_mode = a.exact_truth ? TruthMode::Exact : TruthMode::Auto;
  emit_summary(run_study(cfg), a.out);
}

struct GofArgs {
  DataArgs data;
  std::string fit, out;
  std::size_t sims = 100;
};

void run_gof(const GofArgs& a, const Globals& g, Manifest& m) {
  const LoadedData d = load_data(a.data, g, true);
  m.input(a.data.nodes);
  m.input(a.data.edges);
  m.input(a.data.model);
  m.input(a.data.distances);
  m.input(a.fit);
  const ErgmModel model = d.setup.model(eta_from_fit_or_config(a.fit, d));
  const auto sims = gof_simulations(model, d.observed, a.sims, g.seed);
  const GofRecord obs = gof_record(model, d.observed);
  std::size_t max_deg = obs.degree_counts.size();
  for (const auto& r : sims) max_deg = std::max(max_deg, r.degree_counts.size());

  std::ostringstream out;
  out << "sim";
  for (const auto& name : model.parameter_names()) out << ',' << name;
  for (std::size_t k = 0; k < max_deg; ++k) out << ",deg" << k;
  out << '\n';
  auto row = [&](const std::string& label, const GofRecord& r) {
    out << label;
    for (Eigen::Index k = 0; k < r.statistics.size(); ++k) out << ',' << fmt(r.statistics[k]);
    for (std::size_t k = 0; k < max_deg; ++k) out << ',' << (k < r.degree_counts.size() ? r.degree_counts[k] : 0);
    out << '\n';
  };
  row("observed", obs);
  for (std::size_t s = 0; s < sims.size(); ++s) row(std::to_string(s + 1), sims[s]);
  write_text(a.out, out.str());
}

struct OracleArgs {
  DataArgs data;
  std::string fit, out, baseline_col, effect_col, lambda_grid = "-0.6931,-0.4055,0,0.4055,0.6931";
  std::size_t max_dyads = kMaxEnumerableDyads, nbhd_l = 3, steps = 1000000, thin = 10, burn_in = 10000;
  bool includes_self = true;
};

void run_oracle(const OracleArgs& a, const Globals& g, Manifest& m) {
  const LoadedData d = load_data(a.data, g, false);
  m.input(a.data.nodes);
  m.input(a.data.model);
  m.input(a.data.distances);
  m.input(a.fit);
  const auto grid = parse_grid(a.lambda_grid);
  const ErgmModel model = d.setup.model(eta_from_fit_or_config(a.fit, d));
  const std::size_t n = model.units();
  const ExactDistribution exact = exact_distribution(model, a.max_dyads);
  if (a.thin == 0) throw ValidationError("--thin must be positive");

  // Sampler vs exact law over whole networks.
  SamplerConfig sc{a.burn_in, a.thin, a.steps / a.thin, derive_seed(g.seed, "oracle")};
  std::vector<double> freq(exact.prob.size(), 0.0);
  const bool ran = run_chain(model, sc, std::nullopt,
                             [&](const Network& net, const Eigen::VectorXd&) { freq[exact.mask_of(net)] += 1.0; });
  if (!ran) freq[0] = static_cast<double>(sc.n_draws);
  double tv = 0.0, floor = 0.0;
  const double draws = static_cast<double>(sc.n_draws);
  for (std::size_t s = 0; s < freq.size(); ++s) {
    tv += std::abs(freq[s] / draws - exact.prob[s]);
    floor += std::sqrt(2.0 * exact.prob[s] * (1.0 - exact.prob[s]) / (std::numbers::pi * draws));
  }
  tv *= 0.5;
  floor *= 0.5;

  const DistanceMatrix dist = unit_distances(d);
  const NeighborhoodSystem nbhds = knn_neighborhoods(dist, a.nbhd_l, a.includes_self);

  // Local marginal laws: exact marginalization vs the same chain's frequencies.
  std::vector<LocalDistribution> locals;
  double marginal_gap = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    locals.push_back(exact_local_marginal(exact, nbhds, i));
    std::unordered_map<std::uint64_t, double> emp;
    for (std::size_t s = 0; s < freq.size(); ++s)
      if (freq[s] > 0) emp[local_code(exact.network(s), nbhds.members(i))] += freq[s] / draws;
    for (std::size_t k = 0; k < locals[i].codes.size(); ++k) {
      const double e = emp.count(locals[i].codes[k]) ? emp[locals[i].codes[k]] : 0.0;
      marginal_gap = std::max(marginal_gap, std::abs(e - locals[i].prob[k]));
    }
  }

  std::vector<double> base(n, 0.0), effect(n, 1.0);
  if (!a.baseline_col.empty()) {
    const auto c = d.nodes.columns->column(d.nodes.columns->index(a.baseline_col));
    base.assign(c.begin(), c.end());
  }
  if (!a.effect_col.empty()) {
    const auto c = d.nodes.columns->column(d.nodes.columns->index(a.effect_col));
    effect.assign(c.begin(), c.end());
  }
  auto outcome = [&](std::size_t i, std::uint64_t code) {
    const auto& mem = nbhds.members(i);
    double y = base[i];
    for (std::size_t k = 1; k < mem.size(); ++k)
      if ((code >> (k - 1)) & 1ULL) y += effect[mem[k]];
    return y;
  };

  json report;
  report["eligible_dyads"] = exact.dyads.size();
  report["draws"] = sc.n_draws;
  report["tv_distance"] = tv;
  report["tv_sampling_floor"] = floor;
  report["marginal_max_abs_diff"] = marginal_gap;
  double residual = 0.0;
  json thetas = json::array();
  for (double lambda : grid) {
    double theta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double D = denominator_from_distribution(locals[i], lambda).value;
      double sum_w = 0.0;
      for (std::size_t k = 0; k < locals[i].codes.size(); ++k)
        sum_w += locals[i].prob[k] * std::exp(static_cast<double>(LocalDistribution::edges(locals[i].codes[k])) * lambda) / D;
      residual = std::max(residual, std::abs(sum_w - 1.0));
      const auto q = tilt_distribution(locals[i], lambda);
      for (std::size_t k = 0; k < q.codes.size(); ++k) theta += q.prob[k] * outcome(i, q.codes[k]);
    }
    thetas.push_back({{"lambda", lambda}, {"theta", theta / static_cast<double>(n)}});
  }
  report["weight_normalization_residual"] = residual;
  report["theta"] = thetas;
  const std::string text = report.dump(2) + "\n";
  write_text(a.out, text);
  std::cout << "tv_distance " << fmt(tv) << " (sampling floor " << fmt(floor) << ")\n"
            << "marginal_max_abs_diff " << fmt(marginal_gap) << "\n"
            << "weight_normalization_residual " << fmt(residual) << "\n";
}

void add_data_options(CLI::App* sub, DataArgs& d, bool edges) {
  sub->add_option("--nodes", d.nodes, "nodes.csv (id,loc_x,loc_y,covariates...)")->required();
  if (edges) sub->add_option("--edges", d.edges, "edges.csv (i,j)")->required();
  sub->add_option("--model", d.model, "model config JSON")->required();
  sub->add_option("--distances", d.distances, "optional full distance matrix CSV");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Design-based causal inference for edge interventions in networks"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "master seed")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--level", g.level, "confidence level")->capture_default_str();
  app.add_flag("--no-standardize", g.no_standardize, "use raw continuous covariates");
  app.add_flag_callback("--version", [] {
    std::cout << EDGECAUSE_VERSION << '\n';
    throw CLI::Success();
  });

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "MCMC maximum likelihood fit of a constrained ERGM");
  add_data_options(fit_cmd, fit.data, true);
  fit_cmd->add_option("--out", fit.out, "output eta.json")->required();
  fit_cmd->add_option("--draws", fit.draws, "sampled networks per iteration")->capture_default_str();
  fit_cmd->add_option("--max-iters", fit.max_iters)->capture_default_str();
  fit_cmd->add_option("--trust-radius", fit.trust_radius)->capture_default_str();
  fit_cmd->add_option("--tol", fit.tol)->capture_default_str();

  EstimateArgs est;
  auto* est_cmd = app.add_subcommand("estimate", "IPW estimates over a grid of interventions");
  add_data_options(est_cmd, est.data, true);
  est_cmd->add_option("--fit", est.fit, "eta.json from fit (else 'eta' in the model config)");
  est_cmd->add_option("--outcome-col", est.outcome_col)->capture_default_str();
  est_cmd->add_option("--nbhd-l", est.nbhd_l, "neighborhood size")->capture_default_str();
  est_cmd->add_option("--nbhd-includes-self-in-count", est.includes_self)->capture_default_str();
  est_cmd->add_option("--lambda-grid", est.lambda_grid)->capture_default_str();
  est_cmd->add_option("--mc-samples", est.mc_samples)->capture_default_str();
  est_cmd->add_option("--denominators", est.denominators, "auto | mc | exact")->capture_default_str();
  est_cmd->add_option("--out", est.out, "output estimates.csv")->required();

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "simulation study on synthetic data");
  sim_cmd->add_option("--scenario", sim.scenario, "bernoulli | localdep")->capture_default_str();
  sim_cmd->add_option("--n", sim.n)->capture_default_str();
  sim_cmd->add_option("--l", sim.l)->capture_default_str();
  sim_cmd->add_option("--reps", sim.reps)->capture_default_str();
  sim_cmd->add_option("--block-size", sim.block_size, "mean block size (localdep)")->capture_default_str();
  sim_cmd->add_option("--lambda-grid", sim.lambda_grid, "default: ±log 2, ±log 1.5, 0");
  sim_cmd->add_option("--refit-draws", sim.refit_draws)->capture_default_str();
  sim_cmd->add_option("--mc-samples", sim.mc_samples, "denominator draws")->capture_default_str();
  sim_cmd->add_option("--truth-draws", sim.truth_draws)->capture_default_str();
  sim_cmd->add_flag("--exact-truth", sim.exact_truth, "require exact true estimands");
  sim_cmd->add_flag("--known-eta", sim.known_eta, "skip refitting; summarize true-eta estimates");
  sim_cmd->add_option("--out", sim.out, "output summary.csv")->required();

  GofArgs gof;
  auto* gof_cmd = app.add_subcommand("gof", "goodness-of-fit simulations");
  add_data_options(gof_cmd, gof.data, true);
  gof_cmd->add_option("--fit", gof.fit);
  gof_cmd->add_option("--sims", gof.sims)->capture_default_str();
  gof_cmd->add_option("--out", gof.out)->required();

  OracleArgs orc;
  auto* orc_cmd = app.add_subcommand("oracle", "exact-enumeration cross-checks on a small model");
  add_data_options(orc_cmd, orc.data, false);
  orc_cmd->add_option("--fit", orc.fit);
  orc_cmd->add_option("--max-dyads", orc.max_dyads)->capture_default_str();
  orc_cmd->add_option("--nbhd-l", orc.nbhd_l)->capture_default_str();
  orc_cmd->add_option("--nbhd-includes-self-in-count", orc.includes_self)->capture_default_str();
  orc_cmd->add_option("--lambda-grid", orc.lambda_grid)->capture_default_str();
  orc_cmd->add_option("--steps", orc.steps)->capture_default_str();
  orc_cmd->add_option("--thin", orc.thin)->capture_default_str();
  orc_cmd->add_option("--burn-in", orc.burn_in)->capture_default_str();
  orc_cmd->add_option("--baseline-col", orc.baseline_col, "baseline outcome column (default 0)");
  orc_cmd->add_option("--effect-col", orc.effect_col, "per-neighbor edge effect column (default 1)");
  orc_cmd->add_option("--out", orc.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success&) {
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "edgecause: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  const auto start = std::chrono::steady_clock::now();
  CLI::App* sub = app.get_subcommands().front();
  try {
    Manifest manifest(sub->get_name(), app, *sub, g);
    std::string out;
    if (sub == fit_cmd) {
      run_fit(fit, g, manifest);
      out = fit.out;
    } else if (sub == est_cmd) {
      run_estimate(est, g, manifest);
      out = est.out;
    } else if (sub == sim_cmd) {
      run_simulate(sim, g, manifest);
      out = sim.out;
    } else if (sub == gof_cmd) {
      run_gof(gof, g, manifest);
      out = gof.out;
    } else {
      run_oracle(orc, g, manifest);
      out = orc.out;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest.write(out, secs);
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "edgecause: error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "edgecause: numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "edgecause: failure: " << e.what() << '\n';
    return 2;
  }
}
