#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "edgecause/error.hpp"
#include "edgecause/netstats.hpp"
#include "edgecause/network.hpp"
#include "edgecause/rng.hpp"

namespace edgecause {

inline double log_sum_exp(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline double expit(double s) {
  return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// log(1 + e^s) without overflow.
inline double softplus(double s) { return s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

/// Constrained exponential random graph model
///   P(A = a) ∝ 1(a ∈ A_U) exp{eta' g(a, x)}.
/// With a block membership the statistics split into within-block and
/// between-block parts. When per_block is set, every block carries its own copy
/// of the within-block parameters and the parameter vector is laid out as
/// [block 0 within terms, block 1 within terms, ..., between terms].
class ErgmModel {
 public:
  ErgmModel(StatisticSpec spec, Eigen::VectorXd eta, std::shared_ptr<const RestrictedSpace> space,
            std::shared_ptr<const CovariateTable> cov, std::vector<int> blocks = {}, bool per_block = false)
      : spec_(std::move(spec)), eta_(std::move(eta)), space_(std::move(space)), cov_(std::move(cov)),
        per_block_(per_block) {
    if (!space_ || !cov_) throw ValidationError("model requires a restricted space and covariates");
    if (space_->size() != cov_->rows())
      throw ValidationError("restricted space and covariate table differ in unit count");
    spec_.validate(*cov_, !blocks.empty());
    if (!blocks.empty()) {
      if (blocks.size() != cov_->rows()) throw ValidationError("block membership length differs from n");
      // Relabel to 0..K-1 in order of first appearance.
      std::map<int, int> relabel;
      for (int b : blocks) relabel.try_emplace(b, static_cast<int>(relabel.size()));
      for (int& b : blocks) b = relabel[b];
      block_count_ = relabel.size();
    } else if (per_block_) {
      throw ValidationError("per-block parameters require a block structure");
    }
    blocks_ = std::move(blocks);
    for (std::size_t k = 0; k < spec_.size(); ++k) {
      if (spec_.terms[k].between())
        between_slot_.push_back(k);
      else
        within_slot_.push_back(k);
    }
    if (static_cast<std::size_t>(eta_.size()) != dimension())
      throw ValidationError("parameter vector has " + std::to_string(eta_.size()) + " entries, model needs " +
                            std::to_string(dimension()));
  }

  std::size_t units() const { return cov_->rows(); }
  std::size_t dimension() const {
    return per_block_ ? block_count_ * within_slot_.size() + between_slot_.size() : spec_.size();
  }
  const StatisticSpec& spec() const { return spec_; }
  const Eigen::VectorXd& eta() const { return eta_; }
  const RestrictedSpace& space() const { return *space_; }
  std::shared_ptr<const RestrictedSpace> space_ptr() const { return space_; }
  const CovariateTable& covariates() const { return *cov_; }
  std::shared_ptr<const CovariateTable> covariates_ptr() const { return cov_; }
  std::span<const int> blocks() const { return blocks_; }
  bool per_block() const { return per_block_; }
  std::size_t block_count() const { return block_count_; }
  bool dyad_independent() const { return spec_.dyad_independent(); }

  ErgmModel with_eta(Eigen::VectorXd eta) const {
    ErgmModel m = *this;
    if (static_cast<std::size_t>(eta.size()) != dimension())
      throw ValidationError("parameter vector dimension mismatch");
    m.eta_ = std::move(eta);
    return m;
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    if (!per_block_) {
      for (const auto& t : spec_.terms) names.push_back(term_label(t, *cov_));
      return names;
    }
    for (std::size_t b = 0; b < block_count_; ++b)
      for (std::size_t k : within_slot_) names.push_back("block" + std::to_string(b + 1) + "." + term_label(spec_.terms[k], *cov_));
    for (std::size_t k : between_slot_) names.push_back(term_label(spec_.terms[k], *cov_));
    return names;
  }

  /// Change statistic of dyad (i,j) in parameter layout. `term_scratch` needs
  /// spec().size() entries, `out` needs dimension() entries.
  void change_into(const Network& net, std::size_t i, std::size_t j, std::span<double> term_scratch,
                   std::span<double> out) const {
    if (!per_block_) {
      change_statistics_into(net, *cov_, spec_, i, j, out, blocks_);
      return;
    }
    change_statistics_into(net, *cov_, spec_, i, j, term_scratch, blocks_);
    scatter(term_scratch, blocks_[i] == blocks_[j] ? static_cast<std::size_t>(blocks_[i]) : 0, out);
  }

  Eigen::VectorXd change(const Network& net, std::size_t i, std::size_t j) const {
    std::vector<double> scratch(spec_.size());
    Eigen::VectorXd out(static_cast<Eigen::Index>(dimension()));
    change_into(net, i, j, scratch, std::span<double>(out.data(), dimension()));
    return out;
  }

  /// g(a, x) in parameter layout.
  Eigen::VectorXd statistics(const Network& net) const {
    if (net.size() != units()) throw ValidationError("network size differs from model unit count");
    if (!per_block_) return compute_statistics(net, *cov_, spec_, blocks_);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dimension()));
    std::vector<double> terms(spec_.size());
    for (const auto& [i, j] : net.edges()) {
      const bool within = blocks_[i] == blocks_[j];
      for (std::size_t k = 0; k < spec_.size(); ++k) {
        const Term& t = spec_.terms[k];
        if (t.between() == within) {
          terms[k] = 0.0;
        } else if (t.kind == TermKind::Gwesp) {
          terms[k] = gwesp_edge_weight(detail::shared_partners(net, blocks_, i, j), t.decay);
        } else {
          terms[k] = detail::dyad_term_value(t, *cov_, i, j);
        }
      }
      Eigen::VectorXd slot = Eigen::VectorXd::Zero(g.size());
      scatter(terms, within ? static_cast<std::size_t>(blocks_[i]) : 0, std::span<double>(slot.data(), dimension()));
      g += slot;
    }
    return g;
  }

 private:
  void scatter(std::span<const double> terms, std::size_t block, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    const std::size_t w = within_slot_.size();
    for (std::size_t s = 0; s < w; ++s) out[block * w + s] = terms[within_slot_[s]];
    for (std::size_t s = 0; s < between_slot_.size(); ++s) out[block_count_ * w + s] = terms[between_slot_[s]];
  }

  StatisticSpec spec_;
  Eigen::VectorXd eta_;
  std::shared_ptr<const RestrictedSpace> space_;
  std::shared_ptr<const CovariateTable> cov_;
  std::vector<int> blocks_;
  bool per_block_ = false;
  std::size_t block_count_ = 0;
  std::vector<std::size_t> within_slot_;
  std::vector<std::size_t> between_slot_;
};

/// eta' g(a, x) for networks in the restricted space, -inf otherwise.
inline double log_weight(const ErgmModel& model, const Network& net) {
  if (net.size() != model.units()) throw ValidationError("dimension mismatch between network and model");
  if (!model.space().admits(net)) return -std::numeric_limits<double>::infinity();
  return model.eta().dot(model.statistics(net));
}

/// Conditional log odds of A_ij = 1 given the rest of the network.
inline double conditional_logodds(const ErgmModel& model, const Network& net, std::size_t i, std::size_t j) {
  if (i >= model.units() || j >= model.units() || i == j || !model.space().contains(i, j))
    throw ValidationError("ineligible dyad (" + std::to_string(i) + "," + std::to_string(j) + ")");
  return model.eta().dot(model.change(net, i, j));
}

/// Edge probability of every eligible dyad (in space().dyads() order) for a
/// dyad-independent model.
inline std::vector<double> dyad_probabilities(const ErgmModel& model) {
  if (!model.dyad_independent()) throw ValidationError("dyad probabilities need a dyad-independent model");
  const Network empty(model.units());
  std::vector<double> p;
  p.reserve(model.space().dyads().size());
  for (const auto& [i, j] : model.space().dyads()) p.push_back(expit(conditional_logodds(model, empty, i, j)));
  return p;
}

struct SamplerConfig {
  std::size_t burn_in = 0;
  std::size_t thin = 1;
  std::size_t n_draws = 0;
  std::uint64_t seed = 1;
};

/// Metropolis-Hastings chain on the restricted space. Proposals toggle one
/// eligible dyad chosen uniformly; acceptance is min{1, exp(±log odds)}.
/// Tracks g(a) of the current state incrementally.
class MhSampler {
 public:
  MhSampler(const ErgmModel& model, Network start, std::uint64_t seed)
      : model_(model), net_(std::move(start)), rng_(seed) {
    if (net_.size() != model_.units()) throw ValidationError("start network size differs from model");
    if (!model_.space().admits(net_)) throw ValidationError("start network lies outside the restricted space");
    const std::size_t p = model_.dimension();
    stats_ = model_.statistics(net_);
    term_scratch_.resize(model_.spec().size());
    change_.resize(p);
    const auto& dyads = model_.space().dyads();
    if (model_.dyad_independent()) {
      cached_.resize(dyads.size() * p);
      fast_.resize(dyads.size());
      for (std::size_t d = 0; d < dyads.size(); ++d) {
        std::span<double> slot(cached_.data() + d * p, p);
        model_.change_into(net_, dyads[d].first, dyads[d].second, term_scratch_, slot);
        const double lo = Eigen::Map<const Eigen::VectorXd>(slot.data(), static_cast<Eigen::Index>(p)).dot(model_.eta());
        fast_[d] = {std::exp(lo), std::exp(-lo)};
      }
      present_.resize(dyads.size());
      for (std::size_t d = 0; d < dyads.size(); ++d) present_[d] = net_.has_edge(dyads[d].first, dyads[d].second);
    }
  }

  void advance(std::uint64_t steps) {
    const auto& dyads = model_.space().dyads();
    if (dyads.empty()) return;
    const std::size_t p = model_.dimension();
    if (!fast_.empty()) {
      for (std::uint64_t s = 0; s < steps; ++s) {
        const std::size_t d = uniform_index(rng_, fast_.size());
        const double u = uniform01(rng_);
        const FastDyad& f = fast_[d];
        const bool present = present_[d] != 0;
        ++proposals_;
        if (u < (present ? f.accept_remove : f.accept_add)) {
          present_[d] = present ? 0 : 1;
          synced_ = false;
          const double sign = present ? -1.0 : 1.0;
          const double* delta = cached_.data() + d * p;
          for (std::size_t k = 0; k < p; ++k) stats_[static_cast<Eigen::Index>(k)] += sign * delta[k];
          ++accepted_;
        }
      }
      return;
    }
    for (std::uint64_t s = 0; s < steps; ++s) {
      const std::size_t d = uniform_index(rng_, dyads.size());
      const double u = uniform01(rng_);
      const auto [i, j] = dyads[d];
      model_.change_into(net_, i, j, term_scratch_, change_);
      const double* delta = change_.data();
      double lo = 0.0;
      for (std::size_t k = 0; k < p; ++k) lo += model_.eta()[static_cast<Eigen::Index>(k)] * delta[k];
      const bool present = net_.has_edge(i, j);
      const double log_ratio = present ? -lo : lo;
      ++proposals_;
      if (u < std::exp(log_ratio)) {
        net_.set_edge(i, j, !present);
        const double sign = present ? -1.0 : 1.0;
        for (std::size_t k = 0; k < p; ++k) stats_[static_cast<Eigen::Index>(k)] += sign * delta[k];
        ++accepted_;
      }
    }
  }

  const Network& state() const {
    if (!synced_) {
      const auto& dyads = model_.space().dyads();
      for (std::size_t d = 0; d < dyads.size(); ++d) net_.set_edge(dyads[d].first, dyads[d].second, present_[d] != 0);
      synced_ = true;
    }
    return net_;
  }
  const Eigen::VectorXd& statistics() const { return stats_; }
  std::uint64_t proposals() const { return proposals_; }
  std::uint64_t accepted() const { return accepted_; }

 private:
  ErgmModel model_;
  mutable Network net_;
  Rng rng_;
  Eigen::VectorXd stats_;
  std::vector<double> term_scratch_;
  std::vector<double> change_;
  // Dyad-independent models: acceptance thresholds exp(+-logodds), change
  // vectors and the state of every eligible dyad. net_ catches up on state().
  struct FastDyad {
    double accept_add, accept_remove;
  };
  std::vector<FastDyad> fast_;
  std::vector<double> cached_;
  std::vector<std::uint8_t> present_;
  mutable bool synced_ = true;
  std::uint64_t proposals_ = 0;
  std::uint64_t accepted_ = 0;
};

/// Runs burn_in steps, then calls visit(state, statistics) after every thin
/// further steps, n_draws times. Returns false (and visits nothing) when the
/// restricted space has no eligible dyads.
template <class Visitor>
bool run_chain(const ErgmModel& model, const SamplerConfig& cfg, const std::optional<Network>& start, Visitor&& visit) {
  if (cfg.thin == 0) throw ValidationError("sampler thin must be positive");
  Network init = start ? *start : Network(model.units());
  MhSampler chain(model, std::move(init), cfg.seed);
  if (model.space().dyads().empty()) return false;
  chain.advance(cfg.burn_in);
  for (std::size_t m = 0; m < cfg.n_draws; ++m) {
    chain.advance(cfg.thin);
    visit(chain.state(), chain.statistics());
  }
  return true;
}

inline std::vector<Network> mh_sample(const ErgmModel& model, const SamplerConfig& cfg,
                                      const std::optional<Network>& start = std::nullopt) {
  std::vector<Network> draws;
  draws.reserve(cfg.n_draws);
  const bool ran = run_chain(model, cfg, start, [&](const Network& net, const Eigen::VectorXd&) { draws.push_back(net); });
  if (!ran) {
    if (cfg.n_draws > 0) warn("restricted space has no eligible dyads; returning copies of the start network");
    draws.assign(cfg.n_draws, start ? *start : Network(model.units()));
  }
  return draws;
}

/// Sampled statistics, one row per retained draw.
inline Eigen::MatrixXd sample_statistics(const ErgmModel& model, const SamplerConfig& cfg,
                                         const std::optional<Network>& start = std::nullopt) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(cfg.n_draws), static_cast<Eigen::Index>(model.dimension()));
  if (cfg.thin == 0) throw ValidationError("sampler thin must be positive");
  MhSampler chain(model, start ? *start : Network(model.units()), cfg.seed);
  const bool ran = !model.space().dyads().empty();
  if (ran) {
    chain.advance(cfg.burn_in);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      chain.advance(cfg.thin);
      out.row(r) = chain.statistics().transpose();
    }
  } else {
    const Eigen::VectorXd g = model.statistics(start ? *start : Network(model.units()));
    for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = g.transpose();
  }
  return out;
}

/// Exact law of a small model by enumerating every network in A_U.
/// prob[mask] is the probability of the network whose edges are the eligible
/// dyads dyads[d] with bit d of mask set.
struct ExactDistribution {
  std::size_t units = 0;
  std::vector<Dyad> dyads;
  std::vector<double> prob;
  double log_normalizer = 0.0;

  Network network(std::uint64_t mask) const {
    Network net(units);
    for (std::size_t d = 0; d < dyads.size(); ++d)
      if ((mask >> d) & 1ULL) net.set_edge(dyads[d].first, dyads[d].second, true);
    return net;
  }

  /// Mask of a network in A_U.
  std::uint64_t mask_of(const Network& net) const {
    std::uint64_t mask = 0;
    for (std::size_t d = 0; d < dyads.size(); ++d)
      if (net.has_edge(dyads[d].first, dyads[d].second)) mask |= (1ULL << d);
    return mask;
  }
};

inline constexpr std::size_t kMaxEnumerableDyads = 22;

inline ExactDistribution exact_distribution(const ErgmModel& model, std::size_t max_dyads = kMaxEnumerableDyads) {
  const auto& dyads = model.space().dyads();
  if (dyads.size() > max_dyads)
    throw ValidationError("enumeration refused: model has " + std::to_string(dyads.size()) +
                          " eligible dyads, limit is " + std::to_string(max_dyads));
  ExactDistribution out;
  out.units = model.units();
  out.dyads = dyads;
  const std::uint64_t count = 1ULL << dyads.size();
  std::vector<double> logw(count);
  // Walk the Gray code so consecutive networks differ in one dyad, but score
  // each network by full recomputation of its statistics.
  Network net(model.units());
  std::uint64_t mask = 0;
  for (std::uint64_t k = 0; k < count; ++k) {
    if (k > 0) {
      const int flip = std::countr_zero(k);
      net.toggle(dyads[static_cast<std::size_t>(flip)].first, dyads[static_cast<std::size_t>(flip)].second);
      mask ^= (1ULL << flip);
    }
    logw[mask] = model.eta().dot(model.statistics(net));
  }
  out.log_normalizer = log_sum_exp(logw);
  out.prob.resize(count);
  for (std::uint64_t m = 0; m < count; ++m) out.prob[m] = std::exp(logw[m] - out.log_normalizer);
  return out;
}

/// Distribution of a local treatment A_i over codes from local_code().
struct LocalDistribution {
  std::size_t owner = 0;
  std::vector<std::size_t> members;
  std::vector<std::uint64_t> codes;  // ascending
  std::vector<double> prob;
  std::size_t samples = 0;           // 0 for exact distributions

  static std::size_t edges(std::uint64_t code) { return static_cast<std::size_t>(std::popcount(code)); }

  double probability(std::uint64_t code) const {
    auto it = std::lower_bound(codes.begin(), codes.end(), code);
    return it != codes.end() && *it == code ? prob[static_cast<std::size_t>(it - codes.begin())] : 0.0;
  }
};

namespace detail {
inline void check_local_size(const NeighborhoodSystem& nbhds, std::size_t i) {
  if (nbhds.members(i).size() > kMaxLocalMembers)
    throw ValidationError("neighborhood of unit " + std::to_string(i) + " exceeds " +
                          std::to_string(kMaxLocalMembers) + " members");
}

inline LocalDistribution from_counts(std::size_t owner, const std::vector<std::size_t>& members,
                                     const std::unordered_map<std::uint64_t, double>& mass, std::size_t samples) {
  LocalDistribution out;
  out.owner = owner;
  out.members = members;
  out.samples = samples;
  std::vector<std::pair<std::uint64_t, double>> items(mass.begin(), mass.end());
  std::sort(items.begin(), items.end());
  double total = 0.0;
  for (const auto& kv : items) total += kv.second;
  for (const auto& [code, w] : items) {
    out.codes.push_back(code);
    out.prob.push_back(w / total);
  }
  return out;
}
}  // namespace detail

/// Exact marginal law of A_i: sums the enumerated network law over a_{-i}.
inline LocalDistribution exact_local_marginal(const ExactDistribution& exact, const NeighborhoodSystem& nbhds,
                                              std::size_t i) {
  detail::check_local_size(nbhds, i);
  std::unordered_map<std::uint64_t, double> mass;
  const auto& members = nbhds.members(i);
  const std::size_t m = members.size();
  // Bit of each eligible dyad inside N_i within the local code.
  std::vector<std::pair<std::size_t, std::size_t>> map;
  for (std::size_t d = 0; d < exact.dyads.size(); ++d) {
    const auto [a, b] = exact.dyads[d];
    auto ia = std::find(members.begin(), members.end(), a);
    auto ib = std::find(members.begin(), members.end(), b);
    if (ia == members.end() || ib == members.end()) continue;
    std::size_t ka = static_cast<std::size_t>(ia - members.begin());
    std::size_t kb = static_cast<std::size_t>(ib - members.begin());
    if (ka > kb) std::swap(ka, kb);
    map.emplace_back(d, pair_index(ka, kb, m));
  }
  for (std::uint64_t mask = 0; mask < exact.prob.size(); ++mask) {
    std::uint64_t code = 0;
    for (const auto& [d, bit] : map)
      if ((mask >> d) & 1ULL) code |= (1ULL << bit);
    mass[code] += exact.prob[mask];
  }
  return detail::from_counts(i, members, mass, 0);
}

/// Empirical marginals of every A_i from one chain. Units without eligible
/// dyads inside N_i get a point mass on the empty local treatment.
inline std::vector<LocalDistribution> local_marginals(const ErgmModel& model, const NeighborhoodSystem& nbhds,
                                                      const SamplerConfig& cfg) {
  if (nbhds.size() != model.units()) throw ValidationError("neighborhood system size differs from model");
  if (cfg.n_draws == 0) throw ValidationError("local marginal needs at least one draw");
  const std::size_t n = model.units();
  for (std::size_t i = 0; i < n; ++i) detail::check_local_size(nbhds, i);
  std::vector<std::unordered_map<std::uint64_t, double>> counts(n);
  const bool ran = run_chain(model, cfg, std::nullopt, [&](const Network& net, const Eigen::VectorXd&) {
    for (std::size_t i = 0; i < n; ++i) counts[i][local_code(net, nbhds.members(i))] += 1.0;
  });
  if (!ran) {
    warn("restricted space has no eligible dyads; local treatments are identically empty");
    for (auto& c : counts) c[0] = static_cast<double>(cfg.n_draws);
  }
  std::vector<LocalDistribution> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(detail::from_counts(i, nbhds.members(i), counts[i], cfg.n_draws));
  return out;
}

inline LocalDistribution local_marginal(const ErgmModel& model, std::size_t i, const NeighborhoodSystem& nbhds,
                                        const SamplerConfig& cfg) {
  if (i >= model.units()) throw ValidationError("unit out of range");
  detail::check_local_size(nbhds, i);
  std::unordered_map<std::uint64_t, double> counts;
  const auto& members = nbhds.members(i);
  const bool ran = run_chain(model, cfg, std::nullopt,
                             [&](const Network& net, const Eigen::VectorXd&) { counts[local_code(net, members)] += 1.0; });
  if (!ran) counts[0] = static_cast<double>(cfg.n_draws);
  if (cfg.n_draws == 0) throw ValidationError("local marginal needs at least one draw");
  return detail::from_counts(i, members, counts, cfg.n_draws);
}

/// Maximum pseudo-likelihood estimate: logistic regression of the observed
/// dyad indicators on their change statistics over all eligible dyads.
/// `structure` supplies spec, space, covariates and blocks; its eta is ignored.
inline Eigen::VectorXd mple(const ErgmModel& structure, const Network& observed) {
  const auto& dyads = structure.space().dyads();
  if (dyads.empty()) throw ValidationError("pseudo-likelihood needs at least one eligible dyad");
  if (!structure.space().admits(observed)) throw ValidationError("observed network lies outside the restricted space");
  const auto p = static_cast<Eigen::Index>(structure.dimension());
  const auto D = static_cast<Eigen::Index>(dyads.size());
  Eigen::MatrixXd X(D, p);
  Eigen::VectorXd y(D);
  std::vector<double> scratch(structure.spec().size());
  Eigen::VectorXd row(p);
  for (Eigen::Index d = 0; d < D; ++d) {
    const auto [i, j] = dyads[static_cast<std::size_t>(d)];
    structure.change_into(observed, i, j, scratch, std::span<double>(row.data(), static_cast<std::size_t>(p)));
    X.row(d) = row.transpose();
    y[d] = observed.has_edge(i, j) ? 1.0 : 0.0;
  }

  auto separates = [&](const Eigen::VectorXd& v) {
    const Eigen::VectorXd s = X * v;
    for (Eigen::Index d = 0; d < D; ++d) {
      const double signed_score = (2.0 * y[d] - 1.0) * s[d];
      if (signed_score < -1e-9 * (1.0 + X.row(d).norm())) return false;
    }
    return true;
  };
  auto degenerate = [&](const Eigen::VectorXd& v) {
    std::string msg = "degenerate pseudo-likelihood: separating direction (";
    for (Eigen::Index k = 0; k < v.size(); ++k) msg += (k ? ", " : "") + std::to_string(v[k]);
    return NumericalError(msg + ")");
  };

  const double ones = y.sum();
  if (ones == 0.0 || ones == static_cast<double>(D)) {
    Eigen::VectorXd dir = X.colwise().mean().transpose();
    if (ones == 0.0) dir = -dir;
    if (dir.norm() > 0) dir.normalize();
    throw degenerate(dir);
  }

  auto loglik = [&](const Eigen::VectorXd& eta) {
    const Eigen::VectorXd s = X * eta;
    double ll = 0.0;
    for (Eigen::Index d = 0; d < D; ++d) ll += y[d] * s[d] - softplus(s[d]);
    return ll;
  };

  Eigen::VectorXd eta = Eigen::VectorXd::Zero(p);
  double ll = loglik(eta);
  for (int iter = 0; iter < 500; ++iter) {
    const Eigen::VectorXd s = X * eta;
    Eigen::VectorXd prob(D), wts(D);
    for (Eigen::Index d = 0; d < D; ++d) {
      prob[d] = expit(s[d]);
      wts[d] = prob[d] * (1.0 - prob[d]);
    }
    const Eigen::VectorXd grad = X.transpose() * (y - prob);
    if (grad.norm() <= 1e-8) return eta;
    const Eigen::MatrixXd H = X.transpose() * wts.asDiagonal() * X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd step;
    const bool newton = ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-14;
    if (newton)
      step = ldlt.solve(grad);
    else
      step = grad;
    // Log-likelihood differences drown in rounding once the Newton step is this small.
    if (newton && step.norm() <= 1e-10 * (1.0 + eta.norm())) return eta + step;
    const double slack = 1e-12 * (1.0 + std::abs(ll));
    double t = 1.0;
    Eigen::VectorXd cand = eta + step;
    double cand_ll = loglik(cand);
    while (cand_ll < ll - slack && t > 1e-10) {
      t *= 0.5;
      cand = eta + t * step;
      cand_ll = loglik(cand);
    }
    const bool stalled = (cand - eta).norm() <= 1e-14 * (1.0 + eta.norm());
    eta = cand;
    ll = cand_ll;
    if (eta.lpNorm<Eigen::Infinity>() > 40.0 && separates(eta.normalized())) throw degenerate(eta.normalized());
    if (stalled) break;
  }
  const Eigen::VectorXd s = X * eta;
  Eigen::VectorXd resid(D);
  for (Eigen::Index d = 0; d < D; ++d) resid[d] = y[d] - expit(s[d]);
  if ((X.transpose() * resid).norm() <= 1e-6) return eta;
  if (separates(eta.normalized())) throw degenerate(eta.normalized());
  throw NumericalError("pseudo-likelihood did not converge");
}

inline Eigen::VectorXd mple(const StatisticSpec& spec, const Network& observed, const RestrictedSpace& space,
                            const CovariateTable& cov) {
  ErgmModel structure(spec, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.size())),
                      std::make_shared<RestrictedSpace>(space), std::make_shared<CovariateTable>(cov));
  return mple(structure, observed);
}

struct FitConfig {
  std::size_t draws = 5000;       // M per iteration
  double burn_in_factor = 10.0;   // burn-in = factor * eligible dyads
  double thin_factor = 1.0;       // thin = factor * eligible dyads
  double trust_radius = 0.5;
  double tol = 1e-4;
  std::size_t max_iters = 30;
  /// A step is treated as Monte Carlo noise when M * step' Cov step falls
  /// below this chi-square quantile.
  double noise_quantile = 0.95;
  std::uint64_t seed = 1;
};

struct FitResult {
  Eigen::VectorXd eta_hat;
  Eigen::VectorXd se;
  std::size_t iterations = 0;
  bool converged = false;
  Eigen::VectorXd sim_mean;
  Eigen::MatrixXd sim_cov;
};

namespace detail {

struct WeightedMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double log_mean_weight = 0.0;  // log (1/M) sum exp(s_m)
};

/// Moments of the rows of S under importance weights ∝ exp(S delta).
inline WeightedMoments weighted_moments(const Eigen::MatrixXd& S, const Eigen::VectorXd& delta) {
  const Eigen::VectorXd s = S * delta;
  const double lse = log_sum_exp(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())));
  Eigen::VectorXd w = (s.array() - lse).exp().matrix();
  WeightedMoments out;
  out.mean = S.transpose() * w;
  const Eigen::MatrixXd centered = S.rowwise() - out.mean.transpose();
  out.cov = centered.transpose() * w.asDiagonal() * centered;
  out.log_mean_weight = lse - std::log(static_cast<double>(S.rows()));
  return out;
}

}  // namespace detail

/// Monte Carlo maximum likelihood (importance-sampled log-likelihood ratio,
/// trust-region Newton), started from `init` or the MPLE.
inline FitResult mcmc_mle(const ErgmModel& structure, const Network& observed, const FitConfig& cfg,
                          std::optional<Eigen::VectorXd> init = std::nullopt) {
  if (!structure.space().admits(observed)) throw ValidationError("observed network lies outside the restricted space");
  const std::size_t D = structure.space().dyads().size();
  if (D == 0) throw ValidationError("model has no eligible dyads");
  if (cfg.draws < 2) throw ValidationError("MCMC-MLE needs at least two draws per iteration");
  const auto p = static_cast<Eigen::Index>(structure.dimension());
  Eigen::VectorXd eta0 = init ? *init : mple(structure, observed);
  if (eta0.size() != p) throw ValidationError("initial parameter dimension mismatch");
  const Eigen::VectorXd g_obs = structure.statistics(observed);
  const double noise_bound =
      boost::math::quantile(boost::math::chi_squared(static_cast<double>(p)), cfg.noise_quantile);

  SamplerConfig sc;
  sc.burn_in = static_cast<std::size_t>(std::ceil(cfg.burn_in_factor * static_cast<double>(D)));
  sc.thin = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.thin_factor * static_cast<double>(D))));
  sc.n_draws = cfg.draws;

  FitResult result;
  Eigen::MatrixXd S;
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(p);
  int outside_streak = 0;
  for (std::size_t iter = 1; iter <= cfg.max_iters; ++iter) {
    result.iterations = iter;
    sc.seed = derive_seed(cfg.seed, "mcmc-mle", iter);
    S = sample_statistics(structure.with_eta(eta0), sc, observed);

    const Eigen::VectorXd lo = S.colwise().minCoeff().transpose();
    const Eigen::VectorXd hi = S.colwise().maxCoeff().transpose();
    bool outside_all = true;
    for (Eigen::Index k = 0; k < p; ++k) outside_all = outside_all && (g_obs[k] < lo[k] || g_obs[k] > hi[k]);
    outside_streak = outside_all ? outside_streak + 1 : 0;
    if (outside_streak >= 3) throw NumericalError("model degeneracy suspected: observed statistics outside the simulated range");

    // Maximize (eta - eta0)' g_obs - log mean exp{(eta - eta0)' g_m} within the trust region.
    auto objective = [&](const Eigen::VectorXd& dlt) {
      return dlt.dot(g_obs) - detail::weighted_moments(S, dlt).log_mean_weight;
    };
    delta.setZero();
    double f = 0.0;
    bool on_boundary = false;
    for (int k = 0; k < 100; ++k) {
      const auto mom = detail::weighted_moments(S, delta);
      const Eigen::VectorXd grad = g_obs - mom.mean;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(mom.cov);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-13)
        throw NumericalError("simulated statistics have a singular covariance; model degeneracy suspected");
      Eigen::VectorXd cand = delta + ldlt.solve(grad);
      on_boundary = false;
      if (cand.norm() > cfg.trust_radius) {
        cand *= cfg.trust_radius / cand.norm();
        on_boundary = true;
      }
      double fc = objective(cand);
      for (int h = 0; h < 40 && fc < f - 1e-12; ++h) {
        cand = 0.5 * (delta + cand);
        fc = objective(cand);
      }
      const double moved = (cand - delta).norm();
      delta = cand;
      f = fc;
      if (moved <= 1e-10 || grad.norm() <= 1e-10) break;
    }

    const Eigen::MatrixXd cov0 = detail::weighted_moments(S, Eigen::VectorXd::Zero(p)).cov;
    const double noise_stat = static_cast<double>(S.rows()) * delta.dot(cov0 * delta);
    eta0 += delta;
    if (!on_boundary && (delta.norm() <= cfg.tol || noise_stat <= noise_bound)) {
      result.converged = true;
      break;
    }
  }

  // Moments at eta_hat by reweighting the last sample.
  const auto mom = detail::weighted_moments(S, delta);
  result.eta_hat = eta0;
  result.sim_mean = mom.mean;
  result.sim_cov = mom.cov;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(mom.cov);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-13) {
    const Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    result.se = inv.diagonal().cwiseMax(0.0).cwiseSqrt();
  } else {
    result.se = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  }
  if (!result.converged) warn("MCMC-MLE did not converge within " + std::to_string(cfg.max_iters) + " iterations");
  return result;
}

/// One goodness-of-fit record: model statistics and degree counts.
struct GofRecord {
  Eigen::VectorXd statistics;
  std::vector<std::size_t> degree_counts;  // degree_counts[d] = units with degree d
};

inline GofRecord gof_record(const ErgmModel& model, const Network& net) {
  GofRecord r;
  r.statistics = model.statistics(net);
  for (std::size_t i = 0; i < net.size(); ++i) {
    const std::size_t d = net.degree(i);
    if (r.degree_counts.size() <= d) r.degree_counts.resize(d + 1, 0);
    ++r.degree_counts[d];
  }
  return r;
}

/// Networks simulated from the fitted model, spaced one chain-thinning apart.
inline std::vector<GofRecord> gof_simulations(const ErgmModel& fitted, const Network& observed, std::size_t sims,
                                              std::uint64_t seed) {
  const std::size_t D = fitted.space().dyads().size();
  SamplerConfig sc{10 * D, std::max<std::size_t>(1, D), sims, derive_seed(seed, "gof")};
  std::vector<GofRecord> out;
  out.reserve(sims);
  const bool ran = run_chain(fitted, sc, observed, [&](const Network& net, const Eigen::VectorXd&) {
    out.push_back(gof_record(fitted, net));
  });
  if (!ran)
    for (std::size_t s = 0; s < sims; ++s) out.push_back(gof_record(fitted, observed));
  return out;
}

}  // namespace edgecause
