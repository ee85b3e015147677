#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "edgecause/error.hpp"
#include "edgecause/network.hpp"

namespace edgecause {

/// Per-unit covariates, stored column-major. Integer-valued columns may be
/// flagged categorical; only those can enter nodematch terms.
class CovariateTable {
 public:
  CovariateTable() = default;
  explicit CovariateTable(std::size_t n) : n_(n) {}

  void add_column(std::string name, std::vector<double> values, bool categorical = false) {
    if (values.size() != n_)
      throw ValidationError("covariate column '" + name + "' has " + std::to_string(values.size()) +
                            " rows, expected " + std::to_string(n_));
    names_.push_back(std::move(name));
    cols_.push_back(std::move(values));
    categorical_.push_back(categorical);
  }

  std::size_t rows() const { return n_; }
  std::size_t cols() const { return cols_.size(); }
  const std::string& name(std::size_t p) const { return names_[p]; }
  bool categorical(std::size_t p) const { return categorical_[p]; }
  std::span<const double> column(std::size_t p) const { return cols_[p]; }
  double operator()(std::size_t i, std::size_t p) const { return cols_[p][i]; }

  std::size_t index(std::string_view name) const {
    for (std::size_t p = 0; p < names_.size(); ++p)
      if (names_[p] == name) return p;
    throw ValidationError("missing covariate column '" + std::string(name) + "'");
  }

  /// Continuous columns rescaled to zero mean and unit variance (divisor n);
  /// categorical and constant columns are left as they are.
  CovariateTable standardized() const {
    CovariateTable out = *this;
    for (std::size_t p = 0; p < cols(); ++p) {
      if (categorical_[p] || n_ == 0) continue;
      auto& c = out.cols_[p];
      double mean = 0.0;
      for (double v : c) mean += v;
      mean /= static_cast<double>(n_);
      double var = 0.0;
      for (double v : c) var += (v - mean) * (v - mean);
      var /= static_cast<double>(n_);
      if (var <= 0.0) continue;
      const double sd = std::sqrt(var);
      for (double& v : c) v = (v - mean) / sd;
    }
    return out;
  }

  /// Row k of the result is row perm[k] of this table.
  CovariateTable permuted(std::span<const std::size_t> perm) const {
    CovariateTable out(n_);
    for (std::size_t p = 0; p < cols(); ++p) {
      std::vector<double> c(n_);
      for (std::size_t k = 0; k < n_; ++k) c[k] = cols_[p][perm[k]];
      out.add_column(names_[p], std::move(c), categorical_[p]);
    }
    return out;
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> cols_;
  std::vector<bool> categorical_;
};

enum class TermKind { Edges, NodeCov, AbsDiff, NodeMatch, Gwesp, BetweenEdges, BetweenNodeCov };

struct Term {
  TermKind kind = TermKind::Edges;
  std::size_t covariate = 0;
  double decay = 0.0;

  static Term edges() { return {TermKind::Edges}; }
  static Term nodecov(std::size_t p) { return {TermKind::NodeCov, p}; }
  static Term absdiff(std::size_t p) { return {TermKind::AbsDiff, p}; }
  static Term nodematch(std::size_t p) { return {TermKind::NodeMatch, p}; }
  static Term gwesp(double decay) { return {TermKind::Gwesp, 0, decay}; }
  static Term between_edges() { return {TermKind::BetweenEdges}; }
  static Term between_nodecov(std::size_t p) { return {TermKind::BetweenNodeCov, p}; }

  bool between() const { return kind == TermKind::BetweenEdges || kind == TermKind::BetweenNodeCov; }
  bool uses_covariate() const {
    return kind == TermKind::NodeCov || kind == TermKind::AbsDiff || kind == TermKind::NodeMatch ||
           kind == TermKind::BetweenNodeCov;
  }
};

/// Ordered list of statistic terms; component k of g(a, x) is terms[k].
/// With a block membership, non-between terms count only within-block dyads
/// (and within-block shared partners); between terms count only cross-block dyads.
struct StatisticSpec {
  std::vector<Term> terms;

  std::size_t size() const { return terms.size(); }

  bool dyad_independent() const {
    for (const auto& t : terms)
      if (t.kind == TermKind::Gwesp) return false;
    return true;
  }

  void validate(const CovariateTable& cov, bool has_blocks) const {
    if (terms.empty()) throw ValidationError("statistic spec has no terms");
    int edges = 0, between_edges = 0;
    for (const auto& t : terms) {
      if (t.uses_covariate()) {
        if (t.covariate >= cov.cols())
          throw ValidationError("missing covariate column index " + std::to_string(t.covariate));
        if (t.kind == TermKind::NodeMatch && !cov.categorical(t.covariate))
          throw ValidationError("nodematch requires a categorical covariate; '" + cov.name(t.covariate) +
                                "' is continuous");
      }
      if (t.kind == TermKind::Gwesp && !std::isfinite(t.decay))
        throw ValidationError("gwesp decay must be finite");
      if (t.between() && !has_blocks)
        throw ValidationError("between-block terms require a block structure");
      edges += t.kind == TermKind::Edges;
      between_edges += t.kind == TermKind::BetweenEdges;
    }
    if (edges > 1 || between_edges > 1) throw ValidationError("at most one edges term is allowed");
  }
};

inline std::string term_label(const Term& t, const CovariateTable& cov) {
  auto col = [&] { return t.covariate < cov.cols() ? cov.name(t.covariate) : std::to_string(t.covariate); };
  switch (t.kind) {
    case TermKind::Edges: return "edges";
    case TermKind::NodeCov: return "nodecov." + col();
    case TermKind::AbsDiff: return "absdiff." + col();
    case TermKind::NodeMatch: return "nodematch." + col();
    case TermKind::Gwesp: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "gwesp.%g", t.decay);
      return buf;
    }
    case TermKind::BetweenEdges: return "between.edges";
    case TermKind::BetweenNodeCov: return "between.nodecov." + col();
  }
  return "?";
}

/// Edge weight of the geometrically weighted edgewise shared-partner
/// statistic for an edge with `shared` partners:
///   sum_{k>=1} C(L,k) (-e^{-decay})^{k-1} = e^{decay} (1 - (1 - e^{-decay})^L).
inline double gwesp_edge_weight(std::size_t shared, double decay) {
  if (shared == 0) return 0.0;
  return std::exp(decay) * (1.0 - std::pow(1.0 - std::exp(-decay), static_cast<double>(shared)));
}

namespace detail {

inline bool same_block(std::span<const int> blocks, std::size_t i, std::size_t j) {
  return blocks.empty() || blocks[i] == blocks[j];
}

/// Shared partners of i and j, optionally restricted to i's block and
/// excluding unit `skip`.
inline std::size_t shared_partners(const Network& net, std::span<const int> blocks, std::size_t i,
                                   std::size_t j, std::size_t skip = static_cast<std::size_t>(-1)) {
  const auto& ni = net.neighbors(i);
  const auto& nj = net.neighbors(j);
  const bool i_smaller = ni.size() <= nj.size();
  const auto& scan = i_smaller ? ni : nj;
  const std::size_t other = i_smaller ? j : i;
  std::size_t count = 0;
  for (std::size_t m : scan) {
    if (m == skip || m == other) continue;
    if (!blocks.empty() && blocks[m] != blocks[i]) continue;
    if (net.has_edge(m, other)) ++count;
  }
  return count;
}

inline double dyad_term_value(const Term& t, const CovariateTable& cov, std::size_t i, std::size_t j) {
  switch (t.kind) {
    case TermKind::Edges:
    case TermKind::BetweenEdges: return 1.0;
    case TermKind::NodeCov:
    case TermKind::BetweenNodeCov: return cov(i, t.covariate) + cov(j, t.covariate);
    case TermKind::AbsDiff: return std::abs(cov(i, t.covariate) - cov(j, t.covariate));
    case TermKind::NodeMatch: return cov(i, t.covariate) == cov(j, t.covariate) ? 1.0 : 0.0;
    case TermKind::Gwesp: return 0.0;
  }
  return 0.0;
}

}  // namespace detail

/// g(a, x) by full evaluation.
inline Eigen::VectorXd compute_statistics(const Network& net, const CovariateTable& cov, const StatisticSpec& spec,
                                          std::span<const int> blocks = {}) {
  spec.validate(cov, !blocks.empty());
  if (cov.rows() != net.size()) throw ValidationError("covariate table rows differ from network size");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.size()));
  for (const auto& [i, j] : net.edges()) {
    const bool within = detail::same_block(blocks, i, j);
    for (std::size_t k = 0; k < spec.size(); ++k) {
      const Term& t = spec.terms[k];
      if (t.between() == within) continue;
      if (t.kind == TermKind::Gwesp)
        g[static_cast<Eigen::Index>(k)] += gwesp_edge_weight(detail::shared_partners(net, blocks, i, j), t.decay);
      else
        g[static_cast<Eigen::Index>(k)] += detail::dyad_term_value(t, cov, i, j);
    }
  }
  return g;
}

/// g(a^{ij+}, x) - g(a^{ij-}, x), computed locally around the dyad. `out`
/// must have spec.size() entries. Does not validate the spec.
inline void change_statistics_into(const Network& net, const CovariateTable& cov, const StatisticSpec& spec,
                                   std::size_t i, std::size_t j, std::span<double> out,
                                   std::span<const int> blocks = {}) {
  const bool within = detail::same_block(blocks, i, j);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const Term& t = spec.terms[k];
    if (t.between() == within) {
      out[k] = 0.0;
      continue;
    }
    if (t.kind != TermKind::Gwesp) {
      out[k] = detail::dyad_term_value(t, cov, i, j);
      continue;
    }
    // The new edge contributes with its own partner count; every common
    // neighbor c gains j as a partner of edge (i,c) and i as a partner of (j,c).
    double delta = 0.0;
    std::size_t common = 0;
    for (std::size_t c : net.neighbors(i)) {
      if (c == j || !net.has_edge(c, j)) continue;
      if (!blocks.empty() && blocks[c] != blocks[i]) continue;
      ++common;
      const std::size_t lic = detail::shared_partners(net, blocks, i, c, j);
      const std::size_t ljc = detail::shared_partners(net, blocks, j, c, i);
      delta += gwesp_edge_weight(lic + 1, t.decay) - gwesp_edge_weight(lic, t.decay);
      delta += gwesp_edge_weight(ljc + 1, t.decay) - gwesp_edge_weight(ljc, t.decay);
    }
    out[k] = delta + gwesp_edge_weight(common, t.decay);
  }
}

inline Eigen::VectorXd change_statistics(const Network& net, const CovariateTable& cov, const StatisticSpec& spec,
                                         std::size_t i, std::size_t j, std::span<const int> blocks = {}) {
  if (i == j) throw ValidationError("change statistic requires i != j");
  if (i >= net.size() || j >= net.size()) throw ValidationError("dyad out of range");
  spec.validate(cov, !blocks.empty());
  Eigen::VectorXd out(static_cast<Eigen::Index>(spec.size()));
  change_statistics_into(net, cov, spec, i, j, std::span<double>(out.data(), spec.size()), blocks);
  return out;
}

}  // namespace edgecause
