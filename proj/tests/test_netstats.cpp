#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "edgecause/netstats.hpp"
#include "oracles.hpp"

using namespace edgecause;

namespace {

StatisticSpec all_terms() {
  StatisticSpec s;
  s.terms = {Term::edges(), Term::nodecov(0), Term::nodecov(1), Term::absdiff(0), Term::nodematch(2),
             Term::gwesp(0.3), Term::gwesp(1.1)};
  return s;
}

StatisticSpec block_terms() {
  StatisticSpec s = all_terms();
  s.terms.push_back(Term::between_edges());
  s.terms.push_back(Term::between_nodecov(0));
  return s;
}

Network triangle() {
  const std::vector<Dyad> e{{0, 1}, {0, 2}, {1, 2}};
  return build_network(3, e);
}

CovariateTable single_cov(std::vector<double> x) {
  CovariateTable c(x.size());
  c.add_column("x", std::move(x));
  return c;
}

}  // namespace

TEST(Statistics, TriangleEdges) {
  StatisticSpec s;
  s.terms = {Term::edges()};
  EXPECT_DOUBLE_EQ(compute_statistics(triangle(), single_cov({0, 0, 0}), s)[0], 3.0);
}

TEST(Statistics, NodeCovSingleEdge) {
  StatisticSpec s;
  s.terms = {Term::nodecov(0)};
  const std::vector<Dyad> e{{0, 1}};
  EXPECT_NEAR(compute_statistics(build_network(2, e), single_cov({0.5, -0.2}), s)[0], 0.3, 1e-15);
}

TEST(Statistics, GwespTriangleIsThree) {
  StatisticSpec s;
  s.terms = {Term::gwesp(0.3)};
  EXPECT_NEAR(compute_statistics(triangle(), single_cov({0, 0, 0}), s)[0], 3.0, 1e-12);
  EXPECT_NEAR(oracle::statistics(triangle(), single_cov({0, 0, 0}), s)[0], 3.0, 1e-12);
}

TEST(Statistics, MatchesBruteForceOracle) {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 4 + rep % 13;
    const auto cov = oracle::random_covariates(n, rng);
    const Network net = oracle::random_network(n, 0.15 + 0.02 * (rep % 20), rng);
    const auto lib = compute_statistics(net, cov, all_terms());
    const auto ref = oracle::statistics(net, cov, all_terms());
    for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(lib[static_cast<Eigen::Index>(k)], ref[k], 1e-9 * (1 + std::abs(ref[k])));
  }
}

TEST(Statistics, BlocksMatchBruteForceOracle) {
  std::mt19937_64 rng(22);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 6 + rep % 10;
    const auto cov = oracle::random_covariates(n, rng);
    std::vector<int> blocks(n);
    for (auto& b : blocks) b = static_cast<int>(rng() % 3);
    const Network net = oracle::random_network(n, 0.35, rng);
    const auto lib = compute_statistics(net, cov, block_terms(), blocks);
    const auto ref = oracle::statistics(net, cov, block_terms(), blocks);
    for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(lib[static_cast<Eigen::Index>(k)], ref[k], 1e-9 * (1 + std::abs(ref[k])));
  }
}

TEST(Statistics, GwespClosedFormEqualsLiteralSum) {
  // h(L) = sum_{k>=1} C(L,k) (-e^{-tau})^{k-1}
  for (double tau : {0.0, 0.3, 1.7}) {
    for (std::size_t L = 0; L < 15; ++L) {
      double literal = 0.0;
      for (std::size_t k = 1; k <= L; ++k) literal += oracle::binom(L, k) * std::pow(-std::exp(-tau), double(k - 1));
      EXPECT_NEAR(gwesp_edge_weight(L, tau), literal, 1e-9 * (1 + std::abs(literal)));
    }
  }
}

TEST(ChangeStatistics, EdgesAndNodeCovExamples) {
  StatisticSpec s;
  s.terms = {Term::edges(), Term::nodecov(0)};
  const auto cov = single_cov({0.5, -0.2, 3.0});
  const auto c = change_statistics(triangle(), cov, s, 0, 2);
  EXPECT_DOUBLE_EQ(c[0], 1.0);
  EXPECT_DOUBLE_EQ(c[1], 3.5);
}

TEST(ChangeStatistics, IncrementalEqualsRecomputation) {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 3 + rep % 18;
    const auto cov = oracle::random_covariates(n, rng);
    const bool with_blocks = rep % 2 == 1;
    std::vector<int> blocks;
    if (with_blocks) {
      blocks.resize(n);
      for (auto& b : blocks) b = static_cast<int>(rng() % 2);
    }
    const auto spec = with_blocks ? block_terms() : all_terms();
    Network net = oracle::random_network(n, 0.1 + 0.05 * (rep % 10), rng);
    const std::size_t i = rng() % n;
    std::size_t j = rng() % n;
    if (j == i) j = (i + 1) % n;
    const auto delta = change_statistics(net, cov, spec, i, j, blocks);
    Network plus = net, minus = net;
    plus.set_edge(i, j, true);
    minus.set_edge(i, j, false);
    const Eigen::VectorXd diff = compute_statistics(plus, cov, spec, blocks) - compute_statistics(minus, cov, spec, blocks);
    for (Eigen::Index k = 0; k < diff.size(); ++k) EXPECT_NEAR(delta[k], diff[k], 1e-10) << "term " << k;
  }
}

TEST(Statistics, PermutationInvariance) {
  std::mt19937_64 rng(24);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 5 + rep % 10;
    const auto cov = oracle::random_covariates(n, rng);
    const Network net = oracle::random_network(n, 0.3, rng);
    std::vector<int> blocks(n);
    for (auto& b : blocks) b = static_cast<int>(rng() % 2);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    // New unit k is old unit perm[k].
    std::vector<std::size_t> inv(n);
    for (std::size_t k = 0; k < n; ++k) inv[perm[k]] = k;
    std::vector<Dyad> relabeled;
    for (const auto& [a, b] : net.edges()) relabeled.emplace_back(inv[a], inv[b]);
    const Network pnet = build_network(n, relabeled);
    std::vector<int> pblocks(n);
    for (std::size_t k = 0; k < n; ++k) pblocks[k] = blocks[perm[k]];
    const auto pcov = cov.permuted(perm);
    const auto a = compute_statistics(net, cov, block_terms(), blocks);
    const auto b = compute_statistics(pnet, pcov, block_terms(), pblocks);
    for (Eigen::Index k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-10);
  }
}

TEST(Statistics, EmptyNetworkIsZero) {
  std::mt19937_64 rng(25);
  const auto cov = oracle::random_covariates(9, rng);
  const auto g = compute_statistics(Network(9), cov, all_terms());
  for (Eigen::Index k = 0; k < g.size(); ++k) EXPECT_EQ(g[k], 0.0);
}

TEST(Statistics, GwespVanishesOnForests) {
  std::mt19937_64 rng(26);
  StatisticSpec s;
  s.terms = {Term::gwesp(0.3)};
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 5 + rep;
    Network tree(n);
    for (std::size_t v = 1; v < n; ++v)
      if (rng() % 4 != 0) tree.set_edge(v, rng() % v, true);
    EXPECT_EQ(compute_statistics(tree, single_cov(std::vector<double>(n, 0.0)), s)[0], 0.0);
  }
}

TEST(StatisticSpec, Validation) {
  CovariateTable cov(3);
  cov.add_column("x", {0.1, 0.2, 0.3});
  cov.add_column("g", {1, 2, 1}, true);
  StatisticSpec s;
  s.terms = {Term::nodematch(0)};
  EXPECT_THROW(s.validate(cov, false), ValidationError);
  s.terms = {Term::nodecov(5)};
  EXPECT_THROW(s.validate(cov, false), ValidationError);
  s.terms = {Term::gwesp(std::nan(""))};
  EXPECT_THROW(s.validate(cov, false), ValidationError);
  s.terms = {Term::between_edges()};
  EXPECT_THROW(s.validate(cov, false), ValidationError);
  EXPECT_NO_THROW(s.validate(cov, true));
  s.terms = {Term::edges(), Term::edges()};
  EXPECT_THROW(s.validate(cov, false), ValidationError);
  s.terms = {Term::nodematch(1)};
  EXPECT_NO_THROW(s.validate(cov, false));
  EXPECT_THROW(cov.index("missing"), ValidationError);
}

TEST(CovariateTable, StandardizedHasZeroMeanUnitVariance) {
  CovariateTable cov(4);
  cov.add_column("x", {1, 2, 3, 10});
  cov.add_column("g", {1, 2, 1, 2}, true);
  const auto s = cov.standardized();
  double m = 0, v = 0;
  for (double x : s.column(0)) m += x;
  for (double x : s.column(0)) v += x * x;
  EXPECT_NEAR(m, 0.0, 1e-12);
  EXPECT_NEAR(v / 4, 1.0, 1e-12);
  EXPECT_EQ(s(1, 1), 2.0);
}
