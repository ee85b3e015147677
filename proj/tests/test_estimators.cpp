#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "edgecause/estimators.hpp"
#include "oracles.hpp"

using namespace edgecause;

namespace {

struct Instance {
  std::vector<double> w, y;
  OmegaMatrix omega;
};

Instance random_instance(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u;
  std::normal_distribution<double> normal;
  std::vector<double> x(n), z(n);
  for (auto& v : x) v = u(rng);
  for (auto& v : z) v = u(rng);
  const auto nb = knn_neighborhoods(DistanceMatrix::euclidean(x, z), 3);
  Instance in;
  in.omega = omega_matrix(dependence_from_overlap(nb));
  for (std::size_t i = 0; i < n; ++i) {
    in.w.push_back(std::exp(0.5 * normal(rng)));
    in.y.push_back(1.0 + normal(rng));
  }
  return in;
}

}  // namespace

TEST(HorvitzThompson, Examples) {
  const std::vector<double> ones(4, 1.0), y{1, 2, 3, 6};
  EXPECT_DOUBLE_EQ(horvitz_thompson(ones, y), 3.0);
  EXPECT_DOUBLE_EQ(horvitz_thompson(std::vector<double>{2, 0.5}, std::vector<double>{1, 4}), 2.0);
}

TEST(Hajek, Examples) {
  EXPECT_DOUBLE_EQ(hajek(std::vector<double>{2, 0.5}, std::vector<double>{1, 4}), 1.6);
  const std::vector<double> y{1, 2, 3, 6};
  EXPECT_DOUBLE_EQ(hajek(std::vector<double>(4, 3.7), y), 3.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  std::vector<double> w(10);
  for (auto& v : w) v = u(rng);
  EXPECT_NEAR(hajek(w, std::vector<double>(10, 2.5)), 2.5, 1e-15);
  EXPECT_THROW(hajek(std::vector<double>{0, 0}, std::vector<double>{1, 2}), ValidationError);
}

TEST(Hajek, ScaleInvariance) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> w(20), y(20);
    for (auto& v : w) v = u(rng);
    for (auto& v : y) v = u(rng) - 1.5;
    const double c = std::exp(4.0 * (u(rng) - 1.5));
    std::vector<double> cw = w;
    for (auto& v : cw) v *= c;
    EXPECT_NEAR(hajek(w, y), hajek(cw, y), 1e-12);
  }
}

TEST(Estimators, CoincideForEqualWeights) {
  std::vector<double> w(7, 1.0), y{1.5, -2, 3, 0.25, 9, -1, 4};
  EXPECT_EQ(horvitz_thompson(w, y), hajek(w, y));
}

TEST(Omega, Examples) {
  const auto id = omega_matrix(DependenceSystem({{0}, {1}, {2}}));
  const Eigen::MatrixXd d = id.dense();
  EXPECT_TRUE(d.isApprox(Eigen::MatrixXd::Identity(3, 3)));
  const auto full = omega_matrix(DependenceSystem({{0, 1, 2}, {0, 1, 2}, {0, 1, 2}}));
  EXPECT_TRUE(full.dense().isApprox(Eigen::MatrixXd::Ones(3, 3)));
  const auto ex = omega_matrix(DependenceSystem({{0, 1}, {0, 1}, {2}}));
  EXPECT_NEAR(ex(0, 1), 1.2, 1e-15);
  EXPECT_EQ(ex(0, 2), 0.0);
  EXPECT_THROW(omega_matrix(DependenceSystem(std::vector<std::vector<std::size_t>>(2))), ValidationError);
}

TEST(Omega, SymmetricNonnegativeAndSparseByDisjointness) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    auto in = random_instance(60, rng);
    const Eigen::MatrixXd d = in.omega.dense();
    EXPECT_TRUE(d.isApprox(d.transpose(), 0.0));
    EXPECT_GE(d.minCoeff(), 0.0);
  }
  const DependenceSystem dep({{0, 1}, {0, 1}, {2, 3}, {2, 3}});
  EXPECT_EQ(omega_matrix(dep)(0, 3), 0.0);
}

TEST(Variance, IdentityOmegaIsPlainMoment) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  const std::size_t n = 30;
  std::vector<std::vector<std::size_t>> own(n);
  for (std::size_t i = 0; i < n; ++i) own[i] = {i};
  const auto omega = omega_matrix(DependenceSystem(own));
  std::vector<double> w(n), y(n);
  for (auto& v : w) v = std::exp(normal(rng));
  for (auto& v : y) v = normal(rng);
  const double theta = horvitz_thompson(w, y);
  double plain = 0.0;
  for (std::size_t i = 0; i < n; ++i) plain += (w[i] * y[i] - theta) * (w[i] * y[i] - theta);
  plain /= double(n * n);
  EXPECT_NEAR(variance_closed_form(w, y, theta, omega), plain, 1e-12);
}

TEST(Variance, ZeroOutcomesGiveZero) {
  std::mt19937_64 rng(5);
  auto in = random_instance(20, rng);
  const std::vector<double> ones(20, 1.0), zeros(20, 0.0);
  EXPECT_EQ(variance_closed_form(ones, zeros, 0.0, in.omega), 0.0);
}

TEST(Variance, PermutationInvariance) {
  std::mt19937_64 rng(6);
  auto in = random_instance(40, rng);
  const double theta = horvitz_thompson(in.w, in.y);
  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> inv(40);
  for (std::size_t k = 0; k < 40; ++k) inv[perm[k]] = k;
  std::vector<double> pw(40), py(40);
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(40);
  for (std::size_t k = 0; k < 40; ++k) {
    pw[k] = in.w[perm[k]];
    py[k] = in.y[perm[k]];
    for (const auto& [j, v] : in.omega.row(perm[k])) rows[k].emplace_back(inv[j], v);
    std::sort(rows[k].begin(), rows[k].end());
  }
  const OmegaMatrix pomega(40, rows);
  EXPECT_NEAR(variance_closed_form(in.w, in.y, theta, in.omega), variance_closed_form(pw, py, theta, pomega), 1e-14);
}

TEST(Variance, NegativeValuesClampWithWarning) {
  // A non-PSD pattern can make the quadratic form negative.
  std::vector<std::vector<std::pair<std::size_t, double>>> rows{{{0, 1.0}, {1, 2.0}}, {{0, 2.0}, {1, 1.0}}};
  const OmegaMatrix omega(2, rows);
  std::string seen;
  auto saved = warning_sink();
  warning_sink() = [&](std::string_view m) { seen = m; };
  const double v = variance_from_influence(std::vector<double>{1.0, -1.0}, omega);
  warning_sink() = saved;
  EXPECT_EQ(v, 0.0);
  EXPECT_FALSE(seen.empty());
}

TEST(Bootstrap, MatchesClosedFormOnRandomInstances) {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    auto in = random_instance(rep % 2 ? 50 : 20, rng);
    const double theta = horvitz_thompson(in.w, in.y);
    const double closed = variance_closed_form(in.w, in.y, theta, in.omega);
    const double boot = wild_bootstrap(in.w, in.y, theta, in.omega, 20000, 100 + rep);
    EXPECT_LE(std::abs(boot - closed), 0.05 * closed) << "instance " << rep;
  }
}

TEST(Bootstrap, IdentityOmegaAndDegenerateCases) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal;
  std::vector<std::vector<std::size_t>> own(30);
  for (std::size_t i = 0; i < 30; ++i) own[i] = {i};
  const auto omega = omega_matrix(DependenceSystem(own));
  std::vector<double> w(30, 1.0), y(30);
  for (auto& v : y) v = normal(rng);
  const double theta = horvitz_thompson(w, y);
  const double closed = variance_closed_form(w, y, theta, omega);
  EXPECT_LE(std::abs(wild_bootstrap(w, y, theta, omega, 20000, 3) - closed), 0.05 * closed);

  const std::vector<double> c(30, 2.0);
  EXPECT_EQ(wild_bootstrap(w, c, 2.0, omega, 100, 3), 0.0);
  try {
    wild_bootstrap(w, y, theta, omega, 1, 3);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient replicates"), std::string::npos);
  }
}

TEST(Report, ShapeContrastAndIntervals) {
  std::mt19937_64 rng(9);
  auto in = random_instance(30, rng);
  const std::vector<double> grid{-0.69, 0.0, 0.41, 0.69};
  std::vector<WeightSet> ws;
  for (double l : grid) {
    WeightSet s;
    for (double w : in.w) s.w.push_back(l == 0.0 ? 1.0 : std::pow(w, l));
    s.denominator_mcse.assign(30, 0.0);
    ws.push_back(s);
  }
  const auto rows = report(grid, ws, in.y, in.omega, 0.95);
  ASSERT_EQ(rows.size(), 8u);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    EXPECT_EQ(r.lambda, grid[k / 2]);
    EXPECT_EQ(r.kind, k % 2 ? EstimatorKind::Hajek : EstimatorKind::HorvitzThompson);
    EXPECT_LE(r.ci_low, r.estimate);
    EXPECT_GE(r.ci_high, r.estimate);
    EXPECT_GE(r.se, 0.0);
    EXPECT_NEAR(r.ci_high - r.estimate, 1.959964 * r.se, 1e-6 * (1 + r.se));
  }
  EXPECT_EQ(rows[2].contrast_vs_zero, 0.0);
  EXPECT_EQ(rows[2].contrast_se, 0.0);
  EXPECT_EQ(rows[3].contrast_vs_zero, 0.0);
  EXPECT_EQ(rows[3].contrast_se, 0.0);

  const std::vector<double> nozero{0.3};
  std::vector<WeightSet> one{ws[2]};
  EXPECT_TRUE(std::isnan(report(nozero, one, in.y, in.omega)[0].contrast_vs_zero));
}

TEST(Report, LambdaZeroIsSampleMeanBitExact) {
  std::mt19937_64 rng(10);
  auto in = random_instance(37, rng);
  WeightSet s;
  const std::vector<std::size_t> e(37, 2);
  const std::vector<DenominatorEstimate> d(37, DenominatorEstimate{1.0, 0.0});
  s = ipw_weights(e, 0.0, d);
  for (double w : s.w) EXPECT_EQ(w, 1.0);
  double mean = 0.0;
  for (double v : in.y) mean += v;
  mean /= 37.0;
  EXPECT_EQ(horvitz_thompson(s.w, in.y), mean);
  EXPECT_EQ(hajek(s.w, in.y), mean);
}

TEST(Report, QuantileAndLevelValidation) {
  EXPECT_NEAR(normal_quantile(0.95), 1.959964, 1e-6);
  EXPECT_THROW(normal_quantile(1.0), ValidationError);
}

TEST(Outcomes, NonFiniteRejected) {
  EXPECT_THROW(check_outcomes(std::vector<double>{1.0, std::nan("")}), ValidationError);
}
