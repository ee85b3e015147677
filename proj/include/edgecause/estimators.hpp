#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "edgecause/error.hpp"
#include "edgecause/intervention.hpp"
#include "edgecause/network.hpp"
#include "edgecause/rng.hpp"

namespace edgecause {

/// Sparse symmetric dependence weights
///   omega_ij = |R_i ∩ R_j| / (n^{-1} sum_k |R_k|).
class OmegaMatrix {
 public:
  OmegaMatrix() = default;
  OmegaMatrix(std::size_t n, std::vector<std::vector<std::pair<std::size_t, double>>> rows)
      : n_(n), rows_(std::move(rows)) {}

  std::size_t size() const { return n_; }
  /// Nonzero entries of row i, ascending in column.
  const std::vector<std::pair<std::size_t, double>>& row(std::size_t i) const { return rows_[i]; }

  double operator()(std::size_t i, std::size_t j) const {
    for (const auto& [k, v] : rows_[i])
      if (k == j) return v;
    return 0.0;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i)
      for (const auto& [j, v] : rows_[i]) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    return m;
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows_;
};

inline OmegaMatrix omega_matrix(const DependenceSystem& dep) {
  const std::size_t n = dep.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += static_cast<double>(dep.members(i).size());
  if (total == 0.0) throw ValidationError("dependence system is empty; omega undefined");
  const double scale = total / static_cast<double>(n);
  // |R_i ∩ R_j| = #{k in R_i : j in R_k}, using symmetry of R.
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(n);
  std::vector<std::size_t> count(n, 0);
  std::vector<std::size_t> touched;
  for (std::size_t i = 0; i < n; ++i) {
    touched.clear();
    for (std::size_t k : dep.members(i))
      for (std::size_t j : dep.members(k))
        if (count[j]++ == 0) touched.push_back(j);
    std::sort(touched.begin(), touched.end());
    for (std::size_t j : touched) {
      rows[i].emplace_back(j, static_cast<double>(count[j]) / scale);
      count[j] = 0;
    }
  }
  return OmegaMatrix(n, std::move(rows));
}

inline void check_outcomes(std::span<const double> y) {
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!std::isfinite(y[i])) throw ValidationError("outcome of unit " + std::to_string(i) + " is not finite");
}

/// (1/n) sum_i w_i Y_i.
inline double horvitz_thompson(std::span<const double> w, std::span<const double> y) {
  if (w.size() != y.size() || w.empty()) throw ValidationError("horvitz_thompson: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * y[i];
  return s / static_cast<double>(w.size());
}

/// sum_i w_i Y_i / sum_i w_i.
inline double hajek(std::span<const double> w, std::span<const double> y) {
  if (w.size() != y.size() || w.empty()) throw ValidationError("hajek: dimension mismatch");
  double s = 0.0, t = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    s += w[i] * y[i];
    t += w[i];
  }
  if (!(t > 0.0)) throw ValidationError("hajek: zero total weight");
  return s / t;
}

/// n^{-2} sum_ij omega_ij r_i r_j over the sparse pattern of omega. Negative
/// values are clamped to zero with a warning.
inline double variance_from_influence(std::span<const double> r, const OmegaMatrix& omega) {
  if (r.size() != omega.size()) throw ValidationError("variance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    double row = 0.0;
    for (const auto& [j, v] : omega.row(i)) row += v * r[j];
    s += r[i] * row;
  }
  const double n = static_cast<double>(r.size());
  double var = s / (n * n);
  if (var < 0.0) {
    warn("closed-form variance was negative (" + std::to_string(var) + "); clamped to zero");
    var = 0.0;
  }
  return var;
}

/// Dependent-wild-bootstrap variance in closed form, with influence terms
/// w_i Y_i - theta_hat.
inline double variance_closed_form(std::span<const double> w, std::span<const double> y, double theta_hat,
                                   const OmegaMatrix& omega) {
  if (w.size() != y.size()) throw ValidationError("variance: dimension mismatch");
  std::vector<double> r(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) r[i] = w[i] * y[i] - theta_hat;
  return variance_from_influence(r, omega);
}

/// Sample variance of theta*_b = (1/n) sum_i [theta_hat + r_i W_i], W ~ N(0, Omega),
/// over B replicates. Omega receives a ridge eps*I, eps = max(0, -lambda_min) + 1e-10,
/// before factorization. Replicate b draws from its own derived stream.
inline double wild_bootstrap_influence(std::span<const double> r, double theta_hat, const OmegaMatrix& omega,
                                       std::size_t B, std::uint64_t seed) {
  if (B < 2) throw ValidationError("insufficient replicates: wild bootstrap needs B >= 2");
  const std::size_t n = r.size();
  if (n != omega.size()) throw ValidationError("bootstrap: dimension mismatch");
  Eigen::MatrixXd om = omega.dense();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(om, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("omega eigendecomposition failed");
  const double ridge = std::max(0.0, -eig.eigenvalues().minCoeff()) + 1e-10;
  om.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(om);
  if (llt.info() != Eigen::Success) throw NumericalError("omega factorization failed after ridge repair");
  // theta* - theta_hat = (1/n) r' L z with z standard Normal.
  const Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(n));
  const Eigen::VectorXd v = llt.matrixL().transpose() * rv / static_cast<double>(n);

  std::vector<double> reps(B);
  Eigen::VectorXd z(static_cast<Eigen::Index>(n));
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng = make_rng(seed, "wild-bootstrap", b);
    std::normal_distribution<double> normal;
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = normal(rng);
    reps[b] = theta_hat + v.dot(z);
  }
  double mean = 0.0;
  for (double t : reps) mean += t;
  mean /= static_cast<double>(B);
  double ss = 0.0;
  for (double t : reps) ss += (t - mean) * (t - mean);
  return ss / static_cast<double>(B - 1);
}

inline double wild_bootstrap(std::span<const double> w, std::span<const double> y, double theta_hat,
                             const OmegaMatrix& omega, std::size_t B, std::uint64_t seed) {
  if (w.size() != y.size()) throw ValidationError("bootstrap: dimension mismatch");
  std::vector<double> r(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) r[i] = w[i] * y[i] - theta_hat;
  return wild_bootstrap_influence(r, theta_hat, omega, B, seed);
}

enum class EstimatorKind { HorvitzThompson, Hajek };

inline const char* estimator_name(EstimatorKind k) { return k == EstimatorKind::Hajek ? "hajek" : "ht"; }

/// Influence terms whose omega-weighted second moment gives the variance.
/// Horvitz-Thompson: w_i Y_i - theta. Hajek (linearized): (w_i / mean w)(Y_i - theta).
inline std::vector<double> influence_terms(EstimatorKind kind, std::span<const double> w, std::span<const double> y,
                                           double theta) {
  std::vector<double> r(w.size());
  if (kind == EstimatorKind::HorvitzThompson) {
    for (std::size_t i = 0; i < w.size(); ++i) r[i] = w[i] * y[i] - theta;
  } else {
    double mean_w = 0.0;
    for (double v : w) mean_w += v;
    mean_w /= static_cast<double>(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) r[i] = (w[i] / mean_w) * (y[i] - theta);
  }
  return r;
}

inline double point_estimate(EstimatorKind kind, std::span<const double> w, std::span<const double> y) {
  return kind == EstimatorKind::Hajek ? hajek(w, y) : horvitz_thompson(w, y);
}

struct EstimateReport {
  double lambda = 0.0;
  EstimatorKind kind = EstimatorKind::Hajek;
  double estimate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double contrast_vs_zero = std::numeric_limits<double>::quiet_NaN();
  double contrast_se = std::numeric_limits<double>::quiet_NaN();
  double denominator_mcse_max = 0.0;
};

inline double normal_quantile(double level) {
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("confidence level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
}

/// One row per (lambda, estimator), lambdas in grid order, HT before Hajek.
/// Contrasts against lambda = 0 use the differenced influence terms; they are
/// NaN when the grid lacks 0.
inline std::vector<EstimateReport> report(std::span<const double> lambdas, std::span<const WeightSet> weights,
                                          std::span<const double> y, const OmegaMatrix& omega, double level = 0.95) {
  if (lambdas.size() != weights.size()) throw ValidationError("report: one weight set per lambda is required");
  check_outcomes(y);
  const double z = normal_quantile(level);
  std::size_t zero = lambdas.size();
  for (std::size_t a = 0; a < lambdas.size(); ++a)
    if (lambdas[a] == 0.0) zero = a;

  std::vector<EstimateReport> out;
  for (std::size_t a = 0; a < lambdas.size(); ++a) {
    for (EstimatorKind kind : {EstimatorKind::HorvitzThompson, EstimatorKind::Hajek}) {
      EstimateReport r;
      r.lambda = lambdas[a];
      r.kind = kind;
      r.denominator_mcse_max = weights[a].max_denominator_mcse();
      r.estimate = point_estimate(kind, weights[a].w, y);
      const auto infl = influence_terms(kind, weights[a].w, y, r.estimate);
      r.se = std::sqrt(variance_from_influence(infl, omega));
      r.ci_low = r.estimate - z * r.se;
      r.ci_high = r.estimate + z * r.se;
      if (zero < lambdas.size()) {
        const double base = point_estimate(kind, weights[zero].w, y);
        const auto infl0 = influence_terms(kind, weights[zero].w, y, base);
        std::vector<double> diff(infl.size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = infl[i] - infl0[i];
        r.contrast_vs_zero = r.estimate - base;
        r.contrast_se = std::sqrt(variance_from_influence(diff, omega));
      }
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace edgecause
