#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "edgecause/error.hpp"

// Units are 0-based inside the library. File readers and the CLI translate
// from the 1-based ids used on disk.

namespace edgecause {

using Dyad = std::pair<std::size_t, std::size_t>;

/// Index of pair (i, j), i < j, in the row-major enumeration of the strict
/// upper triangle of an m x m matrix.
constexpr std::size_t pair_index(std::size_t i, std::size_t j, std::size_t m) {
  return i * m - i * (i + 1) / 2 + (j - i - 1);
}

/// Undirected simple graph on n units. Adjacency is a dense byte matrix for
/// n <= kDenseLimit and a packed upper-triangle bitset above, plus per-unit
/// neighbor lists for fast iteration.
class Network {
 public:
  static constexpr std::size_t kDenseLimit = 512;

  Network() = default;
  explicit Network(std::size_t n)
      : n_(n), nbrs_(n) {
    if (dense()) {
      cells_.assign(n * n, 0);
    } else {
      bits_.assign((n * (n - 1) / 2 + 63) / 64, 0);
    }
  }

  std::size_t size() const { return n_; }
  bool dense() const { return n_ <= kDenseLimit; }
  std::size_t edge_count() const { return edges_; }

  bool has_edge(std::size_t i, std::size_t j) const {
    if (i == j) return false;
    if (dense()) return cells_[i * n_ + j] != 0;
    if (i > j) std::swap(i, j);
    const std::size_t k = pair_index(i, j, n_);
    return (bits_[k >> 6] >> (k & 63)) & 1ULL;
  }

  const std::vector<std::size_t>& neighbors(std::size_t i) const { return nbrs_[i]; }
  std::size_t degree(std::size_t i) const { return nbrs_[i].size(); }

  /// Sets A_ij = A_ji = value. Returns true if the adjacency changed.
  bool set_edge(std::size_t i, std::size_t j, bool value) {
    if (i == j) throw ValidationError("self-loop (" + std::to_string(i) + "," + std::to_string(i) + ")");
    if (has_edge(i, j) == value) return false;
    write(i, j, value);
    if (value) {
      nbrs_[i].push_back(j);
      nbrs_[j].push_back(i);
      ++edges_;
    } else {
      erase_neighbor(i, j);
      erase_neighbor(j, i);
      --edges_;
    }
    return true;
  }

  /// Flips A_ij and returns the new state.
  bool toggle(std::size_t i, std::size_t j) {
    const bool now = !has_edge(i, j);
    set_edge(i, j, now);
    return now;
  }

  /// Edge list with i < j, sorted.
  std::vector<Dyad> edges() const {
    std::vector<Dyad> out;
    out.reserve(edges_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j : nbrs_[i])
        if (i < j) out.emplace_back(i, j);
    std::sort(out.begin(), out.end());
    return out;
  }

  friend bool operator==(const Network& a, const Network& b) {
    return a.n_ == b.n_ && a.edges_ == b.edges_ && a.cells_ == b.cells_ && a.bits_ == b.bits_;
  }

 private:
  void write(std::size_t i, std::size_t j, bool value) {
    if (dense()) {
      cells_[i * n_ + j] = cells_[j * n_ + i] = value ? 1 : 0;
      return;
    }
    if (i > j) std::swap(i, j);
    const std::size_t k = pair_index(i, j, n_);
    if (value)
      bits_[k >> 6] |= (1ULL << (k & 63));
    else
      bits_[k >> 6] &= ~(1ULL << (k & 63));
  }

  void erase_neighbor(std::size_t i, std::size_t j) {
    auto& v = nbrs_[i];
    auto it = std::find(v.begin(), v.end(), j);
    *it = v.back();
    v.pop_back();
  }

  std::size_t n_ = 0;
  std::size_t edges_ = 0;
  std::vector<std::uint8_t> cells_;
  std::vector<std::uint64_t> bits_;
  std::vector<std::vector<std::size_t>> nbrs_;
};

/// Network with exactly the listed undirected edges.
inline Network build_network(std::size_t n, std::span<const Dyad> edges) {
  Network net(n);
  for (const auto& [i, j] : edges) {
    if (i >= n || j >= n)
      throw ValidationError("edge (" + std::to_string(i) + "," + std::to_string(j) +
                            ") out of range for n=" + std::to_string(n));
    if (i == j)
      throw ValidationError("self-loop (" + std::to_string(i) + "," + std::to_string(j) + ")");
    net.set_edge(i, j, true);
  }
  return net;
}

/// Dense symmetric distance matrix.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  DistanceMatrix(std::size_t n, std::vector<double> values) : n_(n), d_(std::move(values)) {
    if (d_.size() != n * n) throw ValidationError("distance matrix must have n*n entries");
    for (std::size_t i = 0; i < n_; ++i) {
      if (d_[i * n_ + i] != 0.0)
        throw ValidationError("distance matrix diagonal must be zero (unit " + std::to_string(i) + ")");
      for (std::size_t j = i + 1; j < n_; ++j) {
        const double a = d_[i * n_ + j], b = d_[j * n_ + i];
        if (!(a >= 0.0) || !(b >= 0.0))
          throw ValidationError("negative or missing distance at (" + std::to_string(i) + "," +
                                std::to_string(j) + ")");
        if (std::abs(a - b) > 1e-12 * (1.0 + std::abs(a)))
          throw ValidationError("asymmetric distance input at (" + std::to_string(i) + "," +
                                std::to_string(j) + ")");
      }
    }
  }

  static DistanceMatrix euclidean(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (y.size() != n) throw ValidationError("coordinate vectors differ in length");
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        d[i * n + j] = d[j * n + i] = std::hypot(x[i] - x[j], y[i] - y[j]);
    return DistanceMatrix(n, std::move(d));
  }

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }

 private:
  std::size_t n_ = 0;
  std::vector<double> d_;
};

/// Per-unit eligibility sets U_i; edges outside them have probability zero.
class RestrictedSpace {
 public:
  RestrictedSpace() = default;
  explicit RestrictedSpace(std::vector<std::vector<std::size_t>> eligible)
      : eligible_(std::move(eligible)) {
    const std::size_t n = eligible_.size();
    for (std::size_t i = 0; i < n; ++i) {
      auto& u = eligible_[i];
      std::sort(u.begin(), u.end());
      u.erase(std::unique(u.begin(), u.end()), u.end());
      for (std::size_t j : u) {
        if (j >= n) throw ValidationError("eligible unit " + std::to_string(j) + " out of range");
        if (j == i) throw ValidationError("unit " + std::to_string(i) + " listed as eligible to itself");
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j : eligible_[i]) {
        if (!std::binary_search(eligible_[j].begin(), eligible_[j].end(), i))
          throw ValidationError("eligibility is not symmetric for (" + std::to_string(i) + "," +
                                std::to_string(j) + ")");
        if (i < j) dyads_.emplace_back(i, j);
      }
  }

  static RestrictedSpace complete(std::size_t n) {
    std::vector<std::vector<std::size_t>> u(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) u[i].push_back(j);
    return RestrictedSpace(std::move(u));
  }

  std::size_t size() const { return eligible_.size(); }
  const std::vector<std::size_t>& eligible(std::size_t i) const { return eligible_[i]; }
  bool contains(std::size_t i, std::size_t j) const {
    const auto& u = eligible_[i];
    return std::binary_search(u.begin(), u.end(), j);
  }
  /// Eligible dyads (i < j) in lexicographic order.
  const std::vector<Dyad>& dyads() const { return dyads_; }

  bool admits(const Network& net) const {
    if (net.size() != size()) return false;
    for (std::size_t i = 0; i < net.size(); ++i)
      for (std::size_t j : net.neighbors(i))
        if (!contains(i, j)) return false;
    return true;
  }

 private:
  std::vector<std::vector<std::size_t>> eligible_;
  std::vector<Dyad> dyads_;
};

/// U_i = { j != i : d_ij < cutoff }.
inline RestrictedSpace eligibility_from_distance(const DistanceMatrix& d, double cutoff) {
  if (!(cutoff >= 0.0)) throw ValidationError("eligibility cutoff must be nonnegative");
  const std::size_t n = d.size();
  std::vector<std::vector<std::size_t>> u(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (d(i, j) < cutoff) {
        u[i].push_back(j);
        u[j].push_back(i);
      }
  return RestrictedSpace(std::move(u));
}

/// Exclusion neighborhoods N_i. members(i) lists i first, then the remaining
/// members in the order they were added.
class NeighborhoodSystem {
 public:
  NeighborhoodSystem() = default;
  explicit NeighborhoodSystem(std::vector<std::vector<std::size_t>> nbhd) : nbhd_(std::move(nbhd)) {
    const std::size_t n = nbhd_.size();
    for (std::size_t i = 0; i < n; ++i) {
      auto& m = nbhd_[i];
      auto self = std::find(m.begin(), m.end(), i);
      if (self == m.end())
        throw ValidationError("neighborhood of unit " + std::to_string(i) + " does not contain the unit");
      std::rotate(m.begin(), self, self + 1);
      std::vector<std::size_t> sorted = m;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ValidationError("duplicate member in neighborhood of unit " + std::to_string(i));
      if (!sorted.empty() && sorted.back() >= n)
        throw ValidationError("neighborhood member out of range for unit " + std::to_string(i));
    }
  }

  std::size_t size() const { return nbhd_.size(); }
  const std::vector<std::size_t>& members(std::size_t i) const { return nbhd_[i]; }

 private:
  std::vector<std::vector<std::size_t>> nbhd_;
};

/// Dependence neighborhoods R_i, symmetrized at construction.
class DependenceSystem {
 public:
  DependenceSystem() = default;
  explicit DependenceSystem(std::vector<std::vector<std::size_t>> dep) : dep_(std::move(dep)) {
    const std::size_t n = dep_.size();
    auto copy = dep_;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j : copy[i]) {
        if (j >= n) throw ValidationError("dependence member out of range for unit " + std::to_string(i));
        dep_[j].push_back(i);
      }
    for (auto& r : dep_) {
      std::sort(r.begin(), r.end());
      r.erase(std::unique(r.begin(), r.end()), r.end());
    }
  }

  std::size_t size() const { return dep_.size(); }
  const std::vector<std::size_t>& members(std::size_t i) const { return dep_[i]; }
  bool contains(std::size_t i, std::size_t j) const {
    return std::binary_search(dep_[i].begin(), dep_[i].end(), j);
  }

 private:
  std::vector<std::vector<std::size_t>> dep_;
};

/// l-nearest-neighbor exclusion neighborhoods. With includes_self_in_count,
/// N_i is i plus its l-1 nearest units; otherwise i plus l nearest units.
/// Ties in distance go to the lower index. When labels are given, only units
/// sharing i's label are candidates and N_i is truncated if too few exist.
inline NeighborhoodSystem knn_neighborhoods(const DistanceMatrix& d, std::size_t l,
                                            bool includes_self_in_count = true,
                                            std::span<const int> labels = {}) {
  const std::size_t n = d.size();
  if (l < 1) throw ValidationError("neighborhood size l must be at least 1");
  const std::size_t others = includes_self_in_count ? l - 1 : l;
  if (others + 1 > n)
    throw ValidationError("neighborhood size l=" + std::to_string(l) + " exceeds n=" + std::to_string(n));
  if (!labels.empty() && labels.size() != n) throw ValidationError("label vector length differs from n");

  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && (labels.empty() || labels[j] == labels[i])) cand.push_back(j);
    const std::size_t take = std::min(others, cand.size());
    auto closer = [&](std::size_t a, std::size_t b) {
      const double da = d(i, a), db = d(i, b);
      return da < db || (da == db && a < b);
    };
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), closer);
    out[i].push_back(i);
    out[i].insert(out[i].end(), cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return NeighborhoodSystem(std::move(out));
}

/// Adjacency of the subnetwork over N_i, in member order (owner first).
struct LocalAdjacency {
  std::size_t owner = 0;
  std::vector<std::size_t> members;
  std::vector<std::uint8_t> sub;  // row-major |N_i| x |N_i|

  std::size_t size() const { return members.size(); }
  bool at(std::size_t k, std::size_t l) const { return sub[k * members.size() + l] != 0; }
};

inline LocalAdjacency local_subnetwork(const Network& net, const NeighborhoodSystem& nbhds, std::size_t i) {
  if (i >= nbhds.size() || nbhds.size() != net.size())
    throw ValidationError("unit " + std::to_string(i) + " out of range");
  LocalAdjacency a;
  a.owner = i;
  a.members = nbhds.members(i);
  const std::size_t m = a.members.size();
  a.sub.assign(m * m, 0);
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t l = k + 1; l < m; ++l)
      if (net.has_edge(a.members[k], a.members[l])) a.sub[k * m + l] = a.sub[l * m + k] = 1;
  return a;
}

/// e(a_i): number of edges in a local adjacency.
inline std::size_t edge_count(const LocalAdjacency& a) {
  std::size_t e = 0;
  const std::size_t m = a.size();
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t l = k + 1; l < m; ++l) e += a.at(k, l) ? 1 : 0;
  return e;
}

/// Compact code of the local adjacency among `members`: bit pair_index(k,l,m)
/// is set when members k and l are adjacent. Requires |members| <= 11.
inline std::uint64_t local_code(const Network& net, std::span<const std::size_t> members) {
  const std::size_t m = members.size();
  std::uint64_t code = 0;
  std::size_t bit = 0;
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t l = k + 1; l < m; ++l, ++bit)
      if (net.has_edge(members[k], members[l])) code |= (1ULL << bit);
  return code;
}

inline constexpr std::size_t kMaxLocalMembers = 11;

/// R_i = { j : |N_i ∩ N_j| >= 2 }, the rule for dyad-independent models.
inline DependenceSystem dependence_from_overlap(const NeighborhoodSystem& nbhds) {
  const std::size_t n = nbhds.size();
  std::vector<std::vector<std::size_t>> containing(n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k : nbhds.members(j)) containing[k].push_back(j);

  std::vector<std::vector<std::size_t>> dep(n);
  std::vector<std::size_t> count(n, 0);
  std::vector<std::size_t> touched;
  for (std::size_t i = 0; i < n; ++i) {
    touched.clear();
    for (std::size_t k : nbhds.members(i))
      for (std::size_t j : containing[k]) {
        if (count[j]++ == 0) touched.push_back(j);
      }
    for (std::size_t j : touched) {
      if (count[j] >= 2) dep[i].push_back(j);
      count[j] = 0;
    }
  }
  return DependenceSystem(std::move(dep));
}

/// R_i = all units sharing i's block label.
inline DependenceSystem dependence_from_blocks(std::span<const int> labels) {
  std::unordered_map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  std::vector<std::vector<std::size_t>> dep(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) dep[i] = groups[labels[i]];
  return DependenceSystem(std::move(dep));
}

}  // namespace edgecause
