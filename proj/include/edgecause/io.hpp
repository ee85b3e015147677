#pragma once

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "edgecause/ergm.hpp"
#include "edgecause/error.hpp"
#include "edgecause/netstats.hpp"
#include "edgecause/network.hpp"

namespace edgecause {

/// Header plus rows of a comma-separated file (no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return k;
    throw ValidationError("missing column '" + std::string(name) + "'");
  }
  bool has(std::string_view name) const { return std::find(header.begin(), header.end(), name) != header.end(); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> try_number(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
  return v;
}

inline double parse_number(const std::string& s, const std::string& where) {
  auto v = try_number(s);
  if (!v) throw ValidationError("non-numeric value '" + s + "' in " + where);
  if (!std::isfinite(*v)) throw ValidationError("non-finite value in " + where);
  return *v;
}

inline std::size_t parse_index(const std::string& s, std::size_t n, const std::string& where) {
  const double v = parse_number(s, where);
  if (v != std::floor(v) || v < 1 || v > static_cast<double>(n))
    throw ValidationError("unit index " + s + " out of range 1.." + std::to_string(n) + " in " + where);
  return static_cast<std::size_t>(v) - 1;
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (first) {
      t.header = std::move(fields);
      first = false;
      continue;
    }
    if (fields.size() != t.header.size())
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                            " fields, found " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
  }
  if (first) throw ValidationError("'" + path + "' is empty");
  return t;
}

/// Unit table: ids 1..n (any row order), optional locations, and every other
/// column as a covariate. Integer-valued columns are treated as categorical.
struct NodeTable {
  std::size_t n = 0;
  std::optional<std::vector<double>> loc_x, loc_y;
  std::shared_ptr<CovariateTable> columns;
};

inline NodeTable read_nodes(const std::string& path) {
  const CsvTable t = read_csv(path);
  const std::size_t id_col = t.column("id");
  const std::size_t n = t.rows.size();
  if (n == 0) throw ValidationError("'" + path + "' has no units");
  std::vector<std::size_t> row_of(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t id = detail::parse_index(t.rows[r][id_col], n, path);
    if (row_of[id] != n) throw ValidationError("duplicate id " + t.rows[r][id_col] + " in " + path);
    row_of[id] = r;
  }
  NodeTable out;
  out.n = n;
  out.columns = std::make_shared<CovariateTable>(n);
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c == id_col) continue;
    std::vector<double> v(n);
    bool integral = true;
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = detail::parse_number(t.rows[row_of[i]][c], path + " column '" + t.header[c] + "'");
      integral = integral && v[i] == std::floor(v[i]);
    }
    if (t.header[c] == "loc_x")
      out.loc_x = std::move(v);
    else if (t.header[c] == "loc_y")
      out.loc_y = std::move(v);
    else
      out.columns->add_column(t.header[c], std::move(v), integral);
  }
  if (out.loc_x.has_value() != out.loc_y.has_value()) throw ValidationError("locations need both loc_x and loc_y");
  return out;
}

/// Undirected edges with 1-based ids; returned 0-based.
inline std::vector<Dyad> read_edges(const std::string& path, std::size_t n) {
  const CsvTable t = read_csv(path);
  const std::size_t ci = t.column("i");
  const std::size_t cj = t.column("j");
  std::vector<Dyad> edges;
  edges.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    const std::size_t i = detail::parse_index(row[ci], n, path);
    const std::size_t j = detail::parse_index(row[cj], n, path);
    edges.emplace_back(i, j);
  }
  return edges;
}

/// Full n×n matrix in id order, with or without a header row.
inline DistanceMatrix read_distances(const std::string& path, std::size_t n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::vector<double> values;
  values.reserve(n * n);
  std::string line;
  std::size_t rows = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (first) {
      first = false;
      if (!detail::try_number(fields.front())) continue;
    }
    if (fields.size() != n)
      throw ValidationError(path + ": distance row has " + std::to_string(fields.size()) + " entries, expected " +
                            std::to_string(n));
    for (const auto& f : fields) values.push_back(detail::parse_number(f, path));
    ++rows;
  }
  if (rows != n) throw ValidationError(path + ": expected " + std::to_string(n) + " distance rows");
  return DistanceMatrix(n, std::move(values));
}

/// Parsed model configuration.
struct ModelConfig {
  struct TermRecord {
    std::string term;
    std::string covariate;
    double decay = 0.0;
  };
  std::vector<TermRecord> terms;
  std::string constraint = "none";  // "distance" or "none"
  double cutoff = 0.0;
  std::string block_column;
  bool per_block = false;
  std::optional<std::vector<double>> eta;
};

inline ModelConfig parse_model_config(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    if (!j.contains("terms") || !j["terms"].is_array() || j["terms"].empty())
      throw ValidationError("model config needs a non-empty 'terms' array");
    for (const auto& t : j["terms"]) {
      ModelConfig::TermRecord r;
      r.term = t.at("term").get<std::string>();
      if (t.contains("covariate")) r.covariate = t["covariate"].get<std::string>();
      r.decay = t.value("decay", 0.3);
      cfg.terms.push_back(r);
    }
    if (j.contains("constraint")) {
      const auto& c = j["constraint"];
      cfg.constraint = c.value("type", std::string("none"));
      if (cfg.constraint == "distance")
        cfg.cutoff = c.at("cutoff").get<double>();
      else if (cfg.constraint != "none")
        throw ValidationError("unknown constraint type '" + cfg.constraint + "'");
    }
    if (j.contains("blocks")) cfg.block_column = j["blocks"].at("column").get<std::string>();
    cfg.per_block = j.value("per_block", false);
    if (j.contains("eta")) cfg.eta = j["eta"].get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model config: ") + e.what());
  }
  return cfg;
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline ModelConfig read_model_config(const std::string& path) { return parse_model_config(read_json(path)); }

inline StatisticSpec build_spec(const ModelConfig& cfg, const CovariateTable& cov) {
  StatisticSpec spec;
  for (const auto& r : cfg.terms) {
    auto col = [&] {
      if (r.covariate.empty()) throw ValidationError("term '" + r.term + "' needs a covariate");
      return cov.index(r.covariate);
    };
    if (r.term == "edges")
      spec.terms.push_back(Term::edges());
    else if (r.term == "nodecov")
      spec.terms.push_back(Term::nodecov(col()));
    else if (r.term == "absdiff")
      spec.terms.push_back(Term::absdiff(col()));
    else if (r.term == "nodematch")
      spec.terms.push_back(Term::nodematch(col()));
    else if (r.term == "gwesp")
      spec.terms.push_back(Term::gwesp(r.decay));
    else if (r.term == "between.edges" || r.term == "between_edges")
      spec.terms.push_back(Term::between_edges());
    else if (r.term == "between.nodecov" || r.term == "between_nodecov")
      spec.terms.push_back(Term::between_nodecov(col()));
    else
      throw ValidationError("unknown term '" + r.term + "'");
  }
  return spec;
}

/// Everything needed to instantiate a model on a data set.
struct ModelSetup {
  std::shared_ptr<const CovariateTable> covariates;
  std::shared_ptr<const RestrictedSpace> space;
  std::vector<int> blocks;
  StatisticSpec spec;
  bool per_block = false;

  ErgmModel model(const Eigen::VectorXd& eta) const {
    return ErgmModel(spec, eta, space, covariates, blocks, per_block);
  }
  ErgmModel structure() const {
    ErgmModel probe(spec, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.size())), space, covariates, blocks,
                    false);
    if (!per_block) return probe;
    const std::size_t within = std::count_if(spec.terms.begin(), spec.terms.end(), [](const Term& t) { return !t.between(); });
    const std::size_t dim = probe.block_count() * within + (spec.size() - within);
    return model(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)));
  }
};

/// Distances come from `distances` when given, else from node locations.
inline ModelSetup build_setup(const ModelConfig& cfg, const NodeTable& nodes, const std::optional<DistanceMatrix>& distances,
                              bool standardize) {
  ModelSetup s;
  auto cov = std::make_shared<CovariateTable>(standardize ? nodes.columns->standardized() : *nodes.columns);
  if (!cfg.block_column.empty()) {
    const auto col = cov->index(cfg.block_column);
    if (!nodes.columns->categorical(col)) throw ValidationError("block column must be integer-valued");
    for (double v : nodes.columns->column(col)) s.blocks.push_back(static_cast<int>(v));
  }
  s.spec = build_spec(cfg, *cov);
  s.covariates = cov;
  s.per_block = cfg.per_block;
  if (cfg.constraint == "distance") {
    if (distances) {
      s.space = std::make_shared<RestrictedSpace>(eligibility_from_distance(*distances, cfg.cutoff));
    } else {
      if (!nodes.loc_x) throw ValidationError("distance constraint needs loc_x/loc_y or a distance matrix");
      s.space = std::make_shared<RestrictedSpace>(
          eligibility_from_distance(DistanceMatrix::euclidean(*nodes.loc_x, *nodes.loc_y), cfg.cutoff));
    }
  } else {
    s.space = std::make_shared<RestrictedSpace>(RestrictedSpace::complete(nodes.n));
  }
  return s;
}

struct FitRecord {
  Eigen::VectorXd eta_hat;
  Eigen::VectorXd se;
  bool converged = false;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
};

inline nlohmann::json fit_to_json(const FitRecord& f, const std::vector<std::string>& names = {}) {
  nlohmann::json j;
  j["eta_hat"] = std::vector<double>(f.eta_hat.data(), f.eta_hat.data() + f.eta_hat.size());
  std::vector<nlohmann::json> se;
  for (Eigen::Index k = 0; k < f.se.size(); ++k)
    se.push_back(std::isfinite(f.se[k]) ? nlohmann::json(f.se[k]) : nlohmann::json(nullptr));
  j["se"] = se;
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  j["seed"] = f.seed;
  if (!names.empty()) j["names"] = names;
  return j;
}

inline FitRecord read_fit(const std::string& path) {
  const auto j = read_json(path);
  FitRecord f;
  try {
    const auto eta = j.at("eta_hat").get<std::vector<double>>();
    f.eta_hat = Eigen::Map<const Eigen::VectorXd>(eta.data(), static_cast<Eigen::Index>(eta.size()));
    f.se = Eigen::VectorXd::Constant(f.eta_hat.size(), std::numeric_limits<double>::quiet_NaN());
    if (j.contains("se") && j["se"].is_array())
      for (std::size_t k = 0; k < j["se"].size() && k < eta.size(); ++k)
        if (j["se"][k].is_number()) f.se[static_cast<Eigen::Index>(k)] = j["se"][k].get<double>();
    f.converged = j.value("converged", false);
    f.iterations = j.value("iterations", std::size_t{0});
    f.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed fit file '" + path + "': " + e.what());
  }
  return f;
}

}  // namespace edgecause
