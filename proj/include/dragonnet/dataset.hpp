#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dragonnet/nn.hpp"

namespace dragonnet {

/// Observational data with optional ground truth.
///
/// mu0/mu1 are the true conditional potential-outcome means per row; when
/// present the reference effect for error metrics is their mean difference
/// over the rows at hand (the sample ATE). `propensity` holds the true g(x)
/// when the generator knows it.
struct Dataset {
  Matrix x;
  Vector t;
  Vector y;
  std::optional<Vector> mu0;
  std::optional<Vector> mu1;
  std::optional<Vector> propensity;
  std::optional<double> true_ate;

  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }
  bool has_potential_outcomes() const { return mu0.has_value() && mu1.has_value(); }

  std::optional<double> sample_ate() const {
    if (!has_potential_outcomes()) return std::nullopt;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < mu0->size(); ++i) acc += (*mu1)[i] - (*mu0)[i];
    return acc / static_cast<double>(mu0->size());
  }

  /// Effect that estimation error is measured against: the sample ATE when
  /// potential outcomes are known, else the population ATE.
  std::optional<double> reference_ate() const {
    if (auto s = sample_ate()) return s;
    return true_ate;
  }

  void validate() const {
    const auto n = y.size();
    if (x.rows() != n || t.size() != n) throw ShapeError("Dataset: x, t and y must have the same number of rows");
    if (mu0 && mu0->size() != n) throw ShapeError("Dataset: mu0 length mismatch");
    if (mu1 && mu1->size() != n) throw ShapeError("Dataset: mu1 length mismatch");
    if (mu0.has_value() != mu1.has_value()) throw ShapeError("Dataset: mu0 and mu1 must be given together");
    if (propensity && propensity->size() != n) throw ShapeError("Dataset: propensity length mismatch");
    for (Eigen::Index i = 0; i < n; ++i)
      if (t[i] != 0.0 && t[i] != 1.0) throw ConfigError("Dataset: treatment must be binary");
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    const auto m = static_cast<Eigen::Index>(rows.size());
    out.x.resize(m, x.cols());
    out.t.resize(m);
    out.y.resize(m);
    if (mu0) out.mu0 = Vector(m);
    if (mu1) out.mu1 = Vector(m);
    if (propensity) out.propensity = Vector(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
      if (i >= y.size()) throw ShapeError("Dataset::subset: row index out of range");
      out.x.row(k) = x.row(i);
      out.t[k] = t[i];
      out.y[k] = y[i];
      if (mu0) (*out.mu0)[k] = (*mu0)[i];
      if (mu1) (*out.mu1)[k] = (*mu1)[i];
      if (propensity) (*out.propensity)[k] = (*propensity)[i];
    }
    out.true_ate = true_ate;
    return out;
  }
};

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

/// Mean outcome of treated minus mean outcome of controls.
inline double difference_in_means(const Dataset& d) {
  double s1 = 0.0, s0 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  for (Eigen::Index i = 0; i < d.y.size(); ++i) {
    if (d.t[i] == 1.0) {
      s1 += d.y[i];
      ++n1;
    } else {
      s0 += d.y[i];
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) throw EstimationError("difference_in_means: need both treated and control rows");
  return s1 / static_cast<double>(n1) - s0 / static_cast<double>(n0);
}

// --- CSV -------------------------------------------------------------------
//
// Comma separated, mandatory header, '.' decimal point. Columns are matched by
// name: x0..x{p-1}, t, y and optionally mu0, mu1. Other columns are ignored.

struct CsvSchema {
  std::string covariate_prefix = "x";
  std::string treatment = "t";
  std::string outcome = "y";
  std::string mu0 = "mu0";
  std::string mu1 = "mu1";
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    auto field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.push_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline Dataset parse_csv(std::istream& in, const CsvSchema& schema = {}, const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) break;
  }
  if (line.empty()) throw IngestionError(source + ": missing header row", {});

  const auto header = detail::split_fields(line);
  std::map<std::string, std::size_t, std::less<>> column;
  for (std::size_t c = 0; c < header.size(); ++c) column.emplace(std::string(header[c]), c);

  std::vector<std::size_t> x_cols;
  for (std::size_t j = 0;; ++j) {
    auto it = column.find(schema.covariate_prefix + std::to_string(j));
    if (it == column.end()) break;
    x_cols.push_back(it->second);
  }
  std::vector<std::string> missing;
  if (x_cols.empty()) missing.push_back("column " + schema.covariate_prefix + "0");
  if (!column.contains(schema.treatment)) missing.push_back("column " + schema.treatment);
  if (!column.contains(schema.outcome)) missing.push_back("column " + schema.outcome);
  const bool has_mu0 = column.contains(schema.mu0);
  const bool has_mu1 = column.contains(schema.mu1);
  if (has_mu0 != has_mu1) missing.push_back("column " + (has_mu0 ? schema.mu1 : schema.mu0));
  if (!missing.empty()) throw IngestionError(source + ": missing required columns", missing);

  const auto t_col = column.find(schema.treatment)->second;
  const auto y_col = column.find(schema.outcome)->second;
  const auto mu0_col = has_mu0 ? column.find(schema.mu0)->second : 0;
  const auto mu1_col = has_mu1 ? column.find(schema.mu1)->second : 0;
  const std::size_t p = x_cols.size();

  std::vector<double> xs, ts, ys, m0s, m1s;
  std::vector<std::string> offenders;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != header.size()) {
      offenders.push_back("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                          " fields, found " + std::to_string(fields.size()));
      continue;
    }
    bool ok = true;
    auto cell = [&](std::size_t c) -> double {
      auto v = detail::parse_double(fields[c]);
      if (!v || !std::isfinite(*v)) {
        offenders.push_back("line " + std::to_string(line_no) + ": non-numeric value '" + std::string(fields[c]) +
                            "' in column " + std::string(header[c]));
        ok = false;
        return 0.0;
      }
      return *v;
    };
    std::vector<double> row(p);
    for (std::size_t j = 0; j < p; ++j) row[j] = cell(x_cols[j]);
    const double tv = cell(t_col);
    const double yv = cell(y_col);
    const double m0 = has_mu0 ? cell(mu0_col) : 0.0;
    const double m1 = has_mu1 ? cell(mu1_col) : 0.0;
    if (ok && tv != 0.0 && tv != 1.0) {
      offenders.push_back("line " + std::to_string(line_no) + ": treatment must be 0 or 1, found '" +
                          std::string(fields[t_col]) + "'");
      ok = false;
    }
    if (!ok) continue;
    xs.insert(xs.end(), row.begin(), row.end());
    ts.push_back(tv);
    ys.push_back(yv);
    if (has_mu0) {
      m0s.push_back(m0);
      m1s.push_back(m1);
    }
  }
  if (!offenders.empty()) throw IngestionError(source + ": malformed rows", offenders);
  if (ys.empty()) throw IngestionError(source + ": no data rows", {});

  const auto n = static_cast<Eigen::Index>(ys.size());
  Dataset d;
  d.x = Eigen::Map<const Matrix>(xs.data(), n, static_cast<Eigen::Index>(p));
  d.t = Eigen::Map<const Vector>(ts.data(), n);
  d.y = Eigen::Map<const Vector>(ys.data(), n);
  if (has_mu0) {
    d.mu0 = Eigen::Map<const Vector>(m0s.data(), n);
    d.mu1 = Eigen::Map<const Vector>(m1s.data(), n);
  }
  return d;
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path, {});
  return parse_csv(in, schema, path);
}

/// Shortest round-trip formatting, so load_csv(write_csv(d)) is bit-exact.
inline void write_csv(std::ostream& out, const Dataset& d, const CsvSchema& schema = {}) {
  const bool truth = d.has_potential_outcomes();
  for (std::size_t j = 0; j < d.dim(); ++j) out << schema.covariate_prefix << j << ',';
  out << schema.treatment << ',' << schema.outcome;
  if (truth) out << ',' << schema.mu0 << ',' << schema.mu1;
  out << '\n';
  for (Eigen::Index i = 0; i < d.y.size(); ++i) {
    for (Eigen::Index j = 0; j < d.x.cols(); ++j) out << detail::format_double(d.x(i, j)) << ',';
    out << (d.t[i] == 1.0 ? "1" : "0") << ',' << detail::format_double(d.y[i]);
    if (truth) out << ',' << detail::format_double((*d.mu0)[i]) << ',' << detail::format_double((*d.mu1)[i]);
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const Dataset& d, const CsvSchema& schema = {}) {
  std::ofstream out(path);
  if (!out) throw ReportError("cannot write " + path);
  write_csv(out, d, schema);
  if (!out) throw ReportError("error while writing " + path);
}

// --- splitting -------------------------------------------------------------

struct SplitSpec {
  std::array<double, 3> proportions{1.0, 0.0, 0.0};  // train, validation, test
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Split sizes by largest remainder: floor(n * p_k), then the leftover rows go
/// one each to the splits with the largest fractional parts (ties to the
/// earlier split).
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& prop) {
  double sum = 0.0;
  for (double p : prop) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("split proportions must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split proportions must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t used = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * prop[k] / sum;
    // absorb representation error like 0.29 * 100 = 28.999999999999996
    const double rounded = std::round(exact);
    const double base = std::abs(exact - rounded) < 1e-9 ? rounded : std::floor(exact);
    sizes[k] = static_cast<std::size_t>(base);
    frac[k] = exact - base;
    used += sizes[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; used < n; ++r, ++used) ++sizes[order[r % 3]];
  return sizes;
}

/// Disjoint, exhaustive, seed-determined row sets; each set sorted ascending.
inline SplitIndices split(std::size_t n, const SplitSpec& spec) {
  const auto sizes = split_sizes(n, spec.proportions);
  static constexpr const char* names[] = {"train", "validation", "test"};
  for (std::size_t k = 0; k < 3; ++k)
    if (spec.proportions[k] > 0.0 && sizes[k] == 0)
      throw ConfigError(std::string("split: ") + names[k] + " split would be empty");

  auto perm = all_rows(n);
  const bool all_train = sizes[0] == n;
  if (!all_train) {
    Rng rng(spec.seed);
    rng.shuffle(std::span<std::size_t>(perm));
  }
  SplitIndices out;
  auto first = perm.begin();
  out.train.assign(first, first + static_cast<std::ptrdiff_t>(sizes[0]));
  first += static_cast<std::ptrdiff_t>(sizes[0]);
  out.validation.assign(first, first + static_cast<std::ptrdiff_t>(sizes[1]));
  first += static_cast<std::ptrdiff_t>(sizes[1]);
  out.test.assign(first, perm.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline SplitIndices split(const Dataset& d, const SplitSpec& spec) { return split(d.size(), spec); }

}  // namespace dragonnet
