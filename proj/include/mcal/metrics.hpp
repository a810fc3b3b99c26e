#pragma once

// Calibration and multicalibration measurement.
//
// ECCE is the maximum absolute cumulative residual sum over any interval of
// score-sorted rows, divided by n; computed in O(n log n) via prefix-sum
// extrema. The sigma scale sqrt(sum f(1-f))/n standardizes it into units of
// statistical evidence. MCE is the maximum of ECCE_h / sigma_h over a group
// collection. delta_mc exposes the per-(group, interval) deviation and its
// tau scale so the interval-form definition can be checked by brute force.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcal/common.hpp"
#include "mcal/dataset.hpp"

namespace mcal {

struct EmptyInput : Error {
  using Error::Error;
};
struct NoValidGroups : Error {
  using Error::Error;
};
struct InvalidInterval : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// groups
// ---------------------------------------------------------------------------

struct GroupSpec {
  std::string name;
  std::vector<std::uint8_t> membership;  // length n, values 0/1

  std::size_t member_count() const {
    std::size_t c = 0;
    for (const auto m : membership) c += m ? 1 : 0;
    return c;
  }
};

using GroupSet = std::vector<GroupSpec>;

// Score-interval over group-member rows in sorted order; 1-based inclusive.
struct IntervalSpec {
  std::size_t first = 1;
  std::size_t last = 1;
};

// ---------------------------------------------------------------------------
// ECCE and sigma scale
// ---------------------------------------------------------------------------

namespace detail {

// Canonical order: score ascending, original index ascending. Ties make the
// interval family ambiguous, so one deterministic order is fixed and shared
// with the brute-force oracle.
inline std::vector<std::size_t> score_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return a < b;
  });
  return order;
}

}  // namespace detail

inline double ecce(const std::vector<double>& scores,
                   const std::vector<double>& labels) {
  if (scores.empty()) throw EmptyInput("ecce needs at least one row");
  if (scores.size() != labels.size())
    throw LengthMismatch("scores/labels length mismatch");
  const auto order = detail::score_order(scores);
  double s = 0.0, smax = 0.0, smin = 0.0;  // prefix k = 0 included
  for (const std::size_t i : order) {
    s += labels[i] - scores[i];
    smax = std::max(smax, s);
    smin = std::min(smin, s);
  }
  return (smax - smin) / static_cast<double>(scores.size());
}

inline double sigma_scale(const std::vector<double>& scores) {
  if (scores.empty()) throw EmptyInput("sigma_scale needs at least one row");
  double acc = 0.0;
  for (const double f : scores) acc += f * (1.0 - f);
  return std::sqrt(acc) / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// MCE
// ---------------------------------------------------------------------------

struct GroupMetricRow {
  std::string name;
  std::size_t n_members = 0;
  double ecce = 0.0;
  double sigma = 0.0;
  double ratio = 0.0;
  bool included = false;
  std::string flag;  // "", "empty", "zero_sigma"
};

struct MceResult {
  double mce = 0.0;
  std::vector<GroupMetricRow> per_group;
};

// Maximum ECCE_h / sigma_h over the groups. Empty groups and groups whose
// member scores are all hard 0/1 (sigma_h = 0, the ratio is undefined) are
// skipped and flagged in the table.
inline MceResult mce(const std::vector<double>& scores,
                     const std::vector<double>& labels,
                     const GroupSet& groups) {
  if (scores.size() != labels.size())
    throw LengthMismatch("scores/labels length mismatch");
  MceResult out;
  bool any = false;
  for (const auto& g : groups) {
    if (g.membership.size() != scores.size())
      throw LengthMismatch("group '" + g.name + "' membership length");
    GroupMetricRow row;
    row.name = g.name;
    std::vector<double> fs, ys;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (g.membership[i]) {
        fs.push_back(scores[i]);
        ys.push_back(labels[i]);
      }
    }
    row.n_members = fs.size();
    if (fs.empty()) {
      row.flag = "empty";
      out.per_group.push_back(std::move(row));
      continue;
    }
    row.ecce = ecce(fs, ys);
    row.sigma = sigma_scale(fs);
    if (row.sigma == 0.0) {
      row.flag = "zero_sigma";
      out.per_group.push_back(std::move(row));
      continue;
    }
    row.ratio = row.ecce / row.sigma;
    row.included = true;
    if (!any || row.ratio > out.mce) out.mce = row.ratio;
    any = true;
    out.per_group.push_back(std::move(row));
  }
  if (!any) throw NoValidGroups("no nonempty group with positive sigma");
  return out;
}

// ---------------------------------------------------------------------------
// per-(group, interval) deviation
// ---------------------------------------------------------------------------

struct DeltaResult {
  double delta = 0.0;
  double tau = 0.0;
};

// delta = |(1/n) sum over the interval of (y - f)| where the interval indexes
// the group's member rows in score-sorted order; tau = sqrt((1/n) sum over
// all member rows of f(1-f)). Both normalize by the full row count n.
inline DeltaResult delta_mc(const std::vector<double>& scores,
                            const std::vector<double>& labels,
                            const GroupSpec& group,
                            const IntervalSpec& interval) {
  if (scores.size() != labels.size() ||
      group.membership.size() != scores.size())
    throw LengthMismatch("delta_mc input length mismatch");
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (group.membership[i]) members.push_back(i);
  const std::size_t nh = members.size();
  if (interval.first < 1 || interval.first > interval.last ||
      interval.last > nh)
    throw InvalidInterval("interval [" + std::to_string(interval.first) +
                          "," + std::to_string(interval.last) +
                          "] invalid for group of size " + std::to_string(nh));
  std::sort(members.begin(), members.end(),
            [&](std::size_t a, std::size_t b) {
              if (scores[a] != scores[b]) return scores[a] < scores[b];
              return a < b;
            });
  const double n = static_cast<double>(scores.size());
  double acc = 0.0;
  for (std::size_t k = interval.first - 1; k < interval.last; ++k)
    acc += labels[members[k]] - scores[members[k]];
  double tau_sq = 0.0;
  for (const std::size_t i : members) tau_sq += scores[i] * (1.0 - scores[i]);
  return {std::abs(acc) / n, std::sqrt(tau_sq / n)};
}

// ---------------------------------------------------------------------------
// combinatorial group generation
// ---------------------------------------------------------------------------

struct GroupGenConfig {
  std::size_t max_groups = 256;
  int max_conjunction_order = 2;  // 1 or 2
  int quantiles_per_numeric = 3;  // 0 disables numeric threshold atoms
  std::size_t min_group_size = 50;
  std::uint64_t seed = 0;
};

// Predicate form of a generated group so the same definition can be
// materialized on a different row set (e.g. a held-out test split).
struct GroupClause {
  std::size_t column = 0;
  enum class Op { Eq, Le, Ge } op = Op::Eq;
  double value = 0.0;
};

struct GroupDef {
  std::string name;
  std::vector<GroupClause> clauses;  // conjunction
};

inline GroupSpec materialize_group(const GroupDef& def, const Dataset& data) {
  GroupSpec g;
  g.name = def.name;
  g.membership.assign(data.n_rows(), 1);
  for (const auto& cl : def.clauses) {
    if (cl.column >= data.n_features())
      throw Error("group clause column out of range: " + def.name);
    for (std::size_t i = 0; i < data.n_rows(); ++i) {
      const double x = data.value(i, cl.column);
      bool ok = false;
      switch (cl.op) {
        case GroupClause::Op::Eq: ok = x == cl.value; break;
        case GroupClause::Op::Le: ok = x <= cl.value; break;
        case GroupClause::Op::Ge: ok = x >= cl.value; break;
      }
      if (!ok) g.membership[i] = 0;
    }
  }
  return g;
}

inline GroupSet materialize_groups(const std::vector<GroupDef>& defs,
                                   const Dataset& data) {
  GroupSet out;
  out.reserve(defs.size());
  for (const auto& d : defs) out.push_back(materialize_group(d, data));
  return out;
}

// Atoms are {binary column == 1} and {numeric column <= quantile}; the group
// pool is all atoms plus all order-2 conjunctions, deterministically
// subsampled to max_groups by a seeded shuffle, then filtered by member
// count on the given dataset.
inline std::vector<GroupDef> generate_group_defs(const Dataset& data,
                                                 const GroupGenConfig& cfg) {
  if (data.n_rows() == 0) throw EmptyData("group generation needs rows");
  std::vector<GroupDef> atoms;
  for (std::size_t j = 0; j < data.n_features(); ++j) {
    const auto& col = data.columns[j];
    bool binary = true;
    for (const double v : col)
      if (v != 0.0 && v != 1.0) {
        binary = false;
        break;
      }
    const std::string& name = data.feature_names[j];
    if (binary) {
      atoms.push_back(GroupDef{name + "==1",
                               {GroupClause{j, GroupClause::Op::Eq, 1.0}}});
    } else if (cfg.quantiles_per_numeric > 0) {
      std::vector<double> sorted = col;
      std::sort(sorted.begin(), sorted.end());
      std::vector<double> cuts;
      for (int q = 1; q <= cfg.quantiles_per_numeric; ++q) {
        const double frac = static_cast<double>(q) /
                            static_cast<double>(cfg.quantiles_per_numeric + 1);
        const std::size_t pos = static_cast<std::size_t>(
            frac * static_cast<double>(sorted.size() - 1));
        const double v = sorted[pos];
        if (cuts.empty() || v != cuts.back()) cuts.push_back(v);
      }
      for (const double v : cuts)
        atoms.push_back(GroupDef{name + "<=" + format_double(v),
                                 {GroupClause{j, GroupClause::Op::Le, v}}});
    }
  }

  std::vector<GroupDef> pool = atoms;
  if (cfg.max_conjunction_order >= 2) {
    for (std::size_t a = 0; a < atoms.size(); ++a) {
      for (std::size_t b = a + 1; b < atoms.size(); ++b) {
        GroupDef def;
        def.name = atoms[a].name + "&" + atoms[b].name;
        def.clauses = atoms[a].clauses;
        def.clauses.push_back(atoms[b].clauses.front());
        pool.push_back(std::move(def));
      }
    }
  }

  std::mt19937_64 rng(cfg.seed);
  deterministic_shuffle(pool, rng);
  if (pool.size() > cfg.max_groups) pool.resize(cfg.max_groups);

  std::vector<GroupDef> kept;
  for (const auto& def : pool) {
    const GroupSpec g = materialize_group(def, data);
    if (g.member_count() >= cfg.min_group_size) kept.push_back(def);
  }
  return kept;
}

inline GroupSet generate_unspecified_groups(const Dataset& data,
                                            const GroupGenConfig& cfg) {
  return materialize_groups(generate_group_defs(data, cfg), data);
}

// Group definitions serialize with column names so they can be re-resolved
// against any dataset encoded by the same schema.
inline nlohmann::json group_defs_to_json(
    const std::vector<GroupDef>& defs,
    const std::vector<std::string>& feature_names) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& def : defs) {
    nlohmann::json clauses = nlohmann::json::array();
    for (const auto& cl : def.clauses) {
      const char* op = cl.op == GroupClause::Op::Eq
                           ? "eq"
                           : (cl.op == GroupClause::Op::Le ? "le" : "ge");
      clauses.push_back({{"column", feature_names.at(cl.column)},
                         {"op", op},
                         {"value", cl.value}});
    }
    out.push_back({{"name", def.name}, {"clauses", clauses}});
  }
  return out;
}

inline std::vector<GroupDef> group_defs_from_json(
    const nlohmann::json& j, const std::vector<std::string>& feature_names) {
  std::vector<GroupDef> defs;
  for (const auto& dj : j) {
    GroupDef def;
    def.name = dj.at("name").get<std::string>();
    for (const auto& cj : dj.at("clauses")) {
      GroupClause cl;
      const std::string column = cj.at("column").get<std::string>();
      bool found = false;
      for (std::size_t k = 0; k < feature_names.size(); ++k) {
        if (feature_names[k] == column) {
          cl.column = k;
          found = true;
          break;
        }
      }
      if (!found) throw Error("group clause column not found: " + column);
      const std::string op = cj.at("op").get<std::string>();
      if (op == "eq") cl.op = GroupClause::Op::Eq;
      else if (op == "le") cl.op = GroupClause::Op::Le;
      else if (op == "ge") cl.op = GroupClause::Op::Ge;
      else throw Error("unknown group clause op: " + op);
      cl.value = cj.at("value").get<double>();
      def.clauses.push_back(cl);
    }
    defs.push_back(std::move(def));
  }
  return defs;
}

// ---------------------------------------------------------------------------
// standard performance metrics
// ---------------------------------------------------------------------------

struct PerformanceMetrics {
  double logloss = 0.0;
  double prauc = 0.0;
  double auroc = 0.0;
  double brier = 0.0;
  double ece = 0.0;
  bool prauc_defined = true;  // false when a class is absent
  bool auroc_defined = true;
};

// logloss: weighted mean NLL on scores clamped to [1e-15, 1-1e-15].
// prauc: average precision with ties grouped by score (step interpolation).
// auroc: Mann-Whitney statistic with the half-credit tie correction.
// ece: 10 equal-width bins on [0,1].
inline PerformanceMetrics performance_metrics(
    const std::vector<double>& scores, const std::vector<double>& labels,
    const std::vector<double>& weights) {
  if (scores.empty()) throw EmptyInput("performance_metrics needs rows");
  if (scores.size() != labels.size() ||
      (!weights.empty() && weights.size() != scores.size()))
    throw LengthMismatch("performance_metrics length mismatch");

  PerformanceMetrics out;
  const std::size_t n = scores.size();
  double wsum = 0.0, wpos = 0.0;
  double ll = 0.0, br = 0.0;
  constexpr int kBins = 10;
  double bin_w[kBins] = {0}, bin_y[kBins] = {0}, bin_f[kBins] = {0};
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const double p = clamp_prob(scores[i], 1e-15);
    const double y = labels[i];
    wsum += w;
    wpos += w * y;
    ll += w * -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    br += w * (scores[i] - y) * (scores[i] - y);
    int b = static_cast<int>(scores[i] * kBins);
    if (b >= kBins) b = kBins - 1;
    if (b < 0) b = 0;
    bin_w[b] += w;
    bin_y[b] += w * y;
    bin_f[b] += w * scores[i];
  }
  out.logloss = ll / wsum;
  out.brier = br / wsum;
  for (int b = 0; b < kBins; ++b) {
    if (bin_w[b] > 0.0)
      out.ece += (bin_w[b] / wsum) *
                 std::abs(bin_y[b] / bin_w[b] - bin_f[b] / bin_w[b]);
  }

  const double wneg = wsum - wpos;
  if (wpos <= 0.0 || wneg <= 0.0) {
    out.prauc_defined = false;
    out.auroc_defined = false;
    out.prauc = std::numeric_limits<double>::quiet_NaN();
    out.auroc = std::numeric_limits<double>::quiet_NaN();
    return out;
  }

  const auto order = detail::score_order(scores);

  // AUROC: ascending scan; each tie block's positives earn full credit for
  // negatives strictly below and half credit for negatives sharing the score.
  double u = 0.0, cum_neg = 0.0;
  for (std::size_t k = 0; k < n;) {
    std::size_t j = k;
    double block_pos = 0.0, block_neg = 0.0;
    while (j < n && scores[order[j]] == scores[order[k]]) {
      const double w = weights.empty() ? 1.0 : weights[order[j]];
      block_pos += w * labels[order[j]];
      block_neg += w * (1.0 - labels[order[j]]);
      ++j;
    }
    u += block_pos * (cum_neg + 0.5 * block_neg);
    cum_neg += block_neg;
    k = j;
  }
  out.auroc = u / (wpos * wneg);

  // Average precision: descending scan over tie blocks.
  double tp = 0.0, fp = 0.0, ap = 0.0;
  for (std::size_t k = n; k > 0;) {
    std::size_t j = k;
    double block_pos = 0.0, block_neg = 0.0;
    while (j > 0 && scores[order[j - 1]] == scores[order[k - 1]]) {
      const double w = weights.empty() ? 1.0 : weights[order[j - 1]];
      block_pos += w * labels[order[j - 1]];
      block_neg += w * (1.0 - labels[order[j - 1]]);
      --j;
    }
    tp += block_pos;
    fp += block_neg;
    ap += (block_pos / wpos) * (tp / (tp + fp));
    k = j;
  }
  out.prauc = ap;
  return out;
}

// ---------------------------------------------------------------------------
// report bundle
// ---------------------------------------------------------------------------

struct MetricReport {
  double ecce = 0.0;
  double ecce_sigma = 0.0;  // ECCE / sigma(f)
  double mce = std::numeric_limits<double>::quiet_NaN();
  double mce_absolute = std::numeric_limits<double>::quiet_NaN();  // MCE*sigma
  double logloss = 0.0;
  double prauc = 0.0;
  double auroc = 0.0;
  double brier = 0.0;
  double ece = 0.0;
  bool mce_defined = false;
  bool prauc_defined = true;
  bool auroc_defined = true;
  std::vector<GroupMetricRow> per_group;
};

inline MetricReport compute_metric_report(const std::vector<double>& scores,
                                          const std::vector<double>& labels,
                                          const std::vector<double>& weights,
                                          const GroupSet& groups) {
  MetricReport r;
  r.ecce = ecce(scores, labels);
  const double sigma = sigma_scale(scores);
  r.ecce_sigma = sigma > 0.0 ? r.ecce / sigma
                             : std::numeric_limits<double>::quiet_NaN();
  const PerformanceMetrics perf = performance_metrics(scores, labels, weights);
  r.logloss = perf.logloss;
  r.prauc = perf.prauc;
  r.auroc = perf.auroc;
  r.brier = perf.brier;
  r.ece = perf.ece;
  r.prauc_defined = perf.prauc_defined;
  r.auroc_defined = perf.auroc_defined;
  if (!groups.empty()) {
    try {
      MceResult m = mce(scores, labels, groups);
      r.mce = m.mce;
      r.mce_absolute = m.mce * sigma;
      r.mce_defined = true;
      r.per_group = std::move(m.per_group);
    } catch (const NoValidGroups&) {
      r.mce_defined = false;
    }
  }
  return r;
}

namespace detail {
inline nlohmann::json json_number_or_null(double v, bool defined) {
  if (!defined || !std::isfinite(v)) return nullptr;
  return v;
}
}  // namespace detail

inline nlohmann::json metric_report_to_json(const MetricReport& r) {
  nlohmann::json per_group = nlohmann::json::array();
  for (const auto& g : r.per_group) {
    per_group.push_back({{"name", g.name},
                         {"n", g.n_members},
                         {"ecce", g.ecce},
                         {"sigma", g.sigma},
                         {"ratio", g.ratio},
                         {"included", g.included},
                         {"flag", g.flag}});
  }
  return {{"ecce", r.ecce},
          {"ecce_sigma", r.ecce_sigma},
          {"mce", detail::json_number_or_null(r.mce, r.mce_defined)},
          {"mce_absolute",
           detail::json_number_or_null(r.mce_absolute, r.mce_defined)},
          {"logloss", r.logloss},
          {"prauc", detail::json_number_or_null(r.prauc, r.prauc_defined)},
          {"auroc", detail::json_number_or_null(r.auroc, r.auroc_defined)},
          {"brier", r.brier},
          {"ece", r.ece},
          {"per_group", per_group}};
}

inline std::string metric_report_csv_header() {
  return "ecce,ecce_sigma,mce,mce_absolute,logloss,prauc,auroc,brier,ece";
}

inline std::string metric_report_csv_row(const MetricReport& r) {
  auto cell = [](double v, bool defined) {
    return defined && std::isfinite(v) ? format_double(v) : std::string();
  };
  std::ostringstream os;
  os << format_double(r.ecce) << ',' << format_double(r.ecce_sigma) << ','
     << cell(r.mce, r.mce_defined) << ','
     << cell(r.mce_absolute, r.mce_defined) << ','
     << format_double(r.logloss) << ',' << cell(r.prauc, r.prauc_defined)
     << ',' << cell(r.auroc, r.auroc_defined) << ','
     << format_double(r.brier) << ',' << format_double(r.ece);
  return os.str();
}

inline std::string per_group_csv(const MetricReport& r) {
  std::ostringstream os;
  os << "name,n,ecce,sigma,ratio,included,flag\n";
  for (const auto& g : r.per_group) {
    os << detail::csv_escape(g.name) << ',' << g.n_members << ','
       << format_double(g.ecce) << ',' << format_double(g.sigma) << ','
       << format_double(g.ratio) << ',' << (g.included ? 1 : 0) << ','
       << g.flag << '\n';
  }
  return os.str();
}

}  // namespace mcal
