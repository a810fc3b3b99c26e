#pragma once

// Experiment harness: a synthetic generator with known miscalibration
// structure, a method-comparison grid, and the round-count / rescale /
// hessian-regularization ablations. Desk-scale targets are directions and
// orderings, never the magnitudes reported on production-size data; the
// emitted CSV headers repeat that caveat.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mcal/calibrators.hpp"
#include "mcal/common.hpp"
#include "mcal/dataset.hpp"
#include "mcal/mcgrad.hpp"
#include "mcal/metrics.hpp"

namespace mcal::bench {

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

enum class Distortion { None, SegmentBias, GlobalScale };

struct SyntheticSpec {
  std::size_t n = 20000;
  std::size_t n_binary = 3;   // binary features come first
  std::size_t n_numeric = 3;  // then standard-normal features
  std::uint64_t seed = 1;
  std::vector<double> weights;  // true-logit weights; defaulted when empty
  double intercept = 0.0;
  // Extra true-logit offsets on designated binary features.
  std::vector<std::pair<std::size_t, double>> segment_offsets;
  Distortion distortion = Distortion::None;
  std::size_t distortion_feature = 0;  // binary feature index (SegmentBias)
  double magnitude = 0.0;

  std::size_t n_features() const { return n_binary + n_numeric; }
};

struct SyntheticData {
  Dataset data;
  std::vector<double> base_scores;
  std::vector<double> true_probs;
};

// Labels are Bernoulli draws from the true probabilities; the base scores
// come from the distorted logit and stand in for an uncalibrated upstream
// model. Regeneration from the spec is exact.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  const std::size_t d = spec.n_features();
  if (spec.n == 0 || d == 0) throw EmptyData("empty synthetic spec");
  if (spec.distortion == Distortion::SegmentBias &&
      spec.distortion_feature >= spec.n_binary)
    throw Error("distortion_feature must index a binary feature");

  std::vector<double> w = spec.weights;
  if (w.empty()) {
    w.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double base = j < spec.n_binary ? 0.7 : 1.0;
      w[j] = (j % 2 == 0 ? base : -base);
    }
  }
  if (w.size() != d) throw Error("weight vector must have one entry per feature");

  std::mt19937_64 rng(spec.seed);
  SyntheticData out;
  out.data.columns.assign(d, std::vector<double>(spec.n));
  out.data.feature_names.resize(d);
  for (std::size_t j = 0; j < spec.n_binary; ++j)
    out.data.feature_names[j] = "b" + std::to_string(j);
  for (std::size_t j = 0; j < spec.n_numeric; ++j)
    out.data.feature_names[spec.n_binary + j] = "x" + std::to_string(j);

  for (std::size_t j = 0; j < d; ++j) {
    auto& col = out.data.columns[j];
    if (j < spec.n_binary) {
      for (std::size_t i = 0; i < spec.n; ++i)
        col[i] = uniform01(rng) < 0.5 ? 1.0 : 0.0;
    } else {
      for (std::size_t i = 0; i < spec.n; ++i) col[i] = normal_sample(rng);
    }
  }

  out.true_probs.resize(spec.n);
  out.base_scores.resize(spec.n);
  out.data.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    double logit = spec.intercept;
    for (std::size_t j = 0; j < d; ++j)
      logit += w[j] * out.data.columns[j][i];
    for (const auto& [j, off] : spec.segment_offsets)
      logit += off * out.data.columns[j][i];
    out.true_probs[i] = sigmoid(logit);

    double base_logit = logit;
    switch (spec.distortion) {
      case Distortion::None:
        break;
      case Distortion::SegmentBias:
        base_logit += spec.magnitude *
                      out.data.columns[spec.distortion_feature][i];
        break;
      case Distortion::GlobalScale:
        base_logit = spec.magnitude * logit;
        break;
    }
    out.base_scores[i] = sigmoid(base_logit);
  }
  for (std::size_t i = 0; i < spec.n; ++i)
    out.data.labels[i] = uniform01(rng) < out.true_probs[i] ? 1.0 : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// comparison grid
// ---------------------------------------------------------------------------

struct BenchDataset {
  std::string name;
  Dataset data;
  std::vector<double> base_scores;  // empty: fit the logistic base per seed
  std::vector<GroupDef> prespecified;  // optional named group definitions
};

struct ComparisonConfig {
  double test_fraction = 0.5;
  double logistic_l2 = 1e-6;
  McGradConfig mcgrad;
  GBDTConfig dfmc = dfmc_default_config();
  HKRRParams hkrr;
  GroupGenConfig groups;
};

struct ResultRow {
  std::string dataset;
  std::string method;  // or ablation variant
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
  bool ok = true;
  std::string error;
};

struct RankRow {
  std::string dataset;
  std::string metric;
  std::string method;
  double mean_value = 0.0;
  int rank = 0;
};

struct BenchResults {
  std::vector<ResultRow> rows;
  std::vector<RankRow> ranks;
};

namespace detail {

inline bool lower_is_better(const std::string& metric) {
  return !(metric == "prauc" || metric == "auroc");
}

inline void push_report_rows(std::vector<ResultRow>& rows,
                             const std::string& dataset,
                             const std::string& method, std::uint64_t seed,
                             const MetricReport& r,
                             const std::optional<double>& mce_prespecified) {
  auto push = [&](const std::string& name, double v, bool ok = true) {
    rows.push_back({dataset, method, seed, name, v, ok, ""});
  };
  push("mce", r.mce, r.mce_defined);
  push("mce_absolute", r.mce_absolute, r.mce_defined);
  push("ecce", r.ecce);
  push("ecce_sigma", r.ecce_sigma);
  push("logloss", r.logloss);
  push("prauc", r.prauc, r.prauc_defined);
  push("auroc", r.auroc, r.auroc_defined);
  push("brier", r.brier);
  push("ece", r.ece);
  if (mce_prespecified)
    push("mce_prespecified", *mce_prespecified);
}

struct PreparedCell {
  Dataset train, test;
  std::vector<double> train_scores, test_scores;
  std::vector<GroupDef> group_defs;
  GroupSet train_groups, test_groups;
  GroupSet test_prespecified;
};

inline PreparedCell prepare_cell(const BenchDataset& ds, std::uint64_t seed,
                                 const ComparisonConfig& cfg) {
  PreparedCell cell;
  const SplitIndices idx =
      split_indices(ds.data.n_rows(), SplitSpec{cfg.test_fraction, seed});
  cell.train = ds.data.subset(idx.train);
  cell.test = ds.data.subset(idx.valid);

  if (!ds.base_scores.empty()) {
    for (const std::size_t r : idx.train)
      cell.train_scores.push_back(ds.base_scores[r]);
    for (const std::size_t r : idx.valid)
      cell.test_scores.push_back(ds.base_scores[r]);
  } else {
    const LogisticModel base = fit_logistic(cell.train, cfg.logistic_l2);
    cell.train_scores = base.predict(cell.train);
    cell.test_scores = base.predict(cell.test);
  }

  GroupGenConfig gcfg = cfg.groups;
  gcfg.seed = seed;
  cell.group_defs = generate_group_defs(cell.train, gcfg);
  cell.train_groups = materialize_groups(cell.group_defs, cell.train);
  cell.test_groups = materialize_groups(cell.group_defs, cell.test);
  if (!ds.prespecified.empty())
    cell.test_prespecified = materialize_groups(ds.prespecified, cell.test);
  return cell;
}

}  // namespace detail

// Fits each method on the train half and evaluates on the test half with
// combinatorially generated groups (definitions derived from the train
// split) plus any prespecified group definitions. Per-cell failures are
// recorded and the grid keeps running.
inline BenchResults run_comparison(const std::vector<BenchDataset>& datasets,
                                   const std::vector<std::string>& methods,
                                   const std::vector<std::uint64_t>& seeds,
                                   const ComparisonConfig& cfg) {
  BenchResults out;
  for (const auto& ds : datasets) {
    for (const std::uint64_t seed : seeds) {
      detail::PreparedCell cell;
      try {
        cell = detail::prepare_cell(ds, seed, cfg);
      } catch (const std::exception& e) {
        for (const auto& method : methods)
          out.rows.push_back({ds.name, method, seed, "error",
                              std::numeric_limits<double>::quiet_NaN(), false,
                              e.what()});
        continue;
      }
      for (const auto& method : methods) {
        try {
          std::vector<double> predicted;
          if (method == "base") {
            predicted = cell.test_scores;
          } else if (method == "platt") {
            const PlattModel m = fit_platt(cell.train_scores,
                                           cell.train.labels,
                                           cell.train.weights);
            predicted = m.predict(cell.test_scores);
          } else if (method == "isotonic") {
            const IsotonicModel m = fit_isotonic(cell.train_scores,
                                                 cell.train.labels,
                                                 cell.train.weights);
            predicted = m.predict(cell.test_scores);
          } else if (method == "hkrr") {
            const HKRRModel m = fit_hkrr(cell.train_scores,
                                         cell.train.labels,
                                         cell.train_groups, cfg.hkrr);
            predicted = m.predict(cell.test_scores, cell.test_groups);
          } else if (method == "dfmc") {
            const DFMCModel m = fit_dfmc(cell.train, cell.train_scores,
                                         cell.train_groups, cfg.dfmc);
            predicted = m.predict(cell.test, cell.test_scores,
                                  cell.test_groups);
          } else if (method == "mcgrad") {
            McGradConfig mc = cfg.mcgrad;
            mc.seed = seed;
            const McGradFitResult fit =
                fit_mcgrad(cell.train, cell.train_scores, mc);
            predicted =
                predict_mcgrad(fit.model, cell.test, cell.test_scores);
          } else {
            throw Error("unknown method: " + method);
          }
          const MetricReport report =
              compute_metric_report(predicted, cell.test.labels,
                                    cell.test.weights, cell.test_groups);
          std::optional<double> mce_pre;
          if (!cell.test_prespecified.empty())
            mce_pre = mce(predicted, cell.test.labels,
                          cell.test_prespecified).mce;
          detail::push_report_rows(out.rows, ds.name, method, seed, report,
                                   mce_pre);
        } catch (const std::exception& e) {
          out.rows.push_back({ds.name, method, seed, "error",
                              std::numeric_limits<double>::quiet_NaN(), false,
                              e.what()});
        }
      }
    }
  }

  // Rank methods by mean metric value per dataset (rank 1 is best).
  std::map<std::pair<std::string, std::string>,
           std::map<std::string, std::pair<double, int>>>
      sums;
  for (const auto& row : out.rows) {
    if (!row.ok || row.metric == "error") continue;
    auto& cell = sums[{row.dataset, row.metric}][row.method];
    cell.first += row.value;
    cell.second += 1;
  }
  for (const auto& [key, per_method] : sums) {
    std::vector<std::pair<std::string, double>> means;
    for (const auto& [method, sc] : per_method)
      means.push_back({method, sc.first / sc.second});
    const bool lower = detail::lower_is_better(key.second);
    std::sort(means.begin(), means.end(), [&](const auto& a, const auto& b) {
      if (a.second != b.second)
        return lower ? a.second < b.second : a.second > b.second;
      return a.first < b.first;
    });
    for (std::size_t r = 0; r < means.size(); ++r)
      out.ranks.push_back({key.first, key.second, means[r].first,
                           means[r].second, static_cast<int>(r + 1)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// ablations
// ---------------------------------------------------------------------------

struct AblationVariant {
  std::string name;
  std::optional<int> max_rounds;
  std::optional<bool> rescale_enabled;
  std::optional<double> min_sum_hessian_in_leaf;
};

struct AblationGrid {
  std::vector<AblationVariant> variants;

  static AblationGrid standard() {
    AblationGrid g;
    g.variants.push_back({"full", {}, {}, {}});
    g.variants.push_back({"one_round", 1, {}, {}});
    g.variants.push_back({"no_rescale", {}, false, {}});
    g.variants.push_back({"mshl_low", {}, {}, 0.001});
    return g;
  }
};

inline McGradConfig apply_variant(McGradConfig base,
                                  const AblationVariant& v) {
  if (v.max_rounds) base.max_rounds = *v.max_rounds;
  if (v.rescale_enabled.has_value()) base.rescale_enabled = *v.rescale_enabled;
  if (v.min_sum_hessian_in_leaf)
    base.gbdt.min_sum_hessian_in_leaf = *v.min_sum_hessian_in_leaf;
  return base;
}

struct AblationRow {
  std::string dataset;
  std::string variant;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
  double rel_change_vs_full = 0.0;  // (variant - full) / full
  bool ok = true;
  std::string error;
};

// Per-variant metric values plus the relative change against the "full"
// configuration on the same (dataset, seed) cell. The selected round count
// is recorded as its own metric.
inline std::vector<AblationRow> run_ablation(
    const AblationGrid& grid, const std::vector<BenchDataset>& datasets,
    const std::vector<std::uint64_t>& seeds, const ComparisonConfig& cfg) {
  std::vector<AblationRow> rows;
  for (const auto& ds : datasets) {
    for (const std::uint64_t seed : seeds) {
      detail::PreparedCell cell;
      try {
        cell = detail::prepare_cell(ds, seed, cfg);
      } catch (const std::exception& e) {
        for (const auto& v : grid.variants)
          rows.push_back({ds.name, v.name, seed, "error",
                          std::numeric_limits<double>::quiet_NaN(),
                          std::numeric_limits<double>::quiet_NaN(), false,
                          e.what()});
        continue;
      }
      std::map<std::string, std::map<std::string, double>> per_variant;
      for (const auto& v : grid.variants) {
        try {
          McGradConfig mc = apply_variant(cfg.mcgrad, v);
          mc.seed = seed;
          const McGradFitResult fit =
              fit_mcgrad(cell.train, cell.train_scores, mc);
          const std::vector<double> predicted =
              predict_mcgrad(fit.model, cell.test, cell.test_scores);
          const MetricReport r =
              compute_metric_report(predicted, cell.test.labels,
                                    cell.test.weights, cell.test_groups);
          auto& dst = per_variant[v.name];
          dst["mce"] = r.mce;
          dst["ecce"] = r.ecce;
          dst["logloss"] = r.logloss;
          dst["prauc"] = r.prauc;
          dst["brier"] = r.brier;
          dst["selected_rounds"] =
              static_cast<double>(fit.selected_rounds);
        } catch (const std::exception& e) {
          rows.push_back({ds.name, v.name, seed, "error",
                          std::numeric_limits<double>::quiet_NaN(),
                          std::numeric_limits<double>::quiet_NaN(), false,
                          e.what()});
        }
      }
      const auto full_it = per_variant.find("full");
      for (const auto& v : grid.variants) {
        const auto it = per_variant.find(v.name);
        if (it == per_variant.end()) continue;
        for (const auto& [metric, value] : it->second) {
          double rel = std::numeric_limits<double>::quiet_NaN();
          if (full_it != per_variant.end() &&
              full_it->second.count(metric)) {
            const double full_v = full_it->second.at(metric);
            rel = full_v != 0.0
                      ? (value - full_v) / full_v
                      : (value == full_v
                             ? 0.0
                             : std::numeric_limits<double>::quiet_NaN());
          }
          rows.push_back({ds.name, v.name, seed, metric, value, rel, true,
                          ""});
        }
      }
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

inline constexpr const char* kDeskScaleCaveat =
    "# desk-scale harness: compare directions and orderings across methods; "
    "values are not comparable to results on production-size data";

inline std::string results_csv(const BenchResults& res) {
  std::ostringstream os;
  os << kDeskScaleCaveat << "\n";
  os << "dataset,method,seed,metric,value,ok,error\n";
  for (const auto& r : res.rows) {
    os << detail::csv_escape(r.dataset) << ',' << r.method << ',' << r.seed
       << ',' << r.metric << ',' << format_double(r.value) << ','
       << (r.ok ? 1 : 0) << ',' << detail::csv_escape(r.error) << '\n';
  }
  return os.str();
}

inline std::string ranks_csv(const BenchResults& res) {
  std::ostringstream os;
  os << kDeskScaleCaveat << "\n";
  os << "dataset,metric,method,mean_value,rank\n";
  for (const auto& r : res.ranks) {
    os << detail::csv_escape(r.dataset) << ',' << r.metric << ',' << r.method
       << ',' << format_double(r.mean_value) << ',' << r.rank << '\n';
  }
  return os.str();
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << kDeskScaleCaveat << "\n";
  os << "dataset,variant,seed,metric,value,rel_change_vs_full,ok,error\n";
  for (const auto& r : rows) {
    os << detail::csv_escape(r.dataset) << ',' << r.variant << ',' << r.seed
       << ',' << r.metric << ',' << format_double(r.value) << ','
       << format_double(r.rel_change_vs_full) << ',' << (r.ok ? 1 : 0) << ','
       << detail::csv_escape(r.error) << '\n';
  }
  return os.str();
}

}  // namespace mcal::bench
