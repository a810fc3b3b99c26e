#pragma once

// Second-order (Newton) gradient-boosted regression trees on logits under
// log loss. Histogram split finding over quantile bin edges, leaf-wise
// (best-gain-first) growth capped by num_leaves and max_depth, and the
// regularizers the recursive calibration loop depends on: lambda_l2,
// min_child_samples and min_sum_hessian_in_leaf.
//
// Determinism: split search reduces over features in fixed index order and
// histogram accumulation follows ascending row order, so fitted ensembles
// are bit-identical for any worker-thread count.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <json.hpp>

#include "mcal/common.hpp"
#include "mcal/dataset.hpp"

namespace mcal {

struct EmptyData : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct GBDTConfig {
  double learning_rate = 0.02873;
  int n_estimators = 94;
  int max_depth = 5;
  int num_leaves = 5;
  int min_child_samples = 160;
  double min_sum_hessian_in_leaf = 20.0;
  double lambda_l2 = 0.00913;
  double min_gain_to_split = 0.15;
  int max_bins = 255;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error("learning_rate must be > 0");
    if (n_estimators < 1) throw Error("n_estimators must be >= 1");
    if (num_leaves < 2) throw Error("num_leaves must be >= 2");
    if (max_depth < 1) throw Error("max_depth must be >= 1");
    if (min_child_samples < 1) throw Error("min_child_samples must be >= 1");
    if (min_sum_hessian_in_leaf < 0.0)
      throw Error("min_sum_hessian_in_leaf must be >= 0");
    if (lambda_l2 < 0.0) throw Error("lambda_l2 must be >= 0");
    if (max_bins < 2 || max_bins > 65535)
      throw Error("max_bins must be in [2, 65535]");
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate},
            {"n_estimators", n_estimators},
            {"max_depth", max_depth},
            {"num_leaves", num_leaves},
            {"min_child_samples", min_child_samples},
            {"min_sum_hessian_in_leaf", min_sum_hessian_in_leaf},
            {"lambda_l2", lambda_l2},
            {"min_gain_to_split", min_gain_to_split},
            {"max_bins", max_bins},
            {"seed", seed}};
  }

  static GBDTConfig from_json(const nlohmann::json& j) {
    GBDTConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.n_estimators = j.at("n_estimators").get<int>();
    c.max_depth = j.at("max_depth").get<int>();
    c.num_leaves = j.at("num_leaves").get<int>();
    c.min_child_samples = j.at("min_child_samples").get<int>();
    c.min_sum_hessian_in_leaf = j.at("min_sum_hessian_in_leaf").get<double>();
    c.lambda_l2 = j.at("lambda_l2").get<double>();
    c.min_gain_to_split = j.at("min_gain_to_split").get<double>();
    c.max_bins = j.at("max_bins").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

// ---------------------------------------------------------------------------
// tree structure
// ---------------------------------------------------------------------------

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // x <= threshold goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  bool default_left = true;  // routing for missing values
  double value = 0.0;        // leaf logit increment, learning rate folded in
  double sum_hessian = 0.0;
  std::int64_t sample_count = 0;

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict_row(const Dataset& data, std::size_t row) const {
    std::int32_t at = 0;
    while (!nodes[at].is_leaf()) {
      const TreeNode& nd = nodes[at];
      const double x = data.value(row, static_cast<std::size_t>(nd.feature));
      if (std::isnan(x)) {
        at = nd.default_left ? nd.left : nd.right;
      } else {
        at = x <= nd.threshold ? nd.left : nd.right;
      }
    }
    return nodes[at].value;
  }

  int depth() const {
    int best = 0;
    std::vector<std::pair<std::int32_t, int>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [at, d] = stack.back();
      stack.pop_back();
      if (nodes[at].is_leaf()) {
        best = std::max(best, d);
      } else {
        stack.push_back({nodes[at].left, d + 1});
        stack.push_back({nodes[at].right, d + 1});
      }
    }
    return best;
  }
};

struct TreeEnsemble {
  double base_score = 0.0;
  std::size_t n_features = 0;
  GBDTConfig config;
  std::vector<Tree> trees;

  // Tree outputs accumulate in fit order starting from base_score; the same
  // expression is used at fit time so replays are bit-exact.
  std::vector<double> predict(const Dataset& data) const {
    if (data.n_features() != n_features)
      throw DimensionMismatch("ensemble expects " +
                              std::to_string(n_features) + " features, got " +
                              std::to_string(data.n_features()));
    std::vector<double> out(data.n_rows(), 0.0);
    parallel_for(data.n_rows(), [&](std::size_t i) {
      double acc = base_score;
      for (const auto& t : trees) acc += t.predict_row(data, i);
      out[i] = acc;
    });
    return out;
  }

  nlohmann::json to_json() const;
  static TreeEnsemble from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// histogram binning
// ---------------------------------------------------------------------------

namespace detail {

// Bin edges are midpoints between adjacent distinct feature values. When the
// number of distinct values exceeds max_bins, cut positions are chosen at
// (approximately) equal data mass. bin(x) = index of first edge >= x, so
// "x <= edge b" is exactly "bin(x) <= b".
struct FeatureBins {
  std::vector<double> edges;

  std::uint16_t bin_of(double x) const {
    return static_cast<std::uint16_t>(
        std::lower_bound(edges.begin(), edges.end(), x) - edges.begin());
  }
  std::size_t n_bins() const { return edges.size() + 1; }
};

// Midpoint of two adjacent distinct values, guarded against rounding onto
// the right value (which would flip routing for rows holding it).
inline double split_point(double lo, double hi) {
  const double mid = lo + 0.5 * (hi - lo);
  return mid < hi ? mid : lo;
}

inline FeatureBins build_bins(const std::vector<double>& column,
                              int max_bins) {
  std::vector<double> sorted = column;
  std::sort(sorted.begin(), sorted.end());

  std::vector<double> values;     // distinct, ascending
  std::vector<std::size_t> cnts;  // multiplicity of each distinct value
  for (const double v : sorted) {
    if (values.empty() || v != values.back()) {
      values.push_back(v);
      cnts.push_back(1);
    } else {
      ++cnts.back();
    }
  }

  FeatureBins bins;
  const std::size_t m = values.size();
  if (m <= 1) return bins;  // constant column: single bin, no edges

  if (m <= static_cast<std::size_t>(max_bins)) {
    bins.edges.reserve(m - 1);
    for (std::size_t k = 0; k + 1 < m; ++k)
      bins.edges.push_back(split_point(values[k], values[k + 1]));
    return bins;
  }

  // Greedy equal-mass cuts over the distinct-value histogram.
  const double total = static_cast<double>(column.size());
  const double target = total / static_cast<double>(max_bins);
  double acc = 0.0;
  std::size_t cut_count = 0;
  for (std::size_t k = 0; k + 1 < m; ++k) {
    acc += static_cast<double>(cnts[k]);
    if (acc >= target * static_cast<double>(cut_count + 1) &&
        cut_count + 1 < static_cast<std::size_t>(max_bins)) {
      bins.edges.push_back(split_point(values[k], values[k + 1]));
      ++cut_count;
    }
  }
  return bins;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// fitting
// ---------------------------------------------------------------------------

namespace detail {

struct SplitCandidate {
  double gain = -std::numeric_limits<double>::infinity();
  int feature = -1;
  int split_bin = -1;  // boundary bin index (left side ends here)
  double threshold = 0.0;
  bool default_left = true;
  bool valid() const { return feature >= 0; }
};

struct GrowNode {
  std::vector<std::uint32_t> rows;  // ascending
  double sum_g = 0.0;               // weighted gradient sum
  double sum_h = 0.0;               // weighted hessian sum
  int depth = 0;
  std::int32_t node_index = -1;
  SplitCandidate best;
  bool split_searched = false;
};

struct BinHistogram {
  std::vector<double> g, h;
  std::vector<std::int64_t> c;
  void reset(std::size_t n_bins) {
    g.assign(n_bins, 0.0);
    h.assign(n_bins, 0.0);
    c.assign(n_bins, 0);
  }
};

inline double leaf_objective(double g, double h, double lambda) {
  const double denom = h + lambda;
  return denom > 0.0 ? g * g / denom : 0.0;
}

// Scans one feature's histogram for the best legal split. Cumulative sums run
// left to right over bins; the right side is derived from the node totals.
inline void scan_feature(const BinHistogram& hist, const FeatureBins& bins,
                         const GBDTConfig& cfg, double total_g, double total_h,
                         std::int64_t total_c, int feature,
                         SplitCandidate& best) {
  const double parent_obj = leaf_objective(total_g, total_h, cfg.lambda_l2);
  double gl = 0.0, hl = 0.0;
  std::int64_t cl = 0;
  for (std::size_t b = 0; b + 1 < bins.n_bins(); ++b) {
    gl += hist.g[b];
    hl += hist.h[b];
    cl += hist.c[b];
    const double gr = total_g - gl;
    const double hr = total_h - hl;
    const std::int64_t cr = total_c - cl;
    if (cl < cfg.min_child_samples || cr < cfg.min_child_samples) continue;
    if (hl < cfg.min_sum_hessian_in_leaf || hr < cfg.min_sum_hessian_in_leaf)
      continue;
    const double gain =
        0.5 * (leaf_objective(gl, hl, cfg.lambda_l2) +
               leaf_objective(gr, hr, cfg.lambda_l2) - parent_obj);
    if (!(gain > 0.0) || gain < cfg.min_gain_to_split) continue;
    if (gain > best.gain ||
        (gain == best.gain &&
         (feature < best.feature ||
          (feature == best.feature && bins.edges[b] < best.threshold)))) {
      best.gain = gain;
      best.feature = feature;
      best.split_bin = static_cast<int>(b);
      best.threshold = bins.edges[b];
      best.default_left = hl >= hr;
    }
  }
}

}  // namespace detail

struct GBDTFitState {
  // Internal fit-time cache exposed for tests: logits after each tree.
  std::vector<double> final_logits;
};

// Fits an ensemble by Newton boosting on log loss. Per-row gradient
// g = mu(F) - y and hessian h = mu(F)(1 - mu(F)); each leaf stores
// -sum(w*g) / (sum(w*h) + lambda_l2) scaled by the learning rate. base_score
// stays 0: the caller owns initialization through init_logits.
inline TreeEnsemble fit_gbdt(const Dataset& data,
                             const std::vector<double>& init_logits,
                             const GBDTConfig& cfg,
                             GBDTFitState* state = nullptr) {
  cfg.validate();
  if (data.n_rows() == 0 || data.n_features() == 0)
    throw EmptyData("cannot fit on empty data");
  if (init_logits.size() != data.n_rows())
    throw DimensionMismatch("init_logits length mismatch");
  for (const double f : init_logits)
    if (!std::isfinite(f)) throw Error("non-finite init logit");

  const std::size_t n = data.n_rows();
  const std::size_t d = data.n_features();

  // Bin construction and row pre-binning, parallel per feature.
  std::vector<detail::FeatureBins> bins(d);
  std::vector<std::vector<std::uint16_t>> binned(d);
  parallel_for(d, [&](std::size_t j) {
    bins[j] = detail::build_bins(data.columns[j], cfg.max_bins);
    binned[j].resize(n);
    for (std::size_t i = 0; i < n; ++i)
      binned[j][i] = bins[j].bin_of(data.columns[j][i]);
  });

  TreeEnsemble ensemble;
  ensemble.base_score = 0.0;
  ensemble.n_features = d;
  ensemble.config = cfg;
  ensemble.trees.reserve(static_cast<std::size_t>(cfg.n_estimators));

  std::vector<double> logits = init_logits;
  std::vector<double> gw(n), hw(n);

  for (int t = 0; t < cfg.n_estimators; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(logits[i]);
      const double w = data.weight(i);
      gw[i] = w * (p - data.labels[i]);
      hw[i] = w * (p * (1.0 - p));
    }

    Tree tree;
    std::vector<detail::GrowNode> grow;
    grow.reserve(static_cast<std::size_t>(2 * cfg.num_leaves));

    auto node_sums = [&](const std::vector<std::uint32_t>& rows, double& g,
                         double& h) {
      g = 0.0;
      h = 0.0;
      for (const std::uint32_t r : rows) {
        g += gw[r];
        h += hw[r];
      }
    };

    auto search_split = [&](detail::GrowNode& nd) {
      nd.split_searched = true;
      nd.best = detail::SplitCandidate{};
      if (nd.depth >= cfg.max_depth) return;
      std::vector<detail::BinHistogram> hists(d);
      parallel_for(d, [&](std::size_t j) {
        if (bins[j].n_bins() < 2) return;
        hists[j].reset(bins[j].n_bins());
        const auto& bj = binned[j];
        for (const std::uint32_t r : nd.rows) {
          const std::uint16_t b = bj[r];
          hists[j].g[b] += gw[r];
          hists[j].h[b] += hw[r];
          ++hists[j].c[b];
        }
      });
      // Reduction in fixed feature order keeps the result thread-invariant.
      for (std::size_t j = 0; j < d; ++j) {
        if (bins[j].n_bins() < 2) continue;
        detail::scan_feature(hists[j], bins[j], cfg, nd.sum_g, nd.sum_h,
                             static_cast<std::int64_t>(nd.rows.size()),
                             static_cast<int>(j), nd.best);
      }
    };

    detail::GrowNode root;
    root.rows.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      root.rows[i] = static_cast<std::uint32_t>(i);
    node_sums(root.rows, root.sum_g, root.sum_h);
    root.depth = 0;
    root.node_index = 0;
    tree.nodes.emplace_back();
    search_split(root);
    grow.push_back(std::move(root));

    std::vector<std::size_t> open{0};  // indices into `grow` that are leaves
    int n_leaves = 1;
    while (n_leaves < cfg.num_leaves) {
      // Best-gain-first; ties broken by the smaller grow index (creation
      // order) for determinism.
      std::size_t pick = grow.size();
      for (const std::size_t gi : open) {
        if (!grow[gi].best.valid()) continue;
        if (pick == grow.size() || grow[gi].best.gain > grow[pick].best.gain)
          pick = gi;
      }
      if (pick == grow.size()) break;  // no legal split anywhere

      detail::GrowNode& parent = grow[pick];
      const detail::SplitCandidate sc = parent.best;
      const auto& bj = binned[static_cast<std::size_t>(sc.feature)];

      detail::GrowNode left, right;
      left.rows.reserve(parent.rows.size());
      right.rows.reserve(parent.rows.size());
      for (const std::uint32_t r : parent.rows) {
        if (bj[r] <= sc.split_bin) left.rows.push_back(r);
        else right.rows.push_back(r);
      }
      node_sums(left.rows, left.sum_g, left.sum_h);
      node_sums(right.rows, right.sum_g, right.sum_h);
      left.depth = right.depth = parent.depth + 1;

      TreeNode& pn = tree.nodes[static_cast<std::size_t>(parent.node_index)];
      pn.feature = sc.feature;
      pn.threshold = sc.threshold;
      pn.default_left = sc.default_left;
      pn.sum_hessian = parent.sum_h;
      pn.sample_count = static_cast<std::int64_t>(parent.rows.size());
      pn.left = static_cast<std::int32_t>(tree.nodes.size());
      pn.right = static_cast<std::int32_t>(tree.nodes.size() + 1);
      left.node_index = pn.left;
      right.node_index = pn.right;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();

      search_split(left);
      search_split(right);

      const std::size_t parent_grow_index = pick;
      open.erase(std::find(open.begin(), open.end(), parent_grow_index));
      open.push_back(grow.size());
      grow.push_back(std::move(left));
      open.push_back(grow.size());
      grow.push_back(std::move(right));
      ++n_leaves;
    }

    // Finalize leaves and advance the cached logits by direct assignment;
    // routing reproduces the same partition, so replays stay bit-exact.
    for (const std::size_t gi : open) {
      const detail::GrowNode& nd = grow[gi];
      TreeNode& leaf = tree.nodes[static_cast<std::size_t>(nd.node_index)];
      const double denom = nd.sum_h + cfg.lambda_l2;
      leaf.value =
          denom > 0.0 ? -(nd.sum_g / denom) * cfg.learning_rate : 0.0;
      leaf.sum_hessian = nd.sum_h;
      leaf.sample_count = static_cast<std::int64_t>(nd.rows.size());
      for (const std::uint32_t r : nd.rows) logits[r] += leaf.value;
    }
    ensemble.trees.push_back(std::move(tree));
  }

  if (state) state->final_logits = std::move(logits);
  return ensemble;
}

inline std::vector<double> predict_ensemble(const TreeEnsemble& model,
                                            const Dataset& data) {
  return model.predict(data);
}

// Mean weighted training log loss as a function of the tree-count prefix:
// entry k uses init_logits plus the first k trees. Length n_trees + 1.
inline std::vector<double> train_logloss_per_tree(
    const TreeEnsemble& model, const Dataset& data,
    const std::vector<double>& init_logits) {
  if (data.n_features() != model.n_features)
    throw DimensionMismatch("feature count mismatch");
  if (init_logits.size() != data.n_rows())
    throw DimensionMismatch("init_logits length mismatch");
  std::vector<double> logits = init_logits;
  for (std::size_t i = 0; i < logits.size(); ++i)
    logits[i] += model.base_score;
  std::vector<double> losses;
  losses.reserve(model.trees.size() + 1);
  losses.push_back(
      weighted_mean_logit_logloss(logits, data.labels, data.weights));
  for (const auto& tree : model.trees) {
    for (std::size_t i = 0; i < logits.size(); ++i)
      logits[i] += tree.predict_row(data, i);
    losses.push_back(
        weighted_mean_logit_logloss(logits, data.labels, data.weights));
  }
  return losses;
}

// ---------------------------------------------------------------------------
// serialization (round-trip is prediction-exact: doubles are emitted with
// shortest round-trip representation by the JSON library)
// ---------------------------------------------------------------------------

inline nlohmann::json TreeEnsemble::to_json() const {
  nlohmann::json trees_json = nlohmann::json::array();
  for (const auto& tree : trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& nd : tree.nodes) {
      nodes.push_back({{"feature", nd.feature},
                       {"threshold", nd.threshold},
                       {"left", nd.left},
                       {"right", nd.right},
                       {"default_left", nd.default_left},
                       {"value", nd.value},
                       {"sum_hessian", nd.sum_hessian},
                       {"sample_count", nd.sample_count}});
    }
    trees_json.push_back({{"nodes", nodes}});
  }
  return {{"base_score", base_score},
          {"n_features", n_features},
          {"config", config.to_json()},
          {"trees", trees_json}};
}

inline TreeEnsemble TreeEnsemble::from_json(const nlohmann::json& j) {
  TreeEnsemble e;
  e.base_score = j.at("base_score").get<double>();
  e.n_features = j.at("n_features").get<std::size_t>();
  e.config = GBDTConfig::from_json(j.at("config"));
  for (const auto& tj : j.at("trees")) {
    Tree tree;
    for (const auto& nj : tj.at("nodes")) {
      TreeNode nd;
      nd.feature = nj.at("feature").get<std::int32_t>();
      nd.threshold = nj.at("threshold").get<double>();
      nd.left = nj.at("left").get<std::int32_t>();
      nd.right = nj.at("right").get<std::int32_t>();
      nd.default_left = nj.at("default_left").get<bool>();
      nd.value = nj.at("value").get<double>();
      nd.sum_hessian = nj.at("sum_hessian").get<double>();
      nd.sample_count = nj.at("sample_count").get<std::int64_t>();
      tree.nodes.push_back(nd);
    }
    e.trees.push_back(std::move(tree));
  }
  return e;
}

}  // namespace mcal
