#pragma once

// Baseline predictors and calibrators: L2-regularized logistic regression
// (the base model for the benchmark harness), Platt scaling, isotonic
// regression via pool-adjacent-violators, iterative (group x score-bucket)
// patching, and the depth-2 group-feature boosting calibrator. A tagged
// {kind, payload} JSON envelope covers every model for storage.

#include <cmath>
#include <cstdint>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mcal/common.hpp"
#include "mcal/dataset.hpp"
#include "mcal/gbdt.hpp"
#include "mcal/mcgrad.hpp"
#include "mcal/metrics.hpp"

namespace mcal {

struct ShapeMismatch : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// dense symmetric solve (Cholesky with diagonal jitter fallback)
// ---------------------------------------------------------------------------

namespace detail {

inline bool cholesky_solve(std::vector<double>& a, std::vector<double>& b,
                           std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * n + k] * a[j * n + k];
    if (!(diag > 0.0)) return false;
    const double ljj = std::sqrt(diag);
    a[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = v / ljj;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double v = b[i];
    for (std::size_t k = 0; k < i; ++k) v -= a[i * n + k] * b[k];
    b[i] = v / a[i * n + i];
  }
  for (std::size_t ii = n; ii > 0; --ii) {
    const std::size_t i = ii - 1;
    double v = b[i];
    for (std::size_t k = i + 1; k < n; ++k) v -= a[k * n + i] * b[k];
    b[i] = v / a[i * n + i];
  }
  return true;
}

inline bool solve_spd(std::vector<double> a, std::vector<double>& b,
                      std::size_t n) {
  std::vector<double> rhs = b;
  for (int attempt = 0; attempt < 6; ++attempt) {
    std::vector<double> m = a;
    const double jitter = attempt == 0 ? 0.0 : std::pow(10.0, attempt - 9);
    for (std::size_t i = 0; i < n; ++i) m[i * n + i] += jitter;
    std::vector<double> x = rhs;
    if (cholesky_solve(m, x, n)) {
      b = x;
      return true;
    }
  }
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// logistic regression
// ---------------------------------------------------------------------------

struct LogisticModel {
  std::vector<double> coefficients;  // over standardized features
  double intercept = 0.0;
  double l2 = 0.0;
  std::vector<double> feature_means;
  std::vector<double> feature_sds;  // 0 marks a constant column (zeroed out)
  bool converged = true;
  double final_grad_norm = 0.0;
  std::vector<double> objective_trace;

  double standardized(std::size_t j, double x) const {
    return feature_sds[j] > 0.0 ? (x - feature_means[j]) / feature_sds[j]
                                : 0.0;
  }

  std::vector<double> predict(const Dataset& data) const {
    if (data.n_features() != coefficients.size())
      throw ShapeMismatch("logistic model expects " +
                          std::to_string(coefficients.size()) + " features");
    std::vector<double> out(data.n_rows());
    for (std::size_t i = 0; i < data.n_rows(); ++i) {
      double f = intercept;
      for (std::size_t j = 0; j < coefficients.size(); ++j)
        f += coefficients[j] * standardized(j, data.value(i, j));
      out[i] = sigmoid(f);
    }
    return out;
  }
};

// Damped Newton (IRLS) on the L2-regularized mean log loss. Features are
// standardized internally; constant columns map to zero. The intercept is
// not penalized, so under pure-noise features it lands on logit(mean(y)).
inline LogisticModel fit_logistic(const Dataset& data, double l2) {
  if (data.n_rows() == 0) throw EmptyData("fit_logistic needs rows");
  const std::size_t n = data.n_rows();
  const std::size_t d = data.n_features();

  LogisticModel model;
  model.l2 = l2;
  model.feature_means.resize(d);
  model.feature_sds.resize(d);
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) wsum += data.weight(i);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      mean += data.weight(i) * data.value(i, j);
    mean /= wsum;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = data.value(i, j) - mean;
      var += data.weight(i) * dx * dx;
    }
    var /= wsum;
    model.feature_means[j] = mean;
    model.feature_sds[j] = var > 0.0 ? std::sqrt(var) : 0.0;
  }

  // Standardized design matrix, column-major.
  std::vector<std::vector<double>> z(d, std::vector<double>(n));
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < n; ++i)
      z[j][i] = model.standardized(j, data.value(i, j));

  std::vector<double> w(d + 1, 0.0);  // coefficients then intercept
  const std::size_t dim = d + 1;

  auto objective = [&](const std::vector<double>& params) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double f = params[d];
      for (std::size_t j = 0; j < d; ++j) f += params[j] * z[j][i];
      acc += data.weight(i) * logit_logloss(f, data.labels[i]);
    }
    acc /= wsum;
    for (std::size_t j = 0; j < d; ++j)
      acc += 0.5 * l2 * params[j] * params[j];
    return acc;
  };

  double obj = objective(w);
  model.objective_trace.push_back(obj);

  std::vector<double> grad(dim), hess(dim * dim), probs(n);
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double f = w[d];
      for (std::size_t j = 0; j < d; ++j) f += w[j] * z[j][i];
      probs[i] = sigmoid(f);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    std::fill(hess.begin(), hess.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = data.weight(i);
      const double r = wi * (probs[i] - data.labels[i]);
      const double hi = wi * probs[i] * (1.0 - probs[i]);
      for (std::size_t j = 0; j < d; ++j) grad[j] += r * z[j][i];
      grad[d] += r;
      for (std::size_t j = 0; j < d; ++j) {
        const double hz = hi * z[j][i];
        for (std::size_t k = 0; k <= j; ++k)
          hess[j * dim + k] += hz * z[k][i];
        hess[d * dim + j] += hz;
      }
      hess[d * dim + d] += hi;
    }
    for (std::size_t j = 0; j < dim; ++j) grad[j] /= wsum;
    for (std::size_t j = 0; j < dim * dim; ++j) hess[j] /= wsum;
    for (std::size_t j = 0; j < d; ++j) {
      grad[j] += l2 * w[j];
      hess[j * dim + j] += l2;
    }
    for (std::size_t j = 0; j < dim; ++j)
      for (std::size_t k = j + 1; k < dim; ++k)
        hess[j * dim + k] = hess[k * dim + j];

    double gmax = 0.0;
    for (const double g : grad) gmax = std::max(gmax, std::abs(g));
    model.final_grad_norm = gmax;
    if (gmax < 1e-8) break;

    std::vector<double> step = grad;
    if (!detail::solve_spd(hess, step, dim)) break;

    // Halving line search keeps the objective trace non-increasing.
    double scale = 1.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      std::vector<double> trial = w;
      for (std::size_t j = 0; j < dim; ++j) trial[j] -= scale * step[j];
      const double tobj = objective(trial);
      if (tobj <= obj) {
        w = std::move(trial);
        obj = tobj;
        model.objective_trace.push_back(obj);
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) break;
  }
  model.converged = model.final_grad_norm < 1e-8;
  model.coefficients.assign(w.begin(), w.begin() + d);
  model.intercept = w[d];
  return model;
}

// ---------------------------------------------------------------------------
// Platt scaling
// ---------------------------------------------------------------------------

struct PlattModel {
  double a = 1.0;
  double b = 0.0;
  double clamp_eps = 1e-7;
  bool degenerate_labels = false;
  bool converged = true;
  std::vector<double> objective_trace;

  std::vector<double> predict(const std::vector<double>& scores) const {
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
      out[i] = sigmoid(a * inverse_sigmoid(scores[i], clamp_eps) + b);
    return out;
  }
};

// Two-parameter Newton fit of p = mu(a * logit(s) + b) on clamped scores.
inline PlattModel fit_platt(const std::vector<double>& scores,
                            const std::vector<double>& labels,
                            const std::vector<double>& weights) {
  if (scores.empty()) throw EmptyData("fit_platt needs rows");
  if (scores.size() != labels.size())
    throw LengthMismatch("scores/labels length mismatch");
  PlattModel model;
  const std::size_t n = scores.size();
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i)
    s[i] = inverse_sigmoid(scores[i], model.clamp_eps);

  bool all0 = true, all1 = true;
  for (const double y : labels) {
    if (y != 0.0) all0 = false;
    if (y != 1.0) all1 = false;
  }
  model.degenerate_labels = all0 || all1;

  double a = 1.0, b = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    wsum += weights.empty() ? 1.0 : weights[i];

  auto objective = [&](double aa, double bb) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      acc += w * logit_logloss(aa * s[i] + bb, labels[i]);
    }
    return acc / wsum;
  };

  double obj = objective(a, b);
  model.objective_trace.push_back(obj);
  model.converged = false;
  for (int iter = 0; iter < 100; ++iter) {
    double ga = 0.0, gb = 0.0, haa = 0.0, hab = 0.0, hbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      const double p = sigmoid(a * s[i] + b);
      const double r = w * (p - labels[i]);
      const double h = w * p * (1.0 - p);
      ga += r * s[i];
      gb += r;
      haa += h * s[i] * s[i];
      hab += h * s[i];
      hbb += h;
    }
    ga /= wsum;
    gb /= wsum;
    haa /= wsum;
    hab /= wsum;
    hbb /= wsum;
    if (std::max(std::abs(ga), std::abs(gb)) < 1e-8) {
      model.converged = true;
      break;
    }
    const double det = haa * hbb - hab * hab;
    if (!(det > 1e-300) || !std::isfinite(det)) break;
    const double da = (hbb * ga - hab * gb) / det;
    const double db = (haa * gb - hab * ga) / det;
    double scale = 1.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      const double ta = a - scale * da, tb = b - scale * db;
      const double tobj = objective(ta, tb);
      if (tobj <= obj) {
        a = ta;
        b = tb;
        obj = tobj;
        model.objective_trace.push_back(obj);
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) break;
  }
  model.a = a;
  model.b = b;
  return model;
}

// ---------------------------------------------------------------------------
// isotonic regression (PAVA)
// ---------------------------------------------------------------------------

struct IsotonicModel {
  std::vector<double> breakpoints;  // ascending block-start scores
  std::vector<double> values;       // non-decreasing fitted probabilities

  double predict_one(double score) const {
    if (breakpoints.empty()) return 0.5;
    const auto it =
        std::upper_bound(breakpoints.begin(), breakpoints.end(), score);
    if (it == breakpoints.begin()) return values.front();
    return values[static_cast<std::size_t>(it - breakpoints.begin()) - 1];
  }

  std::vector<double> predict(const std::vector<double>& scores) const {
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
      out[i] = predict_one(scores[i]);
    return out;
  }
};

// Weighted pool-adjacent-violators over labels in (score asc, index asc)
// order. The fitted step function is right-continuous with flat
// extrapolation beyond the training range.
inline IsotonicModel fit_isotonic(const std::vector<double>& scores,
                                  const std::vector<double>& labels,
                                  const std::vector<double>& weights) {
  if (scores.empty()) throw EmptyData("fit_isotonic needs rows");
  if (scores.size() != labels.size())
    throw LengthMismatch("scores/labels length mismatch");
  const auto order = detail::score_order(scores);

  struct Block {
    double sum_wy, sum_w, start_score;
  };
  std::vector<Block> stack;
  for (const std::size_t i : order) {
    const double w = weights.empty() ? 1.0 : weights[i];
    stack.push_back({w * labels[i], w, scores[i]});
    while (stack.size() >= 2) {
      const Block& prev = stack[stack.size() - 2];
      const Block& curr = stack.back();
      if (prev.sum_wy * curr.sum_w <= curr.sum_wy * prev.sum_w) break;
      Block merged{prev.sum_wy + curr.sum_wy, prev.sum_w + curr.sum_w,
                   prev.start_score};
      stack.pop_back();
      stack.pop_back();
      stack.push_back(merged);
    }
  }

  IsotonicModel model;
  for (const Block& blk : stack) {
    const double v = blk.sum_w > 0.0 ? blk.sum_wy / blk.sum_w : 0.0;
    if (!model.breakpoints.empty() &&
        model.breakpoints.back() == blk.start_score) {
      // Tied scores across a block boundary: keep the later (higher) value
      // so the step function stays single-valued and right-continuous.
      model.values.back() = v;
    } else {
      model.breakpoints.push_back(blk.start_score);
      model.values.push_back(v);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// iterative (group x bucket) patching
// ---------------------------------------------------------------------------

struct HKRRPatch {
  std::size_t group = 0;
  std::size_t bucket = 0;
  double delta = 0.0;
};

struct HKRRModel {
  std::vector<std::string> group_names;
  double lambda = 0.1;
  double alpha = 0.05;
  bool converged = true;
  std::vector<HKRRPatch> patches;  // in application order

  std::size_t n_buckets() const {
    return static_cast<std::size_t>(
        std::max(1.0, std::ceil(1.0 / lambda - 1e-12)));
  }
  std::size_t bucket_of(double score) const {
    const auto b = static_cast<std::size_t>(score / lambda);
    return std::min(b, n_buckets() - 1);
  }

  // Replays the recorded patches on fresh scores. Membership vectors must be
  // supplied in fitted group order (matched by name by the caller).
  std::vector<double> predict(const std::vector<double>& scores,
                              const GroupSet& groups) const {
    if (groups.size() != group_names.size())
      throw ShapeMismatch("patch model expects " +
                          std::to_string(group_names.size()) + " groups");
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].name != group_names[g])
        throw ShapeMismatch("group order mismatch: expected '" +
                            group_names[g] + "', got '" + groups[g].name +
                            "'");
      if (groups[g].membership.size() != scores.size())
        throw ShapeMismatch("group membership length mismatch");
    }
    std::vector<double> out = scores;
    for (const auto& patch : patches) {
      const auto& member = groups[patch.group].membership;
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (member[i] && bucket_of(out[i]) == patch.bucket)
          out[i] = std::min(1.0, std::max(0.0, out[i] + patch.delta));
      }
    }
    return out;
  }
};

struct HKRRParams {
  double lambda = 0.1;
  double alpha = 0.05;
  int max_sweeps = 100;
};

// Sweeps (group, bucket) cells in fixed order; a cell holding at least
// max(1, alpha*lambda*|group|) rows whose mean residual exceeds alpha in
// magnitude gets patched by that mean residual. Stops at the first sweep
// with no patch, or at max_sweeps (flagged as non-converged).
inline HKRRModel fit_hkrr(const std::vector<double>& scores,
                          const std::vector<double>& labels,
                          const GroupSet& groups, const HKRRParams& params) {
  if (scores.empty()) throw EmptyData("fit_hkrr needs rows");
  if (scores.size() != labels.size())
    throw LengthMismatch("scores/labels length mismatch");
  if (!(params.lambda > 0.0 && params.lambda <= 1.0))
    throw Error("lambda must be in (0,1]");
  if (!(params.alpha > 0.0)) throw Error("alpha must be > 0");

  HKRRModel model;
  model.lambda = params.lambda;
  model.alpha = params.alpha;
  for (const auto& g : groups) {
    if (g.membership.size() != scores.size())
      throw ShapeMismatch("group membership length mismatch");
    model.group_names.push_back(g.name);
  }

  std::vector<std::size_t> group_sizes(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g)
    group_sizes[g] = groups[g].member_count();

  std::vector<double> current = scores;
  const std::size_t nb = model.n_buckets();
  bool converged = false;
  for (int sweep = 0; sweep < params.max_sweeps; ++sweep) {
    bool patched = false;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t b = 0; b < nb; ++b) {
        double resid = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < current.size(); ++i) {
          if (groups[g].membership[i] && model.bucket_of(current[i]) == b) {
            resid += labels[i] - current[i];
            ++count;
          }
        }
        const double floor_size = std::max(
            1.0, params.alpha * params.lambda *
                     static_cast<double>(group_sizes[g]));
        if (static_cast<double>(count) < floor_size) continue;
        const double mean_resid = resid / static_cast<double>(count);
        if (std::abs(mean_resid) <= params.alpha) continue;
        for (std::size_t i = 0; i < current.size(); ++i) {
          if (groups[g].membership[i] && model.bucket_of(current[i]) == b)
            current[i] =
                std::min(1.0, std::max(0.0, current[i] + mean_resid));
        }
        model.patches.push_back({g, b, mean_resid});
        patched = true;
      }
    }
    if (!patched) {
      converged = true;
      break;
    }
  }
  model.converged = converged;
  return model;
}

// ---------------------------------------------------------------------------
// depth-2 group-feature boosting calibrator
// ---------------------------------------------------------------------------

struct DFMCModel {
  TreeEnsemble ensemble;
  std::vector<std::string> group_names;
  double logit_clamp_eps = 1e-7;

  std::vector<double> predict(const Dataset& features,
                              const std::vector<double>& scores,
                              const GroupSet& groups) const;
};

// LightGBM-flavored defaults; depth is forced to 2 regardless.
inline GBDTConfig dfmc_default_config() {
  GBDTConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.n_estimators = 100;
  cfg.max_depth = 2;
  cfg.num_leaves = 31;
  cfg.min_child_samples = 20;
  cfg.min_sum_hessian_in_leaf = 1e-3;
  cfg.lambda_l2 = 0.0;
  cfg.min_gain_to_split = 0.0;
  return cfg;
}

namespace detail {

inline Dataset dfmc_design(const Dataset& data,
                           const std::vector<double>& scores,
                           const GroupSet& groups) {
  Dataset out = data;
  for (const auto& g : groups) {
    if (g.membership.size() != data.n_rows())
      throw ShapeMismatch("group membership length mismatch");
    std::vector<double> col(data.n_rows());
    for (std::size_t i = 0; i < data.n_rows(); ++i)
      col[i] = g.membership[i] ? 1.0 : 0.0;
    out.columns.push_back(std::move(col));
    out.feature_names.push_back("__group__" + g.name);
  }
  return augment_with_score(out, scores);
}

}  // namespace detail

inline std::vector<double> DFMCModel::predict(
    const Dataset& features, const std::vector<double>& scores,
    const GroupSet& groups) const {
  if (scores.size() != features.n_rows())
    throw ShapeMismatch("score length mismatch");
  if (groups.size() != group_names.size())
    throw ShapeMismatch("depth-2 calibrator expects " +
                        std::to_string(group_names.size()) + " groups");
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (groups[g].name != group_names[g])
      throw ShapeMismatch("group order mismatch: expected '" +
                          group_names[g] + "'");
  const Dataset design = detail::dfmc_design(features, scores, groups);
  const std::vector<double> increments = ensemble.predict(design);
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    out[i] =
        sigmoid(inverse_sigmoid(scores[i], logit_clamp_eps) + increments[i]);
  return out;
}

inline DFMCModel fit_dfmc(const Dataset& data,
                          const std::vector<double>& base_scores,
                          const GroupSet& groups, GBDTConfig config) {
  if (base_scores.size() != data.n_rows())
    throw ShapeMismatch("score length mismatch");
  config.max_depth = 2;
  DFMCModel model;
  for (const auto& g : groups) model.group_names.push_back(g.name);
  const Dataset design = detail::dfmc_design(data, base_scores, groups);
  const std::vector<double> init =
      inverse_sigmoid(base_scores, model.logit_clamp_eps);
  model.ensemble = fit_gbdt(design, init, config);
  return model;
}

// ---------------------------------------------------------------------------
// uniform prediction interface + tagged serialization
// ---------------------------------------------------------------------------

struct IdentityModel {};  // "none": passes base scores through

using CalibratorModel =
    std::variant<IdentityModel, LogisticModel, PlattModel, IsotonicModel,
                 HKRRModel, DFMCModel, McGradModel>;

// Dispatches to the model-specific transform. `scores` feeds the
// score-based calibrators, `features` the feature-based ones, and `groups`
// the group-aware ones; unused inputs may be empty.
inline std::vector<double> apply_calibrator(const CalibratorModel& model,
                                            const std::vector<double>& scores,
                                            const Dataset& features,
                                            const GroupSet& groups) {
  return std::visit(
      [&](const auto& m) -> std::vector<double> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, IdentityModel>) {
          return scores;
        } else if constexpr (std::is_same_v<T, LogisticModel>) {
          return m.predict(features);
        } else if constexpr (std::is_same_v<T, PlattModel> ||
                             std::is_same_v<T, IsotonicModel>) {
          return m.predict(scores);
        } else if constexpr (std::is_same_v<T, HKRRModel>) {
          return m.predict(scores, groups);
        } else if constexpr (std::is_same_v<T, DFMCModel>) {
          return m.predict(features, scores, groups);
        } else {
          return predict_mcgrad(m, features, scores);
        }
      },
      model);
}

inline std::string calibrator_kind(const CalibratorModel& model) {
  switch (model.index()) {
    case 0: return "none";
    case 1: return "logistic";
    case 2: return "platt";
    case 3: return "isotonic";
    case 4: return "hkrr";
    case 5: return "dfmc";
    default: return "mcgrad";
  }
}

inline nlohmann::json calibrator_to_json(const CalibratorModel& model) {
  nlohmann::json payload;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, IdentityModel>) {
          payload = nlohmann::json::object();
        } else if constexpr (std::is_same_v<T, LogisticModel>) {
          payload = {{"coefficients", m.coefficients},
                     {"intercept", m.intercept},
                     {"l2", m.l2},
                     {"feature_means", m.feature_means},
                     {"feature_sds", m.feature_sds},
                     {"converged", m.converged}};
        } else if constexpr (std::is_same_v<T, PlattModel>) {
          payload = {{"a", m.a},
                     {"b", m.b},
                     {"clamp_eps", m.clamp_eps},
                     {"degenerate_labels", m.degenerate_labels}};
        } else if constexpr (std::is_same_v<T, IsotonicModel>) {
          payload = {{"breakpoints", m.breakpoints}, {"values", m.values}};
        } else if constexpr (std::is_same_v<T, HKRRModel>) {
          nlohmann::json patches = nlohmann::json::array();
          for (const auto& p : m.patches)
            patches.push_back(
                {{"group", p.group}, {"bucket", p.bucket}, {"delta", p.delta}});
          payload = {{"group_names", m.group_names},
                     {"lambda", m.lambda},
                     {"alpha", m.alpha},
                     {"converged", m.converged},
                     {"patches", patches}};
        } else if constexpr (std::is_same_v<T, DFMCModel>) {
          payload = {{"ensemble", m.ensemble.to_json()},
                     {"group_names", m.group_names},
                     {"eps", m.logit_clamp_eps}};
        } else {
          payload = m.to_json();
        }
      },
      model);
  return {{"kind", calibrator_kind(model)}, {"payload", payload}};
}

inline CalibratorModel calibrator_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const nlohmann::json& p = j.at("payload");
  if (kind == "none") return IdentityModel{};
  if (kind == "logistic") {
    LogisticModel m;
    m.coefficients = p.at("coefficients").get<std::vector<double>>();
    m.intercept = p.at("intercept").get<double>();
    m.l2 = p.at("l2").get<double>();
    m.feature_means = p.at("feature_means").get<std::vector<double>>();
    m.feature_sds = p.at("feature_sds").get<std::vector<double>>();
    m.converged = p.at("converged").get<bool>();
    return m;
  }
  if (kind == "platt") {
    PlattModel m;
    m.a = p.at("a").get<double>();
    m.b = p.at("b").get<double>();
    m.clamp_eps = p.at("clamp_eps").get<double>();
    m.degenerate_labels = p.at("degenerate_labels").get<bool>();
    return m;
  }
  if (kind == "isotonic") {
    IsotonicModel m;
    m.breakpoints = p.at("breakpoints").get<std::vector<double>>();
    m.values = p.at("values").get<std::vector<double>>();
    return m;
  }
  if (kind == "hkrr") {
    HKRRModel m;
    m.group_names = p.at("group_names").get<std::vector<std::string>>();
    m.lambda = p.at("lambda").get<double>();
    m.alpha = p.at("alpha").get<double>();
    m.converged = p.at("converged").get<bool>();
    for (const auto& pj : p.at("patches")) {
      m.patches.push_back({pj.at("group").get<std::size_t>(),
                           pj.at("bucket").get<std::size_t>(),
                           pj.at("delta").get<double>()});
    }
    return m;
  }
  if (kind == "dfmc") {
    DFMCModel m;
    m.ensemble = TreeEnsemble::from_json(p.at("ensemble"));
    m.group_names = p.at("group_names").get<std::vector<std::string>>();
    m.logit_clamp_eps = p.at("eps").get<double>();
    return m;
  }
  if (kind == "mcgrad") return McGradModel::from_json(p);
  throw Error("unknown calibrator kind: " + kind);
}

}  // namespace mcal
