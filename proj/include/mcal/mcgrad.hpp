#pragma once

// Multi-round recursive boosting on logits with score augmentation, a
// per-round scalar logit rescale, early stopping on validation loss, and a
// full-data refit of the selected rounds.
//
// Round t fits a tree ensemble on the features augmented with the previous
// round's probabilities, then rescales the full logit sum:
//   F_t = theta_t * (F_{t-1} + h_t(x, f_{t-1})),   f_t = mu(F_t).
// Selection stops at the first round that fails to strictly improve the
// validation loss; the surviving round count is then refit on all rows.

#include <cmath>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "mcal/common.hpp"
#include "mcal/dataset.hpp"
#include "mcal/gbdt.hpp"

namespace mcal {

struct ScoreLengthMismatch : Error {
  using Error::Error;
};
struct DegenerateLogits : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// inverse sigmoid
// ---------------------------------------------------------------------------

inline double inverse_sigmoid(double p, double eps) {
  const double q = clamp_prob(p, eps);
  return std::log(q / (1.0 - q));
}

inline std::vector<double> inverse_sigmoid(const std::vector<double>& probs,
                                           double eps) {
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    out[i] = inverse_sigmoid(probs[i], eps);
  return out;
}

// ---------------------------------------------------------------------------
// rescale factor
// ---------------------------------------------------------------------------

inline constexpr double kThetaMin = 1e-3;
inline constexpr double kThetaMax = 1e3;

namespace detail {

inline double rescale_objective(double theta,
                                const std::vector<double>& logits,
                                const std::vector<double>& labels,
                                const std::vector<double>& weights) {
  double acc = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    acc += w * logit_logloss(theta * logits[i], labels[i]);
    wsum += w;
  }
  return wsum > 0.0 ? acc / wsum : 0.0;
}

inline double golden_section_rescale(const std::vector<double>& logits,
                                     const std::vector<double>& labels,
                                     const std::vector<double>& weights,
                                     double lo, double hi) {
  const double inv_phi = 0.6180339887498948482;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = rescale_objective(c, logits, labels, weights);
  double fd = rescale_objective(d, logits, labels, weights);
  for (int it = 0; it < 200 && (b - a) > 1e-10; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = rescale_objective(c, logits, labels, weights);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = rescale_objective(d, logits, labels, weights);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

// Minimizer of the mean weighted log loss of mu(theta * F) over
// theta in [1e-3, 1e3]. The objective is convex in theta; a safeguarded
// Newton iteration from theta = 1 (bisection when the step leaves the
// derivative-sign bracket) converges to |step| < 1e-8 within 50 iterations.
// Golden-section is the fallback for non-finite curvature. All-zero logits
// make the objective constant; 1.0 is returned for that degenerate case.
inline double optimize_rescale(const std::vector<double>& logits,
                               const std::vector<double>& labels,
                               const std::vector<double>& weights) {
  if (logits.empty()) throw EmptyData("optimize_rescale needs rows");
  bool all_zero = true;
  for (const double f : logits)
    if (f != 0.0) {
      all_zero = false;
      break;
    }
  if (all_zero) return 1.0;

  double lo = kThetaMin, hi = kThetaMax;
  double theta = 1.0;
  for (int it = 0; it < 50; ++it) {
    double d1 = 0.0, d2 = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      const double p = sigmoid(theta * logits[i]);
      d1 += w * (p - labels[i]) * logits[i];
      d2 += w * p * (1.0 - p) * logits[i] * logits[i];
      wsum += w;
    }
    d1 /= wsum;
    d2 /= wsum;
    if (!std::isfinite(d2) || !std::isfinite(d1))
      return detail::golden_section_rescale(logits, labels, weights, lo, hi);
    if (d1 > 0.0) hi = std::min(hi, theta);
    else lo = std::max(lo, theta);
    if (d2 <= 0.0)
      return detail::golden_section_rescale(logits, labels, weights, lo, hi);
    double next = theta - d1 / d2;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = next - theta;
    theta = next;
    if (std::abs(step) < 1e-8) break;
  }
  return theta;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

struct McGradConfig {
  GBDTConfig gbdt;
  int max_rounds = 30;
  double valid_fraction = 0.2;
  std::uint64_t seed = 0;
  bool rescale_enabled = true;
  double logit_clamp_eps = 1e-7;

  void validate() const {
    gbdt.validate();
    if (max_rounds < 1) throw Error("max_rounds must be >= 1");
    if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
      throw Error("valid_fraction must be in (0,1)");
    if (!(logit_clamp_eps > 0.0 && logit_clamp_eps < 0.5))
      throw Error("logit_clamp_eps must be in (0, 0.5)");
  }

  nlohmann::json to_json() const {
    return {{"gbdt", gbdt.to_json()},
            {"max_rounds", max_rounds},
            {"valid_fraction", valid_fraction},
            {"seed", seed},
            {"rescale_enabled", rescale_enabled},
            {"logit_clamp_eps", logit_clamp_eps}};
  }

  static McGradConfig from_json(const nlohmann::json& j) {
    McGradConfig c;
    c.gbdt = GBDTConfig::from_json(j.at("gbdt"));
    c.max_rounds = j.at("max_rounds").get<int>();
    c.valid_fraction = j.at("valid_fraction").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.rescale_enabled = j.at("rescale_enabled").get<bool>();
    c.logit_clamp_eps = j.at("logit_clamp_eps").get<double>();
    return c;
  }
};

struct McGradRound {
  TreeEnsemble ensemble;
  double theta = 1.0;
};

struct McGradModel {
  std::vector<McGradRound> rounds;
  double logit_clamp_eps = 1e-7;

  std::size_t n_rounds() const { return rounds.size(); }
  bool is_identity() const { return rounds.empty(); }

  // Ensembles see the original features plus the reserved score slot.
  std::size_t n_base_features() const {
    return rounds.empty() ? 0 : rounds.front().ensemble.n_features - 1;
  }

  nlohmann::json to_json() const {
    nlohmann::json rj = nlohmann::json::array();
    for (const auto& r : rounds)
      rj.push_back({{"theta", r.theta}, {"ensemble", r.ensemble.to_json()}});
    return {{"version", 1}, {"eps", logit_clamp_eps}, {"rounds", rj}};
  }

  static McGradModel from_json(const nlohmann::json& j) {
    McGradModel m;
    m.logit_clamp_eps = j.at("eps").get<double>();
    for (const auto& rj : j.at("rounds")) {
      McGradRound r;
      r.theta = rj.at("theta").get<double>();
      r.ensemble = TreeEnsemble::from_json(rj.at("ensemble"));
      m.rounds.push_back(std::move(r));
    }
    return m;
  }
};

// ---------------------------------------------------------------------------
// prediction
// ---------------------------------------------------------------------------

// Replays the fitted rounds. The identity model returns the base scores
// unchanged (no logit round trip).
inline std::vector<double> predict_mcgrad(const McGradModel& model,
                                          const Dataset& features,
                                          const std::vector<double>& base_scores) {
  if (model.is_identity()) return base_scores;
  if (base_scores.size() != features.n_rows())
    throw DimensionMismatch("base score length mismatch");
  if (features.n_features() != model.n_base_features() &&
      !(features.find_column(kScoreColumnName) &&
        features.n_features() == model.n_base_features() + 1))
    throw DimensionMismatch("feature count mismatch: model expects " +
                            std::to_string(model.n_base_features()));

  std::vector<double> logits =
      inverse_sigmoid(base_scores, model.logit_clamp_eps);
  std::vector<double> probs(logits.size());
  for (const auto& round : model.rounds) {
    for (std::size_t i = 0; i < logits.size(); ++i)
      probs[i] = sigmoid(logits[i]);
    const Dataset augmented = augment_with_score(features, probs);
    const std::vector<double> increments = round.ensemble.predict(augmented);
    for (std::size_t i = 0; i < logits.size(); ++i)
      logits[i] = round.theta * (logits[i] + increments[i]);
  }
  for (std::size_t i = 0; i < logits.size(); ++i)
    probs[i] = sigmoid(logits[i]);
  return probs;
}

// ---------------------------------------------------------------------------
// fitting
// ---------------------------------------------------------------------------

struct McGradFitResult {
  McGradModel model;
  // Validation losses for every evaluated round, starting at round 0 (the
  // base scores). The selected rounds 0..T are strictly decreasing; a final
  // trailing entry, when present, is the rejected round.
  std::vector<double> valid_loss_trace;
  std::size_t selected_rounds = 0;
  bool stopped_by_cap = false;
  // Training probabilities after the full-data refit (identical to a
  // predict_mcgrad replay on the training rows).
  std::vector<double> train_probs;
};

inline McGradFitResult fit_mcgrad(const Dataset& data,
                                  const std::vector<double>& base_scores,
                                  const McGradConfig& cfg) {
  cfg.validate();
  if (data.n_rows() == 0) throw EmptyData("cannot fit on empty data");
  if (base_scores.size() != data.n_rows())
    throw ScoreLengthMismatch("base scores length " +
                              std::to_string(base_scores.size()) +
                              " != n rows " + std::to_string(data.n_rows()));

  const double eps = cfg.logit_clamp_eps;
  const SplitIndices idx =
      split_indices(data.n_rows(), SplitSpec{cfg.valid_fraction, cfg.seed});
  const Dataset train = data.subset(idx.train);
  const Dataset valid = data.subset(idx.valid);
  std::vector<double> train_scores, valid_scores;
  train_scores.reserve(idx.train.size());
  valid_scores.reserve(idx.valid.size());
  for (const std::size_t r : idx.train) train_scores.push_back(base_scores[r]);
  for (const std::size_t r : idx.valid) valid_scores.push_back(base_scores[r]);

  McGradFitResult result;
  result.model.logit_clamp_eps = eps;

  // Phase 1: round selection against the validation loss.
  std::vector<double> f_train = inverse_sigmoid(train_scores, eps);
  std::vector<double> f_valid = inverse_sigmoid(valid_scores, eps);
  result.valid_loss_trace.push_back(
      weighted_mean_logit_logloss(f_valid, valid.labels, valid.weights));

  std::vector<double> probs;
  std::size_t selected = 0;
  for (int t = 1; t <= cfg.max_rounds; ++t) {
    probs.resize(f_train.size());
    for (std::size_t i = 0; i < f_train.size(); ++i)
      probs[i] = sigmoid(f_train[i]);
    const Dataset aug_train = augment_with_score(train, probs);
    const TreeEnsemble ensemble =
        fit_gbdt(aug_train, f_train, cfg.gbdt);

    const std::vector<double> h_train = ensemble.predict(aug_train);
    std::vector<double> pre_rescale(f_train.size());
    for (std::size_t i = 0; i < f_train.size(); ++i)
      pre_rescale[i] = f_train[i] + h_train[i];
    const double theta =
        cfg.rescale_enabled
            ? optimize_rescale(pre_rescale, train.labels, train.weights)
            : 1.0;
    for (std::size_t i = 0; i < f_train.size(); ++i)
      f_train[i] = theta * pre_rescale[i];

    probs.resize(f_valid.size());
    for (std::size_t i = 0; i < f_valid.size(); ++i)
      probs[i] = sigmoid(f_valid[i]);
    const Dataset aug_valid = augment_with_score(valid, probs);
    const std::vector<double> h_valid = ensemble.predict(aug_valid);
    for (std::size_t i = 0; i < f_valid.size(); ++i)
      f_valid[i] = theta * (f_valid[i] + h_valid[i]);

    const double loss =
        weighted_mean_logit_logloss(f_valid, valid.labels, valid.weights);
    result.valid_loss_trace.push_back(loss);
    // Strict improvement, no tolerance: an exact tie stops selection.
    if (result.valid_loss_trace[static_cast<std::size_t>(t) - 1] - loss >
        0.0) {
      selected = static_cast<std::size_t>(t);
    } else {
      break;
    }
  }
  result.selected_rounds = selected;
  result.stopped_by_cap =
      selected == static_cast<std::size_t>(cfg.max_rounds);

  if (selected == 0) {
    result.train_probs = base_scores;
    return result;
  }

  // Phase 2: refit the selected number of rounds on all rows; the rescale
  // factor is recomputed on the full data as well.
  std::vector<double> f_all = inverse_sigmoid(base_scores, eps);
  for (std::size_t s = 1; s <= selected; ++s) {
    probs.resize(f_all.size());
    for (std::size_t i = 0; i < f_all.size(); ++i)
      probs[i] = sigmoid(f_all[i]);
    const Dataset augmented = augment_with_score(data, probs);
    TreeEnsemble ensemble = fit_gbdt(augmented, f_all, cfg.gbdt);

    const std::vector<double> increments = ensemble.predict(augmented);
    std::vector<double> pre_rescale(f_all.size());
    for (std::size_t i = 0; i < f_all.size(); ++i)
      pre_rescale[i] = f_all[i] + increments[i];
    const double theta =
        cfg.rescale_enabled
            ? optimize_rescale(pre_rescale, data.labels, data.weights)
            : 1.0;
    for (std::size_t i = 0; i < f_all.size(); ++i)
      f_all[i] = theta * pre_rescale[i];

    result.model.rounds.push_back(McGradRound{std::move(ensemble), theta});
  }
  result.train_probs.resize(f_all.size());
  for (std::size_t i = 0; i < f_all.size(); ++i)
    result.train_probs[i] = sigmoid(f_all[i]);
  return result;
}

}  // namespace mcal
