#pragma once

// Shared numeric and runtime utilities: stable sigmoid / log-loss helpers,
// deterministic RNG primitives (results do not depend on the standard
// library's distribution implementations), and a fixed-partition
// parallel_for whose output is independent of the worker count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mcal {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// threading
// ---------------------------------------------------------------------------

namespace detail {
inline int& thread_count() {
  static int n = 1;
  return n;
}
}  // namespace detail

inline void set_num_threads(int n) { detail::thread_count() = std::max(1, n); }
inline int num_threads() { return detail::thread_count(); }

// Strided static partition over [0, n). Each index is processed by exactly
// one worker; callers must write disjoint slots. The partition depends only
// on n and the configured thread count, never on scheduling.
template <typename Fn>
inline void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(num_threads()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([w, n, workers, &fn]() {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// deterministic randomness (mt19937_64 is fully specified by the standard;
// the mappings below avoid implementation-defined distributions)
// ---------------------------------------------------------------------------

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Lemire's unbiased bounded reduction.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t threshold = (0 - bound) % bound;
  while (true) {
    const unsigned __int128 m =
        static_cast<unsigned __int128>(rng()) * bound;
    if (static_cast<std::uint64_t>(m) >= threshold)
      return static_cast<std::uint64_t>(m >> 64);
  }
}

inline double normal_sample(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(6.283185307179586476925287 * u2);
}

template <typename T>
inline void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

// ---------------------------------------------------------------------------
// sigmoid / log loss
// ---------------------------------------------------------------------------

inline double sigmoid(double f) {
  if (f >= 0.0) return 1.0 / (1.0 + std::exp(-f));
  const double e = std::exp(f);
  return e / (1.0 + e);
}

inline double softplus(double f) {
  return (f > 0.0 ? f : 0.0) + std::log1p(std::exp(-std::abs(f)));
}

// Negative log-likelihood of a {0,1} label under a logit score.
inline double logit_logloss(double logit, double label) {
  return softplus(logit) - label * logit;
}

inline double clamp_prob(double p, double eps) {
  return std::min(std::max(p, eps), 1.0 - eps);
}

// Weighted mean log loss over logits. `weights` may be empty (all ones).
// Accumulation is in row order so the result is reproducible.
inline double weighted_mean_logit_logloss(const std::vector<double>& logits,
                                          const std::vector<double>& labels,
                                          const std::vector<double>& weights) {
  double acc = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    acc += w * logit_logloss(logits[i], labels[i]);
    wsum += w;
  }
  return wsum > 0.0 ? acc / wsum : 0.0;
}

// Shortest-round-trip-adjacent formatting for CSV output; 17 significant
// digits guarantee bit-exact parse-back of finite doubles.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

}  // namespace mcal
