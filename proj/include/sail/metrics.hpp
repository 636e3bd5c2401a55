#pragma once

// Evaluation and corruption diagnostics: returns with standard error and
// IQM, the diversity score of a corrupted set, and local outlier factors
// of corrupted points against observed ones.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sail/agent.hpp"
#include "sail/envs.hpp"
#include "sail/repr.hpp"

namespace sail::metrics {

inline double mean(const std::vector<double>& x) {
  if (x.empty()) throw ShapeError("mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Sample standard deviation over sqrt(n); 0 for a single value.
inline double standard_error(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

// Mean of the sorted values after dropping floor(n/4) from each end, so
// n < 4 falls back to the plain mean.
inline double iqm(std::vector<double> x) {
  if (x.empty()) throw ShapeError("IQM of an empty sample");
  std::sort(x.begin(), x.end());
  const std::size_t cut = x.size() / 4;
  return std::accumulate(x.begin() + static_cast<std::ptrdiff_t>(cut), x.end() - static_cast<std::ptrdiff_t>(cut),
                         0.0) /
         static_cast<double>(x.size() - 2 * cut);
}

struct EvalReport {
  std::vector<double> returns;
  double mean = 0.0;
  double stderr_ = 0.0;
  double iqm = 0.0;
  std::size_t iteration = 0;
  std::uint64_t seed = 0;
};

inline EvalReport summarize(std::vector<double> returns, std::size_t iteration = 0, std::uint64_t seed = 0) {
  EvalReport r;
  r.mean = mean(returns);
  r.stderr_ = standard_error(returns);
  r.iqm = iqm(returns);
  r.returns = std::move(returns);
  r.iteration = iteration;
  r.seed = seed;
  return r;
}

// Rollouts with the mean action (argmax for discrete policies), scored by
// the true environment reward.
inline EvalReport eval_policy(const agent::Policy& policy, const ParamSet& params, const envs::EnvSpec& env,
                              std::size_t episodes, Rng& rng) {
  if (episodes == 0) throw ConfigError("evaluation needs at least one episode");
  std::vector<double> returns;
  const envs::PolicyFn fn = [&](const envs::State& s, Rng& r) { return policy.act(params, s, r, true); };
  for (std::size_t e = 0; e < episodes; ++e) returns.push_back(envs::rollout(env, fn, rng).total_reward());
  return summarize(std::move(returns));
}

inline EvalReport eval_fn(const envs::PolicyFn& fn, const envs::EnvSpec& env, std::size_t episodes, Rng& rng) {
  if (episodes == 0) throw ConfigError("evaluation needs at least one episode");
  std::vector<double> returns;
  for (std::size_t e = 0; e < episodes; ++e) returns.push_back(envs::rollout(env, fn, rng).total_reward());
  return summarize(std::move(returns));
}

// Sum over dimensions of the population variance of each column.
inline double corrupted_variance(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0) throw ShapeError("variance of an empty set");
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x(i, j);
    m /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (x(i, j) - m) * (x(i, j) - m);
    total += ss / static_cast<double>(n);
  }
  return total;
}

// ----------------------------------------------------------------------- LOF

inline constexpr double kLofDistanceFloor = 1e-12;

struct LofConfig {
  std::size_t k = 10;
  double threshold = 1.5;
};

struct LofReport {
  std::size_t k = 10;
  std::vector<double> scores;
  double threshold = 1.5;
  double percent_flagged = 0.0;
};

namespace detail {

inline double distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    const double t = a(i, c) - b(j, c);
    s += t * t;
  }
  return std::sqrt(s);
}

struct Neighbor {
  double dist;
  std::size_t index;
  bool operator<(const Neighbor& o) const { return dist < o.dist || (dist == o.dist && index < o.index); }
};

// k nearest rows of `ref` to row i of `q`, nearest first; `skip` excludes
// one reference row (the query itself when q is ref).
inline std::vector<Neighbor> knn(const Tensor& q, std::size_t i, const Tensor& ref, std::size_t k,
                                 std::size_t skip = static_cast<std::size_t>(-1)) {
  std::vector<Neighbor> all;
  all.reserve(ref.rows());
  for (std::size_t j = 0; j < ref.rows(); ++j)
    if (j != skip) all.push_back({distance(q, i, ref, j), j});
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
  all.resize(k);
  return all;
}

}  // namespace detail

// Novelty-mode LOF: neighborhoods, k-distances and reachability densities
// all come from the observed set; each query is scored against it.
inline LofReport lof(const Tensor& queries, const Tensor& observed, LofConfig cfg = {}) {
  if (cfg.k == 0) throw ConfigError("LOF needs k >= 1");
  if (observed.rows() <= cfg.k) throw ShapeError("LOF needs more observed points than neighbors");
  if (queries.cols() != observed.cols()) throw ShapeError("LOF query and reference widths differ");
  const std::size_t m = observed.rows(), k = cfg.k;

  std::vector<std::vector<detail::Neighbor>> nb(m);
  std::vector<double> kdist(m);
  for (std::size_t j = 0; j < m; ++j) {
    nb[j] = detail::knn(observed, j, observed, k, j);
    kdist[j] = nb[j].back().dist;
  }
  auto lrd_of = [&](const std::vector<detail::Neighbor>& n) {
    double reach = 0.0;
    for (const auto& o : n) reach += std::max(kdist[o.index], o.dist);
    return 1.0 / std::max(reach / static_cast<double>(k), kLofDistanceFloor);
  };
  std::vector<double> lrd(m);
  for (std::size_t j = 0; j < m; ++j) lrd[j] = lrd_of(nb[j]);

  LofReport r;
  r.k = k;
  r.threshold = cfg.threshold;
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    const auto n = detail::knn(queries, i, observed, k);
    double s = 0.0;
    for (const auto& o : n) s += lrd[o.index];
    const double score = s / static_cast<double>(k) / lrd_of(n);
    r.scores.push_back(score);
    flagged += score > cfg.threshold;
  }
  r.percent_flagged = queries.rows() == 0 ? 0.0 : 100.0 * static_cast<double>(flagged) / static_cast<double>(queries.rows());
  return r;
}

// ------------------------------------------------------ corruption diagnostic

struct CorruptionDiagnostic {
  double variance = 0.0;
  double lof_percent = 0.0;
};

// Corrupts `states` in shuffled minibatches of `batch` rows, as the REPR
// step does: rows are permuted, the column set is redrawn per minibatch and
// each corrupted row lands back at its original index. The mean method
// uses the mean of the whole set.
inline Tensor corrupt_in_batches(const Tensor& states, repr::Corruption method, double rate, std::size_t batch,
                                 Rng& rng) {
  if (batch == 0) throw ConfigError("corruption batch must be positive");
  const std::size_t q = repr::corruption_count(rate, states.cols());
  const Tensor mean = column_mean(states);
  const auto perm = permutation(rng, states.rows());
  Tensor out(states.rows(), states.cols());
  for (std::size_t start = 0; start < states.rows(); start += batch) {
    const std::size_t end = std::min(states.rows(), start + batch);
    const std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                       perm.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor c = repr::corrupt(method, states.gather_rows(idx), q, rng, mean);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < states.cols(); ++j) out(idx[i], j) = c(i, j);
  }
  return out;
}

inline CorruptionDiagnostic diagnose_corruption(const Tensor& states, repr::Corruption method, double rate,
                                                std::size_t batch, Rng& rng, LofConfig cfg = {}) {
  const Tensor c = corrupt_in_batches(states, method, rate, batch, rng);
  return {corrupted_variance(c), lof(c, states, cfg).percent_flagged};
}

}  // namespace sail::metrics
