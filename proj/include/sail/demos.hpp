#pragma once

// Demonstration sets: generation from a policy, the optimal/non-optimal
// mixture, labeled/unlabeled splits and a plain-text container.
//
// File layout (whitespace separated, one record per line):
//
//   sail-demos 1
//   env <name>
//   dims <state_dim> <action_dim>
//   psi <value|none>
//   v <count> <v_1> ... <v_n>
//   n <pairs>
//   seed <seed>
//   columns s0 .. s{d-1} a0 .. a{k-1} source successor
//   <row> x n
//
// source is 0 for optimal, i >= 1 for sub-optimal demonstrator i, -1 if
// unknown. successor is the row index of the next pair of the same
// trajectory, -1 if absent. Doubles are written in shortest round-trip form.

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sail/envs.hpp"

namespace sail::envs {

inline constexpr int kOptimal = 0;
inline constexpr int kUnknownSource = -1;

struct MixtureSpec {
  double psi = 1.0;
  std::vector<double> v;

  void validate() const {
    double sum = psi;
    if (psi < 0.0 || psi > 1.0) throw ConfigError("mixture weight psi outside [0, 1]");
    for (double w : v) {
      if (w < 0.0) throw ConfigError("negative mixture weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ConfigError("mixture weights sum to " + std::to_string(sum) + ", expected 1");
    }
  }

  // psi with the remainder spread uniformly over n non-experts.
  static MixtureSpec uniform(double psi, std::size_t n = 4) {
    MixtureSpec m;
    m.psi = psi;
    m.v.assign(n, (1.0 - psi) / static_cast<double>(n));
    return m;
  }
};

struct DemonstrationSet {
  std::string env;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  Tensor states;   // N x state_dim
  Tensor actions;  // N x action_dim
  std::vector<int> sources;
  std::vector<long long> successors;
  std::vector<double> confidence;  // empty, or per-pair score in [0, 1]
  std::optional<MixtureSpec> mixture;
  std::uint64_t seed = 0;

  std::size_t size() const { return sources.size(); }

  std::size_t count_source(int source) const {
    return static_cast<std::size_t>(std::count(sources.begin(), sources.end(), source));
  }

  // Rows `idx` in order; successor links that leave the subset are dropped.
  DemonstrationSet subset(const std::vector<std::size_t>& idx) const {
    DemonstrationSet out;
    out.env = env;
    out.state_dim = state_dim;
    out.action_dim = action_dim;
    out.mixture = mixture;
    out.seed = seed;
    out.states = states.gather_rows(idx);
    out.actions = actions.gather_rows(idx);
    std::vector<long long> where(size(), -1);
    for (std::size_t k = 0; k < idx.size(); ++k) where[idx[k]] = static_cast<long long>(k);
    for (std::size_t k : idx) {
      out.sources.push_back(sources[k]);
      const long long nxt = successors[k];
      out.successors.push_back(nxt >= 0 ? where[static_cast<std::size_t>(nxt)] : -1);
      if (!confidence.empty()) out.confidence.push_back(confidence[k]);
    }
    return out;
  }
};

namespace detail {

inline DemonstrationSet empty_set(const EnvSpec& env, std::size_t n) {
  DemonstrationSet d;
  d.env = env.name;
  d.state_dim = env.state_dim;
  d.action_dim = env.action_dim;
  d.states = Tensor(n, env.state_dim);
  d.actions = Tensor(n, env.action_dim);
  d.sources.assign(n, kUnknownSource);
  d.successors.assign(n, -1);
  return d;
}

inline void put_row(DemonstrationSet& d, std::size_t row, const Transition& tr) {
  for (std::size_t j = 0; j < d.state_dim; ++j) d.states(row, j) = tr.s[j];
  for (std::size_t j = 0; j < d.action_dim; ++j) d.actions(row, j) = tr.a[j];
}

}  // namespace detail

// Exactly `n` pairs from rollouts of `policy`. By default the pairs are the
// contiguous prefix of consecutive rollouts (truncated mid-episode when n is
// below the horizon); with `iid` they are drawn uniformly without replacement
// from a pool of rollouts at least ten horizons long.
inline DemonstrationSet generate_demonstrations(const EnvSpec& env, const PolicyFn& policy, std::size_t n, Rng& rng,
                                                int source = kOptimal, bool iid = false) {
  if (n == 0) throw ConfigError("demonstration count must be >= 1");
  std::vector<Transition> pool;
  std::vector<long long> next;
  const std::size_t want = iid ? std::max(n, 10 * env.horizon) : n;
  while (pool.size() < want) {
    Episode ep = rollout(env, policy, rng);
    for (std::size_t t = 0; t < ep.steps.size() && pool.size() < want; ++t) {
      const bool linked = t + 1 < ep.steps.size();
      next.push_back(linked ? static_cast<long long>(pool.size() + 1) : -1);
      pool.push_back(std::move(ep.steps[t]));
    }
  }
  std::vector<std::size_t> rows(n);
  if (iid) {
    rows = sample_without_replacement(rng, pool.size(), n);
  } else {
    std::iota(rows.begin(), rows.end(), 0);
  }
  DemonstrationSet d = detail::empty_set(env, n);
  std::vector<long long> where(pool.size(), -1);
  for (std::size_t k = 0; k < n; ++k) where[rows[k]] = static_cast<long long>(k);
  for (std::size_t k = 0; k < n; ++k) {
    detail::put_row(d, k, pool[rows[k]]);
    d.sources[k] = source;
    const long long nx = next[rows[k]];
    d.successors[k] = nx >= 0 && static_cast<std::size_t>(nx) < pool.size() ? where[static_cast<std::size_t>(nx)] : -1;
  }
  return d;
}

// Each output pair comes from component k (0 = optimal, i = sub-optimal i)
// with probability psi or v_i; within a component, pairs are consumed in a
// random order and recycled once exhausted.
inline DemonstrationSet mix_demonstrations(const DemonstrationSet& optimal,
                                           const std::vector<DemonstrationSet>& suboptimals, const MixtureSpec& spec,
                                           std::size_t n, Rng& rng) {
  spec.validate();
  if (spec.v.size() != suboptimals.size()) {
    throw ConfigError("mixture has " + std::to_string(spec.v.size()) + " non-expert weights for " +
                      std::to_string(suboptimals.size()) + " sets");
  }
  std::vector<const DemonstrationSet*> parts{&optimal};
  std::vector<double> weights{spec.psi};
  for (std::size_t i = 0; i < suboptimals.size(); ++i) {
    parts.push_back(&suboptimals[i]);
    weights.push_back(spec.v[i]);
  }
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (weights[k] > 0.0 && parts[k]->size() == 0) throw ConfigError("mixture component is empty");
    if (parts[k]->state_dim != optimal.state_dim || parts[k]->action_dim != optimal.action_dim) {
      throw ShapeError("mixture components disagree on dims");
    }
  }
  std::vector<std::vector<std::size_t>> order(parts.size());
  std::vector<std::size_t> cursor(parts.size(), 0);
  DemonstrationSet d;
  d.env = optimal.env;
  d.state_dim = optimal.state_dim;
  d.action_dim = optimal.action_dim;
  d.states = Tensor(n, d.state_dim);
  d.actions = Tensor(n, d.action_dim);
  d.sources.assign(n, kUnknownSource);
  d.successors.assign(n, -1);
  d.mixture = spec;
  for (std::size_t row = 0; row < n; ++row) {
    double u = uniform(rng);
    std::size_t k = 0;
    while (k + 1 < parts.size() && (u >= weights[k] || weights[k] == 0.0)) {
      u -= weights[k];
      ++k;
    }
    while (weights[k] == 0.0) --k;  // rounding past the last positive weight
    const DemonstrationSet& src = *parts[k];
    if (cursor[k] == order[k].size()) {
      order[k] = permutation(rng, src.size());
      cursor[k] = 0;
    }
    const std::size_t pick = order[k][cursor[k]++];
    for (std::size_t j = 0; j < d.state_dim; ++j) d.states(row, j) = src.states(pick, j);
    for (std::size_t j = 0; j < d.action_dim; ++j) d.actions(row, j) = src.actions(pick, j);
    d.sources[row] = static_cast<int>(k);
  }
  return d;
}

struct LabeledSplit {
  DemonstrationSet labeled;    // confidence holds the hard label y
  DemonstrationSet unlabeled;  // sources hidden
};

// N_L = ceil(ratio * N) pairs keep a hard label y = 1 (optimal) or 0.
inline LabeledSplit label_subset(const DemonstrationSet& demos, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("label ratio must lie in (0, 1)");
  const std::size_t n = demos.size();
  // The epsilon guards products like 0.4 * 100 that land a hair above an integer.
  const auto n_l = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  auto perm = permutation(rng, n);
  std::vector<std::size_t> lab(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_l));
  std::vector<std::size_t> unl(perm.begin() + static_cast<std::ptrdiff_t>(n_l), perm.end());
  std::sort(lab.begin(), lab.end());
  std::sort(unl.begin(), unl.end());
  LabeledSplit out{demos.subset(lab), demos.subset(unl)};
  out.labeled.confidence.clear();
  for (int s : out.labeled.sources) out.labeled.confidence.push_back(s == kOptimal ? 1.0 : 0.0);
  out.unlabeled.confidence.clear();
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("bad number '" + s + "'");
  return v;
}

inline std::string write_demonstrations(const DemonstrationSet& d) {
  std::ostringstream os;
  os << "sail-demos 1\n";
  os << "env " << d.env << "\n";
  os << "dims " << d.state_dim << " " << d.action_dim << "\n";
  os << "psi " << (d.mixture ? format_double(d.mixture->psi) : std::string("none")) << "\n";
  os << "v " << (d.mixture ? d.mixture->v.size() : 0);
  if (d.mixture) {
    for (double w : d.mixture->v) os << " " << format_double(w);
  }
  os << "\n";
  os << "n " << d.size() << "\n";
  os << "seed " << d.seed << "\n";
  os << "columns";
  for (std::size_t j = 0; j < d.state_dim; ++j) os << " s" << j;
  for (std::size_t j = 0; j < d.action_dim; ++j) os << " a" << j;
  os << " source successor\n";
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (std::size_t j = 0; j < d.state_dim; ++j) os << format_double(d.states(r, j)) << " ";
    for (std::size_t j = 0; j < d.action_dim; ++j) os << format_double(d.actions(r, j)) << " ";
    os << d.sources[r] << " " << d.successors[r] << "\n";
  }
  return os.str();
}

inline DemonstrationSet read_demonstrations(const std::string& text, const EnvSpec& env) {
  std::istringstream is(text);
  std::string key, word;
  auto expect_key = [&](const char* want) {
    if (!(is >> key) || key != want) throw ConfigError(std::string("demo file: expected '") + want + "'");
  };
  expect_key("sail-demos");
  int version = 0;
  is >> version;
  if (version != 1) throw ConfigError("demo file: unsupported version");
  DemonstrationSet d;
  expect_key("env");
  is >> d.env;
  if (d.env != env.name) throw ConfigError("demo file is for '" + d.env + "', expected '" + env.name + "'");
  expect_key("dims");
  is >> d.state_dim >> d.action_dim;
  if (d.state_dim != env.state_dim || d.action_dim != env.action_dim) {
    throw ShapeError("demo file dims " + std::to_string(d.state_dim) + "x" + std::to_string(d.action_dim) +
                     " do not match " + env.name);
  }
  expect_key("psi");
  is >> word;
  MixtureSpec mix;
  const bool has_mix = word != "none";
  if (has_mix) mix.psi = parse_double(word);
  expect_key("v");
  std::size_t nv = 0;
  is >> nv;
  for (std::size_t i = 0; i < nv; ++i) {
    is >> word;
    mix.v.push_back(parse_double(word));
  }
  if (has_mix) {
    mix.validate();
    d.mixture = mix;
  }
  expect_key("n");
  std::size_t n = 0;
  is >> n;
  expect_key("seed");
  is >> d.seed;
  expect_key("columns");
  for (std::size_t j = 0; j < d.state_dim + d.action_dim + 2; ++j) is >> word;
  if (word != "successor") throw ConfigError("demo file: column header does not match dims");
  d.states = Tensor(n, d.state_dim);
  d.actions = Tensor(n, d.action_dim);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d.state_dim; ++j) {
      if (!(is >> word)) throw ConfigError("demo file: truncated at row " + std::to_string(r));
      d.states(r, j) = parse_double(word);
    }
    for (std::size_t j = 0; j < d.action_dim; ++j) {
      if (!(is >> word)) throw ConfigError("demo file: truncated at row " + std::to_string(r));
      d.actions(r, j) = parse_double(word);
    }
    int source = 0;
    long long succ = 0;
    if (!(is >> source >> succ)) throw ConfigError("demo file: truncated at row " + std::to_string(r));
    if (succ >= static_cast<long long>(n)) throw ConfigError("demo file: successor out of range");
    d.sources.push_back(source);
    d.successors.push_back(succ);
  }
  if (is >> word) throw ConfigError("demo file: trailing data after " + std::to_string(n) + " rows");
  return d;
}

inline void save_demonstrations(const std::string& path, const DemonstrationSet& d) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
  f << write_demonstrations(d);
}

inline DemonstrationSet load_demonstrations(const std::string& path, const EnvSpec& env) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open demo file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return read_demonstrations(ss.str(), env);
}

inline PolicyFn expert_fn(const EnvSpec& env) {
  return [env](const State& s, Rng&) { return expert_policy(env, s); };
}

inline PolicyFn noisy_expert_fn(const EnvSpec& env, double noise) {
  return [env, noise](const State& s, Rng& rng) { return noisy_expert(env, s, noise, rng); };
}

// Optimal set plus the four sub-optimal sets, each with `n` pairs, mixed
// per `spec` into `n` pairs.
inline DemonstrationSet imperfect_demonstrations(const EnvSpec& env, const MixtureSpec& spec, std::size_t n,
                                                 Rng& rng, bool iid = false) {
  const auto scales = suboptimal_noise_scales(env);
  DemonstrationSet opt = generate_demonstrations(env, expert_fn(env), n, rng, kOptimal, iid);
  std::vector<DemonstrationSet> subs;
  for (std::size_t i = 0; i < spec.v.size(); ++i) {
    const double noise = scales[std::min(i, scales.size() - 1)];
    subs.push_back(generate_demonstrations(env, noisy_expert_fn(env, noise), n, rng, static_cast<int>(i + 1), iid));
  }
  return mix_demonstrations(opt, subs, spec, n, rng);
}

}  // namespace sail::envs
