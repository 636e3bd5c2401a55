#pragma once

// Experiment configuration. Every tunable is a named key in a section
// ("trpo.gamma"); files hold `[section]` headers and `key = value` lines,
// or fully dotted keys. Unknown keys are errors. The canonical text lists
// every key in registry order, so its hash identifies a configuration.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sail/agent.hpp"
#include "sail/ail.hpp"
#include "sail/checkpoint.hpp"
#include "sail/demos.hpp"
#include "sail/repr.hpp"

namespace sail::config {

enum class Algorithm { kGail, kOurs, kOurs2iwil, kOurs2iwilMixup };

inline std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kGail: return "gail";
    case Algorithm::kOurs: return "ours";
    case Algorithm::kOurs2iwil: return "ours+2iwil";
    case Algorithm::kOurs2iwilMixup: return "ours+2iwil+mm";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
  for (Algorithm a : {Algorithm::kGail, Algorithm::kOurs, Algorithm::kOurs2iwil, Algorithm::kOurs2iwilMixup})
    if (algorithm_name(a) == s) return a;
  throw ConfigError("unknown algorithm '" + std::string(s) + "' (gail, ours, ours+2iwil, ours+2iwil+mm)");
}

inline bool uses_encoders(Algorithm a) { return a != Algorithm::kGail; }
inline bool uses_confidence(Algorithm a) { return a == Algorithm::kOurs2iwil || a == Algorithm::kOurs2iwilMixup; }

// Desk-scale outer iterations per environment.
inline std::size_t default_iterations(const std::string& env) {
  if (env == "PointMass2D" || env == "Reacher1D") return 300;
  if (env == "NoisyLinear5") return 400;
  return 500;
}

struct ExperimentConfig {
  // run
  std::string env = "PointMass2D";
  Algorithm algo = Algorithm::kOurs;
  std::uint64_t seed = 0;
  std::optional<std::size_t> iterations;  // unset ("auto"): per-environment desk default
  std::size_t steps_per_iter = 5000;
  std::size_t n_expert = 100;
  double optimality = 1.0;  // psi; 1 means expert-only demonstrations
  std::size_t non_experts = 4;
  double label_ratio = 0.4;
  std::string demos;  // demonstration file; empty generates them from the seed
  bool demo_iid = true;  // pairs drawn i.i.d. from the expert occupancy
  std::string out = "runs/default";
  std::size_t checkpoint_every = 0;

  // eval
  std::size_t eval_episodes = 10;
  std::size_t eval_every = 10;
  double final_window = 0.1;  // share of the last iterations averaged into the final return

  agent::PolicySpec policy;
  agent::TrpoConfig trpo;
  std::vector<std::size_t> value_hidden{100, 100, 100};
  repr::ReprConfig repr;
  ail::GailConfig gail;
  std::vector<std::size_t> disc_hidden{100, 100, 100};
  std::size_t gail_batch = 5000;
  bool disc_action_input = false;  // discrete envs: append the one-hot action to z^s
  ail::ClassifierConfig classifier;
  ail::GmmConfig gmm;

  ExperimentConfig() { trpo.batch_steps = steps_per_iter; }

  std::size_t resolved_iterations() const { return iterations.value_or(default_iterations(env)); }
  bool imperfect() const { return optimality < 1.0; }

  void validate() const {
    envs::make_env(env);
    if (steps_per_iter < 2) throw ConfigError("run.steps_per_iter must be at least 2");
    if (n_expert == 0) throw ConfigError("run.n_expert must be positive");
    if (!(optimality > 0.0 && optimality <= 1.0)) throw ConfigError("run.optimality must lie in (0, 1]");
    if (imperfect() && non_experts == 0) throw ConfigError("run.non_experts must be positive for imperfect demos");
    if (uses_confidence(algo) && !imperfect()) {
      throw ConfigError("algorithm " + std::string(algorithm_name(algo)) + " needs run.optimality < 1");
    }
    if (eval_episodes == 0) throw ConfigError("eval.episodes must be positive");
    if (!(final_window > 0.0 && final_window <= 1.0)) throw ConfigError("eval.final_window must lie in (0, 1]");
    if (gail_batch == 0) throw ConfigError("gail.batch must be positive");
    trpo.validate();
    repr.validate();
    gail.validate();
    classifier.validate();
  }
};

// ---------------------------------------------------------------- registry

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
  return x;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
  }
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Comma-separated widths; "none" is the empty list.
inline std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_u64(key, trim(item)));
  return out;
}

inline std::string from_sizes(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  using namespace detail;
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    auto dbl = [&f](std::string key, auto member) {
      f.push_back({key, [member](const C& c) { return envs::format_double(member(c)); },
                   [member, key](C& c, const std::string& v) { member(c) = to_double(key, v); }});
    };
    auto uint = [&f](std::string key, auto member) {
      f.push_back({key, [member](const C& c) { return std::to_string(member(c)); },
                   [member, key](C& c, const std::string& v) {
                     member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(to_u64(key, v));
                   }});
    };
    auto flag = [&f](std::string key, auto member) {
      f.push_back({key, [member](const C& c) { return member(c) ? "true" : "false"; },
                   [member, key](C& c, const std::string& v) { member(c) = to_bool(key, v); }});
    };
    auto text = [&f](std::string key, auto member) {
      f.push_back({key, [member](const C& c) { return member(c); },
                   [member](C& c, const std::string& v) { member(c) = v; }});
    };
    auto sizes = [&f](std::string key, auto member) {
      f.push_back({key, [member](const C& c) { return from_sizes(member(c)); },
                   [member, key](C& c, const std::string& v) { member(c) = to_sizes(key, v); }});
    };

    text("run.env", [](auto& c) -> auto& { return c.env; });
    f.push_back({"run.algo", [](const C& c) { return std::string(algorithm_name(c.algo)); },
                 [](C& c, const std::string& v) { c.algo = parse_algorithm(v); }});
    uint("run.seed", [](auto& c) -> auto& { return c.seed; });
    f.push_back({"run.iterations",
                 [](const C& c) { return c.iterations ? std::to_string(*c.iterations) : std::string("auto"); },
                 [](C& c, const std::string& v) {
                   if (v == "auto") {
                     c.iterations.reset();
                   } else {
                     c.iterations = static_cast<std::size_t>(to_u64("run.iterations", v));
                   }
                 }});
    f.push_back({"run.steps_per_iter", [](const C& c) { return std::to_string(c.steps_per_iter); },
                 [](C& c, const std::string& v) {
                   c.steps_per_iter = to_u64("run.steps_per_iter", v);
                   c.trpo.batch_steps = c.steps_per_iter;
                 }});
    uint("run.n_expert", [](auto& c) -> auto& { return c.n_expert; });
    dbl("run.optimality", [](auto& c) -> auto& { return c.optimality; });
    uint("run.non_experts", [](auto& c) -> auto& { return c.non_experts; });
    dbl("run.label_ratio", [](auto& c) -> auto& { return c.label_ratio; });
    text("run.demos", [](auto& c) -> auto& { return c.demos; });
    flag("run.demo_iid", [](auto& c) -> auto& { return c.demo_iid; });
    uint("run.checkpoint_every", [](auto& c) -> auto& { return c.checkpoint_every; });

    uint("eval.episodes", [](auto& c) -> auto& { return c.eval_episodes; });
    uint("eval.every", [](auto& c) -> auto& { return c.eval_every; });
    dbl("eval.final_window", [](auto& c) -> auto& { return c.final_window; });

    sizes("policy.hidden", [](auto& c) -> auto& { return c.policy.hidden; });
    dbl("policy.init_log_std", [](auto& c) -> auto& { return c.policy.init_log_std; });
    dbl("policy.output_gain", [](auto& c) -> auto& { return c.policy.output_gain; });

    dbl("trpo.gamma", [](auto& c) -> auto& { return c.trpo.gamma; });
    dbl("trpo.gae_lambda", [](auto& c) -> auto& { return c.trpo.lam; });
    dbl("trpo.max_kl", [](auto& c) -> auto& { return c.trpo.max_kl; });
    uint("trpo.cg_iters", [](auto& c) -> auto& { return c.trpo.cg_iters; });
    dbl("trpo.cg_damping", [](auto& c) -> auto& { return c.trpo.cg_damping; });
    dbl("trpo.backtrack_coef", [](auto& c) -> auto& { return c.trpo.backtrack_coef; });
    uint("trpo.max_backtracks", [](auto& c) -> auto& { return c.trpo.max_backtracks; });
    flag("trpo.normalize_advantages", [](auto& c) -> auto& { return c.trpo.normalize_advantages; });
    flag("trpo.finite_difference_fvp", [](auto& c) -> auto& { return c.trpo.finite_difference_fvp; });
    dbl("trpo.value_lr", [](auto& c) -> auto& { return c.trpo.value_lr; });
    uint("trpo.value_epochs", [](auto& c) -> auto& { return c.trpo.value_epochs; });
    uint("trpo.value_batch", [](auto& c) -> auto& { return c.trpo.value_batch; });
    sizes("trpo.value_hidden", [](auto& c) -> auto& { return c.value_hidden; });

    uint("repr.state_repr", [](auto& c) -> auto& { return c.repr.state_repr; });
    sizes("repr.state_hidden", [](auto& c) -> auto& { return c.repr.state_hidden; });
    uint("repr.action_repr", [](auto& c) -> auto& { return c.repr.action_repr; });
    sizes("repr.conv_channels", [](auto& c) -> auto& { return c.repr.conv_channels; });
    uint("repr.forward_hidden", [](auto& c) -> auto& { return c.repr.forward_hidden; });
    uint("repr.noise_dim", [](auto& c) -> auto& { return c.repr.noise_dim; });
    dbl("repr.tau", [](auto& c) -> auto& { return c.repr.tau; });
    dbl("repr.lambda_f", [](auto& c) -> auto& { return c.repr.weights.forward; });
    dbl("repr.lambda_s", [](auto& c) -> auto& { return c.repr.weights.state; });
    dbl("repr.lambda_a", [](auto& c) -> auto& { return c.repr.weights.action; });
    f.push_back({"repr.method", [](const C& c) { return std::string(repr::corruption_name(c.repr.method)); },
                 [](C& c, const std::string& v) { c.repr.method = repr::parse_corruption(v); }});
    dbl("repr.state_rate", [](auto& c) -> auto& { return c.repr.state_rate; });
    dbl("repr.action_rate", [](auto& c) -> auto& { return c.repr.action_rate; });
    dbl("repr.lr", [](auto& c) -> auto& { return c.repr.lr; });
    uint("repr.batch", [](auto& c) -> auto& { return c.repr.batch; });
    flag("repr.barlow_center", [](auto& c) -> auto& { return c.repr.barlow.center; });
    flag("repr.barlow_subtract_offdiag", [](auto& c) -> auto& { return c.repr.barlow.subtract_offdiag; });

    dbl("gail.lr", [](auto& c) -> auto& { return c.gail.lr; });
    uint("gail.batch", [](auto& c) -> auto& { return c.gail_batch; });
    sizes("gail.hidden", [](auto& c) -> auto& { return c.disc_hidden; });
    dbl("gail.mixup_alpha", [](auto& c) -> auto& { return c.gail.alpha; });
    dbl("gail.mixup_term_weight", [](auto& c) -> auto& { return c.gail.mixup_term_weight; });
    flag("gail.discrete_action_input", [](auto& c) -> auto& { return c.disc_action_input; });

    sizes("iwil.hidden", [](auto& c) -> auto& { return c.classifier.hidden; });
    dbl("iwil.lr", [](auto& c) -> auto& { return c.classifier.lr; });
    uint("iwil.steps", [](auto& c) -> auto& { return c.classifier.steps; });

    dbl("gmm.threshold", [](auto& c) -> auto& { return c.gmm.threshold; });
    uint("gmm.max_iter", [](auto& c) -> auto& { return c.gmm.max_iter; });
    dbl("gmm.tol", [](auto& c) -> auto& { return c.gmm.tol; });
    dbl("gmm.var_floor", [](auto& c) -> auto& { return c.gmm.var_floor; });
    return f;
  }();
  return all;
}

inline const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

inline void set(ExperimentConfig& c, const std::string& key, const std::string& value) {
  field(key).set(c, value);
}

inline std::string get(const ExperimentConfig& c, const std::string& key) { return field(key).get(c); }

// `key=value` overrides, as given on the command line.
inline void apply_override(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline void parse_into(ExperimentConfig& c, const std::string& text) {
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    if (key.find('.') == std::string::npos) {
      if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' outside a section");
      key = section + "." + key;
    }
    try {
      set(c, key, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline ExperimentConfig parse(const std::string& text) {
  ExperimentConfig c;
  parse_into(c, text);
  return c;
}

inline ExperimentConfig load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

// Every key, one section block each, in registry order.
inline std::string canonical(const ExperimentConfig& c) {
  std::string out, section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(c) + "\n";
  }
  return out;
}

// The output directory does not change what a run computes, so it is left
// out of the identity hash.
inline std::string config_hash(const ExperimentConfig& c) {
  ExperimentConfig k = c;
  k.out.clear();
  return hex64(fnv1a64(canonical(k)));
}

}  // namespace sail::config
