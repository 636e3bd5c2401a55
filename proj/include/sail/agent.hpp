#pragma once

// Policy, value function, GAE and the TRPO update.
//
// The Fisher-vector product uses the Gauss-Newton form of the mean-KL
// Hessian at old == new: F v = J^T H J v, with J v from a forward-mode pass
// through the policy network, H the closed-form Hessian of the KL with
// respect to the distribution parameters, and J^T from a reverse sweep.
// A finite-difference product of the KL gradient is kept for cross-checks.

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sail/adam.hpp"
#include "sail/autodiff.hpp"
#include "sail/envs.hpp"
#include "sail/nn.hpp"

namespace sail::agent {

inline constexpr double kLog2Pi = 1.8378770664093453;

struct PolicySpec {
  std::size_t state_dim = 1;
  std::size_t action_dim = 1;
  bool discrete = false;
  std::vector<std::size_t> hidden{100, 100, 100};
  double output_gain = 0.1;
  double init_log_std = 0.0;
};

// Gaussian policy with a state-independent log-std ("log_std", 1 x A), or a
// categorical policy over A choices. Network parameters live under "net.".
class Policy {
 public:
  Policy() = default;
  explicit Policy(PolicySpec spec)
      : spec_(spec), net_(MlpSpec{spec.state_dim, spec.hidden, spec.action_dim, Activation::kTanh, spec.output_gain}) {}

  const PolicySpec& spec() const { return spec_; }
  bool discrete() const { return spec_.discrete; }
  const Mlp& net() const { return net_; }

  ParamSet init(Rng& rng) const {
    ParamSet p = net_.init(rng).prefixed("net.");
    if (!discrete()) p.insert("log_std", Tensor(1, spec_.action_dim, spec_.init_log_std));
    return p;
  }

  // Mean (continuous) or logits (discrete), N x A.
  Tensor head(const ParamSet& params, const Tensor& states) const {
    return net_.predict(params, states, "net.");
  }

  envs::Action act(const ParamSet& params, const envs::State& s, Rng& rng, bool deterministic) const {
    const Tensor out = head(params, Tensor::row(s));
    envs::Action a(spec_.action_dim);
    if (discrete()) {
      const auto p = softmax(out.row_span(0));
      if (deterministic) return envs::one_hot(envs::argmax(p), spec_.action_dim);
      double u = uniform(rng);
      std::size_t k = 0;
      while (k + 1 < p.size() && u >= p[k]) u -= p[k++];
      return envs::one_hot(k, spec_.action_dim);
    }
    const Tensor& log_std = params.at("log_std");
    for (std::size_t j = 0; j < spec_.action_dim; ++j) {
      a[j] = out(0, j) + (deterministic ? 0.0 : std::exp(log_std(0, j)) * normal(rng));
    }
    return a;
  }

  // Per-row log-density of `actions` (one-hot rows for discrete), N x 1.
  diff::Var log_prob(const Bound& b, diff::Tape& tape, const Tensor& states, const Tensor& actions) const {
    const diff::Var out = net_.forward(sub_bound(b), tape.constant(states));
    const diff::Var act = tape.constant(actions);
    if (discrete()) return diff::sum_cols(diff::mul(diff::log_softmax_rows(out), act));
    const diff::Var& ls = param(b, "log_std");
    const diff::Var z = diff::mul(diff::sub(act, out), diff::exp(-ls));
    const double c = 0.5 * kLog2Pi * static_cast<double>(spec_.action_dim);
    return diff::sub(-0.5 * diff::sum_cols(diff::square(z)), diff::sum(ls)) - c;
  }

  std::vector<double> log_prob(const ParamSet& params, const Tensor& states, const Tensor& actions) const {
    diff::Tape tape;
    const Bound b = bind(tape, params);
    return log_prob(b, tape, states, actions).value().vec();
  }

  // Mean over rows of KL(old || new); `old_head` is head(old params).
  diff::Var mean_kl(const Bound& b, diff::Tape& tape, const Tensor& states, const Tensor& old_head,
                    const Tensor& old_log_std) const {
    const diff::Var out = net_.forward(sub_bound(b), tape.constant(states));
    if (discrete()) {
      const Tensor old_logp = log_softmax(old_head);
      Tensor old_p = old_logp;
      for (double& v : old_p.values()) v = std::exp(v);
      const diff::Var lp_new = diff::log_softmax_rows(out);
      const diff::Var d = diff::sub(tape.constant(old_logp), lp_new);
      return diff::mean(diff::sum_cols(diff::mul(tape.constant(old_p), d)));
    }
    const diff::Var& ls = param(b, "log_std");
    Tensor old_var = old_log_std;
    for (double& v : old_var.values()) v = std::exp(2.0 * v);
    const diff::Var diff_mu = diff::sub(tape.constant(old_head), out);
    const diff::Var num = diff::add(tape.constant(old_var), diff::square(diff_mu));
    const diff::Var quad = 0.5 * diff::mul(num, diff::exp(-2.0 * ls));
    const diff::Var per_dim = diff::add(diff::sub(ls, tape.constant(old_log_std)), quad) - 0.5;
    return diff::mean(diff::sum_cols(per_dim));
  }

  double mean_kl(const ParamSet& old_params, const ParamSet& new_params, const Tensor& states) const {
    diff::Tape tape;
    const Bound b = bind(tape, new_params);
    const Tensor old_ls = discrete() ? Tensor() : old_params.at("log_std");
    return mean_kl(b, tape, states, head(old_params, states), old_ls).value().item();
  }

  double entropy(const ParamSet& params, const Tensor& states) const {
    if (!discrete()) {
      double h = 0.0;
      for (double ls : params.at("log_std").values()) h += ls + 0.5 * (kLog2Pi + 1.0);
      return h;
    }
    const Tensor lp = log_softmax(head(params, states));
    double h = 0.0;
    for (double v : lp.values()) h -= std::exp(v) * v;
    return h / static_cast<double>(states.rows());
  }

  // Forward pass state shared by every Fisher-vector product of one update.
  struct FisherContext {
    Mlp::Cache cache;
    Tensor out;  // mean or logits at the anchor parameters
  };

  FisherContext fisher_context(const ParamSet& params, const Tensor& states) const {
    return {net_.forward_cache(params, states, "net."), head(params, states)};
  }

  // Gauss-Newton Fisher-vector product of the mean KL at `params`.
  ParamSet fisher_vector_product(const ParamSet& params, const FisherContext& ctx, const ParamSet& v) const {
    const Tensor jv = net_.jvp(ctx.cache, params, v, "net.");
    const Tensor& out = ctx.out;
    const double inv_n = 1.0 / static_cast<double>(out.rows());
    Tensor seed(jv.rows(), jv.cols());
    if (discrete()) {
      for (std::size_t r = 0; r < out.rows(); ++r) {
        const auto p = softmax(out.row_span(r));
        double pjv = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) pjv += p[j] * jv(r, j);
        for (std::size_t j = 0; j < p.size(); ++j) seed(r, j) = inv_n * p[j] * (jv(r, j) - pjv);
      }
    } else {
      const Tensor& ls = params.at("log_std");
      for (std::size_t r = 0; r < jv.rows(); ++r)
        for (std::size_t j = 0; j < jv.cols(); ++j) seed(r, j) = inv_n * jv(r, j) * std::exp(-2.0 * ls(0, j));
    }
    ParamSet fv = net_.vjp(ctx.cache, params, seed, "net.");
    if (!discrete()) {
      Tensor g = v.at("log_std");
      g *= 2.0;
      fv.insert("log_std", std::move(g));
    }
    return fv;
  }

  ParamSet fisher_vector_product(const ParamSet& params, const Tensor& states, const ParamSet& v) const {
    return fisher_vector_product(params, fisher_context(params, states), v);
  }

  // Central difference of the KL gradient along v; for cross-checking.
  ParamSet fisher_vector_product_fd(const ParamSet& params, const Tensor& states, const ParamSet& v,
                                    double h = 1e-5) const {
    const Tensor old_head = head(params, states);
    const Tensor old_ls = discrete() ? Tensor() : params.at("log_std");
    auto grad_at = [&](double sign) {
      std::vector<double> flat = params.flatten();
      const std::vector<double> dv = v.flatten();
      for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += sign * h * dv[i];
      diff::Tape tape;
      const Bound b = bind(tape, params.with_flat(flat));
      tape.backward(mean_kl(b, tape, states, old_head, old_ls));
      return gradients(tape, b).flatten();
    };
    const auto up = grad_at(1.0), down = grad_at(-1.0);
    std::vector<double> out(up.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (up[i] - down[i]) / (2.0 * h);
    return params.with_flat(out);
  }

  static std::vector<double> softmax(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) z += (p[j] = std::exp(logits[j] - m));
    for (double& v : p) v /= z;
    return p;
  }

  static Tensor log_softmax(const Tensor& logits) {
    Tensor out = logits;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      auto row = logits.row_span(r);
      const double m = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - m);
      const double lse = m + std::log(z);
      for (std::size_t j = 0; j < row.size(); ++j) out(r, j) = row[j] - lse;
    }
    return out;
  }

 private:
  static Bound sub_bound(const Bound& b) {
    Bound out;
    for (const auto& [name, v] : b) {
      if (name.rfind("net.", 0) == 0) out.emplace(name.substr(4), v);
    }
    return out;
  }

  PolicySpec spec_;
  Mlp net_;
};

inline Mlp make_value_net(std::size_t state_dim, std::vector<std::size_t> hidden = {100, 100, 100}) {
  return Mlp(MlpSpec{state_dim, std::move(hidden), 1, Activation::kTanh, 1.0});
}

struct TrpoConfig {
  double gamma = 0.995;
  double lam = 0.97;
  double max_kl = 0.01;
  std::size_t cg_iters = 10;
  double cg_damping = 0.1;
  double cg_tol = 1e-10;
  double backtrack_coef = 0.8;
  std::size_t max_backtracks = 10;
  std::size_t batch_steps = 5000;
  bool normalize_advantages = true;
  bool finite_difference_fvp = false;
  double value_lr = 3e-4;
  std::size_t value_epochs = 5;
  std::size_t value_batch = 128;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(lam > 0.0 && lam <= 1.0)) throw ConfigError("GAE lambda must lie in (0, 1]");
    if (!(max_kl > 0.0)) throw ConfigError("KL bound must be positive");
  }
};

// State-value network fitted to standardized targets. When the target
// statistics move, the output layer is rescaled so predictions in return
// units are preserved; the network then only tracks the residual.
class ValueFunction {
 public:
  ValueFunction() = default;
  ValueFunction(std::size_t state_dim, Rng& rng, double lr = 3e-4, std::vector<std::size_t> hidden = {100, 100, 100})
      : net_(make_value_net(state_dim, std::move(hidden))), params_(net_.init(rng)), opt_(params_, lr) {}

  const Mlp& net() const { return net_; }
  const ParamSet& params() const { return params_; }
  double offset() const { return offset_; }
  double scale() const { return scale_; }

  Tensor predict(const Tensor& states) const {
    Tensor v = net_.predict(params_, states);
    for (double& x : v.values()) x = offset_ + scale_ * x;
    return v;
  }

  // Adam on the squared error in standardized units, cfg.value_epochs passes
  // over shuffled minibatches. Returns the last minibatch loss.
  double fit(const Tensor& states, const std::vector<double>& targets, const TrpoConfig& cfg, Rng& rng) {
    restandardize(targets);
    const std::size_t n = states.rows();
    std::vector<double> z(targets.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = (targets[i] - offset_) / scale_;
    const Tensor y = Tensor::column(std::move(z));
    double last = 0.0;
    for (std::size_t epoch = 0; epoch < cfg.value_epochs; ++epoch) {
      const auto perm = permutation(rng, n);
      for (std::size_t start = 0; start < n; start += cfg.value_batch) {
        const std::size_t end = std::min(n, start + cfg.value_batch);
        std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                     perm.begin() + static_cast<std::ptrdiff_t>(end));
        diff::Tape tape;
        const Bound b = bind(tape, params_);
        const diff::Var pred = net_.forward(b, tape.constant(states.gather_rows(idx)));
        const diff::Var loss = diff::mean(diff::square(diff::sub(pred, tape.constant(y.gather_rows(idx)))));
        tape.backward(loss);
        last = loss.value().item();
        params_ = adam_step(params_, gradients(tape, b), opt_);
      }
    }
    return last;
  }

  // Parameters plus the standardization as "norm" (1 x 2), for checkpoints.
  ParamSet state() const {
    ParamSet p = params_;
    p.insert("norm", Tensor{{offset_, scale_}});
    return p;
  }

  void load(const ParamSet& p) {
    const Tensor& norm = p.at("norm");
    offset_ = norm(0, 0);
    scale_ = norm(0, 1);
    ParamSet rest;
    for (const auto& [name, t] : p) {
      if (name != "norm") rest.insert(name, t);
    }
    params_ = rest;
  }

 private:
  void restandardize(const std::vector<double>& targets) {
    const double n = static_cast<double>(targets.size());
    const double mean = std::accumulate(targets.begin(), targets.end(), 0.0) / n;
    double var = 0.0;
    for (double t : targets) var += (t - mean) * (t - mean);
    const double sd = std::max(std::sqrt(var / n), 1e-6);
    const std::string w = Mlp::weight_name(net_.layers() - 1), b = Mlp::bias_name(net_.layers() - 1);
    Tensor wt = params_.at(w), bt = params_.at(b);
    wt *= scale_ / sd;
    bt(0, 0) = (scale_ * bt(0, 0) + offset_ - mean) / sd;
    params_.set(w, std::move(wt));
    params_.set(b, std::move(bt));
    offset_ = mean;
    scale_ = sd;
  }

  Mlp net_;
  ParamSet params_;
  AdamState opt_;
  double offset_ = 0.0;
  double scale_ = 1.0;
};

struct RolloutBatch {
  Tensor states;       // N x S
  Tensor actions;      // N x A, as sampled (log-probs refer to these)
  Tensor applied;      // N x A, as executed by the env (clipped / one-hot)
  Tensor next_states;  // N x S
  std::vector<char> dones;
  std::vector<char> terminals;
  std::vector<double> log_probs;
  std::vector<double> rewards;      // learner reward, filled in by the caller
  std::vector<double> env_rewards;  // true reward, metrics only
  std::vector<double> advantages;
  std::vector<double> value_targets;
  std::vector<double> episode_returns;  // true return of each episode

  std::size_t size() const { return dones.size(); }
};

// Whole episodes until at least `min_steps` transitions are gathered.
inline RolloutBatch collect_rollouts(const envs::EnvSpec& env, const Policy& policy, const ParamSet& params,
                                     std::size_t min_steps, Rng& rng) {
  std::vector<double> s_rows, a_rows, x_rows, n_rows;
  RolloutBatch b;
  while (b.dones.size() < min_steps) {
    envs::State s = envs::reset(env, rng);
    double ret = 0.0;
    for (std::size_t t = 0; t < env.horizon; ++t) {
      const envs::Action a = policy.act(params, s, rng, false);
      const envs::Transition tr = envs::step(env, s, a, t, rng);
      s_rows.insert(s_rows.end(), s.begin(), s.end());
      a_rows.insert(a_rows.end(), a.begin(), a.end());
      x_rows.insert(x_rows.end(), tr.a.begin(), tr.a.end());
      n_rows.insert(n_rows.end(), tr.s_next.begin(), tr.s_next.end());
      b.dones.push_back(tr.done);
      b.terminals.push_back(tr.terminal);
      b.env_rewards.push_back(tr.reward);
      ret += tr.reward;
      s = tr.s_next;
      if (tr.done) break;
    }
    b.episode_returns.push_back(ret);
  }
  const std::size_t n = b.dones.size();
  b.states = Tensor(n, env.state_dim, std::move(s_rows));
  b.actions = Tensor(n, env.action_dim, std::move(a_rows));
  b.applied = Tensor(n, env.action_dim, std::move(x_rows));
  b.next_states = Tensor(n, env.state_dim, std::move(n_rows));
  b.log_probs = policy.log_prob(params, b.states, b.actions);
  return b;
}

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> targets;
};

// GAE(lambda) over concatenated episodes. `next_values[t]` is V(s_{t+1});
// `dones` ends the recursion, `terminals` additionally drops the bootstrap.
inline GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                             const std::vector<double>& next_values, const std::vector<char>& dones,
                             const std::vector<char>& terminals, double gamma, double lam) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || dones.size() != n || terminals.size() != n) {
    throw ShapeError("GAE inputs have mismatched lengths");
  }
  GaeResult out{std::vector<double>(n), std::vector<double>(n)};
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double boot = terminals[i] ? 0.0 : next_values[i];
    const double delta = rewards[i] + gamma * boot - values[i];
    const double carry = dones[i] ? 0.0 : next_adv;
    out.advantages[i] = delta + gamma * lam * carry;
    next_adv = out.advantages[i];
    out.targets[i] = out.advantages[i] + values[i];
  }
  return out;
}

// Single-trajectory form: `values` has one extra entry, the bootstrap value
// of the final next state; a done flag is treated as terminal.
inline GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                             const std::vector<char>& dones, double gamma, double lam) {
  if (values.size() != rewards.size() + 1 || dones.size() != rewards.size()) {
    throw ShapeError("GAE expects values of length rewards + 1 and dones of length rewards");
  }
  std::vector<double> v(values.begin(), values.end() - 1), nv(values.begin() + 1, values.end());
  return compute_gae(rewards, v, nv, dones, dones, gamma, lam);
}

inline void estimate_advantages(RolloutBatch& batch, const ValueFunction& value, const TrpoConfig& cfg) {
  if (batch.rewards.size() != batch.size()) throw ShapeError("batch rewards not filled in");
  const Tensor v = value.predict(batch.states);
  const Tensor nv = value.predict(batch.next_states);
  GaeResult g = compute_gae(batch.rewards, v.vec(), nv.vec(), batch.dones, batch.terminals, cfg.gamma, cfg.lam);
  batch.advantages = std::move(g.advantages);
  batch.value_targets = std::move(g.targets);
}

struct CgResult {
  Eigen::VectorXd x;
  double residual = 0.0;  // ||A x - b|| / ||b|| from the recurrence
  std::size_t iterations = 0;
};

inline CgResult conjugate_gradient(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& avp,
                                   const Eigen::VectorXd& b, std::size_t iters, double tol = 1e-10) {
  CgResult out;
  out.x = Eigen::VectorXd::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0.0) return out;
  Eigen::VectorXd r = b, p = b;
  double rr = r.squaredNorm();
  for (std::size_t i = 0; i < iters; ++i) {
    if (std::sqrt(rr) <= tol * bnorm) break;
    const Eigen::VectorXd ap = avp(p);
    const double pap = p.dot(ap);
    if (!std::isfinite(pap) || pap <= 0.0) {
      if (!std::isfinite(pap)) throw NumericError("conjugate gradient: non-finite curvature");
      break;  // not positive definite along p; keep the current iterate
    }
    const double alpha = rr / pap;
    out.x += alpha * p;
    r -= alpha * ap;
    if (!out.x.allFinite()) throw NumericError("conjugate gradient: non-finite iterate");
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
    out.iterations = i + 1;
  }
  out.residual = std::sqrt(rr) / bnorm;
  return out;
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> from_eigen(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

// mean(exp(logp_new - logp_old) * A).
inline double surrogate(const Policy& policy, const ParamSet& params, const RolloutBatch& batch,
                        const std::vector<double>& adv) {
  const auto lp = policy.log_prob(params, batch.states, batch.actions);
  double s = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const double ratio = std::exp(lp[i] - batch.log_probs[i]);
    if (!std::isfinite(ratio)) {
      throw NumericError("non-finite importance ratio at sample " + std::to_string(i));
    }
    s += ratio * adv[i];
  }
  return s / static_cast<double>(lp.size());
}

struct SurrogateKl {
  double surrogate = 0.0;
  double kl = 0.0;
};

inline SurrogateKl surrogate_and_kl(const Policy& policy, const ParamSet& old_params, const ParamSet& new_params,
                                    const RolloutBatch& batch, const std::vector<double>& adv) {
  return {surrogate(policy, new_params, batch, adv), policy.mean_kl(old_params, new_params, batch.states)};
}

inline std::vector<double> normalized(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / (sd + 1e-8);
  return out;
}

struct TrpoStats {
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
  double kl = 0.0;
  double cg_residual = 0.0;
  double entropy = 0.0;
  double value_loss = 0.0;
  std::size_t backtracks = 0;
  bool accepted = false;
};

// One TRPO step on `params` using batch.advantages, then value fitting.
inline TrpoStats trpo_update(const Policy& policy, ParamSet& params, ValueFunction& value, const RolloutBatch& batch,
                             const TrpoConfig& cfg, Rng& rng) {
  cfg.validate();
  if (batch.advantages.size() != batch.size()) throw ShapeError("advantages not estimated for batch");
  TrpoStats st;
  const std::vector<double> adv = cfg.normalize_advantages ? normalized(batch.advantages) : batch.advantages;
  st.entropy = policy.entropy(params, batch.states);
  st.surrogate_before = surrogate(policy, params, batch, adv);
  st.surrogate_after = st.surrogate_before;

  // gradient of the surrogate at old params: mean(grad logp * A)
  diff::Tape tape;
  const Bound b = bind(tape, params);
  const diff::Var lp = policy.log_prob(b, tape, batch.states, batch.actions);
  Tensor seed(lp.rows(), 1);
  for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = adv[i] / static_cast<double>(seed.size());
  tape.backward(lp, seed);
  const Eigen::VectorXd g = to_eigen(gradients(tape, b).flatten());

  if (g.norm() > 0.0) {
    const auto ctx = policy.fisher_context(params, batch.states);
    auto fvp = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      const ParamSet pv = params.with_flat(from_eigen(v));
      const ParamSet fv = cfg.finite_difference_fvp ? policy.fisher_vector_product_fd(params, batch.states, pv)
                                                    : policy.fisher_vector_product(params, ctx, pv);
      return to_eigen(fv.flatten()) + cfg.cg_damping * v;
    };
    const CgResult cg = conjugate_gradient(fvp, g, cfg.cg_iters, cfg.cg_tol);
    st.cg_residual = cg.residual;
    const double shs = cg.x.dot(fvp(cg.x));
    if (shs > 0.0 && std::isfinite(shs)) {
      const Eigen::VectorXd full = std::sqrt(2.0 * cfg.max_kl / shs) * cg.x;
      const Eigen::VectorXd theta = to_eigen(params.flatten());
      double frac = 1.0;
      for (std::size_t k = 0; k < cfg.max_backtracks; ++k, frac *= cfg.backtrack_coef) {
        const ParamSet cand = params.with_flat(from_eigen(theta + frac * full));
        const SurrogateKl sk = surrogate_and_kl(policy, params, cand, batch, adv);
        if (sk.surrogate > st.surrogate_before && sk.kl <= cfg.max_kl) {
          params = cand;
          st.accepted = true;
          st.surrogate_after = sk.surrogate;
          st.kl = sk.kl;
          st.backtracks = k;
          break;
        }
      }
    }
  }
  st.value_loss = value.fit(batch.states, batch.value_targets, cfg, rng);
  return st;
}

}  // namespace sail::agent
