#pragma once

// Training loop and the file-producing commands behind the CLI.
//
// Each outer iteration runs rollout, TRPO on -log D, REPR, then GAIL, in
// that order. The confidence variants first train the 2IWIL classifier on
// the partly labeled demonstrations (and, with mixup, split them by GMM)
// before the loop starts. Every random draw comes from a named child
// stream of the master seed.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sail/ail.hpp"
#include "sail/checkpoint.hpp"
#include "sail/config.hpp"
#include "sail/demos.hpp"
#include "sail/metrics.hpp"
#include "sail/repr.hpp"

namespace sail::harness {

using config::Algorithm;
using config::ExperimentConfig;

struct Streams {
  Rng env, policy_init, corruption, noise, mixup, gmm, demos, classifier, value, eval;

  explicit Streams(std::uint64_t seed)
      : env(child_stream(seed, "env")),
        policy_init(child_stream(seed, "policy-init")),
        corruption(child_stream(seed, "corruption")),
        noise(child_stream(seed, "noise")),
        mixup(child_stream(seed, "mixup")),
        gmm(child_stream(seed, "gmm")),
        demos(child_stream(seed, "demos")),
        classifier(child_stream(seed, "classifier")),
        value(child_stream(seed, "value")),
        eval(child_stream(seed, "eval")) {}
};

// ----------------------------------------------------------- demonstrations

inline envs::DemonstrationSet make_demonstrations(const ExperimentConfig& cfg, Rng& rng) {
  const auto env = envs::make_env(cfg.env);
  if (!cfg.demos.empty()) return envs::load_demonstrations(cfg.demos, env);
  if (cfg.imperfect()) {
    return envs::imperfect_demonstrations(env, envs::MixtureSpec::uniform(cfg.optimality, cfg.non_experts),
                                          cfg.n_expert, rng, cfg.demo_iid);
  }
  return envs::generate_demonstrations(env, envs::expert_fn(env), cfg.n_expert, rng, envs::kOptimal, cfg.demo_iid);
}

struct ConfidenceSummary {
  double beta = 0.0;
  double epsilon = 0.0;
  double final_risk = 0.0;
  double auc = 0.0;  // of the confidences against the hidden sources; diagnostic only
  std::optional<ail::GmmSplit> split;
};

// Area under the ROC curve of `score` for separating optimal pairs; ties
// count half.
inline double source_auc(const std::vector<double>& score, const std::vector<int>& sources) {
  std::vector<std::size_t> order(score.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && score[order[j]] == score[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j + 1);  // average 1-based rank of the tie block
    for (std::size_t k = i; k < j; ++k)
      if (sources[order[k]] == envs::kOptimal) rank_sum += mid;
    i = j;
  }
  for (int s : sources) (s == envs::kOptimal ? pos : neg) += 1.0;
  if (pos == 0.0 || neg == 0.0) return 0.5;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

// Expert side for the discriminator. The confidence variants reorder the
// set as labeled pairs then unlabeled pairs.
inline ail::ExpertData build_expert(const ExperimentConfig& cfg, const envs::DemonstrationSet& demos, Streams& rng,
                                    ConfidenceSummary* summary) {
  if (!config::uses_confidence(cfg.algo)) return ail::plain_expert(demos.states, demos.actions);
  const auto split = envs::label_subset(demos, cfg.label_ratio, rng.demos);
  const auto res = ail::train_confidence(ail::pairs(split.labeled.states, split.labeled.actions),
                                         split.labeled.confidence,
                                         ail::pairs(split.unlabeled.states, split.unlabeled.actions), cfg.classifier,
                                         rng.classifier);
  ail::ExpertData e;
  e.states = vconcat(split.labeled.states, split.unlabeled.states);
  e.actions = vconcat(split.labeled.actions, split.unlabeled.actions);
  e.confidence = res.confidence;
  e.weights = ail::confidence_weights(e.confidence, res.epsilon);
  ConfidenceSummary s;
  s.beta = res.beta;
  s.epsilon = res.epsilon;
  s.final_risk = res.final_risk;
  std::vector<int> sources = split.labeled.sources;
  sources.insert(sources.end(), split.unlabeled.sources.begin(), split.unlabeled.sources.end());
  s.auc = source_auc(e.confidence, sources);
  if (cfg.algo == Algorithm::kOurs2iwilMixup) {
    const auto g = ail::gmm_split(e.confidence, rng.gmm, cfg.gmm);
    e.optimal = g.optimal;
    e.non_optimal = g.non_optimal;
    s.split = g;
  }
  if (summary) *summary = s;
  return e;
}

// ------------------------------------------------------------------ learner

// All networks of one run. Parameter names in `enc` are "se.", "ae.", "f.";
// in `disc` "d.". The GAIL optimizer runs over d plus se/ae jointly.
struct Learner {
  envs::EnvSpec env;
  agent::Policy policy;
  ParamSet pi;
  agent::ValueFunction value;
  bool encoded = false;
  repr::Encoders encoders;
  ParamSet enc;
  AdamState repr_opt;
  ail::Discriminator disc;
  ParamSet disc_params;
  AdamState gail_opt;
  ail::FeatureMap features = ail::FeatureMap::raw(1, 1);

  Learner(const ExperimentConfig& cfg, Rng& rng) : env(envs::make_env(cfg.env)) {
    agent::PolicySpec ps = cfg.policy;
    ps.state_dim = env.state_dim;
    ps.action_dim = env.action_dim;
    ps.discrete = env.discrete();
    policy = agent::Policy(ps);
    pi = policy.init(rng);
    value = agent::ValueFunction(env.state_dim, rng, cfg.trpo.value_lr, cfg.value_hidden);
    encoded = config::uses_encoders(cfg.algo);
    if (encoded) {
      encoders = repr::Encoders(env.state_dim, env.action_dim, env.discrete(), cfg.repr);
      enc = encoders.init(rng);
      repr_opt = AdamState(enc, cfg.repr.lr);
      features = ail::FeatureMap::encoded(encoders, cfg.disc_action_input);
    } else {
      features = ail::FeatureMap::raw(env.state_dim, env.action_dim);
    }
    disc = ail::Discriminator(features.width(), cfg.disc_hidden);
    disc_params = disc.init(rng);
    gail_opt = AdamState(gail_params(), cfg.gail.lr);
  }

  ParamSet gail_params() const {
    ParamSet p = disc_params;
    if (encoded) p.merge(enc.subset({"se.", "ae."}));
    return p;
  }

  void store_gail_params(const ParamSet& p) {
    disc_params = p.subset({"d."});
    if (encoded) enc.assign(p.subset({"se.", "ae."}));
  }

  std::vector<double> rewards(const Tensor& states, const Tensor& actions) const {
    const ParamSet p = gail_params();
    return disc.rewards(p, features(p, states, actions));
  }

  ParamSet snapshot() const {
    ParamSet all = pi.prefixed("pi.");
    all.merge(value.state().prefixed("vf."));
    if (encoded) all.merge(enc.prefixed("enc."));
    all.merge(disc_params.prefixed("disc."));
    return all;
  }
};

// --------------------------------------------------------------------- logs

inline constexpr const char* kPhaseRollout = "rollout";
inline constexpr const char* kPhaseTrpo = "trpo";
inline constexpr const char* kPhaseRepr = "repr";
inline constexpr const char* kPhaseGail = "gail";

struct IterationLog {
  std::size_t iteration = 0;
  std::size_t env_steps = 0;
  std::size_t episodes = 0;
  double rollout_return = 0.0;
  double mean_reward = 0.0;
  agent::TrpoStats trpo;
  std::optional<repr::ReprLosses> repr;
  ail::GailStats gail;
  std::optional<metrics::EvalReport> eval;
  std::vector<std::string> phases;
};

inline const char* kLogHeader =
    "iteration,env_steps,episodes,rollout_return,mean_reward,surrogate_before,surrogate_after,kl,accepted,"
    "backtracks,cg_residual,entropy,value_loss,L_F,L_SC,L_AC,L_total,disc_loss,mean_D_agent,mean_D_expert,"
    "eval_mean,eval_stderr,eval_iqm,mode,phases";

inline std::string csv_row(const IterationLog& r, std::string_view mode) {
  using envs::format_double;
  std::string s = std::to_string(r.iteration) + "," + std::to_string(r.env_steps) + "," +
                  std::to_string(r.episodes) + "," + format_double(r.rollout_return) + "," +
                  format_double(r.mean_reward) + "," + format_double(r.trpo.surrogate_before) + "," +
                  format_double(r.trpo.surrogate_after) + "," + format_double(r.trpo.kl) + "," +
                  (r.trpo.accepted ? "1" : "0") + "," + std::to_string(r.trpo.backtracks) + "," +
                  format_double(r.trpo.cg_residual) + "," + format_double(r.trpo.entropy) + "," +
                  format_double(r.trpo.value_loss) + ",";
  if (r.repr) {
    s += format_double(r.repr->forward) + "," + format_double(r.repr->state) + "," + format_double(r.repr->action) +
         "," + format_double(r.repr->total) + ",";
  } else {
    s += ",,,,";
  }
  s += format_double(r.gail.loss) + "," + format_double(r.gail.mean_d_agent) + "," +
       format_double(r.gail.mean_d_expert) + ",";
  if (r.eval) {
    s += format_double(r.eval->mean) + "," + format_double(r.eval->stderr_) + "," + format_double(r.eval->iqm) + ",";
  } else {
    s += ",,,";
  }
  s += std::string(mode) + ",";
  for (std::size_t i = 0; i < r.phases.size(); ++i) s += (i ? ">" : "") + r.phases[i];
  return s;
}

inline const char* kEvalHeader = "iteration,seed,episodes,mean,stderr,iqm";

inline std::string eval_row(const metrics::EvalReport& e) {
  using envs::format_double;
  return std::to_string(e.iteration) + "," + std::to_string(e.seed) + "," + std::to_string(e.returns.size()) + "," +
         format_double(e.mean) + "," + format_double(e.stderr_) + "," + format_double(e.iqm);
}

// Write-then-rename so readers never see a half-written file.
inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + tmp + "'");
    f << bytes;
    if (!f.flush()) throw ConfigError("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ----------------------------------------------------------------- training

struct RunOptions {
  bool write_files = true;
  std::function<void(const IterationLog&)> on_iteration;
  // Shared demonstrations, e.g. to give two arms the same data; otherwise
  // they come from the config.
  std::optional<envs::DemonstrationSet> demos;
};

struct RunResult {
  std::string config_hash;
  std::string csv;  // header plus one row per iteration
  std::vector<IterationLog> iterations;
  std::vector<metrics::EvalReport> evals;  // iteration 0 first
  double final_return = 0.0;
  Checkpoint checkpoint;
  std::string checkpoint_hash;
  ConfidenceSummary confidence;
  double wall_seconds = 0.0;
};

inline std::string_view gail_mode_for(Algorithm a) {
  switch (a) {
    case Algorithm::kOurs2iwil: return ail::gail_mode_name(ail::GailMode::kWeighted);
    case Algorithm::kOurs2iwilMixup: return ail::gail_mode_name(ail::GailMode::kMixup);
    default: return ail::gail_mode_name(ail::GailMode::kPlain);
  }
}

inline ail::GailConfig gail_config(const ExperimentConfig& cfg) {
  ail::GailConfig g = cfg.gail;
  g.mode = cfg.algo == Algorithm::kOurs2iwil        ? ail::GailMode::kWeighted
           : cfg.algo == Algorithm::kOurs2iwilMixup ? ail::GailMode::kMixup
                                                    : ail::GailMode::kPlain;
  return g;
}

// Mean of the evaluations in the last `final_window` share of iterations
// (always including the last one); the initial evaluation when T = 0.
inline double final_return(const std::vector<metrics::EvalReport>& evals, std::size_t iterations, double window) {
  if (evals.empty()) throw ShapeError("no evaluations recorded");
  if (iterations == 0) return evals.front().mean;
  const auto span = static_cast<std::size_t>(std::ceil(window * static_cast<double>(iterations) - 1e-9));
  const std::size_t first = iterations - std::max<std::size_t>(span, 1) + 1;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& e : evals) {
    if (e.iteration >= first) {
      sum += e.mean;
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

inline bool eval_due(const ExperimentConfig& cfg, std::size_t k, std::size_t total) {
  return k == total || (cfg.eval_every > 0 && k % cfg.eval_every == 0);
}

namespace detail {

// Rethrows the active exception with the iteration and phase in front,
// keeping its type so exit codes survive.
[[noreturn]] inline void rethrow_with_context(std::size_t k, const std::string& phase) {
  const std::string where = "iteration " + std::to_string(k) + " (" + phase + "): ";
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(where + e.what());
  } catch (const NumericError& e) {
    throw NumericError(where + e.what());
  } catch (const std::exception& e) {
    throw Error(where + e.what());
  }
}

}  // namespace detail

inline RunResult run_training(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Streams rng(cfg.seed);
  RunResult res;
  res.config_hash = config::config_hash(cfg);
  const std::size_t total = cfg.resolved_iterations();

  const envs::DemonstrationSet demos = opt.demos ? *opt.demos : make_demonstrations(cfg, rng.demos);
  const ail::ExpertData expert = build_expert(cfg, demos, rng, &res.confidence);
  Learner L(cfg, rng.policy_init);
  const ail::GailConfig gcfg = gail_config(cfg);
  const std::string mode(gail_mode_for(cfg.algo));

  namespace fs = std::filesystem;
  const fs::path dir(cfg.out);
  std::ofstream log_file, eval_file;
  if (opt.write_files) {
    fs::create_directories(dir);
    write_atomic(dir / "config.cfg", config::canonical(cfg));
    log_file.open(dir / "log.csv", std::ios::binary);
    eval_file.open(dir / "metrics.csv", std::ios::binary);
    if (!log_file || !eval_file) throw ConfigError("cannot open logs in '" + cfg.out + "'");
    log_file << kLogHeader << "\n" << std::flush;
    eval_file << kEvalHeader << "\n" << std::flush;
  }
  res.csv = std::string(kLogHeader) + "\n";

  auto record_eval = [&](std::size_t k) {
    metrics::EvalReport e = metrics::eval_policy(L.policy, L.pi, L.env, cfg.eval_episodes, rng.eval);
    e.iteration = k;
    e.seed = cfg.seed;
    res.evals.push_back(e);
    if (opt.write_files) eval_file << eval_row(e) << "\n" << std::flush;
    return e;
  };
  auto make_checkpoint = [&](std::size_t k) {
    Checkpoint ck;
    ck.meta.config_hash = res.config_hash;
    ck.meta.iteration = k;
    ck.meta.rng_state = rng_state(rng.env);
    ck.params = L.snapshot();
    return ck;
  };

  record_eval(0);
  for (std::size_t k = 1; k <= total; ++k) {
    IterationLog row;
    row.iteration = k;
    std::string phase = kPhaseRollout;
    try {
      agent::RolloutBatch batch = agent::collect_rollouts(L.env, L.policy, L.pi, cfg.steps_per_iter, rng.env);
      row.phases.push_back(kPhaseRollout);
      row.env_steps = batch.size();
      row.episodes = batch.episode_returns.size();
      row.rollout_return = metrics::mean(batch.episode_returns);

      phase = kPhaseTrpo;
      batch.rewards = L.rewards(batch.states, batch.applied);
      row.mean_reward = metrics::mean(batch.rewards);
      agent::estimate_advantages(batch, L.value, cfg.trpo);
      row.trpo = agent::trpo_update(L.policy, L.pi, L.value, batch, cfg.trpo, rng.value);
      row.phases.push_back(kPhaseTrpo);

      if (L.encoded) {
        phase = kPhaseRepr;
        const repr::Transitions data{batch.states, batch.applied, batch.next_states};
        row.repr = repr::repr_update(L.encoders, L.enc, L.repr_opt, data, cfg.repr, rng.corruption, rng.noise).mean;
        row.phases.push_back(kPhaseRepr);
      }

      phase = kPhaseGail;
      // B = ceil(N / batch) discriminator steps over a shuffled D_k.
      ParamSet gp = L.gail_params();
      const std::size_t n = batch.size();
      const std::size_t steps = (n + cfg.gail_batch - 1) / cfg.gail_batch;
      const auto order = steps > 1 ? permutation(rng.mixup, n) : std::vector<std::size_t>{};
      row.gail = {};
      for (std::size_t b = 0; b < steps; ++b) {
        Tensor s = batch.states, a = batch.applied;
        if (steps > 1) {
          const std::size_t lo = b * cfg.gail_batch, hi = std::min(n, lo + cfg.gail_batch);
          const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                             order.begin() + static_cast<std::ptrdiff_t>(hi));
          s = batch.states.gather_rows(idx);
          a = batch.applied.gather_rows(idx);
        }
        const auto st = ail::gail_update(L.disc, L.features, gp, L.gail_opt, s, a, expert, gcfg, rng.mixup);
        row.gail.loss += st.loss / static_cast<double>(steps);
        row.gail.mean_d_agent += st.mean_d_agent / static_cast<double>(steps);
        row.gail.mean_d_expert += st.mean_d_expert / static_cast<double>(steps);
      }
      L.store_gail_params(gp);
      row.phases.push_back(kPhaseGail);

      phase = "eval";
      if (eval_due(cfg, k, total)) row.eval = record_eval(k);
    } catch (...) {
      if (opt.write_files) log_file.flush();
      detail::rethrow_with_context(k, phase);
    }

    const std::string line = csv_row(row, mode);
    res.csv += line + "\n";
    if (opt.write_files) {
      log_file << line << "\n" << std::flush;
      if (cfg.checkpoint_every > 0 && k % cfg.checkpoint_every == 0) {
        write_atomic(dir / ("iter_" + std::to_string(k) + ".ckpt"), serialize_checkpoint(make_checkpoint(k)));
      }
    }
    if (opt.on_iteration) opt.on_iteration(row);
    res.iterations.push_back(std::move(row));
  }

  res.final_return = final_return(res.evals, total, cfg.final_window);
  res.checkpoint = make_checkpoint(total);
  res.checkpoint_hash = checkpoint_hash(res.checkpoint);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (opt.write_files) {
    write_atomic(dir / "final.ckpt", serialize_checkpoint(res.checkpoint));
    nlohmann::ordered_json m;
    m["config_hash"] = res.config_hash;
    m["config"] = config::canonical(cfg);
    m["algorithm"] = std::string(config::algorithm_name(cfg.algo));
    m["env"] = cfg.env;
    m["seed"] = cfg.seed;
    m["iterations"] = total;
    m["log_hash"] = hex64(fnv1a64(res.csv));
    m["checkpoint_hash"] = res.checkpoint_hash;
    m["wall_seconds"] = res.wall_seconds;
    m["final_return"] = res.final_return;
    const auto& last = res.evals.back();
    m["final_eval"] = {{"iteration", last.iteration}, {"mean", last.mean}, {"stderr", last.stderr_},
                       {"iqm", last.iqm},             {"returns", last.returns}};
    if (config::uses_confidence(cfg.algo)) {
      nlohmann::ordered_json c{{"beta", res.confidence.beta},
                               {"epsilon", res.confidence.epsilon},
                               {"final_risk", res.confidence.final_risk},
                               {"source_auc", res.confidence.auc}};
      if (res.confidence.split) {
        const auto& g = *res.confidence.split;
        c["gmm"] = {{"optimal", g.optimal.size()}, {"non_optimal", g.non_optimal.size()},
                    {"means", {g.mean[0], g.mean[1]}}, {"fallback", g.fallback}};
      }
      m["confidence"] = c;
    }
    write_atomic(dir / "manifest.json", m.dump(2) + "\n");
  }
  return res;
}

// --------------------------------------------------------------- commands

struct DemoRequest {
  std::string env = "PointMass2D";
  std::size_t n = 100;
  std::optional<double> psi;  // absent: expert-only
  std::size_t non_experts = 4;
  std::uint64_t seed = 0;
  bool iid = true;
  std::string out;
};

inline envs::DemonstrationSet generate_demos_cmd(const DemoRequest& req) {
  ExperimentConfig cfg;
  cfg.env = req.env;
  cfg.n_expert = req.n;
  cfg.optimality = req.psi.value_or(1.0);
  cfg.non_experts = req.non_experts;
  cfg.demo_iid = req.iid;
  if (req.n == 0) throw ConfigError("demonstration count must be positive");
  if (req.psi && !(*req.psi > 0.0 && *req.psi <= 1.0)) throw ConfigError("optimality must lie in (0, 1]");
  Streams rng(req.seed);
  envs::DemonstrationSet d = make_demonstrations(cfg, rng.demos);
  d.seed = req.seed;
  if (!req.out.empty()) {
    const std::filesystem::path p(req.out);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    write_atomic(p, envs::write_demonstrations(d));
  }
  return d;
}

struct BenchRequest {
  std::string env = "NoisyLinear5";
  std::vector<repr::Corruption> methods{repr::kAllCorruptions.begin(), repr::kAllCorruptions.end()};
  std::vector<double> rates{0.3};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t samples = 1000;
  std::size_t batch = 50;
  metrics::LofConfig lof;
  std::string out;  // corruption_diag.csv path; empty skips writing
};

struct BenchRow {
  repr::Corruption method;
  double rate;
  double variance;
  double lof_percent;
  double threshold;
  std::uint64_t seed;
};

// Observed states: the first `samples` states of expert rollouts.
inline Tensor observed_states(const envs::EnvSpec& env, std::size_t samples, Rng& rng) {
  std::vector<double> rows;
  std::size_t n = 0;
  const auto expert = envs::expert_fn(env);
  while (n < samples) {
    for (const auto& t : envs::rollout(env, expert, rng).steps) {
      if (n == samples) break;
      rows.insert(rows.end(), t.s.begin(), t.s.end());
      ++n;
    }
  }
  return Tensor(samples, env.state_dim, std::move(rows));
}

inline const char* kBenchHeader = "method,c,variance,lof_outlier_percent,seed";

inline std::vector<BenchRow> corruption_bench_cmd(const BenchRequest& req) {
  const auto env = envs::make_env(req.env);
  if (req.samples <= req.lof.k) throw ConfigError("bench needs more samples than LOF neighbors");
  std::vector<BenchRow> rows;
  for (std::uint64_t seed : req.seeds) {
    Rng srng = child_stream(seed, "bench-states");
    const Tensor states = observed_states(env, req.samples, srng);
    for (repr::Corruption m : req.methods) {
      for (double c : req.rates) {
        Rng crng = child_stream(seed, "corruption");
        const auto d = metrics::diagnose_corruption(states, m, c, req.batch, crng, req.lof);
        rows.push_back({m, c, d.variance, d.lof_percent, req.lof.threshold, seed});
      }
    }
  }
  if (!req.out.empty()) {
    std::string text = std::string(kBenchHeader) + "\n";
    for (const auto& r : rows) {
      text += std::string(repr::corruption_name(r.method)) + "," + envs::format_double(r.rate) + "," +
              envs::format_double(r.variance) + "," + envs::format_double(r.lof_percent) + "," +
              std::to_string(r.seed) + "\n";
    }
    const std::filesystem::path p(req.out);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    write_atomic(p, text);
  }
  return rows;
}

// Rebuilds the policy from a checkpoint. The config must be the one the
// checkpoint was trained with (matched by hash).
inline metrics::EvalReport eval_checkpoint(const Checkpoint& ck, const ExperimentConfig& cfg, std::size_t episodes,
                                           std::uint64_t seed) {
  if (ck.meta.config_hash != config::config_hash(cfg)) {
    throw ConfigError("checkpoint was written by config " + ck.meta.config_hash + ", not " +
                      config::config_hash(cfg));
  }
  const auto env = envs::make_env(cfg.env);
  agent::PolicySpec ps = cfg.policy;
  ps.state_dim = env.state_dim;
  ps.action_dim = env.action_dim;
  ps.discrete = env.discrete();
  const agent::Policy policy(ps);
  const ParamSet pi = ck.params.extract("pi.");
  Rng rng = child_stream(seed, "eval");
  metrics::EvalReport r = metrics::eval_policy(policy, pi, env, episodes, rng);
  r.iteration = ck.meta.iteration;
  r.seed = seed;
  return r;
}

// `config.cfg` next to the checkpoint unless a config path is given.
inline metrics::EvalReport eval_cmd(const std::string& checkpoint_path, std::size_t episodes, std::uint64_t seed,
                                    const std::string& config_path = "") {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const std::filesystem::path cp = config_path.empty()
                                       ? std::filesystem::path(checkpoint_path).parent_path() / "config.cfg"
                                       : std::filesystem::path(config_path);
  ExperimentConfig cfg = config::load(cp.string());
  // The identity hash skips run.out, so the stored config matches as is.
  return eval_checkpoint(ck, cfg, episodes, seed);
}

}  // namespace sail::harness
