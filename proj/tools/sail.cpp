// Command-line front end: train, eval, demo-gen and corrupt-bench.
//
// Exit codes: 0 success, 2 configuration error (including bad flags),
// 3 numeric failure, 1 anything else. SAIL_LOG_LEVEL selects the log level
// (trace, debug, info, warn, error, off; default info).

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "sail/harness.hpp"

namespace {

using namespace sail;

void setup_logging() {
  const char* level = std::getenv("SAIL_LOG_LEVEL");
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
  if (level == nullptr || *level == '\0') {
    spdlog::set_level(spdlog::level::info);
    return;
  }
  const auto parsed = spdlog::level::from_str(level);
  // from_str maps unknown names to off; only "off" itself should do that
  if (parsed == spdlog::level::off && std::string(level) != "off") {
    throw ConfigError("SAIL_LOG_LEVEL must be one of trace, debug, info, warn, error, off");
  }
  spdlog::set_level(parsed);
}

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> env, algo, out;
  std::optional<std::size_t> n_expert, iterations;
  std::optional<double> optimality;
  std::vector<std::string> overrides;
};

int train(const TrainArgs& a) {
  config::ExperimentConfig cfg = a.config.empty() ? config::ExperimentConfig{} : config::load(a.config);
  if (a.env) cfg.env = *a.env;
  if (a.algo) cfg.algo = config::parse_algorithm(*a.algo);
  if (a.seed) cfg.seed = *a.seed;
  if (a.n_expert) cfg.n_expert = *a.n_expert;
  if (a.optimality) cfg.optimality = *a.optimality;
  if (a.out) cfg.out = *a.out;
  if (a.iterations) cfg.iterations = *a.iterations;
  for (const auto& kv : a.overrides) config::apply_override(cfg, kv);

  spdlog::info("train {} on {} seed {} for {} iterations -> {}", config::algorithm_name(cfg.algo), cfg.env, cfg.seed,
               cfg.resolved_iterations(), cfg.out);
  harness::RunOptions opt;
  opt.on_iteration = [](const harness::IterationLog& r) {
    spdlog::debug("it {} return {:.2f} kl {:.4f} D(agent) {:.3f} D(expert) {:.3f}", r.iteration, r.rollout_return,
                  r.trpo.kl, r.gail.mean_d_agent, r.gail.mean_d_expert);
    if (r.eval) spdlog::info("it {} eval {:.2f} +- {:.2f}", r.iteration, r.eval->mean, r.eval->stderr_);
  };
  const harness::RunResult res = harness::run_training(cfg, opt);
  spdlog::info("done in {:.1f}s, config {} checkpoint {}", res.wall_seconds, res.config_hash, res.checkpoint_hash);
  std::cout << "final_return " << envs::format_double(res.final_return) << "\n";
  return 0;
}

int eval(const std::vector<std::string>& checkpoints, std::size_t episodes, std::uint64_t seed,
         const std::string& config_path) {
  std::vector<double> means;
  std::cout << harness::kEvalHeader << ",checkpoint\n";
  for (const auto& path : checkpoints) {
    const metrics::EvalReport r = harness::eval_cmd(path, episodes, seed, config_path);
    std::cout << harness::eval_row(r) << "," << path << "\n";
    means.push_back(r.mean);
  }
  // Runs of several seeds report mean and standard error across runs.
  if (means.size() > 1) {
    std::cout << "aggregate mean " << envs::format_double(metrics::mean(means)) << " stderr "
              << envs::format_double(metrics::standard_error(means)) << " runs " << means.size() << "\n";
  }
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Self-supervised adversarial imitation learning at desk scale"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Run one training job");
  tr->add_option("--config", ta.config, "Config file ([section] key = value)")->check(CLI::ExistingFile);
  tr->add_option("--seed", ta.seed, "Master seed");
  tr->add_option("--env", ta.env, "PointMass2D, Reacher1D, NoisyLinear5 or GridWorldRam");
  tr->add_option("--algo", ta.algo, "gail, ours, ours+2iwil or ours+2iwil+mm");
  tr->add_option("--n-expert", ta.n_expert, "Number of demonstration pairs");
  tr->add_option("--optimality", ta.optimality, "Share of optimal pairs (psi); 1 for expert-only");
  tr->add_option("--iterations", ta.iterations, "Outer iterations");
  tr->add_option("--out", ta.out, "Output directory");
  tr->add_option("--set", ta.overrides, "Override any key, e.g. --set trpo.max_kl=0.02");

  std::vector<std::string> ckpts;
  std::size_t episodes = 10;
  std::uint64_t eval_seed = 0;
  std::string eval_config;
  auto* ev = app.add_subcommand("eval", "Evaluate checkpoints with the true reward");
  ev->add_option("checkpoints", ckpts, "Checkpoint files (several: aggregate over runs)")->required();
  ev->add_option("--episodes", episodes, "Episodes per checkpoint");
  ev->add_option("--seed", eval_seed, "Evaluation seed");
  ev->add_option("--config", eval_config, "Config file (default: config.cfg next to the checkpoint)");

  harness::DemoRequest dr;
  double psi = 1.0;
  bool trajectory = false;
  auto* dg = app.add_subcommand("demo-gen", "Write a demonstration file");
  dg->add_option("--env", dr.env, "Environment");
  dg->add_option("--n-expert", dr.n, "Number of pairs");
  dg->add_option("--optimality", psi, "Share of optimal pairs (psi); 1 for expert-only");
  dg->add_option("--non-experts", dr.non_experts, "Number of suboptimal sources");
  dg->add_option("--seed", dr.seed, "Seed");
  dg->add_flag("--trajectory", trajectory, "Take consecutive pairs of whole episodes instead of i.i.d. draws");
  dg->add_option("--out", dr.out, "Output CSV")->required();

  harness::BenchRequest br;
  std::string methods = "swapping,random,mean,each-dim", rates = "0.3", seeds = "1,2,3";
  auto* cb = app.add_subcommand("corrupt-bench", "Variance and LOF outlier share of corrupted states");
  cb->add_option("--env", br.env, "Environment");
  cb->add_option("--methods", methods, "Comma-separated corruption methods");
  cb->add_option("--rates", rates, "Comma-separated corruption rates");
  cb->add_option("--seeds", seeds, "Comma-separated seeds");
  cb->add_option("--samples", br.samples, "Observed and corrupted states per seed");
  cb->add_option("--batch", br.batch, "Corruption minibatch size");
  cb->add_option("--neighbors", br.lof.k, "LOF neighbors");
  cb->add_option("--threshold", br.lof.threshold, "LOF score above which a point is an outlier");
  cb->add_option("--out", br.out, "Output CSV (default: stdout only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  setup_logging();
  if (*tr) return train(ta);
  if (*ev) return eval(ckpts, episodes, eval_seed, eval_config);
  if (*dg) {
    if (psi < 1.0) dr.psi = psi;
    dr.iid = !trajectory;
    const auto d = harness::generate_demos_cmd(dr);
    spdlog::info("wrote {} pairs ({} optimal) to {}", d.size(), d.count_source(envs::kOptimal), dr.out);
    return 0;
  }
  br.methods.clear();
  for (const auto& m : split_list(methods)) br.methods.push_back(repr::parse_corruption(m));
  br.rates.clear();
  for (const auto& r : split_list(rates)) br.rates.push_back(config::detail::to_double("--rates", r));
  br.seeds.clear();
  for (const auto& s : split_list(seeds)) br.seeds.push_back(config::detail::to_u64("--seeds", s));
  const auto rows = harness::corruption_bench_cmd(br);
  std::cout << harness::kBenchHeader << "\n";
  for (const auto& r : rows) {
    std::cout << repr::corruption_name(r.method) << "," << envs::format_double(r.rate) << ","
              << envs::format_double(r.variance) << "," << envs::format_double(r.lof_percent) << "," << r.seed
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const sail::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 2;
  } catch (const sail::NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
