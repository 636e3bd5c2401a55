#include <gtest/gtest.h>

#include <filesystem>
#include <json.hpp>

#include "sail/harness.hpp"

namespace sail::harness {
namespace {

namespace fs = std::filesystem;
using config::ExperimentConfig;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sail_test_" + name);
  fs::remove_all(p);
  return p;
}

// A few hundred steps per iteration and small nets: seconds per run.
ExperimentConfig tiny(Algorithm algo, std::uint64_t seed = 1) {
  ExperimentConfig c;
  c.algo = algo;
  c.seed = seed;
  for (const char* kv : {"run.iterations=3", "run.steps_per_iter=300", "eval.episodes=2", "eval.every=2",
                         "policy.hidden=16", "trpo.value_hidden=16", "trpo.value_epochs=1", "gail.hidden=16",
                         "repr.state_hidden=16", "repr.forward_hidden=16", "repr.batch=64", "iwil.steps=50"}) {
    config::apply_override(c, kv);
  }
  if (config::uses_confidence(algo)) c.optimality = 0.25;
  return c;
}

Tensor testing_states(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& row) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(row);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!row.empty() && row.back() == ',') out.emplace_back();
  return out;
}

// ------------------------------------------------------------------- config

TEST(Config, DefaultsFollowTheHyperparameterTables) {
  const ExperimentConfig c;
  EXPECT_EQ(config::get(c, "trpo.gamma"), "0.995");
  EXPECT_EQ(config::get(c, "trpo.gae_lambda"), "0.97");
  EXPECT_EQ(c.steps_per_iter, 5000u);
  EXPECT_EQ(c.trpo.batch_steps, 5000u);
  EXPECT_EQ(config::get(c, "repr.lr"), "0.001");
  EXPECT_DOUBLE_EQ(c.trpo.value_lr, 3e-4);
  EXPECT_EQ(config::get(c, "repr.batch"), "256");
  EXPECT_EQ(c.gail_batch, 5000u);
  EXPECT_EQ(config::get(c, "repr.tau"), "0.1");
  EXPECT_EQ(config::get(c, "repr.lambda_f"), "1");
  EXPECT_EQ(config::get(c, "repr.lambda_s"), "100");
  EXPECT_EQ(config::get(c, "repr.lambda_a"), "1");
  EXPECT_EQ(config::get(c, "gail.mixup_alpha"), "4");
  EXPECT_EQ(config::get(c, "gmm.threshold"), "0.5");
  EXPECT_EQ(c.non_experts, 4u);
  EXPECT_DOUBLE_EQ(c.label_ratio, 0.4);
  EXPECT_EQ(c.n_expert, 100u);
}

TEST(Config, CanonicalTextRoundTrips) {
  ExperimentConfig c = tiny(Algorithm::kOurs2iwilMixup, 9);
  config::apply_override(c, "repr.method=each-dim");
  config::apply_override(c, "policy.hidden=8,4");
  const std::string text = config::canonical(c);
  const ExperimentConfig back = config::parse(text);
  EXPECT_EQ(config::canonical(back), text);
  EXPECT_EQ(config::config_hash(back), config::config_hash(c));
  EXPECT_EQ(back.policy.hidden, (std::vector<std::size_t>{8, 4}));
}

TEST(Config, SectionsDottedKeysAndComments) {
  const ExperimentConfig c = config::parse(
      "# comment\n[run]\nseed = 7   # trailing\nenv = Reacher1D\n\n[trpo]\nmax_kl = 0.02\neval.episodes = 3\n");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.env, "Reacher1D");
  EXPECT_DOUBLE_EQ(c.trpo.max_kl, 0.02);
  EXPECT_EQ(c.eval_episodes, 3u);
}

TEST(Config, ErrorsNameTheProblem) {
  EXPECT_THROW(config::parse("[run]\nnot_a_key = 1\n"), ConfigError);
  try {
    config::parse("[run]\nseed = 1\nseed = x\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(config::parse("seed = 1\n"), ConfigError);
  ExperimentConfig c;
  EXPECT_THROW(config::apply_override(c, "run.seed"), ConfigError);
  EXPECT_THROW(config::apply_override(c, "run.algo=bc"), ConfigError);
  EXPECT_THROW(config::load("/nonexistent/file.cfg"), ConfigError);
}

TEST(Config, HashIgnoresOutputDirectoryOnly) {
  ExperimentConfig a, b;
  b.out = "elsewhere";
  EXPECT_EQ(config::config_hash(a), config::config_hash(b));
  b.seed = 1;
  EXPECT_NE(config::config_hash(a), config::config_hash(b));
}

TEST(Config, ValidationRejectsInconsistentRuns) {
  ExperimentConfig c;
  c.algo = Algorithm::kOurs2iwil;  // needs imperfect demonstrations
  EXPECT_THROW(c.validate(), ConfigError);
  c.optimality = 0.25;
  EXPECT_NO_THROW(c.validate());
  c.env = "Walker";
  EXPECT_THROW(c.validate(), ConfigError);
}

// ------------------------------------------------------------- final return

TEST(FinalReturn, AveragesTheLastWindow) {
  std::vector<metrics::EvalReport> ev;
  for (std::size_t k = 0; k <= 100; k += 10) {
    ev.push_back(metrics::summarize({static_cast<double>(k)}, k));
  }
  EXPECT_DOUBLE_EQ(final_return(ev, 100, 0.1), 100.0);   // iterations 91..100
  EXPECT_DOUBLE_EQ(final_return(ev, 100, 0.2), 95.0);    // 81..100 holds 90 and 100
  EXPECT_DOUBLE_EQ(final_return(ev, 100, 0.001), 100.0);  // at least the last iteration
  EXPECT_DOUBLE_EQ(final_return({metrics::summarize({-3.0})}, 0, 0.1), -3.0);
  EXPECT_THROW(final_return({}, 10, 0.1), ShapeError);
}

// ----------------------------------------------------------------- training

TEST(Training, ZeroIterationsLogsHeaderAndInitialEval) {
  ExperimentConfig c = tiny(Algorithm::kOurs);
  config::apply_override(c, "run.iterations=0");
  RunOptions o;
  o.write_files = false;
  const RunResult r = run_training(c, o);
  EXPECT_EQ(r.csv, std::string(kLogHeader) + "\n");
  ASSERT_EQ(r.evals.size(), 1u);
  EXPECT_EQ(r.evals[0].iteration, 0u);
  EXPECT_DOUBLE_EQ(r.final_return, r.evals[0].mean);
  EXPECT_EQ(r.checkpoint.meta.iteration, 0u);
}

TEST(Config, IterationsDefaultPerEnvironment) {
  ExperimentConfig c;
  EXPECT_EQ(config::get(c, "run.iterations"), "auto");
  EXPECT_EQ(c.resolved_iterations(), config::default_iterations("PointMass2D"));
  config::apply_override(c, "run.iterations=0");
  EXPECT_EQ(c.resolved_iterations(), 0u);
  config::apply_override(c, "run.iterations=auto");
  EXPECT_FALSE(c.iterations.has_value());
}

TEST(Training, RowsFollowTheHeaderAndPhaseOrder) {
  RunOptions o;
  o.write_files = false;
  const RunResult ours = run_training(tiny(Algorithm::kOurs), o);
  const RunResult gail = run_training(tiny(Algorithm::kGail), o);
  const auto header = split(kLogHeader);
  for (const RunResult* r : {&ours, &gail}) {
    const auto ls = lines(r->csv);
    ASSERT_EQ(ls.size(), 4u);
    EXPECT_EQ(ls[0], kLogHeader);
    for (std::size_t i = 1; i < ls.size(); ++i) {
      const auto cells = split(ls[i]);
      ASSERT_EQ(cells.size(), header.size()) << ls[i];
      EXPECT_EQ(cells[0], std::to_string(i));
    }
  }
  for (const auto& row : ours.iterations) {
    EXPECT_EQ(row.phases, (std::vector<std::string>{"rollout", "trpo", "repr", "gail"}));
    ASSERT_TRUE(row.repr.has_value());
    EXPECT_TRUE(std::isfinite(row.repr->total));
    EXPECT_LE(row.trpo.kl, 0.01 + 1e-12);
  }
  for (const auto& row : gail.iterations) {
    EXPECT_EQ(row.phases, (std::vector<std::string>{"rollout", "trpo", "gail"}));
    EXPECT_FALSE(row.repr.has_value());
  }
  // the gail arm leaves the representation columns empty
  const auto cells = split(lines(gail.csv)[1]);
  for (const char* col : {"L_F", "L_SC", "L_AC", "L_total"}) {
    const auto at = std::find(header.begin(), header.end(), col) - header.begin();
    EXPECT_TRUE(cells[static_cast<std::size_t>(at)].empty()) << col;
  }
  // evaluations at 0, 2 and the last iteration
  ASSERT_EQ(ours.evals.size(), 3u);
  EXPECT_EQ(ours.evals[1].iteration, 2u);
  EXPECT_EQ(ours.evals[2].iteration, 3u);
  EXPECT_EQ(ours.checkpoint.params.extract("enc.").size() > 0, true);
  EXPECT_EQ(gail.checkpoint.params.extract("enc.").size(), 0u);
}

TEST(Training, GailArmScoresRawPairs) {
  // Reference path: a hand-written forward pass of the discriminator over
  // the concatenation (s, a), with no encoder in between.
  const ExperimentConfig c = tiny(Algorithm::kGail);
  Rng rng(3);
  const Learner L(c, rng);
  ASSERT_FALSE(L.encoded);
  EXPECT_EQ(L.disc.input_width(), 6u);
  const Tensor s = testing_states(rng, 7, 4), a = testing_states(rng, 7, 2);
  const auto got = L.rewards(s, a);
  for (std::size_t i = 0; i < 7; ++i) {
    std::vector<double> h{s(i, 0), s(i, 1), s(i, 2), s(i, 3), a(i, 0), a(i, 1)};
    for (std::size_t layer = 0;; ++layer) {
      const std::string w = "d.l" + std::to_string(layer) + ".weight";
      if (!L.disc_params.contains(w)) break;
      const Tensor& W = L.disc_params.at(w);
      const Tensor& b = L.disc_params.at("d.l" + std::to_string(layer) + ".bias");
      const bool last = !L.disc_params.contains("d.l" + std::to_string(layer + 1) + ".weight");
      std::vector<double> next(W.cols());
      for (std::size_t o = 0; o < W.cols(); ++o) {
        double z = b(0, o);
        for (std::size_t k = 0; k < W.rows(); ++k) z += h[k] * W(k, o);
        next[o] = last ? z : std::tanh(z);
      }
      h = next;
    }
    const double l = std::clamp(h[0], -30.0, 30.0);
    EXPECT_NEAR(got[i], std::log1p(std::exp(-l)), 1e-12);
  }
}

TEST(Training, RepeatedRunsAreByteIdentical) {
  RunOptions o;
  o.write_files = false;
  for (Algorithm a : {Algorithm::kGail, Algorithm::kOurs2iwilMixup}) {
    const RunResult x = run_training(tiny(a, 5), o), y = run_training(tiny(a, 5), o);
    EXPECT_EQ(x.csv, y.csv);
    EXPECT_EQ(x.checkpoint_hash, y.checkpoint_hash);
    const RunResult z = run_training(tiny(a, 6), o);
    EXPECT_NE(x.checkpoint_hash, z.checkpoint_hash);
  }
}

TEST(Training, ImperfectDemosTrainTheConfidenceClassifier) {
  RunOptions o;
  o.write_files = false;
  const RunResult r = run_training(tiny(Algorithm::kOurs2iwilMixup), o);
  // 100 pairs, 40 labeled
  EXPECT_DOUBLE_EQ(r.confidence.beta, 60.0 / 100.0);
  EXPECT_GT(r.confidence.epsilon, 0.0);
  EXPECT_LT(r.confidence.epsilon, 1.0);
  ASSERT_TRUE(r.confidence.split.has_value());
  EXPECT_EQ(r.confidence.split->optimal.size() + r.confidence.split->non_optimal.size(), 100u);
  for (const auto& row : r.iterations) EXPECT_TRUE(std::isfinite(row.gail.loss));
}

TEST(Training, WritesArtifactsAndEvaluatesTheCheckpoint) {
  const fs::path dir = scratch("artifacts");
  ExperimentConfig c = tiny(Algorithm::kOurs, 3);
  c.out = dir.string();
  c.checkpoint_every = 2;
  const RunResult r = run_training(c);
  for (const char* f : {"config.cfg", "log.csv", "metrics.csv", "final.ckpt", "manifest.json", "iter_2.ckpt"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_FALSE(fs::exists(dir / "final.ckpt.tmp"));
  EXPECT_EQ(read_file(dir / "log.csv"), r.csv);
  EXPECT_EQ(lines(read_file(dir / "metrics.csv")).size(), 1 + r.evals.size());

  const auto m = nlohmann::json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(m["config_hash"], r.config_hash);
  EXPECT_EQ(m["checkpoint_hash"], r.checkpoint_hash);
  EXPECT_EQ(m["log_hash"], hex64(fnv1a64(r.csv)));
  EXPECT_EQ(m["iterations"], 3);

  const Checkpoint ck = load_checkpoint((dir / "final.ckpt").string());
  EXPECT_EQ(checkpoint_hash(ck), r.checkpoint_hash);
  const auto a = eval_cmd((dir / "final.ckpt").string(), 3, 11);
  const auto b = eval_checkpoint(r.checkpoint, c, 3, 11);
  EXPECT_EQ(a.returns, b.returns);
  EXPECT_EQ(a.iteration, 3u);

  ExperimentConfig other = c;
  other.seed = 4;
  EXPECT_THROW(eval_checkpoint(ck, other, 3, 11), ConfigError);
  fs::remove_all(dir);
}

TEST(Training, MissingDemonstrationFileIsAConfigError) {
  ExperimentConfig c = tiny(Algorithm::kGail);
  c.demos = "/nonexistent/demos.csv";
  RunOptions o;
  o.write_files = false;
  EXPECT_THROW(run_training(c, o), ConfigError);
}

TEST(Training, RethrowKeepsTheErrorType) {
  auto wrap = [](auto make) {
    try {
      try {
        make();
      } catch (...) {
        detail::rethrow_with_context(7, "repr");
      }
    } catch (const NumericError& e) {
      return std::string("numeric:") + e.what();
    } catch (const ConfigError& e) {
      return std::string("config:") + e.what();
    }
    return std::string();
  };
  EXPECT_EQ(wrap([] { throw NumericError("nan"); }), "numeric:iteration 7 (repr): nan");
  EXPECT_EQ(wrap([] { throw ConfigError("bad"); }), "config:iteration 7 (repr): bad");
}

// ----------------------------------------------------------------- commands

TEST(Commands, DemoGenerationRoundTrips) {
  const fs::path dir = scratch("demos");
  DemoRequest req;
  req.n = 400;
  req.psi = 0.25;
  req.seed = 2;
  req.out = (dir / "d.csv").string();
  const auto d = generate_demos_cmd(req);
  EXPECT_EQ(d.size(), 400u);
  ASSERT_TRUE(d.mixture.has_value());
  EXPECT_DOUBLE_EQ(d.mixture->psi, 0.25);
  const double share = static_cast<double>(d.count_source(envs::kOptimal)) / 400.0;
  EXPECT_NEAR(share, 0.25, 0.07);
  const auto back = envs::load_demonstrations(req.out, envs::make_env("PointMass2D"));
  EXPECT_EQ(back.states, d.states);
  EXPECT_EQ(back.actions, d.actions);
  EXPECT_EQ(back.sources, d.sources);
  EXPECT_EQ(generate_demos_cmd(req).states, d.states);

  req.psi = 0.0;
  EXPECT_THROW(generate_demos_cmd(req), ConfigError);
  fs::remove_all(dir);
}

TEST(Commands, TrainingReadsADemonstrationFile) {
  const fs::path dir = scratch("demofile");
  DemoRequest req;
  req.out = (dir / "d.csv").string();
  req.seed = 1;
  generate_demos_cmd(req);
  ExperimentConfig c = tiny(Algorithm::kGail);
  c.demos = req.out;
  c.iterations = 1;
  RunOptions o;
  o.write_files = false;
  EXPECT_NO_THROW(run_training(c, o));
  fs::remove_all(dir);
}

TEST(Commands, CorruptionBenchWritesOneRowPerMethodAndSeed) {
  const fs::path dir = scratch("bench");
  BenchRequest req;
  req.samples = 200;
  req.out = (dir / "corruption_diag.csv").string();
  const auto rows = corruption_bench_cmd(req);
  EXPECT_EQ(rows.size(), 12u);
  const auto ls = lines(read_file(req.out));
  ASSERT_EQ(ls.size(), 13u);
  EXPECT_EQ(ls[0], kBenchHeader);
  for (const auto& r : rows) {
    EXPECT_GE(r.lof_percent, 0.0);
    EXPECT_LE(r.lof_percent, 100.0);
    EXPECT_GT(r.variance, 0.0);
  }
  EXPECT_EQ(corruption_bench_cmd(req).front().variance, rows.front().variance);
  req.samples = 5;
  EXPECT_THROW(corruption_bench_cmd(req), ConfigError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace sail::harness
