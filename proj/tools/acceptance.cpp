// Acceptance report: one PASS/FAIL line per criterion, each with the
// measured numbers behind it. The exit status is 0 whenever the report
// completes, so a red criterion is visible in the output rather than hidden
// behind a crashed run; it is 1 only if a check itself throws.

#include <CLI11.hpp>
#include <chrono>
#include <cstring>
#include <iostream>
#include <set>

#include "gradcheck.hpp"
#include "sail/harness.hpp"

namespace {

using namespace sail;
using testing::check_gradients;
using testing::random_tensor;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream ss;
  ss.precision(digits);
  ss << v;
  return ss.str();
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

// --------------------------------------------------------------- criterion 1

// Worst relative error of `build` over 20 seeds; `make` draws parameters and
// constants for one seed.
template <class Make, class Build>
double gradient_suite(Make make, Build build, std::size_t stride = 1) {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto c = make(rng);
    auto loss = [&](const ParamSet& q) {
      diff::Tape t;
      return build(t, bind(t, q), c).value().item();
    };
    diff::Tape t;
    const Bound b = bind(t, c.params);
    t.backward(build(t, b, c));
    worst = std::max(worst, check_gradients(loss, c.params, gradients(t, b), 1e-5, stride).max_rel_error);
  }
  return worst;
}

struct DiscCase {
  ail::Discriminator d{3, {6, 6}};
  ParamSet params;
  Tensor za, ze, zm, w, ybar;
};

DiscCase disc_case(Rng& rng) {
  DiscCase c;
  c.params = c.d.init(rng);
  c.za = random_tensor(rng, 7, 3);
  c.ze = random_tensor(rng, 5, 3);
  c.zm = random_tensor(rng, 5, 3);
  c.w = Tensor(5, 1);
  c.ybar = Tensor(5, 1);
  for (std::size_t i = 0; i < 5; ++i) {
    c.w[i] = uniform(rng, 0.0, 2.5);
    c.ybar[i] = uniform(rng);
  }
  return c;
}

struct ViewCase {
  ParamSet params;
};

ViewCase view_case(Rng& rng) {
  ViewCase c;
  c.params.insert("a", random_tensor(rng, 6, 4));
  c.params.insert("b", random_tensor(rng, 6, 4));
  c.params.insert("c", random_tensor(rng, 6, 4));
  return c;
}

struct RiskCase {
  ail::ConfidenceClassifier clf{3, ail::ClassifierConfig{{6, 6}}};
  ParamSet params;
  Tensor xl, xu, y;
};

RiskCase risk_case(Rng& rng) {
  RiskCase c;
  c.params = c.clf.init(rng);
  c.xl = random_tensor(rng, 6, 3);
  c.xu = random_tensor(rng, 9, 3);
  c.y = Tensor(6, 1);
  for (double& v : c.y.values()) v = uniform(rng) < 0.5 ? 1.0 : 0.0;
  return c;
}

repr::ReprConfig small_repr() {
  repr::ReprConfig cfg;
  cfg.state_repr = 6;
  cfg.state_hidden = {10};
  cfg.conv_channels = {4, 6};
  cfg.forward_hidden = 32;
  cfg.noise_dim = 2;
  cfg.batch = 16;
  return cfg;
}

struct TotalCase {
  repr::Encoders enc{3, 2, false, small_repr()};
  ParamSet params;
  repr::Transitions data;
  repr::Views views;
  Tensor noise;
};

TotalCase total_case(Rng& rng) {
  TotalCase c;
  c.params = c.enc.init(rng);
  c.data = {random_tensor(rng, 6, 3), random_tensor(rng, 6, 2), random_tensor(rng, 6, 3)};
  c.views = repr::corrupt_views(c.data, small_repr(), column_mean(c.data.states), column_mean(c.data.actions), true, rng);
  c.noise = c.enc.draw_noise(6, rng);
  return c;
}

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, double>> errs;
  errs.emplace_back("disc", gradient_suite(disc_case, [](diff::Tape& t, const Bound& b, const DiscCase& c) {
                      return ail::disc_loss(c.d.logits(b, t.constant(c.za)), c.d.logits(b, t.constant(c.ze)));
                    }));
  errs.emplace_back("mixup", gradient_suite(disc_case, [](diff::Tape& t, const Bound& b, const DiscCase& c) {
                      return ail::mixup_disc_loss(c.d.logits(b, t.constant(c.za)), c.d.logits(b, t.constant(c.ze)),
                                                  c.w, c.d.logits(b, t.constant(c.zm)), c.ybar);
                    }));
  errs.emplace_back("infonce", gradient_suite(view_case, [](diff::Tape&, const Bound& b, const ViewCase&) {
                      return repr::infonce_loss(b.at("a"), b.at("b"), b.at("c"), 0.1);
                    }));
  errs.emplace_back("mse", gradient_suite(view_case, [](diff::Tape&, const Bound& b, const ViewCase&) {
                      return repr::state_mse_loss(b.at("a"), b.at("b"));
                    }));
  errs.emplace_back("barlow", gradient_suite(view_case, [](diff::Tape&, const Bound& b, const ViewCase&) {
                      return repr::barlow_loss(b.at("a"), b.at("b"));
                    }));
  errs.emplace_back("2iwil", gradient_suite(risk_case, [](diff::Tape& t, const Bound& b, const RiskCase& c) {
                      return ail::twoiwil_risk(c.clf.logits(t, b, c.xl), c.y, c.clf.logits(t, b, c.xu),
                                               ail::class_prior(6, 9));
                    }));
  // every 7th entry keeps the conv stack affordable
  errs.emplace_back("total", gradient_suite(
                                 total_case,
                                 [](diff::Tape& t, const Bound& b, const TotalCase& c) {
                                   return repr::repr_terms(t, b, c.enc, c.data, c.views, c.noise, small_repr()).total;
                                 },
                                 7));
  Outcome o;
  for (const auto& [name, e] : errs) {
    o.pass = o.pass && e <= 1e-4;
    o.detail += name + " " + fmt(e, 2) + "  ";
  }
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < 60.0;
  o.detail += "(max rel err over 20 seeds; " + fmt(secs, 3) + " s)";
  return o;
}

// --------------------------------------------------------------- criterion 2

Outcome criterion2() {
  Outcome o;
  for (std::size_t bs : {2u, 4u, 8u}) {
    const Tensor same(bs, 5, 0.7);
    const double err = std::abs(repr::infonce(same, same, same, 0.1) - std::log(2.0 * static_cast<double>(bs - 1)));
    o.pass = o.pass && err <= 1e-9;
    o.detail += "InfoNCE(BS=" + std::to_string(bs) + ") err " + fmt(err, 2) + "  ";
  }
  const Tensor h{{1, 1, 1}, {-1, 1, -1}, {1, -1, -1}, {-1, -1, 1}};
  const double bt = std::abs(repr::barlow(h, h));
  diff::Tape t;
  const double dl = ail::disc_loss(t.constant(Tensor(5, 1)), t.constant(Tensor(3, 1))).value().item();
  const double r = ail::Discriminator::reward_from_logit(0.0);
  const double ln2 = std::log(2.0);
  o.pass = o.pass && bt <= 1e-9 && std::abs(dl - 2 * ln2) <= 1e-12 && std::abs(r - ln2) <= 1e-12;
  o.detail += "Barlow " + fmt(bt, 2) + "  disc-2ln2 " + fmt(dl - 2 * ln2, 2) + "  reward-ln2 " + fmt(r - ln2, 2);
  return o;
}

// --------------------------------------------------------------- criterion 3

std::vector<double> sorted_column(const Tensor& x, std::size_t c) {
  std::vector<double> v;
  for (std::size_t r = 0; r < x.rows(); ++r) v.push_back(x(r, c));
  std::sort(v.begin(), v.end());
  return v;
}

// Untouched columns bit-equal, swapped columns keep their multiset, q=0 is
// the identity.
bool corruption_case(repr::Corruption m, const Tensor& x, std::size_t q, std::uint64_t seed) {
  Rng probe(seed);
  const auto cols = repr::corruption_columns(x.cols(), q, probe);
  if (cols.size() != q || std::set<std::size_t>(cols.begin(), cols.end()).size() != q) return false;
  Rng rng(seed);
  const Tensor y = repr::corrupt(m, x, q, rng);
  if (!y.same_shape(x)) return false;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    const bool hit = std::find(cols.begin(), cols.end(), c) != cols.end();
    if (!hit) {
      for (std::size_t r = 0; r < x.rows(); ++r)
        if (!bit_equal(y(r, c), x(r, c))) return false;
    } else if (m == repr::Corruption::kSwapping && sorted_column(y, c) != sorted_column(x, c)) {
      return false;
    }
  }
  return q != 0 || y == x;
}

Outcome criterion3() {
  std::size_t cases = 0, failed = 0;
  std::uint64_t seed = 0;
  for (repr::Corruption m : repr::kAllCorruptions)
    for (std::size_t rows = 1; rows <= 8; ++rows)
      for (std::size_t cols = 1; cols <= 8; ++cols)
        for (std::size_t q = 0; q <= cols; ++q) {
          Rng gen(++seed);
          ++cases;
          failed += !corruption_case(m, random_tensor(gen, rows, cols), q, seed);
        }
  Rng gen(99);
  for (int i = 0; i < 100; ++i) {
    const std::size_t rows = 2 + uniform_index(gen, 60), cols = 1 + uniform_index(gen, 20);
    const std::size_t q = repr::corruption_count(uniform(gen, 0.0, 0.99), cols);
    const Tensor x = random_tensor(gen, rows, cols, 3.0);
    for (repr::Corruption m : repr::kAllCorruptions) {
      ++cases;
      failed += !corruption_case(m, x, q, 1000 + static_cast<std::uint64_t>(i));
    }
  }
  // q = floor(c * dim) on a grid, including products that land on integers
  std::size_t q_wrong = 0;
  for (std::size_t dim = 1; dim <= 40; ++dim)
    for (int k = 0; k < 100; ++k) {
      const double c = k / 100.0;
      const auto want = static_cast<std::size_t>(std::floor(static_cast<long double>(k) * dim / 100.0L));
      q_wrong += repr::corruption_count(c, dim) != want;
    }
  Outcome o;
  o.pass = failed == 0 && q_wrong == 0;
  o.detail = std::to_string(cases - failed) + "/" + std::to_string(cases) + " corruption cases hold; q mismatches " +
             std::to_string(q_wrong) + "/4000";
  return o;
}

// --------------------------------------------------------------- criterion 4

// KL(old || new) of diagonal Gaussians, from mean actions and log_std only.
double gaussian_kl(const agent::Policy& pol, const ParamSet& old_p, const ParamSet& new_p, const Tensor& states) {
  Rng unused(0);
  const Tensor& lo = old_p.at("log_std");
  const Tensor& ln = new_p.at("log_std");
  double total = 0.0;
  for (std::size_t i = 0; i < states.rows(); ++i) {
    const envs::State s(states.row_span(i).begin(), states.row_span(i).end());
    const auto mo = pol.act(old_p, s, unused, true), mn = pol.act(new_p, s, unused, true);
    for (std::size_t j = 0; j < mo.size(); ++j) {
      const double vo = std::exp(2 * lo(0, j)), vn = std::exp(2 * ln(0, j));
      total += ln(0, j) - lo(0, j) + (vo + (mo[j] - mn[j]) * (mo[j] - mn[j])) / (2 * vn) - 0.5;
    }
  }
  return total / static_cast<double>(states.rows());
}

Outcome criterion4(std::size_t iterations) {
  Outcome o;
  double worst_cg = 0.0;
  for (int n : {6, 20, 50}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed * 31 + static_cast<std::uint64_t>(n));
      Eigen::MatrixXd m(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = normal(rng);
      const Eigen::MatrixXd a = m * m.transpose() + n * Eigen::MatrixXd::Identity(n, n);
      Eigen::VectorXd b(n);
      for (int i = 0; i < n; ++i) b[i] = normal(rng);
      const Eigen::VectorXd direct = a.ldlt().solve(b);
      const auto r = agent::conjugate_gradient([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; }, b,
                                               static_cast<std::size_t>(2 * n), 1e-12);
      worst_cg = std::max(worst_cg, (r.x - direct).norm() / direct.norm());
    }
  }
  const auto env = envs::make_env("PointMass2D");
  agent::TrpoConfig cfg;
  double worst_kl = 0.0;
  std::size_t accepted = 0, steps = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng init(seed);
    const agent::Policy pol(agent::PolicySpec{env.state_dim, env.action_dim, false});
    ParamSet p = pol.init(init);
    agent::ValueFunction vf(env.state_dim, init);
    Rng rng(seed + 100);
    for (std::size_t it = 0; it < iterations; ++it) {
      agent::RolloutBatch b = agent::collect_rollouts(env, pol, p, 1000, rng);
      b.rewards = b.env_rewards;
      agent::estimate_advantages(b, vf, cfg);
      const ParamSet old = p;
      const auto st = agent::trpo_update(pol, p, vf, b, cfg, rng);
      ++steps;
      if (!st.accepted) continue;
      ++accepted;
      worst_kl = std::max(worst_kl, gaussian_kl(pol, old, p, b.states));
    }
  }
  o.pass = worst_cg <= 1e-6 && worst_kl <= cfg.max_kl;
  o.detail = "CG vs direct worst rel " + fmt(worst_cg, 2) + "; max measured KL " + fmt(worst_kl, 5) + " <= " +
             fmt(cfg.max_kl) + " over " + std::to_string(accepted) + "/" + std::to_string(steps) +
             " accepted steps (3 seeds x " + std::to_string(iterations) + " iterations)";
  return o;
}

// --------------------------------------------------------------- criterion 5

Outcome criterion5(const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  harness::BenchRequest req;
  req.out = out + "/corruption_diag.csv";
  const auto rows = harness::corruption_bench_cmd(req);
  std::map<std::pair<std::uint64_t, repr::Corruption>, harness::BenchRow> by;
  for (const auto& r : rows) by[{r.seed, r.method}] = r;
  int ordered = 0;
  bool variance_ok = true;
  std::string per_seed;
  for (std::uint64_t s : req.seeds) {
    const auto& sw = by.at({s, repr::Corruption::kSwapping});
    const auto& rd = by.at({s, repr::Corruption::kRandom});
    const auto& ed = by.at({s, repr::Corruption::kEachDim});
    ordered += rd.lof_percent > ed.lof_percent && ed.lof_percent > sw.lof_percent;
    variance_ok = variance_ok && sw.variance >= rd.variance;
    per_seed += " seed " + std::to_string(s) + ": LOF% random " + fmt(rd.lof_percent, 3) + " each-dim " +
                fmt(ed.lof_percent, 3) + " swapping " + fmt(sw.lof_percent, 3) + ", var swap " +
                fmt(sw.variance) + " random " + fmt(rd.variance) + ";";
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ordered >= 2 && variance_ok && secs < 120.0;
  o.detail = "ordering in " + std::to_string(ordered) + "/3 seeds," + per_seed + " " + fmt(secs, 3) + " s";
  return o;
}

// ---------------------------------------------------------- criteria 6, 7, 9

struct ArmResult {
  std::vector<double> finals;
  std::vector<double> seconds;
  double mean() const { return metrics::mean(finals); }
  double stderr_() const { return metrics::standard_error(finals); }
};

ArmResult run_arm(config::ExperimentConfig cfg, const std::vector<std::uint64_t>& seeds, const std::string& out,
                  const std::string& tag) {
  ArmResult a;
  for (std::uint64_t s : seeds) {
    cfg.seed = s;
    cfg.out = out + "/" + tag + "/seed" + std::to_string(s);
    const auto r = harness::run_training(cfg);
    a.finals.push_back(r.final_return);
    a.seconds.push_back(r.wall_seconds);
    std::cerr << "  " << tag << " seed " << s << ": final " << fmt(r.final_return) << " (" << fmt(r.wall_seconds, 3)
              << " s)\n";
  }
  return a;
}

std::string describe(const std::string& name, const ArmResult& a) {
  std::string s = name + " " + fmt(a.mean()) + " +- " + fmt(a.stderr_(), 3) + " [";
  for (std::size_t i = 0; i < a.finals.size(); ++i) s += (i ? ", " : "") + fmt(a.finals[i]);
  return s + "]";
}

Outcome criterion6(const config::ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                   const std::string& out) {
  config::ExperimentConfig ours = base, gail = base;
  ours.algo = config::Algorithm::kOurs;
  gail.algo = config::Algorithm::kGail;
  const ArmResult a = run_arm(ours, seeds, out, "c6_ours");
  const ArmResult g = run_arm(gail, seeds, out, "c6_gail");
  const double expert = envs::point_mass_optimal_return(envs::make_env(base.env));
  double slowest = 0.0;
  for (std::size_t i = 0; i < seeds.size(); ++i) slowest = std::max(slowest, a.seconds[i] + g.seconds[i]);
  Outcome o;
  const bool reach = a.mean() >= 0.9 * expert;
  const bool beat = a.mean() >= g.mean();
  o.pass = reach && beat && slowest < 1800.0;
  o.detail = "(a) " + std::string(reach ? "ok" : "no") + ": " + describe("ours", a) + " vs 0.9 x expert " +
             fmt(0.9 * expert) + "; (b) " + (beat ? "ok" : "no") + ": " + describe("gail", g) +
             "; slowest seed " + fmt(slowest, 3) + " s";
  return o;
}

bool reduction_identities() {
  Rng rng(3);
  bool ok = true;
  for (double c : {1.0, 0.1, 0.37, 0.9}) {
    const std::vector<double> y(50, c);
    const Tensor w = ail::confidence_weights(y, ail::exact_mean(y));
    const Tensor la = random_tensor(rng, 20, 1, 3.0), le = random_tensor(rng, 50, 1, 3.0);
    diff::Tape t;
    const double plain = ail::disc_loss(t.constant(la), t.constant(le)).value().item();
    const double weighted = ail::weighted_disc_loss(t.constant(la), t.constant(le), w).value().item();
    ok = ok && bit_equal(plain, weighted);
  }
  const Tensor la = random_tensor(rng, 10, 1), le = random_tensor(rng, 12, 1), lm = random_tensor(rng, 12, 1);
  Tensor w(12, 1), ybar(12, 1);
  for (std::size_t i = 0; i < 12; ++i) {
    w[i] = uniform(rng, 0.0, 2.0);
    ybar[i] = uniform(rng);
  }
  diff::Tape t;
  const double weighted = ail::weighted_disc_loss(t.constant(la), t.constant(le), w).value().item();
  const double off = ail::mixup_disc_loss(t.constant(la), t.constant(le), w, t.constant(lm), ybar, 0.0).value().item();
  return ok && bit_equal(weighted, off);
}

Outcome criterion7(const config::ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                   const std::string& out) {
  config::ExperimentConfig ours = base, gail = base;
  ours.algo = config::Algorithm::kOurs2iwil;
  gail.algo = config::Algorithm::kGail;
  ours.optimality = gail.optimality = 0.25;
  const ArmResult a = run_arm(ours, seeds, out, "c7_ours2iwil");
  const ArmResult g = run_arm(gail, seeds, out, "c7_gail");
  const bool identities = reduction_identities();
  Outcome o;
  o.pass = a.mean() >= g.mean() && identities;
  o.detail = describe("ours+2iwil", a) + " vs " + describe("gail", g) + " at psi 0.25; reduction identities " +
             (identities ? "bit-exact" : "BROKEN");
  return o;
}

Outcome criterion9(const config::ExperimentConfig& base, const std::string& out) {
  Outcome o;
  for (std::size_t noise : {std::size_t{0}, base.repr.noise_dim}) {
    config::ExperimentConfig c = base;
    c.algo = config::Algorithm::kOurs;
    c.repr.noise_dim = noise;
    c.iterations = 20;
    c.seed = 1;
    c.out = out + "/c9_noise" + std::to_string(noise);
    const auto r = harness::run_training(c);
    const bool logged = std::filesystem::exists(c.out + "/log.csv") && r.iterations.size() == 20 &&
                        std::all_of(r.iterations.begin(), r.iterations.end(),
                                    [](const harness::IterationLog& l) { return l.repr && std::isfinite(l.repr->forward); });
    o.pass = o.pass && logged;
    o.detail += "noise_dim " + std::to_string(noise) + ": " + (logged ? "logged" : "missing") + ", L_F " +
                fmt(r.iterations.back().repr->forward) + ", final " + fmt(r.final_return) + "; ";
  }
  return o;
}

// --------------------------------------------------------------- criterion 8

double auc(const std::vector<double>& score, const std::vector<int>& label) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < score.size(); ++i)
    for (std::size_t j = 0; j < score.size(); ++j) {
      if (label[i] != 1 || label[j] != 0) continue;
      pairs += 1.0;
      wins += score[i] > score[j] ? 1.0 : (score[i] == score[j] ? 0.5 : 0.0);
    }
  return wins / pairs;
}

Outcome criterion8() {
  const bool beta = ail::class_prior(40, 60) == 60.0 / 100.0 && ail::class_prior(3, 7) == 7.0 / 10.0;
  diff::Tape t;
  const double risk =
      ail::twoiwil_risk(t.constant(Tensor{{0.0}}), Tensor{{1.0}}, t.constant(Tensor{{0.0}}), 0.5).value().item();
  const bool risk_ok = std::abs(risk - 0.6931471805599453) <= 1e-9;

  double worst_share = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    std::vector<double> c;
    std::vector<int> truth;
    for (int i = 0; i < 200; ++i) {
      const bool hi = uniform(rng) < 0.5;
      c.push_back((hi ? 0.8 : 0.2) + 0.05 * normal(rng));
      truth.push_back(hi);
    }
    const ail::GmmSplit s = ail::gmm_split(c, rng);
    std::size_t wrong = 0;
    for (std::size_t i : s.optimal) wrong += truth[i] == 0;
    for (std::size_t i : s.non_optimal) wrong += truth[i] == 1;
    worst_share = std::max(worst_share, wrong / 200.0);
  }

  Rng rng(4);
  const std::size_t n = 200, n_l = 80;
  const Tensor x = random_tensor(rng, n, 2);
  std::vector<int> truth(n);
  for (std::size_t i = 0; i < n; ++i) truth[i] = x(i, 0) + 0.5 * x(i, 1) > 0.0 ? 1 : 0;
  std::vector<std::size_t> li(n_l), ui(n - n_l);
  std::iota(li.begin(), li.end(), 0);
  std::iota(ui.begin(), ui.end(), n_l);
  std::vector<double> y;
  for (std::size_t i : li) y.push_back(truth[i]);
  ail::ClassifierConfig cfg;
  cfg.steps = 300;
  const auto res = ail::train_confidence(x.gather_rows(li), y, x.gather_rows(ui), cfg, rng);
  const double a = auc(std::vector<double>(res.confidence.begin() + n_l, res.confidence.end()),
                       std::vector<int>(truth.begin() + n_l, truth.end()));

  Outcome o;
  o.pass = beta && risk_ok && worst_share <= 0.02 && a >= 0.9;
  o.detail = std::string("beta ") + (beta ? "exact" : "WRONG") + "; risk " + fmt(risk, 16) + "; GMM worst misassign " +
             fmt(100 * worst_share, 3) + "%; classifier AUC " + fmt(a);
  return o;
}

// -------------------------------------------------------------- criterion 10

Outcome criterion10(const config::ExperimentConfig& base, const std::string& out) {
  Outcome o;
  for (config::Algorithm algo : {config::Algorithm::kGail, config::Algorithm::kOurs2iwilMixup}) {
    config::ExperimentConfig c = base;
    c.algo = algo;
    if (config::uses_confidence(algo)) c.optimality = 0.25;
    c.iterations = 5;
    c.seed = 7;
    std::string csv[2], ck[2];
    for (int k = 0; k < 2; ++k) {
      c.out = out + "/c10_" + std::string(config::algorithm_name(algo)) + "_" + std::to_string(k);
      const auto r = harness::run_training(c);
      csv[k] = harness::read_file(c.out + "/log.csv");
      ck[k] = checkpoint_hash(load_checkpoint(c.out + "/final.ckpt"));
    }
    const bool same = csv[0] == csv[1] && ck[0] == ck[1];
    o.pass = o.pass && same;
    o.detail += std::string(config::algorithm_name(algo)) + ": " + (same ? "identical" : "DIFFER") + " (ckpt " + ck[0] +
                "); ";
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance report"};
  std::string config_path = SAIL_DESK_CONFIG, out = "acceptance_runs", only;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::optional<std::size_t> iterations;
  app.add_option("--config", config_path, "Desk config for the end-to-end criteria");
  app.add_option("--out", out, "Directory for run artifacts");
  app.add_option("--only", only, "Comma-separated criteria to run (default: all)");
  app.add_option("--seeds", seeds, "Seeds of the end-to-end criteria");
  app.add_option("--iterations", iterations, "Override outer iterations (exploration only)");
  CLI11_PARSE(app, argc, argv);

  std::set<int> pick;
  {
    std::stringstream ss(only);
    for (std::string s; std::getline(ss, s, ',');)
      if (!s.empty()) pick.insert(std::stoi(s));
  }
  auto wanted = [&](int k) { return pick.empty() || pick.count(k) != 0; };

  try {
    config::ExperimentConfig base = config::load(config_path);
    if (iterations) base.iterations = *iterations;
    std::filesystem::create_directories(out);
    const std::size_t trpo_iters = 300;

    const std::vector<std::pair<int, std::function<Outcome()>>> checks{
        {1, criterion1},
        {2, criterion2},
        {3, criterion3},
        {4, [&] { return criterion4(trpo_iters); }},
        {5, [&] { return criterion5(out); }},
        {6, [&] { return criterion6(base, seeds, out); }},
        {7, [&] { return criterion7(base, seeds, out); }},
        {8, criterion8},
        {9, [&] { return criterion9(base, out); }},
        {10, [&] { return criterion10(base, out); }},
    };
    int passed = 0, ran = 0;
    for (const auto& [k, check] : checks) {
      if (!wanted(k)) continue;
      const auto t0 = std::chrono::steady_clock::now();
      const Outcome r = check();
      ++ran;
      passed += r.pass;
      std::cout << "criterion " << k << ": " << (r.pass ? "PASS" : "FAIL") << "  " << r.detail << "  ["
                << fmt(seconds_since(t0), 3) << " s]" << std::endl;
    }
    std::cout << passed << "/" << ran << " criteria pass" << std::endl;
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
