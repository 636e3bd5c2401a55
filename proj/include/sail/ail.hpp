#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sail/adam.hpp"
#include "sail/autodiff.hpp"
#include "sail/demos.hpp"
#include "sail/errors.hpp"
#include "sail/nn.hpp"
#include "sail/repr.hpp"
#include "sail/rng.hpp"
#include "sail/tensor.hpp"

namespace sail::ail {

// Logits are clamped so -log D and -log(1 - D) stay below ~30.
inline constexpr double kLogitClamp = 30.0;

// D(z) = sigmoid(clamp(net(z))). Parameters live under "d.".
class Discriminator {
 public:
  Discriminator() = default;
  explicit Discriminator(std::size_t input, std::vector<std::size_t> hidden = {100, 100, 100})
      : net_(MlpSpec{input, std::move(hidden), 1, Activation::kTanh, 1.0}) {}

  std::size_t input_width() const { return net_.input_width(); }

  ParamSet init(Rng& rng) const { return net_.init(rng).prefixed("d."); }

  diff::Var logits(const Bound& b, const diff::Var& z) const {
    return diff::clamp(net_.forward(scoped(b, "d."), z), -kLogitClamp, kLogitClamp);
  }

  Tensor logits(const ParamSet& p, const Tensor& z) const {
    Tensor l = net_.predict(p, z, "d.");
    for (double& v : l.values()) v = std::clamp(v, -kLogitClamp, kLogitClamp);
    return l;
  }

  Tensor probabilities(const ParamSet& p, const Tensor& z) const {
    Tensor l = logits(p, z);
    for (double& v : l.values()) v = diff::sigmoid(v);
    return l;
  }

  // r = -log D(z), one per row.
  std::vector<double> rewards(const ParamSet& p, const Tensor& z) const {
    const Tensor l = logits(p, z);
    std::vector<double> r(l.rows());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = reward_from_logit(l[i]);
    return r;
  }

  static double reward_from_logit(double logit) {
    return diff::softplus(-std::clamp(logit, -kLogitClamp, kLogitClamp));
  }

 private:
  Mlp net_;
};

// ---------------------------------------------------------------------------
// Discriminator losses on logits. Agent pairs are pushed toward D = 1,
// expert pairs toward D = 0, so -log D is large where the agent looks expert.
// -log D(l) = softplus(-l), -log(1 - D(l)) = softplus(l).

inline diff::Var agent_term(const diff::Var& agent_logits) {
  if (agent_logits.rows() == 0) throw ShapeError("empty agent batch");
  return diff::mean(diff::softplus(-agent_logits));
}

inline diff::Var disc_loss(const diff::Var& agent_logits, const diff::Var& expert_logits) {
  if (expert_logits.rows() == 0) throw ShapeError("empty expert batch");
  return agent_term(agent_logits) + diff::mean(diff::softplus(expert_logits));
}

// Expert term weighted per pair by y / epsilon (`weights`, one per row).
inline diff::Var weighted_disc_loss(const diff::Var& agent_logits, const diff::Var& expert_logits,
                                    const Tensor& weights) {
  if (expert_logits.rows() == 0) throw ShapeError("empty expert batch");
  if (weights.rows() != expert_logits.rows() || weights.cols() != 1) {
    throw ShapeError("expert weights must be one column per expert row");
  }
  const diff::Var w = expert_logits.tape().constant(weights);
  return agent_term(agent_logits) + diff::mean(w * diff::softplus(expert_logits));
}

// -mean log[(1 - y) D + y (1 - D)] on mixed features.
inline diff::Var mixup_term(const diff::Var& mixed_logits, const Tensor& mixed_y) {
  if (mixed_y.rows() != mixed_logits.rows() || mixed_y.cols() != 1) throw ShapeError("mixed labels shape");
  if (mixed_logits.rows() == 0) throw ShapeError("empty mixed batch");
  diff::Tape& t = mixed_logits.tape();
  Tensor not_y = mixed_y;
  for (double& v : not_y.values()) v = 1.0 - v;
  const diff::Var p = t.constant(not_y) * diff::sigmoid(mixed_logits) +
                      t.constant(mixed_y) * diff::sigmoid(-mixed_logits);
  return -diff::mean(diff::log(p));
}

// `term_weight` 0 drops the mixed term and returns the weighted loss as is.
inline diff::Var mixup_disc_loss(const diff::Var& agent_logits, const diff::Var& expert_logits,
                                 const Tensor& weights, const diff::Var& mixed_logits, const Tensor& mixed_y,
                                 double term_weight = 1.0) {
  const diff::Var base = weighted_disc_loss(agent_logits, expert_logits, weights);
  if (term_weight == 0.0) return base;
  return base + mixup_term(mixed_logits, mixed_y) * term_weight;
}

// ---------------------------------------------------------------------------
// 2IWIL: confidence from partially labeled demonstrations.

inline double class_prior(std::size_t n_labeled, std::size_t n_unlabeled) {
  if (n_labeled == 0) throw ConfigError("2IWIL needs at least one labeled pair");
  return static_cast<double>(n_unlabeled) / static_cast<double>(n_labeled + n_unlabeled);
}

// Mean that returns the shared value exactly when all inputs agree, so
// uniform confidences give weights of exactly 1.
inline double exact_mean(const std::vector<double>& v) {
  if (v.empty()) throw ShapeError("mean of no values");
  if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return v.front();
  // Neumaier-compensated sum.
  double s = 0.0, c = 0.0;
  for (double x : v) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  return (s + c) / static_cast<double>(v.size());
}

// w = y / epsilon with epsilon the mean labeled confidence.
inline Tensor confidence_weights(const std::vector<double>& y, double epsilon) {
  if (!(epsilon > 0.0)) throw NumericError("mean labeled confidence must be positive to weight the expert term");
  Tensor w(y.size(), 1);
  for (std::size_t i = 0; i < y.size(); ++i) w[i] = y[i] / epsilon;
  return w;
}

// Empirical risk with the logistic loss l(m) = log(1 + e^-m):
//   mean_L[ y (l(g) - l(-g)) + (1 - beta) l(-g) ] + mean_U[ beta l(-g) ].
inline diff::Var twoiwil_risk(const diff::Var& labeled_logits, const Tensor& labels, const diff::Var& unlabeled_logits,
                              double beta) {
  if (labeled_logits.rows() == 0) throw ShapeError("2IWIL risk needs labeled pairs");
  if (labels.rows() != labeled_logits.rows() || labels.cols() != 1) throw ShapeError("2IWIL labels shape");
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("class prior beta must lie in [0, 1)");
  const diff::Var y = labeled_logits.tape().constant(labels);
  const diff::Var pos = diff::softplus(-labeled_logits);  // l(g)
  const diff::Var neg = diff::softplus(labeled_logits);   // l(-g)
  diff::Var risk = diff::mean(y * (pos - neg) + neg * (1.0 - beta));
  if (unlabeled_logits.rows() > 0) risk = risk + diff::mean(diff::softplus(unlabeled_logits)) * beta;
  return risk;
}

struct ClassifierConfig {
  std::vector<std::size_t> hidden{100, 100};
  double lr = 1e-3;
  std::size_t steps = 1000;  // full-batch Adam steps

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("classifier lr must be positive");
    if (steps == 0) throw ConfigError("classifier needs at least one step");
  }
};

// g(x) on standardized raw (s, a); confidence = sigmoid(g).
class ConfidenceClassifier {
 public:
  ConfidenceClassifier() = default;
  ConfidenceClassifier(std::size_t input, const ClassifierConfig& cfg)
      : net_(MlpSpec{input, cfg.hidden, 1, Activation::kTanh, 1.0}), mean_(1, input), scale_(1, input, 1.0) {}

  std::size_t input_width() const { return net_.input_width(); }
  ParamSet init(Rng& rng) const { return net_.init(rng); }

  void fit_normalizer(const Tensor& x) {
    mean_ = column_mean(x);
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double ss = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) ss += (x(r, c) - mean_(0, c)) * (x(r, c) - mean_(0, c));
      const double sd = std::sqrt(ss / static_cast<double>(std::max<std::size_t>(1, x.rows())));
      scale_(0, c) = sd > 1e-8 ? 1.0 / sd : 1.0;
    }
  }

  Tensor normalize(const Tensor& x) const {
    Tensor y = x;
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = (x(r, c) - mean_(0, c)) * scale_(0, c);
    return y;
  }

  diff::Var logits(diff::Tape& t, const Bound& b, const Tensor& x) const {
    return net_.forward(b, t.constant(normalize(x)));
  }

  std::vector<double> confidence(const ParamSet& p, const Tensor& x) const {
    const Tensor l = net_.predict(p, normalize(x));
    std::vector<double> out(l.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = diff::sigmoid(l[i]);
    return out;
  }

 private:
  Mlp net_;
  Tensor mean_;
  Tensor scale_;
};

inline Tensor pairs(const Tensor& states, const Tensor& actions) { return hconcat(states, actions); }

struct ConfidenceResult {
  std::vector<double> confidence;  // per pair of the full set: y on labeled, y-hat on unlabeled
  std::vector<char> labeled;       // 1 where the pair carried a true label
  double beta = 0.0;
  double epsilon = 0.0;
  double final_risk = 0.0;
  ParamSet params;
};

// Trains g on D_L (hard labels) and D_U, then labels every pair of
// `labeled` followed by `unlabeled`.
inline ConfidenceResult train_confidence(const Tensor& labeled_x, const std::vector<double>& labels,
                                         const Tensor& unlabeled_x, const ClassifierConfig& cfg, Rng& rng,
                                         ConfidenceClassifier* out_classifier = nullptr) {
  cfg.validate();
  if (labeled_x.rows() == 0) throw ConfigError("2IWIL needs at least one labeled pair");
  if (labels.size() != labeled_x.rows()) throw ShapeError("one label per labeled pair");
  if (unlabeled_x.rows() > 0 && unlabeled_x.cols() != labeled_x.cols()) throw ShapeError("pair widths differ");
  ConfidenceClassifier clf(labeled_x.cols(), cfg);
  clf.fit_normalizer(vconcat(labeled_x, unlabeled_x));
  ConfidenceResult res;
  res.beta = class_prior(labeled_x.rows(), unlabeled_x.rows());
  res.epsilon = exact_mean(labels);
  ParamSet p = clf.init(rng);
  AdamState opt(p, cfg.lr);
  const Tensor y = Tensor::column(labels);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    diff::Tape t;
    const Bound b = bind(t, p);
    const diff::Var gu =
        unlabeled_x.rows() > 0 ? clf.logits(t, b, unlabeled_x) : t.constant(Tensor(0, 1));
    const diff::Var risk = twoiwil_risk(clf.logits(t, b, labeled_x), y, gu, res.beta);
    t.backward(risk);
    res.final_risk = risk.value().item();
    p = adam_step(p, gradients(t, b), opt);
  }
  res.confidence = labels;
  res.labeled.assign(labels.size(), 1);
  if (unlabeled_x.rows() > 0) {
    const auto yhat = clf.confidence(p, unlabeled_x);
    res.confidence.insert(res.confidence.end(), yhat.begin(), yhat.end());
    res.labeled.resize(res.confidence.size(), 0);
  }
  res.params = std::move(p);
  if (out_classifier) *out_classifier = clf;
  return res;
}

// ---------------------------------------------------------------------------
// Two-component 1-D Gaussian mixture split of the confidences.

struct GmmConfig {
  double threshold = 0.5;
  std::size_t max_iter = 200;
  double tol = 1e-6;
  double var_floor = 1e-6;  // added to every variance, as sklearn's reg_covar
};

struct GmmSplit {
  std::vector<std::size_t> optimal;
  std::vector<std::size_t> non_optimal;
  double mean[2] = {0.0, 0.0};  // [0] is the higher-mean component
  double var[2] = {0.0, 0.0};
  double weight[2] = {0.0, 0.0};
  std::size_t iterations = 0;
  bool fallback = false;  // EM was degenerate; raw confidences were thresholded
};

inline GmmSplit threshold_split(const std::vector<double>& conf, double threshold) {
  GmmSplit s;
  s.fallback = true;
  for (std::size_t i = 0; i < conf.size(); ++i) (conf[i] > threshold ? s.optimal : s.non_optimal).push_back(i);
  return s;
}

inline GmmSplit gmm_split(const std::vector<double>& conf, Rng& rng, const GmmConfig& cfg = {}) {
  const std::size_t n = conf.size();
  for (double c : conf) {
    if (!std::isfinite(c)) throw NumericError("non-finite confidence");
  }
  std::vector<double> distinct(conf);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) return threshold_split(conf, cfg.threshold);

  // k-means++ seeding on scalars.
  double mu[2];
  mu[0] = conf[uniform_index(rng, n)];
  {
    std::vector<double> d2(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += d2[i] = (conf[i] - mu[0]) * (conf[i] - mu[0]);
    double u = uniform(rng) * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] > 0.0 && u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
    if (d2[pick] == 0.0) {
      pick = static_cast<std::size_t>(std::max_element(d2.begin(), d2.end()) - d2.begin());
    }
    mu[1] = conf[pick];
  }
  double var[2], w[2] = {0.5, 0.5};
  {
    // Initial spread from the nearest-center partition.
    double ss[2] = {0.0, 0.0}, cnt[2] = {0.0, 0.0};
    for (double c : conf) {
      const int k = std::abs(c - mu[0]) <= std::abs(c - mu[1]) ? 0 : 1;
      ss[k] += (c - mu[k]) * (c - mu[k]);
      cnt[k] += 1.0;
    }
    for (int k = 0; k < 2; ++k) var[k] = (cnt[k] > 0.0 ? ss[k] / cnt[k] : 0.0) + cfg.var_floor;
  }

  std::vector<double> resp(n);  // posterior of component 0
  auto e_step = [&]() {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double lp[2];
      for (int k = 0; k < 2; ++k) {
        const double d = conf[i] - mu[k];
        lp[k] = std::log(w[k]) - 0.5 * std::log(2.0 * std::numbers::pi * var[k]) - 0.5 * d * d / var[k];
      }
      const double m = std::max(lp[0], lp[1]);
      const double lse = m + std::log(std::exp(lp[0] - m) + std::exp(lp[1] - m));
      resp[i] = std::exp(lp[0] - lse);
      ll += lse;
    }
    return ll / static_cast<double>(n);
  };

  GmmSplit s;
  double prev = e_step();
  for (s.iterations = 1; s.iterations <= cfg.max_iter; ++s.iterations) {
    double nk[2] = {0.0, 0.0}, sum[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      nk[0] += resp[i];
      nk[1] += 1.0 - resp[i];
      sum[0] += resp[i] * conf[i];
      sum[1] += (1.0 - resp[i]) * conf[i];
    }
    // An empty component means EM collapsed onto one cluster.
    if (nk[0] < 1e-9 || nk[1] < 1e-9) return threshold_split(conf, cfg.threshold);
    for (int k = 0; k < 2; ++k) {
      mu[k] = sum[k] / nk[k];
      w[k] = nk[k] / static_cast<double>(n);
    }
    double ss[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      ss[0] += resp[i] * (conf[i] - mu[0]) * (conf[i] - mu[0]);
      ss[1] += (1.0 - resp[i]) * (conf[i] - mu[1]) * (conf[i] - mu[1]);
    }
    for (int k = 0; k < 2; ++k) var[k] = ss[k] / nk[k] + cfg.var_floor;
    const double ll = e_step();
    if (!std::isfinite(ll)) return threshold_split(conf, cfg.threshold);
    if (std::abs(ll - prev) < cfg.tol) break;
    prev = ll;
  }
  s.iterations = std::min(s.iterations, cfg.max_iter);
  if (mu[0] == mu[1]) return threshold_split(conf, cfg.threshold);
  const int hi = mu[0] > mu[1] ? 0 : 1;
  s.mean[0] = mu[hi];
  s.mean[1] = mu[1 - hi];
  s.var[0] = var[hi];
  s.var[1] = var[1 - hi];
  s.weight[0] = w[hi];
  s.weight[1] = w[1 - hi];
  for (std::size_t i = 0; i < n; ++i) {
    const double post_hi = hi == 0 ? resp[i] : 1.0 - resp[i];
    (post_hi > cfg.threshold ? s.optimal : s.non_optimal).push_back(i);
  }
  if (s.optimal.empty() || s.non_optimal.empty()) return threshold_split(conf, cfg.threshold);
  return s;
}

// ---------------------------------------------------------------------------
// Manifold mixup biased toward the optimal side.

inline double mixup_weight(double lambda) { return std::max(lambda, 1.0 - lambda); }

// One lambda' per row, each from Beta(alpha, alpha).
inline std::vector<double> draw_mixup_weights(std::size_t rows, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup alpha must be positive");
  std::vector<double> lam(rows);
  for (double& l : lam) l = mixup_weight(beta_sample(rng, alpha, alpha));
  return lam;
}

inline diff::Var mix(const diff::Var& z_o, const diff::Var& z_n, const std::vector<double>& lam) {
  if (!z_o.value().same_shape(z_n.value())) throw ShapeError("mixup features differ in shape");
  if (lam.size() != z_o.rows()) throw ShapeError("one mixup weight per row");
  Tensor l = Tensor::column(lam);
  Tensor one_minus = l;
  for (double& v : one_minus.values()) v = 1.0 - v;
  diff::Tape& t = z_o.tape();
  return z_o * t.constant(l) + z_n * t.constant(one_minus);
}

inline Tensor mix(const Tensor& a, const Tensor& b, const std::vector<double>& lam) {
  diff::Tape t;
  return mix(t.constant(a), t.constant(b), lam).value();
}

inline std::vector<double> mix(const std::vector<double>& y_o, const std::vector<double>& y_n,
                               const std::vector<double>& lam) {
  if (y_o.size() != lam.size() || y_n.size() != lam.size()) throw ShapeError("one mixup weight per label");
  std::vector<double> out(lam.size());
  for (std::size_t i = 0; i < lam.size(); ++i) out[i] = lam[i] * y_o[i] + (1.0 - lam[i]) * y_n[i];
  return out;
}

struct Mixed {
  Tensor z;
  std::vector<double> y;
  std::vector<double> lambdas;
};

inline Mixed manifold_mixup(const Tensor& z_o, const std::vector<double>& y_o, const Tensor& z_n,
                            const std::vector<double>& y_n, double alpha, Rng& rng) {
  if (!z_o.same_shape(z_n) || y_o.size() != z_o.rows() || y_n.size() != z_n.rows()) {
    throw ShapeError("mixup inputs must pair row for row");
  }
  Mixed m;
  m.lambdas = draw_mixup_weights(z_o.rows(), alpha, rng);
  m.z = mix(z_o, z_n, m.lambdas);
  m.y = mix(y_o, y_n, m.lambdas);
  return m;
}

// ---------------------------------------------------------------------------
// Discriminator input: encoded (SE(s) + AE(a)) or raw (s + a) for the GAIL arm.

class FeatureMap {
 public:
  // Raw concatenation; no parameters.
  static FeatureMap raw(std::size_t state_dim, std::size_t action_dim) {
    FeatureMap f;
    f.width_ = state_dim + action_dim;
    return f;
  }

  // SE(s) + AE(a); in discrete mode SE(s), optionally followed by the one-hot action.
  static FeatureMap encoded(const repr::Encoders& enc, bool append_discrete_action = false) {
    FeatureMap f;
    f.enc_ = &enc;
    f.append_ = append_discrete_action;
    f.width_ = enc.state_width() + (enc.discrete() ? (append_discrete_action ? enc.action_dim() : 0)
                                                   : enc.action_width());
    return f;
  }

  std::size_t width() const { return width_; }
  bool encoded() const { return enc_ != nullptr; }

  diff::Var operator()(const Bound& b, const diff::Var& s, const diff::Var& a) const {
    if (!enc_) return diff::concat_cols({s, a});
    const diff::Var zs = enc_->encode_states(b, s);
    if (enc_->discrete()) return append_ ? diff::concat_cols({zs, a}) : zs;
    return diff::concat_cols({zs, enc_->encode_actions(b, a)});
  }

  Tensor operator()(const ParamSet& p, const Tensor& s, const Tensor& a) const {
    if (!enc_) return hconcat(s, a);
    const Tensor zs = enc_->encode_states(p, s);
    if (enc_->discrete()) return append_ ? hconcat(zs, a) : zs;
    return hconcat(zs, enc_->encode_actions(p, a));
  }

 private:
  const repr::Encoders* enc_ = nullptr;
  bool append_ = false;
  std::size_t width_ = 0;
};

// ---------------------------------------------------------------------------
// GAIL step.

enum class GailMode { kPlain, kWeighted, kMixup };

inline std::string_view gail_mode_name(GailMode m) {
  switch (m) {
    case GailMode::kPlain: return "plain";
    case GailMode::kWeighted: return "weighted";
    case GailMode::kMixup: return "mixup";
  }
  return "?";
}

struct GailConfig {
  GailMode mode = GailMode::kPlain;
  double lr = 1e-3;
  double alpha = 4.0;  // Beta(alpha, alpha) for mixup
  double mixup_term_weight = 1.0;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("gail.lr must be positive");
    if (!(alpha > 0.0)) throw ConfigError("mixup alpha must be positive");
  }
};

// Expert side of the discriminator. `weights` (y / epsilon) is read by the
// weighted and mixup modes; `optimal` / `non_optimal` index the GMM split.
struct ExpertData {
  Tensor states;
  Tensor actions;
  std::vector<double> confidence;
  Tensor weights;
  std::vector<std::size_t> optimal;
  std::vector<std::size_t> non_optimal;

  std::size_t size() const { return states.rows(); }
};

inline ExpertData plain_expert(const Tensor& states, const Tensor& actions) {
  ExpertData e;
  e.states = states;
  e.actions = actions;
  e.confidence.assign(states.rows(), 1.0);
  e.weights = Tensor(states.rows(), 1, 1.0);
  return e;
}

struct GailStats {
  double loss = 0.0;
  double mean_d_agent = 0.0;
  double mean_d_expert = 0.0;
};

// Sampled rows for one step, drawn before any network is touched.
struct GailDraw {
  std::vector<std::size_t> expert;  // with replacement, one per agent row
  std::vector<std::size_t> mix_o, mix_n;
  std::vector<double> lambdas;
};

inline GailDraw draw_gail_batch(const ExpertData& e, std::size_t agent_rows, const GailConfig& cfg, Rng& rng) {
  if (e.size() == 0) throw ShapeError("empty expert set");
  GailDraw d;
  d.expert.resize(agent_rows);
  for (auto& i : d.expert) i = uniform_index(rng, e.size());
  if (cfg.mode == GailMode::kMixup) {
    if (e.optimal.empty() || e.non_optimal.empty()) throw ConfigError("mixup needs a non-empty GMM split");
    d.mix_o.resize(agent_rows);
    d.mix_n.resize(agent_rows);
    for (auto& i : d.mix_o) i = e.optimal[uniform_index(rng, e.optimal.size())];
    for (auto& i : d.mix_n) i = e.non_optimal[uniform_index(rng, e.non_optimal.size())];
    d.lambdas = draw_mixup_weights(agent_rows, cfg.alpha, rng);
  }
  return d;
}

inline Tensor gather_weights(const Tensor& w, const std::vector<std::size_t>& idx) {
  Tensor out(idx.size(), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = w[idx[i]];
  return out;
}

struct GailLoss {
  diff::Var loss;
  diff::Var agent_logits;
  diff::Var expert_logits;
};

inline GailLoss gail_loss(diff::Tape& t, const Bound& b, const Discriminator& disc, const FeatureMap& fm,
                          const Tensor& agent_s, const Tensor& agent_a, const ExpertData& e, const GailDraw& d,
                          const GailConfig& cfg) {
  GailLoss g;
  g.agent_logits = disc.logits(b, fm(b, t.constant(agent_s), t.constant(agent_a)));
  const Tensor es = e.states.gather_rows(d.expert), ea = e.actions.gather_rows(d.expert);
  g.expert_logits = disc.logits(b, fm(b, t.constant(es), t.constant(ea)));
  switch (cfg.mode) {
    case GailMode::kPlain: g.loss = disc_loss(g.agent_logits, g.expert_logits); break;
    case GailMode::kWeighted:
      g.loss = weighted_disc_loss(g.agent_logits, g.expert_logits, gather_weights(e.weights, d.expert));
      break;
    case GailMode::kMixup: {
      const diff::Var zo = fm(b, t.constant(e.states.gather_rows(d.mix_o)), t.constant(e.actions.gather_rows(d.mix_o)));
      const diff::Var zn = fm(b, t.constant(e.states.gather_rows(d.mix_n)), t.constant(e.actions.gather_rows(d.mix_n)));
      std::vector<double> yo(d.mix_o.size()), yn(d.mix_n.size());
      for (std::size_t i = 0; i < yo.size(); ++i) {
        yo[i] = e.confidence[d.mix_o[i]];
        yn[i] = e.confidence[d.mix_n[i]];
      }
      const diff::Var lm = disc.logits(b, mix(zo, zn, d.lambdas));
      g.loss = mixup_disc_loss(g.agent_logits, g.expert_logits, gather_weights(e.weights, d.expert), lm,
                               Tensor::column(mix(yo, yn, d.lambdas)), cfg.mixup_term_weight);
      break;
    }
  }
  return g;
}

// One Adam step on D and, when the feature map is encoded, SE and AE.
// `params` holds "d." plus whatever the feature map reads.
inline GailStats gail_update(const Discriminator& disc, const FeatureMap& fm, ParamSet& params, AdamState& opt,
                             const Tensor& agent_s, const Tensor& agent_a, const ExpertData& e, const GailConfig& cfg,
                             Rng& rng) {
  cfg.validate();
  if (agent_s.rows() == 0) throw ShapeError("empty agent batch");
  const GailDraw d = draw_gail_batch(e, agent_s.rows(), cfg, rng);
  diff::Tape t;
  const Bound b = bind(t, params);
  const GailLoss g = gail_loss(t, b, disc, fm, agent_s, agent_a, e, d, cfg);
  t.backward(g.loss);
  params = adam_step(params, gradients(t, b), opt);
  GailStats s;
  s.loss = g.loss.value().item();
  for (double l : g.agent_logits.value().values()) s.mean_d_agent += diff::sigmoid(l);
  for (double l : g.expert_logits.value().values()) s.mean_d_expert += diff::sigmoid(l);
  s.mean_d_agent /= static_cast<double>(g.agent_logits.rows());
  s.mean_d_expert /= static_cast<double>(g.expert_logits.rows());
  return s;
}

}  // namespace sail::ail
