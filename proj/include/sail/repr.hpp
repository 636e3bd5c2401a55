#pragma once

#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "sail/adam.hpp"
#include "sail/autodiff.hpp"
#include "sail/errors.hpp"
#include "sail/nn.hpp"
#include "sail/rng.hpp"
#include "sail/tensor.hpp"

namespace sail::repr {

// ---------------------------------------------------------------------------
// Corruptions. Every method replaces the same q columns in all rows; the
// other columns are copied bit for bit.

enum class Corruption { kSwapping, kRandom, kMean, kEachDim };

inline constexpr std::array<Corruption, 4> kAllCorruptions{Corruption::kSwapping, Corruption::kRandom,
                                                           Corruption::kMean, Corruption::kEachDim};

inline std::string_view corruption_name(Corruption m) {
  switch (m) {
    case Corruption::kSwapping: return "swapping";
    case Corruption::kRandom: return "random";
    case Corruption::kMean: return "mean";
    case Corruption::kEachDim: return "each-dim";
  }
  return "?";
}

inline Corruption parse_corruption(std::string_view s) {
  for (Corruption m : kAllCorruptions) {
    if (corruption_name(m) == s) return m;
  }
  throw ConfigError("unknown corruption method '" + std::string(s) +
                    "' (expected swapping, random, mean or each-dim)");
}

// q = floor(c * dim). The 1e-9 guard keeps decimal rates such as 0.29 x 100
// from landing one below the intended integer.
inline std::size_t corruption_count(double rate, std::size_t dim) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("corruption rate must lie in [0, 1)");
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(dim) + 1e-9));
}

inline std::vector<std::size_t> corruption_columns(std::size_t dim, std::size_t q, Rng& rng) {
  if (q > dim) {
    throw ShapeError("cannot corrupt " + std::to_string(q) + " of " + std::to_string(dim) + " columns");
  }
  return sample_without_replacement(rng, dim, q);
}

namespace detail {
inline void check_columns(const Tensor& x, const std::vector<std::size_t>& cols) {
  if (cols.size() > x.cols()) throw ShapeError("more corrupted columns than the batch has");
  for (std::size_t c : cols) {
    if (c >= x.cols()) throw ShapeError("corrupted column " + std::to_string(c) + " out of range");
  }
}
}  // namespace detail

// X'[r, i] = X[perm[r], i] for i in cols.
inline Tensor swap_columns(const Tensor& x, const std::vector<std::size_t>& cols,
                           const std::vector<std::size_t>& perm) {
  detail::check_columns(x, cols);
  if (perm.size() != x.rows()) throw ShapeError("row permutation length does not match the batch");
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c : cols) out(r, c) = x(perm[r], c);
  return out;
}

inline Tensor corrupt_swapping(const Tensor& x, std::size_t q, Rng& rng) {
  const auto cols = corruption_columns(x.cols(), q, rng);
  return swap_columns(x, cols, permutation(rng, x.rows()));
}

inline Tensor replace_random(const Tensor& x, const std::vector<std::size_t>& cols, Rng& rng) {
  detail::check_columns(x, cols);
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c : cols) out(r, c) = normal(rng);
  return out;
}

inline Tensor corrupt_random(const Tensor& x, std::size_t q, Rng& rng) {
  const auto cols = corruption_columns(x.cols(), q, rng);
  return replace_random(x, cols, rng);
}

// `mean` is 1 x cols, the per-dimension mean of the current rollout set.
inline Tensor replace_mean(const Tensor& x, const std::vector<std::size_t>& cols, const Tensor& mean) {
  detail::check_columns(x, cols);
  if (mean.rows() != 1 || mean.cols() != x.cols()) throw ShapeError("mean vector must be 1 x columns");
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c : cols) out(r, c) = mean(0, c);
  return out;
}

inline Tensor corrupt_mean(const Tensor& x, std::size_t q, const Tensor& mean, Rng& rng) {
  const auto cols = corruption_columns(x.cols(), q, rng);
  return replace_mean(x, cols, mean);
}

// Each replaced entry comes from its own uniformly drawn donor row.
inline Tensor replace_each_dim(const Tensor& x, const std::vector<std::size_t>& cols, Rng& rng) {
  detail::check_columns(x, cols);
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c : cols) out(r, c) = x(uniform_index(rng, x.rows()), c);
  return out;
}

inline Tensor corrupt_each_dim(const Tensor& x, std::size_t q, Rng& rng) {
  const auto cols = corruption_columns(x.cols(), q, rng);
  return replace_each_dim(x, cols, rng);
}

// `mean` is only read by the mean method; empty means "this batch's mean".
inline Tensor corrupt(Corruption method, const Tensor& x, std::size_t q, Rng& rng, const Tensor& mean = {}) {
  if (x.rows() == 0) throw ShapeError("cannot corrupt an empty batch");
  switch (method) {
    case Corruption::kSwapping: return corrupt_swapping(x, q, rng);
    case Corruption::kRandom: return corrupt_random(x, q, rng);
    case Corruption::kMean: return corrupt_mean(x, q, mean.empty() ? column_mean(x) : mean, rng);
    case Corruption::kEachDim: return corrupt_each_dim(x, q, rng);
  }
  throw ConfigError("unknown corruption method");
}

// ---------------------------------------------------------------------------
// Self-supervised losses, built from tape primitives so gradients reach
// every input.

namespace detail {
inline diff::Var unit_rows(const diff::Var& x, const char* what) {
  const diff::Var sq = diff::sum_cols(diff::square(x));
  for (double v : sq.value().values()) {
    if (v == 0.0) throw NumericError(std::string("zero-norm row in cosine similarity (") + what + ")");
  }
  return diff::div(x, diff::sqrt(sq));
}

inline Tensor off_diagonal_mask(std::size_t n) {
  Tensor m(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 0.0;
  return m;
}
}  // namespace detail

// L_F: the positive pair (pred_i, next_i) is scored against the other
// 2(BS-1) current and next representations. The positive itself is left
// out of the denominator, so the loss can go below zero.
inline diff::Var infonce_loss(const diff::Var& pred_next, const diff::Var& current, const diff::Var& next,
                              double tau) {
  if (!(tau > 0.0)) throw ConfigError("InfoNCE temperature must be positive");
  const std::size_t bs = pred_next.rows();
  if (bs < 2) throw ShapeError("InfoNCE needs a batch of at least 2");
  if (current.rows() != bs || next.rows() != bs || current.cols() != pred_next.cols() ||
      next.cols() != pred_next.cols()) {
    throw ShapeError("InfoNCE inputs must share one shape");
  }
  diff::Tape& tape = pred_next.tape();
  const diff::Var p = detail::unit_rows(pred_next, "prediction");
  const diff::Var c = detail::unit_rows(current, "current");
  const diff::Var n = detail::unit_rows(next, "next");
  const diff::Var sim_c = diff::matmul(p, diff::transpose(c)) * (1.0 / tau);
  const diff::Var sim_n = diff::matmul(p, diff::transpose(n)) * (1.0 / tau);
  const diff::Var off = tape.constant(detail::off_diagonal_mask(bs));
  const diff::Var eye = tape.constant(Tensor::identity(bs));
  const diff::Var zeta = diff::sum_cols(diff::exp(sim_c) * off) + diff::sum_cols(diff::exp(sim_n) * off);
  const diff::Var positive = diff::sum_cols(sim_n * eye);
  return -diff::mean(positive - diff::log(zeta));
}

// L_SC: batch mean of squared Euclidean row distances.
inline diff::Var state_mse_loss(const diff::Var& a, const diff::Var& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("MSE inputs differ: " + a.value().shape_string() + " vs " + b.value().shape_string());
  }
  if (a.rows() == 0) throw ShapeError("MSE of an empty batch");
  return diff::sum(diff::square(a - b)) * (1.0 / static_cast<double>(a.rows()));
}

struct BarlowOptions {
  bool center = true;       // subtract the batch mean of each dimension first
  bool subtract_offdiag = false;  // subtract the off-diagonal term instead of adding it
};

// L_AC: drives the cross-correlation of the two views toward identity.
inline diff::Var barlow_loss(const diff::Var& a, const diff::Var& b, BarlowOptions opt = {}) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("Barlow views differ: " + a.value().shape_string() + " vs " + b.value().shape_string());
  }
  if (a.rows() < 2) throw ShapeError("Barlow loss needs a batch of at least 2");
  const double inv_n = 1.0 / static_cast<double>(a.rows());
  auto normalize = [&](const diff::Var& x, const char* view) {
    const diff::Var centered = opt.center ? x - diff::sum_rows(x) * inv_n : x;
    const diff::Var sq = diff::sum_rows(diff::square(centered));
    const Tensor& xv = x.value();
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      double raw = 0.0;
      for (std::size_t r = 0; r < xv.rows(); ++r) raw += xv(r, c) * xv(r, c);
      // relative cut: centering leaves rounding residue on constant columns
      if (!(sq.value()(0, c) > 1e-24 * (1.0 + raw))) {
        throw NumericError(std::string("zero-variance dimension in Barlow ") + view + " view");
      }
    }
    return diff::div(centered, diff::sqrt(sq));
  };
  const std::size_t d = a.cols();
  diff::Tape& tape = a.tape();
  const diff::Var corr = diff::matmul(diff::transpose(normalize(a, "first")), normalize(b, "second"));
  const diff::Var eye = tape.constant(Tensor::identity(d));
  const diff::Var on = diff::sum(diff::square((corr - eye) * eye));
  const diff::Var off = diff::sum(diff::square(corr * tape.constant(detail::off_diagonal_mask(d))));
  return opt.subtract_offdiag ? on - off : on + off;
}

struct LossWeights {
  double forward = 1.0;  // lambda_F
  double state = 100.0;  // lambda_S
  double action = 1.0;   // lambda_A
};

inline diff::Var total_loss(const diff::Var& lf, const diff::Var& lsc, const diff::Var& lac, const LossWeights& w) {
  return lf * w.forward + lsc * w.state + lac * w.action;
}

// Tape-free values, mostly for diagnostics and tests.
inline double infonce(const Tensor& pred_next, const Tensor& current, const Tensor& next, double tau) {
  diff::Tape t;
  return infonce_loss(t.constant(pred_next), t.constant(current), t.constant(next), tau).value().item();
}
inline double state_mse(const Tensor& a, const Tensor& b) {
  diff::Tape t;
  return state_mse_loss(t.constant(a), t.constant(b)).value().item();
}
inline double barlow(const Tensor& a, const Tensor& b, BarlowOptions opt = {}) {
  diff::Tape t;
  return barlow_loss(t.constant(a), t.constant(b), opt).value().item();
}

// ---------------------------------------------------------------------------
// Encoders and forward model.

struct ReprConfig {
  std::size_t state_repr = 100;
  std::vector<std::size_t> state_hidden{100, 100, 100};
  std::size_t action_repr = 8;
  std::vector<std::size_t> conv_channels{64, 64, 64, 128, 256, 256};
  std::size_t forward_hidden = 114;
  std::size_t noise_dim = 6;
  double tau = 0.1;
  LossWeights weights;
  BarlowOptions barlow;
  Corruption method = Corruption::kSwapping;
  double state_rate = 0.2;   // c^s
  double action_rate = 0.2;  // c^a
  double lr = 1e-3;
  std::size_t batch = 256;

  void validate() const {
    if (state_repr == 0 || action_repr == 0 || forward_hidden == 0) throw ConfigError("repr widths must be positive");
    if (!(tau > 0.0)) throw ConfigError("repr.tau must be positive");
    if (weights.forward < 0.0 || weights.state < 0.0 || weights.action < 0.0) {
      throw ConfigError("repr loss weights must be non-negative");
    }
    corruption_count(state_rate, 1);
    corruption_count(action_rate, 1);
    if (!(lr > 0.0)) throw ConfigError("repr.lr must be positive");
    if (batch < 2) throw ConfigError("repr.batch must be at least 2");
  }
};

// SE ("se."), AE ("ae.") and F ("f."). In discrete mode there is no AE: the
// one-hot action stands in for z^a wherever the forward model needs it.
class Encoders {
 public:
  Encoders() = default;
  Encoders(std::size_t state_dim, std::size_t action_dim, bool discrete, const ReprConfig& cfg)
      : state_dim_(state_dim), action_dim_(action_dim), discrete_(discrete), noise_dim_(cfg.noise_dim) {
    se_ = Mlp(MlpSpec{state_dim, cfg.state_hidden, cfg.state_repr, Activation::kTanh, 1.0});
    if (!discrete) {
      ConvEncoderSpec ce;
      ce.length = action_dim;
      ce.channels = cfg.conv_channels;
      ce.output = cfg.action_repr;
      ae_ = ConvEncoder(ce);
    }
    f_ = Mlp(MlpSpec{cfg.state_repr + action_width() + noise_dim_, {cfg.forward_hidden}, cfg.state_repr,
                     Activation::kRelu, 1.0});
  }

  bool discrete() const { return discrete_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  std::size_t noise_dim() const { return noise_dim_; }
  std::size_t state_width() const { return se_.output_width(); }
  std::size_t action_width() const { return discrete_ ? action_dim_ : ae_.output_width(); }
  const Mlp& forward_model() const { return f_; }

  ParamSet init(Rng& rng) const {
    ParamSet p = se_.init(rng).prefixed("se.");
    if (!discrete_) p.merge(ae_.init(rng).prefixed("ae."));
    p.merge(f_.init(rng).prefixed("f."));
    return p;
  }

  diff::Var encode_states(const Bound& b, const diff::Var& s) const { return se_.forward(scoped(b, "se."), s); }

  diff::Var encode_actions(const Bound& b, const diff::Var& a) const {
    if (discrete_) {
      if (a.cols() != action_dim_) throw ShapeError("one-hot action width mismatch");
      return a;
    }
    return ae_.forward(scoped(b, "ae."), a);
  }

  Tensor encode_states(const ParamSet& p, const Tensor& s) const { return se_.predict(p, s, "se."); }

  Tensor encode_actions(const ParamSet& p, const Tensor& a) const {
    if (discrete_) return a;
    return ae_.predict(p.extract("ae."), a);
  }

  // z^s (+) z^a (+) noise -> predicted next state representation.
  diff::Var predict_next(const Bound& b, const diff::Var& zs, const diff::Var& za, const Tensor& noise) const {
    if (zs.cols() != state_width() || za.cols() != action_width()) {
      throw ShapeError("forward model expects " + std::to_string(state_width()) + " + " +
                       std::to_string(action_width()) + " representation columns");
    }
    if (noise.rows() != zs.rows() || noise.cols() != noise_dim_) throw ShapeError("forward model noise shape");
    std::vector<diff::Var> parts{zs, za};
    if (noise_dim_ > 0) parts.push_back(zs.tape().constant(noise));
    return f_.forward(scoped(b, "f."), diff::concat_cols(parts));
  }

  // Fresh N(0,1) noise per row per call.
  Tensor draw_noise(std::size_t rows, Rng& rng) const {
    Tensor n(rows, noise_dim_);
    for (double& v : n.values()) v = normal(rng);
    return n;
  }

  Tensor predict_next(const ParamSet& p, const Tensor& zs, const Tensor& za, Rng& rng) const {
    const Tensor noise = draw_noise(zs.rows(), rng);
    const Tensor parts[] = {zs, za, noise};
    if (zs.cols() != state_width() || za.cols() != action_width()) throw ShapeError("forward model input widths");
    return f_.predict(p, hconcat(std::span<const Tensor>(parts)), "f.");
  }

 private:
  std::size_t state_dim_ = 0;
  std::size_t action_dim_ = 0;
  bool discrete_ = false;
  std::size_t noise_dim_ = 0;
  Mlp se_;
  ConvEncoder ae_;
  Mlp f_;
};

// ---------------------------------------------------------------------------
// REPR step.

struct Transitions {
  Tensor states;
  Tensor actions;  // as executed (clipped / one-hot)
  Tensor next_states;
  std::size_t size() const { return states.rows(); }
};

struct ReprLosses {
  double forward = 0.0;
  double state = 0.0;
  double action = 0.0;
  double total = 0.0;
};

struct ReprStats {
  ReprLosses mean;  // averaged over minibatches, before each step
  std::size_t minibatches = 0;
};

// Corrupted views of one minibatch. State and action views are corrupted
// separately at their own rates.
struct Views {
  Tensor states;
  Tensor actions;
};

inline Views corrupt_views(const Transitions& mb, const ReprConfig& cfg, const Tensor& state_mean,
                           const Tensor& action_mean, bool with_actions, Rng& rng) {
  Views v;
  v.states = corrupt(cfg.method, mb.states, corruption_count(cfg.state_rate, mb.states.cols()), rng, state_mean);
  if (with_actions) {
    v.actions =
        corrupt(cfg.method, mb.actions, corruption_count(cfg.action_rate, mb.actions.cols()), rng, action_mean);
  }
  return v;
}

struct ReprTerms {
  diff::Var forward, state, action, total;
};

// Builds L_SS for one minibatch on `tape`. Discrete mode drops L_AC.
inline ReprTerms repr_terms(diff::Tape& tape, const Bound& b, const Encoders& enc, const Transitions& mb,
                            const Views& views, const Tensor& noise, const ReprConfig& cfg) {
  const diff::Var s = tape.constant(mb.states);
  const diff::Var a = tape.constant(mb.actions);
  const diff::Var zs = enc.encode_states(b, s);
  const diff::Var za = enc.encode_actions(b, a);
  const diff::Var zs_next = enc.encode_states(b, tape.constant(mb.next_states));
  const diff::Var pred = enc.predict_next(b, zs, za, noise);
  ReprTerms t;
  t.forward = infonce_loss(pred, zs, zs_next, cfg.tau);
  t.state = state_mse_loss(zs, enc.encode_states(b, tape.constant(views.states)));
  if (enc.discrete()) {
    t.action = tape.constant(Tensor::scalar(0.0));
  } else {
    t.action = barlow_loss(za, enc.encode_actions(b, tape.constant(views.actions)), cfg.barlow);
  }
  t.total = total_loss(t.forward, t.state, t.action, cfg.weights);
  return t;
}

inline Transitions gather(const Transitions& d, std::span<const std::size_t> idx) {
  return {d.states.gather_rows(idx), d.actions.gather_rows(idx), d.next_states.gather_rows(idx)};
}

// One pass over the rollout set in minibatches, one Adam step each on SE, AE
// and F jointly. `params` holds exactly those networks.
inline ReprStats repr_update(const Encoders& enc, ParamSet& params, AdamState& opt, const Transitions& data,
                             const ReprConfig& cfg, Rng& corrupt_rng, Rng& noise_rng) {
  cfg.validate();
  const std::size_t n = data.size();
  if (n < 2) throw ShapeError("REPR needs at least 2 transitions");
  if (data.actions.rows() != n || data.next_states.rows() != n) throw ShapeError("REPR transition rows differ");
  const Tensor state_mean = column_mean(data.states);
  const Tensor action_mean = column_mean(data.actions);
  const auto order = permutation(corrupt_rng, n);
  // Remainder rows join the last minibatch so every row is used once.
  const std::size_t count = std::max<std::size_t>(1, n / cfg.batch);
  ReprStats stats;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t lo = k * cfg.batch;
    const std::size_t hi = k + 1 == count ? n : lo + cfg.batch;
    const Transitions mb = gather(data, std::span<const std::size_t>(order).subspan(lo, hi - lo));
    const Views views = corrupt_views(mb, cfg, state_mean, action_mean, !enc.discrete(), corrupt_rng);
    const Tensor noise = enc.draw_noise(mb.size(), noise_rng);
    diff::Tape tape;
    const Bound b = bind(tape, params);
    const ReprTerms t = repr_terms(tape, b, enc, mb, views, noise, cfg);
    tape.backward(t.total);
    params = adam_step(params, gradients(tape, b), opt);
    stats.mean.forward += t.forward.value().item();
    stats.mean.state += t.state.value().item();
    stats.mean.action += t.action.value().item();
    stats.mean.total += t.total.value().item();
    ++stats.minibatches;
  }
  const double inv = 1.0 / static_cast<double>(stats.minibatches);
  stats.mean.forward *= inv;
  stats.mean.state *= inv;
  stats.mean.action *= inv;
  stats.mean.total *= inv;
  return stats;
}

}  // namespace sail::repr
