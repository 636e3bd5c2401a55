#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "sail/adam.hpp"
#include "sail/autodiff.hpp"
#include "sail/checkpoint.hpp"
#include "sail/nn.hpp"

using namespace sail;
using sail::testing::check_gradients;
using sail::testing::random_tensor;

namespace {

// Plain loops, no Eigen and no tape.
Tensor hand_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y(x.rows(), w.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) {
      double s = b(0, c);
      for (std::size_t k = 0; k < x.cols(); ++k) s += x(r, k) * w(k, c);
      y(r, c) = s;
    }
  return y;
}

}  // namespace

TEST(Forward, IdentityLinearLayer) {
  Mlp net(MlpSpec{3, {}, 3, Activation::kTanh});
  ParamSet p;
  p.insert("l0.weight", Tensor::identity(3));
  p.insert("l0.bias", Tensor(1, 3));
  const Tensor y = net.predict(p, Tensor{{1, 2, 3}});
  EXPECT_EQ(y, (Tensor{{1, 2, 3}}));
  diff::Tape tape;
  EXPECT_EQ(net.forward(bind(tape, p), tape.constant(Tensor{{1, 2, 3}})).value(), (Tensor{{1, 2, 3}}));
}

TEST(Forward, TanhMlpZeroInputZeroBias) {
  Rng rng(7);
  Mlp net(MlpSpec{4, {100, 100, 100}, 2, Activation::kTanh});
  const ParamSet p = net.init(rng);
  const Tensor y = net.predict(p, Tensor(5, 4));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, TwoLayerPinnedWeights) {
  Mlp net(MlpSpec{2, {2}, 1, Activation::kTanh});
  ParamSet p;
  p.insert("l0.weight", Tensor{{0.1, 0.2}, {0.3, 0.4}});
  p.insert("l0.bias", Tensor{{0.1, -0.1}});
  p.insert("l1.weight", Tensor{{0.5}, {-0.5}});
  p.insert("l1.bias", Tensor{{0.2}});
  const Tensor x{{1, 2}, {-1, 0.5}};

  Tensor h = hand_affine(x, p.at("l0.weight"), p.at("l0.bias"));
  for (double& v : h.values()) v = std::tanh(v);
  const Tensor expected = hand_affine(h, p.at("l1.weight"), p.at("l1.bias"));

  const Tensor y = net.predict(p, x);
  ASSERT_EQ(y.rows(), 2u);
  EXPECT_NEAR(y(0, 0), 0.17386945003441234, 1e-15);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(y(r, 0), expected(r, 0), 1e-15);
}

TEST(Forward, ShapeMismatchNamesLayer) {
  Mlp net(MlpSpec{3, {4}, 1, Activation::kTanh});
  Rng rng(1);
  const ParamSet p = net.init(rng);
  try {
    net.predict(p, Tensor(1, 2));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("expected 3"), std::string::npos);
  }
  ParamSet bad = p;
  bad = ParamSet();
  bad.insert("l0.weight", Tensor(3, 5));
  bad.insert("l0.bias", Tensor(1, 5));
  bad.insert("l1.weight", Tensor(4, 1));
  bad.insert("l1.bias", Tensor(1, 1));
  diff::Tape tape;
  try {
    net.forward(bind(tape, bad), tape.constant(Tensor(1, 3)));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
  }
}

TEST(Backward, SquareAtThree) {
  diff::Tape tape;
  auto x = tape.leaf(Tensor::scalar(3.0));
  auto loss = diff::square(x);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.gradient(x).item(), 6.0);
}

TEST(Backward, SquaredNormOfLinearMap) {
  // loss = |x W|^2, dloss/dW = 2 x^T (x W)
  const Tensor xv{{1.0, -2.0}};
  const Tensor wv{{0.5, 1.0, 0.0}, {0.25, -1.0, 2.0}};
  diff::Tape tape;
  auto x = tape.constant(xv);
  auto w = tape.leaf(wv);
  tape.backward(diff::sum(diff::square(diff::matmul(x, w))));
  // x W = (0, 3, -4)
  const Tensor expected{{0.0, 6.0, -8.0}, {0.0, -12.0, 16.0}};
  EXPECT_EQ(tape.gradient(w), expected);
}

TEST(Backward, NonScalarLossRejected) {
  diff::Tape tape;
  auto x = tape.leaf(Tensor{{1.0, 2.0}});
  EXPECT_THROW(tape.backward(diff::square(x)), ShapeError);
}

TEST(Backward, UnusedParameterGetsZeroGradient) {
  diff::Tape tape;
  ParamSet p;
  p.insert("a", Tensor{{2.0}});
  p.insert("b", Tensor{{5.0}});
  const Bound b = bind(tape, p);
  tape.backward(diff::square(param(b, "a")));
  const ParamSet g = gradients(tape, b);
  EXPECT_EQ(g.at("a").item(), 4.0);
  EXPECT_EQ(g.at("b").item(), 0.0);
}

TEST(Backward, NonFiniteValueIsAnError) {
  diff::Tape tape;
  auto x = tape.leaf(Tensor{{800.0}});
  EXPECT_THROW(diff::exp(x), NumericError);
  EXPECT_THROW(diff::log(tape.leaf(Tensor{{0.0}})), NumericError);
}

TEST(Backward, FiniteDifferencesOnEveryPrimitive) {
  // A composite loss touching each op, checked on 20 seeds.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    ParamSet p;
    p.insert("a", random_tensor(rng, 3, 4));
    p.insert("b", random_tensor(rng, 1, 4));
    p.insert("c", random_tensor(rng, 4, 2));
    p.insert("d", random_tensor(rng, 3, 1));
    auto build = [](const Bound& b) {
      using namespace diff;
      const Var& a = param(b, "a");
      Var h = tanh(a + param(b, "b"));
      Var s = sigmoid(matmul(h, param(b, "c")));
      Var l = log_softmax_rows(concat_cols({s, softplus(param(b, "d")), leaky_relu(slice_cols(a, 1, 2), 0.1)}));
      Var q = sum_rows(square(l)) / (sum_cols(exp(s * 0.5)) + 1.0);
      Var r = sqrt(add_scalar(square(transpose(param(b, "d"))), 1.0));
      Var z = mean(q * 1.5) + sum(r) + mean(log(sigmoid(a) + 0.5)) - mean(clamp(a, -0.5, 0.7)) +
              sum(relu(a - 0.2) * 0.3) + mean(param(b, "d") / (square(param(b, "b")) + 1.0));
      return z;
    };
    auto loss = [&](const ParamSet& ps) {
      diff::Tape t;
      return build(bind(t, ps)).value().item();
    };
    diff::Tape tape;
    const Bound b = bind(tape, p);
    tape.backward(build(b));
    const auto res = check_gradients(loss, p, gradients(tape, b));
    EXPECT_LE(res.max_rel_error, 1e-4) << "seed " << seed << " " << res.worst;
  }
}

TEST(Backward, ConvolutionMatchesDirectSumAndFiniteDifferences) {
  Rng rng(3);
  const std::size_t in_ch = 2, out_ch = 3, length = 4, batch = 2;
  const Tensor x = random_tensor(rng, batch, in_ch * length);
  ParamSet p;
  p.insert("w", random_tensor(rng, in_ch * 3, out_ch));
  p.insert("b", random_tensor(rng, 1, out_ch));

  diff::Tape tape;
  const Bound b = bind(tape, p);
  auto y = diff::conv1d(tape.constant(x), param(b, "w"), param(b, "b"), in_ch, length);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out_ch; ++o)
      for (std::size_t l = 0; l < length; ++l) {
        double s = p.at("b")(0, o);
        for (std::size_t c = 0; c < in_ch; ++c)
          for (int k = -1; k <= 1; ++k) {
            const int src = static_cast<int>(l) + k;
            if (src < 0 || src >= static_cast<int>(length)) continue;
            s += x(n, c * length + static_cast<std::size_t>(src)) * p.at("w")(c * 3 + static_cast<std::size_t>(k + 1), o);
          }
        EXPECT_NEAR(y.value()(n, o * length + l), s, 1e-12);
      }

  ConvEncoder enc(ConvEncoderSpec{3, {4, 5}, 2, 0.01});
  const ParamSet ep = enc.init(rng);
  const Tensor a = random_tensor(rng, 4, 3);
  auto loss = [&](const ParamSet& ps) {
    diff::Tape t;
    return diff::sum(diff::square(enc.forward(bind(t, ps), t.constant(a)))).value().item();
  };
  diff::Tape t2;
  const Bound eb = bind(t2, ep);
  t2.backward(diff::sum(diff::square(enc.forward(eb, t2.constant(a)))));
  const auto res = check_gradients(loss, ep, gradients(t2, eb));
  EXPECT_LE(res.max_rel_error, 1e-4) << res.worst;
}

TEST(Backward, MlpJvpMatchesFiniteDifference) {
  Rng rng(11);
  Mlp net(MlpSpec{3, {6, 5}, 2, Activation::kTanh});
  const ParamSet p = net.init(rng);
  ParamSet v;
  for (const auto& [name, t] : p) v.insert(name, random_tensor(rng, t.rows(), t.cols()));
  const Tensor x = random_tensor(rng, 4, 3);
  const Tensor jv = net.jvp(p, v, x);
  const double h = 1e-6;
  std::vector<double> plus = p.flatten(), minus = p.flatten();
  const std::vector<double> dir = v.flatten();
  for (std::size_t i = 0; i < plus.size(); ++i) {
    plus[i] += h * dir[i];
    minus[i] -= h * dir[i];
  }
  const Tensor fp = net.predict(p.with_flat(plus), x);
  const Tensor fm = net.predict(p.with_flat(minus), x);
  for (std::size_t i = 0; i < jv.size(); ++i) EXPECT_NEAR(jv[i], (fp[i] - fm[i]) / (2 * h), 1e-7);
}

TEST(Backward, Linearity) {
  Rng rng(5);
  Mlp net(MlpSpec{3, {4}, 1, Activation::kTanh});
  const ParamSet p = net.init(rng);
  const Tensor x = random_tensor(rng, 6, 3);
  auto grads_for = [&](double alpha) {
    diff::Tape t;
    const Bound b = bind(t, p);
    t.backward(diff::mean(diff::square(net.forward(b, t.constant(x)))) * alpha);
    return gradients(t, b);
  };
  const ParamSet g1 = grads_for(1.0);
  const ParamSet g3 = grads_for(-2.5);
  const auto a = g1.flatten(), b = g3.flatten();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], -2.5 * a[i], 1e-15 + 1e-13 * std::abs(a[i]));
}

TEST(Backward, Deterministic) {
  auto run = [] {
    Rng rng(99);
    Mlp net(MlpSpec{3, {8, 8}, 2, Activation::kTanh});
    const ParamSet p = net.init(rng);
    const Tensor x = random_tensor(rng, 5, 3);
    diff::Tape t;
    const Bound b = bind(t, p);
    t.backward(diff::sum(net.forward(b, t.constant(x))));
    return gradients(t, b).flatten();
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ZeroGradientLeavesParamsAndMoments) {
  ParamSet p;
  p.insert("w", Tensor{{1.0, -2.0}});
  AdamState st(p, 1e-3);
  const ParamSet out = adam_step(p, p.zeros_like(), st);
  EXPECT_EQ(out, p);
  EXPECT_EQ(st.m, p.zeros_like());
  EXPECT_EQ(st.v, p.zeros_like());
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamSet p;
  p.insert("w", Tensor::scalar(0.0));
  AdamState st(p, 1e-3);
  ParamSet g;
  g.insert("w", Tensor::scalar(1.0));
  const ParamSet out = adam_step(p, g, st);
  // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
  EXPECT_NEAR(out.at("w").item(), -0.0009999999900000003, 1e-18);
}

TEST(Adam, RepeatedGradientGrowsMoments) {
  ParamSet p;
  p.insert("w", Tensor::scalar(0.0));
  AdamState st(p, 1e-3);
  ParamSet g;
  g.insert("w", Tensor::scalar(2.0));
  p = adam_step(p, g, st);
  const double m1 = st.m.at("w").item(), v1 = st.v.at("w").item();
  EXPECT_NEAR(m1, 0.2, 1e-15);
  EXPECT_NEAR(v1, 0.004, 1e-15);
  p = adam_step(p, g, st);
  const double m2 = st.m.at("w").item(), v2 = st.v.at("w").item();
  EXPECT_NEAR(m2, 0.9 * 0.2 + 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(v2, 0.999 * 0.004 + 0.001 * 4.0, 1e-15);
  EXPECT_GT(m2, m1);
  EXPECT_LT(m2, 2.0);
  EXPECT_GT(v2, v1);
  EXPECT_LT(v2, 4.0);
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, NanGradientNamesParameter) {
  ParamSet p;
  p.insert("policy.w", Tensor::scalar(0.0));
  AdamState st(p, 1e-3);
  ParamSet g;
  g.insert("policy.w", Tensor::scalar(std::nan("")));
  try {
    adam_step(p, g, st);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("policy.w"), std::string::npos);
  }
}

TEST(Checkpoint, BitExactRoundTrip) {
  Rng rng(2);
  Mlp net(MlpSpec{3, {5}, 2, Activation::kTanh});
  Checkpoint ck;
  ck.params = net.init(rng).prefixed("policy/");
  ParamSet extra;
  extra.insert("odd", Tensor{{-0.0, 1e-310, 3.141592653589793}});
  ck.params.merge(extra);
  ck.meta = {"abc123", 42, rng_state(rng)};
  const std::string bytes = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.meta, ck.meta);
  EXPECT_EQ(back.params, ck.params);
  EXPECT_TRUE(std::signbit(back.params.at("odd")[0]));
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), ConfigError);
  EXPECT_THROW(deserialize_checkpoint("NOTACKPT"), ConfigError);
}

TEST(ParamSet, ShapesAreFixed) {
  ParamSet p;
  p.insert("w", Tensor(2, 2));
  EXPECT_THROW(p.set("w", Tensor(3, 2)), ShapeError);
  EXPECT_THROW(p.insert("w", Tensor(2, 2)), ConfigError);
  p.insert("a", Tensor(1, 1));
  EXPECT_EQ(p.begin()->first, "a");
}
