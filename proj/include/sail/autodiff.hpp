#pragma once

// Reverse-mode automatic differentiation over rank-2 tensors.
//
// A Tape records every primitive op in execution order together with a
// closure that propagates the output gradient to the op's inputs. Since
// inputs are always recorded before the op that consumes them, a single
// reverse sweep visits each op exactly once.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sail/errors.hpp"
#include "sail/tensor.hpp"

namespace sail::diff {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}, "constant"); }

  // A differentiable leaf, typically a network parameter.
  Var leaf(Tensor value) { return push(std::move(value), true, {}, "leaf"); }

  // Records an op. `fn` is dropped when no input needs a gradient.
  Var record(Tensor value, const std::vector<Var>& inputs, Backward fn, const char* op) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : Backward{}, op);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulated at a node; empty when the node never received one.
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  const Tensor& grad(const Var& v) const { return nodes_[v.id()].grad; }

  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(const Var& loss) {
    if (loss.value().size() != 1) {
      throw ShapeError("backward requires a scalar loss, got " + loss.value().shape_string());
    }
    backward(loss, Tensor::scalar(1.0));
  }

  // Vector-Jacobian product with an arbitrary seed for `output`.
  void backward(const Var& output, const Tensor& seed) {
    if (!seed.same_shape(output.value())) {
      throw ShapeError("backward seed " + seed.shape_string() + " does not match output " +
                       output.value().shape_string());
    }
    for (auto& n : nodes_) n.grad = Tensor();
    accumulate(output.id(), seed);
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  // Gradient of the last backward pass with respect to `v`; zeros when `v`
  // did not influence the output.
  Tensor gradient(const Var& v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.empty()) return Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
    const char* op = "";
  };

  Var push(Tensor value, bool requires_grad, Backward fn, const char* op) {
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by op '") + op + "' " +
                         value.shape_string());
    }
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(fn), requires_grad, op});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

inline std::pair<std::size_t, std::size_t> broadcast_shape(const Tensor& a, const Tensor& b,
                                                           const char* op) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string("cannot broadcast ") + a.shape_string() + " with " +
                     b.shape_string() + " in " + op);
  };
  return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

// Sums `g` down to a (rows x cols) operand that was broadcast up.
inline Tensor reduce_to(const Tensor& g, std::size_t rows, std::size_t cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c)
      out(rows == 1 ? 0 : r, cols == 1 ? 0 : c) += g(r, c);
  return out;
}

inline double at(const Tensor& t, std::size_t r, std::size_t c) {
  return t(t.rows() == 1 ? 0 : r, t.cols() == 1 ? 0 : c);
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, std::size_t rows, std::size_t cols, F f) {
  Tensor out(rows, cols);
  if (a.rows() == rows && a.cols() == cols && b.rows() == rows && b.cols() == cols) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  if (a.rows() == rows && a.cols() == cols && b.rows() == 1 && b.cols() == cols) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out(r, c) = f(a(r, c), b(0, c));
    return out;
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = f(at(a, r, c), at(b, r, c));
  return out;
}

// Elementwise op whose local derivative is a function of (input, output).
template <class F, class D>
Var unary(const Var& x, F f, D dfdx, const char* op) {
  const Tensor& xv = x.value();
  Tensor y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  const std::size_t xid = x.id();
  return x.tape().record(
      std::move(y), {x},
      [xid, dfdx](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& in = t.value(xid);
        const Tensor& out = t.value(self);
        Tensor gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * dfdx(in[i], out[i]);
        t.accumulate(xid, gx);
      },
      op);
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  const auto [r, c] = detail::broadcast_shape(a.value(), b.value(), "add");
  Tensor y = detail::zip(a.value(), b.value(), r, c, [](double x, double z) { return x + z; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(y), {a, b},
      [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ia)) t.accumulate(ia, detail::reduce_to(g, t.value(ia).rows(), t.value(ia).cols()));
        if (t.requires_grad(ib)) t.accumulate(ib, detail::reduce_to(g, t.value(ib).rows(), t.value(ib).cols()));
      },
      "add");
}

inline Var sub(const Var& a, const Var& b) {
  const auto [r, c] = detail::broadcast_shape(a.value(), b.value(), "sub");
  Tensor y = detail::zip(a.value(), b.value(), r, c, [](double x, double z) { return x - z; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(y), {a, b},
      [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ia)) t.accumulate(ia, detail::reduce_to(g, t.value(ia).rows(), t.value(ia).cols()));
        if (t.requires_grad(ib)) t.accumulate(ib, detail::reduce_to(g, t.value(ib).rows(), t.value(ib).cols()) * -1.0);
      },
      "sub");
}

inline Var mul(const Var& a, const Var& b) {
  const auto [r, c] = detail::broadcast_shape(a.value(), b.value(), "mul");
  Tensor y = detail::zip(a.value(), b.value(), r, c, [](double x, double z) { return x * z; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(y), {a, b},
      [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (t.requires_grad(ia)) {
          Tensor ga = detail::zip(g, bv, g.rows(), g.cols(), [](double x, double z) { return x * z; });
          t.accumulate(ia, detail::reduce_to(ga, av.rows(), av.cols()));
        }
        if (t.requires_grad(ib)) {
          Tensor gb = detail::zip(g, av, g.rows(), g.cols(), [](double x, double z) { return x * z; });
          t.accumulate(ib, detail::reduce_to(gb, bv.rows(), bv.cols()));
        }
      },
      "mul");
}

inline Var div(const Var& a, const Var& b) {
  const auto [r, c] = detail::broadcast_shape(a.value(), b.value(), "div");
  for (double v : b.value().values()) {
    if (v == 0.0) throw NumericError("division by zero");
  }
  Tensor y = detail::zip(a.value(), b.value(), r, c, [](double x, double z) { return x / z; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(y), {a, b},
      [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (t.requires_grad(ia)) {
          Tensor ga = detail::zip(g, bv, g.rows(), g.cols(), [](double x, double z) { return x / z; });
          t.accumulate(ia, detail::reduce_to(ga, av.rows(), av.cols()));
        }
        if (t.requires_grad(ib)) {
          const Tensor& out = t.value(self);
          Tensor gb(g.rows(), g.cols());
          for (std::size_t r2 = 0; r2 < g.rows(); ++r2)
            for (std::size_t c2 = 0; c2 < g.cols(); ++c2)
              gb(r2, c2) = -g(r2, c2) * out(r2, c2) / detail::at(bv, r2, c2);
          t.accumulate(ib, detail::reduce_to(gb, bv.rows(), bv.cols()));
        }
      },
      "div");
}

inline Var scale(const Var& x, double s) {
  return detail::unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; }, "scale");
}

inline Var add_scalar(const Var& x, double s) {
  return detail::unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; }, "add_scalar");
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator+(double s, const Var& a) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }
inline Var operator-(double s, const Var& a) { return add_scalar(scale(a, -1.0), s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

inline Var matmul(const Var& a, const Var& b) {
  Tensor y = sail::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(y), {a, b},
      [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (t.requires_grad(ia)) {
          Tensor ga(av.rows(), av.cols());
          ga.map().noalias() = g.map() * bv.map().transpose();
          t.accumulate(ia, ga);
        }
        if (t.requires_grad(ib)) {
          Tensor gb(bv.rows(), bv.cols());
          gb.map().noalias() = av.map().transpose() * g.map();
          t.accumulate(ib, gb);
        }
      },
      "matmul");
}

inline Var transpose(const Var& x) {
  const std::size_t ix = x.id();
  return x.tape().record(
      x.value().transposed(), {x},
      [ix](Tape& t, std::size_t self) { t.accumulate(ix, t.grad(self).transposed()); }, "transpose");
}

inline Var tanh(const Var& x) {
  Tensor y = x.value();
  tanh_inplace(y);
  const std::size_t xid = x.id();
  return x.tape().record(
      std::move(y), {x},
      [xid](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& out = t.value(self);
        Tensor gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (1.0 - out[i] * out[i]);
        t.accumulate(xid, gx);
      },
      "tanh");
}

inline Var relu(const Var& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; },
      "relu");
}

inline Var leaky_relu(const Var& x, double slope) {
  return detail::unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; }, "leaky_relu");
}

inline double sigmoid(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline double softplus(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

inline Var sigmoid(const Var& x) {
  return detail::unary(
      x, [](double v) { return sigmoid(v); }, [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

// log(1 + e^x), evaluated without overflow.
inline Var softplus(const Var& x) {
  return detail::unary(
      x, [](double v) { return softplus(v); }, [](double v, double) { return sigmoid(v); }, "softplus");
}

inline Var exp(const Var& x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; }, "exp");
}

inline Var log(const Var& x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; }, "log");
}

inline Var sqrt(const Var& x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw NumericError("sqrt of non-positive value " + std::to_string(v));
  }
  return detail::unary(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; }, "sqrt");
}

inline Var square(const Var& x) {
  return detail::unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; }, "square");
}

// Clamp with zero gradient outside [lo, hi].
inline Var clamp(const Var& x, double lo, double hi) {
  return detail::unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; }, "clamp");
}

inline Var sum(const Var& x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const std::size_t ix = x.id();
  const std::size_t r = xv.rows(), c = xv.cols();
  return x.tape().record(
      Tensor::scalar(s), {x},
      [ix, r, c](Tape& t, std::size_t self) { t.accumulate(ix, Tensor(r, c, t.grad(self)[0])); }, "sum");
}

inline Var mean(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.size() == 0) throw ShapeError("mean of empty tensor");
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const double n = static_cast<double>(xv.size());
  const std::size_t ix = x.id();
  const std::size_t r = xv.rows(), c = xv.cols();
  return x.tape().record(
      Tensor::scalar(s / n), {x},
      [ix, r, c, n](Tape& t, std::size_t self) { t.accumulate(ix, Tensor(r, c, t.grad(self)[0] / n)); },
      "mean");
}

// Reduces over rows: (r x c) -> (1 x c).
inline Var sum_rows(const Var& x) {
  const Tensor& xv = x.value();
  Tensor y(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) y(0, c) += xv(r, c);
  const std::size_t ix = x.id();
  const std::size_t rows = xv.rows();
  return x.tape().record(
      std::move(y), {x},
      [ix, rows](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor gx(rows, g.cols());
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) = g(0, c);
        t.accumulate(ix, gx);
      },
      "sum_rows");
}

// Reduces over columns: (r x c) -> (r x 1).
inline Var sum_cols(const Var& x) {
  const Tensor& xv = x.value();
  Tensor y(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) y(r, 0) += xv(r, c);
  const std::size_t ix = x.id();
  const std::size_t cols = xv.cols();
  return x.tape().record(
      std::move(y), {x},
      [ix, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor gx(g.rows(), cols);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < cols; ++c) gx(r, c) = g(r, 0);
        t.accumulate(ix, gx);
      },
      "sum_cols");
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  Tensor y = hconcat(values);
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (id, width)
  for (const auto& p : parts) spans.emplace_back(p.id(), p.cols());
  return parts.front().tape().record(
      std::move(y), parts,
      [spans](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t off = 0;
        for (const auto& [id, w] : spans) {
          if (t.requires_grad(id)) {
            Tensor gi(g.rows(), w);
            for (std::size_t r = 0; r < g.rows(); ++r)
              for (std::size_t c = 0; c < w; ++c) gi(r, c) = g(r, off + c);
            t.accumulate(id, gi);
          }
          off += w;
        }
      },
      "concat_cols");
}

inline Var slice_cols(const Var& x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  if (start + count > xv.cols()) throw ShapeError("slice_cols out of range");
  Tensor y(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) y(r, c) = xv(r, start + c);
  const std::size_t ix = x.id();
  const std::size_t cols = xv.cols();
  return x.tape().record(
      std::move(y), {x},
      [ix, start, count, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor gx(g.rows(), cols);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < count; ++c) gx(r, start + c) = g(r, c);
        t.accumulate(ix, gx);
      },
      "slice_cols");
}

// Row-wise log-softmax.
inline Var log_softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  Tensor y(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double m = xv(r, 0);
    for (std::size_t c = 1; c < xv.cols(); ++c) m = std::max(m, xv(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) s += std::exp(xv(r, c) - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < xv.cols(); ++c) y(r, c) = xv(r, c) - lse;
  }
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(y), {x},
      [ix](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& out = t.value(self);
        Tensor gx(g.rows(), g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double gs = 0.0;
          for (std::size_t c = 0; c < g.cols(); ++c) gs += g(r, c);
          for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) = g(r, c) - std::exp(out(r, c)) * gs;
        }
        t.accumulate(ix, gx);
      },
      "log_softmax_rows");
}

// 1-D convolution, kernel 3, stride 1, zero "same" padding.
//   x: (batch, in_ch * length), channel-major ([c * length + l])
//   w: (in_ch * 3, out_ch), b: (1, out_ch)
//   result: (batch, out_ch * length)
inline Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t in_ch, std::size_t length) {
  constexpr std::size_t kKernel = 3;
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.cols() != in_ch * length) {
    throw ShapeError("conv1d input width " + std::to_string(xv.cols()) + ", expected " +
                     std::to_string(in_ch) + " channels x " + std::to_string(length));
  }
  if (wv.rows() != in_ch * kKernel) {
    throw ShapeError("conv1d weight rows " + std::to_string(wv.rows()) + ", expected " +
                     std::to_string(in_ch * kKernel));
  }
  const std::size_t out_ch = wv.cols();
  if (b.value().rows() != 1 || b.value().cols() != out_ch) throw ShapeError("conv1d bias shape");
  const std::size_t batch = xv.rows();

  auto cols = std::make_shared<Tensor>(batch * length, in_ch * kKernel);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t l = 0; l < length; ++l)
      for (std::size_t c = 0; c < in_ch; ++c)
        for (std::size_t k = 0; k < kKernel; ++k) {
          const auto src = static_cast<std::ptrdiff_t>(l + k) - 1;
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(length)) {
            (*cols)(n * length + l, c * kKernel + k) = xv(n, c * length + static_cast<std::size_t>(src));
          }
        }
  Tensor flat = sail::matmul(*cols, wv);
  Tensor y(batch, out_ch * length);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t l = 0; l < length; ++l)
      for (std::size_t o = 0; o < out_ch; ++o) y(n, o * length + l) = flat(n * length + l, o) + b.value()(0, o);

  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(
      std::move(y), {x, w, b},
      [=](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor gflat(batch * length, out_ch);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t l = 0; l < length; ++l)
            for (std::size_t o = 0; o < out_ch; ++o) gflat(n * length + l, o) = g(n, o * length + l);
        if (t.requires_grad(iw)) {
          Tensor gw(in_ch * kKernel, out_ch);
          gw.map().noalias() = cols->map().transpose() * gflat.map();
          t.accumulate(iw, gw);
        }
        if (t.requires_grad(ib)) {
          Tensor gb(1, out_ch);
          for (std::size_t r = 0; r < gflat.rows(); ++r)
            for (std::size_t o = 0; o < out_ch; ++o) gb(0, o) += gflat(r, o);
          t.accumulate(ib, gb);
        }
        if (t.requires_grad(ix)) {
          Tensor gcols(batch * length, in_ch * kKernel);
          gcols.map().noalias() = gflat.map() * t.value(iw).map().transpose();
          Tensor gx(batch, in_ch * length);
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t l = 0; l < length; ++l)
              for (std::size_t c = 0; c < in_ch; ++c)
                for (std::size_t k = 0; k < kKernel; ++k) {
                  const auto src = static_cast<std::ptrdiff_t>(l + k) - 1;
                  if (src >= 0 && src < static_cast<std::ptrdiff_t>(length)) {
                    gx(n, c * length + static_cast<std::size_t>(src)) += gcols(n * length + l, c * kKernel + k);
                  }
                }
          t.accumulate(ix, gx);
        }
      },
      "conv1d");
}

// Average over the length axis: (batch, ch * length) -> (batch, ch).
inline Var mean_over_length(const Var& x, std::size_t ch, std::size_t length) {
  const Tensor& xv = x.value();
  if (xv.cols() != ch * length) throw ShapeError("mean_over_length width mismatch");
  Tensor y(xv.rows(), ch);
  const double inv = 1.0 / static_cast<double>(length);
  for (std::size_t n = 0; n < xv.rows(); ++n)
    for (std::size_t c = 0; c < ch; ++c) {
      double s = 0.0;
      for (std::size_t l = 0; l < length; ++l) s += xv(n, c * length + l);
      y(n, c) = s * inv;
    }
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(y), {x},
      [ix, ch, length, inv](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor gx(g.rows(), ch * length);
        for (std::size_t n = 0; n < g.rows(); ++n)
          for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t l = 0; l < length; ++l) gx(n, c * length + l) = g(n, c) * inv;
        t.accumulate(ix, gx);
      },
      "mean_over_length");
}

}  // namespace sail::diff
