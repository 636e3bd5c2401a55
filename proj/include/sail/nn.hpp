#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sail/autodiff.hpp"
#include "sail/rng.hpp"
#include "sail/tensor.hpp"

namespace sail {

// Named trainable arrays of one network. Iteration is lexicographic by name;
// a parameter's shape is fixed once inserted.
class ParamSet {
 public:
  using Storage = std::map<std::string, Tensor>;

  void insert(const std::string& name, Tensor value) {
    if (!items_.emplace(name, std::move(value)).second) {
      throw ConfigError("duplicate parameter name '" + name + "'");
    }
  }

  void set(const std::string& name, Tensor value) {
    Tensor& slot = mutable_at(name);
    if (!slot.same_shape(value)) {
      throw ShapeError("parameter '" + name + "' has shape " + slot.shape_string() + ", got " +
                       value.shape_string());
    }
    slot = std::move(value);
  }

  const Tensor& at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return items_.count(name) != 0; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  Storage::const_iterator begin() const { return items_.begin(); }
  Storage::const_iterator end() const { return items_.end(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.size();
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> flat;
    flat.reserve(numel());
    for (const auto& [_, t] : items_) flat.insert(flat.end(), t.values().begin(), t.values().end());
    return flat;
  }

  ParamSet with_flat(std::span<const double> flat) const {
    if (flat.size() != numel()) throw ShapeError("flat vector length does not match parameter count");
    ParamSet out;
    std::size_t off = 0;
    for (const auto& [name, t] : items_) {
      std::vector<double> d(flat.begin() + static_cast<std::ptrdiff_t>(off),
                            flat.begin() + static_cast<std::ptrdiff_t>(off + t.size()));
      out.insert(name, Tensor(t.rows(), t.cols(), std::move(d)));
      off += t.size();
    }
    return out;
  }

  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& [name, t] : items_) out.insert(name, Tensor(t.rows(), t.cols()));
    return out;
  }

  // Copy with every name prefixed, used to merge networks into one container.
  ParamSet prefixed(const std::string& prefix) const {
    ParamSet out;
    for (const auto& [name, t] : items_) out.insert(prefix + name, t);
    return out;
  }

  ParamSet extract(const std::string& prefix) const {
    ParamSet out;
    for (const auto& [name, t] : items_) {
      if (name.rfind(prefix, 0) == 0) out.insert(name.substr(prefix.size()), t);
    }
    return out;
  }

  void merge(const ParamSet& other) {
    for (const auto& [name, t] : other) insert(name, t);
  }

  // Entries whose name starts with any of `prefixes`, names kept.
  ParamSet subset(const std::vector<std::string>& prefixes) const {
    ParamSet out;
    for (const auto& [name, t] : items_) {
      for (const auto& p : prefixes) {
        if (name.rfind(p, 0) == 0) {
          out.insert(name, t);
          break;
        }
      }
    }
    return out;
  }

  // Overwrites the entries named in `other`; all must exist already.
  void assign(const ParamSet& other) {
    for (const auto& [name, t] : other) set(name, t);
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.items_ == b.items_; }

 private:
  Tensor& mutable_at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  Storage items_;
};

// Parameters placed on a tape as differentiable leaves.
using Bound = std::map<std::string, diff::Var>;

inline Bound bind(diff::Tape& tape, const ParamSet& params) {
  Bound b;
  for (const auto& [name, t] : params) b.emplace(name, tape.leaf(t));
  return b;
}

inline const diff::Var& param(const Bound& b, const std::string& name) {
  auto it = b.find(name);
  if (it == b.end()) throw ConfigError("parameter '" + name + "' is not bound");
  return it->second;
}

// The entries under `prefix`, with the prefix stripped, so a network can be
// evaluated from a container that holds several.
inline Bound scoped(const Bound& b, const std::string& prefix) {
  Bound out;
  for (const auto& [name, v] : b) {
    if (name.rfind(prefix, 0) == 0) out.emplace(name.substr(prefix.size()), v);
  }
  return out;
}

// d(output)/d(param) from the last backward sweep; zeros for unused params.
inline ParamSet gradients(const diff::Tape& tape, const Bound& bound) {
  ParamSet g;
  for (const auto& [name, v] : bound) g.insert(name, tape.gradient(v));
  return g;
}

enum class Activation { kIdentity, kTanh, kRelu, kLeakyRelu };

inline double activate(Activation a, double v, double slope = 0.01) {
  switch (a) {
    case Activation::kTanh: return std::tanh(v);
    case Activation::kRelu: return v > 0.0 ? v : 0.0;
    case Activation::kLeakyRelu: return v > 0.0 ? v : slope * v;
    case Activation::kIdentity: break;
  }
  return v;
}

inline double activate_grad(Activation a, double pre, double slope = 0.01) {
  switch (a) {
    case Activation::kTanh: {
      const double y = std::tanh(pre);
      return 1.0 - y * y;
    }
    case Activation::kRelu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kLeakyRelu: return pre > 0.0 ? 1.0 : slope;
    case Activation::kIdentity: break;
  }
  return 1.0;
}

inline void activate_inplace(Activation a, Tensor& x, double slope = 0.01) {
  if (a == Activation::kTanh) {
    tanh_inplace(x);
    return;
  }
  for (double& v : x.values()) v = activate(a, v, slope);
}

inline diff::Var activate(Activation a, const diff::Var& x, double slope = 0.01) {
  switch (a) {
    case Activation::kTanh: return diff::tanh(x);
    case Activation::kRelu: return diff::relu(x);
    case Activation::kLeakyRelu: return diff::leaky_relu(x, slope);
    case Activation::kIdentity: break;
  }
  return x;
}

// Uniform fan-in scaled init, variance gain^2 / fan_in; biases start at zero.
inline Tensor init_weight(Rng& rng, std::size_t fan_in, std::size_t rows, std::size_t cols, double gain) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  Tensor w(rows, cols);
  for (double& v : w.values()) v = uniform(rng, -bound, bound);
  return w;
}

struct MlpSpec {
  std::size_t input = 0;
  std::vector<std::size_t> hidden;
  std::size_t output = 0;
  Activation activation = Activation::kTanh;
  double output_gain = 1.0;
};

// Fully connected network: hidden layers with `activation`, linear output.
// Parameters are "l<i>.weight" (in x out) and "l<i>.bias" (1 x out).
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    if (spec_.input == 0 || spec_.output == 0) throw ConfigError("MLP widths must be positive");
    widths_.push_back(spec_.input);
    widths_.insert(widths_.end(), spec_.hidden.begin(), spec_.hidden.end());
    widths_.push_back(spec_.output);
  }

  const MlpSpec& spec() const { return spec_; }
  std::size_t layers() const { return widths_.size() - 1; }
  std::size_t input_width() const { return spec_.input; }
  std::size_t output_width() const { return spec_.output; }

  ParamSet init(Rng& rng) const {
    ParamSet p;
    for (std::size_t i = 0; i < layers(); ++i) {
      const double gain = i + 1 == layers() ? spec_.output_gain : 1.0;
      p.insert(weight_name(i), init_weight(rng, widths_[i], widths_[i], widths_[i + 1], gain));
      p.insert(bias_name(i), Tensor(1, widths_[i + 1]));
    }
    return p;
  }

  diff::Var forward(const Bound& params, const diff::Var& input) const {
    check_input(input.value());
    diff::Var h = input;
    for (std::size_t i = 0; i < layers(); ++i) {
      const auto& w = param(params, weight_name(i));
      if (w.rows() != h.cols() || w.cols() != widths_[i + 1]) {
        throw ShapeError("layer " + std::to_string(i) + ": weight " + w.value().shape_string() +
                         " does not accept input " + h.value().shape_string());
      }
      h = diff::matmul(h, w) + param(params, bias_name(i));
      if (i + 1 < layers()) h = activate(spec_.activation, h);
    }
    return h;
  }

  // Tape-free evaluation.
  // `prefix` selects this network inside a larger container.
  Tensor predict(const ParamSet& params, const Tensor& input, const std::string& prefix = "") const {
    check_input(input);
    Tensor h = input;
    for (std::size_t i = 0; i < layers(); ++i) {
      Tensor pre = sail::matmul(h, params.at(prefix + weight_name(i)));
      const Tensor& b = params.at(prefix + bias_name(i));
      for (std::size_t r = 0; r < pre.rows(); ++r)
        for (std::size_t c = 0; c < pre.cols(); ++c) pre(r, c) += b(0, c);
      if (i + 1 < layers()) activate_inplace(spec_.activation, pre);
      h = std::move(pre);
    }
    return h;
  }

  // Forward-mode directional derivative of the output with respect to the
  // parameters along `tangent` (same names and shapes as `params`).
  Tensor jvp(const ParamSet& params, const ParamSet& tangent, const Tensor& input) const {
    check_input(input);
    Tensor h = input;
    Tensor dh(input.rows(), input.cols());
    for (std::size_t i = 0; i < layers(); ++i) {
      const Tensor& w = params.at(weight_name(i));
      const Tensor& b = params.at(bias_name(i));
      Tensor pre = sail::matmul(h, w);
      Tensor dpre = sail::matmul(h, tangent.at(weight_name(i)));
      if (i > 0) dpre += sail::matmul(dh, w);
      const Tensor& db = tangent.at(bias_name(i));
      for (std::size_t r = 0; r < pre.rows(); ++r)
        for (std::size_t c = 0; c < pre.cols(); ++c) {
          pre(r, c) += b(0, c);
          dpre(r, c) += db(0, c);
        }
      if (i + 1 < layers()) {
        if (spec_.activation == Activation::kTanh) {
          tanh_inplace(pre);
          for (std::size_t k = 0; k < pre.size(); ++k) dpre[k] *= 1.0 - pre[k] * pre[k];
        } else {
          for (std::size_t k = 0; k < pre.size(); ++k) {
            dpre[k] *= activate_grad(spec_.activation, pre[k]);
            pre[k] = activate(spec_.activation, pre[k]);
          }
        }
      }
      h = std::move(pre);
      dh = std::move(dpre);
    }
    return dh;
  }

  // Layer inputs and activation slopes of one forward pass, reused by the
  // tape-free products below when the input batch is fixed.
  struct Cache {
    std::vector<Tensor> inputs;  // input of layer i
    std::vector<Tensor> slopes;  // d act / d pre of hidden layer i
  };

  Cache forward_cache(const ParamSet& params, const Tensor& input, const std::string& prefix = "") const {
    check_input(input);
    Cache c;
    Tensor h = input;
    for (std::size_t i = 0; i < layers(); ++i) {
      c.inputs.push_back(h);
      if (i + 1 == layers()) break;
      Tensor pre = sail::matmul(h, params.at(prefix + weight_name(i)));
      pre.map().rowwise() += params.at(prefix + bias_name(i)).map().row(0);
      Tensor slope = pre;
      if (spec_.activation == Activation::kTanh) {
        tanh_inplace(pre);
        for (std::size_t k = 0; k < pre.size(); ++k) slope[k] = 1.0 - pre[k] * pre[k];
      } else {
        for (std::size_t k = 0; k < pre.size(); ++k) {
          slope[k] = activate_grad(spec_.activation, pre[k]);
          pre[k] = activate(spec_.activation, pre[k]);
        }
      }
      c.slopes.push_back(std::move(slope));
      h = std::move(pre);
    }
    return c;
  }

  // Output directional derivative along a parameter tangent.
  Tensor jvp(const Cache& c, const ParamSet& params, const ParamSet& tangent, const std::string& prefix = "") const {
    Tensor dh;
    for (std::size_t i = 0; i < layers(); ++i) {
      Tensor dpre = sail::matmul(c.inputs[i], tangent.at(prefix + weight_name(i)));
      if (i > 0) dpre.map() += dh.map() * params.at(prefix + weight_name(i)).map();
      dpre.map().rowwise() += tangent.at(prefix + bias_name(i)).map().row(0);
      if (i + 1 < layers()) dpre.map().array() *= c.slopes[i].map().array();
      dh = std::move(dpre);
    }
    return dh;
  }

  // Parameter gradient of <seed, output>, named with `prefix`.
  ParamSet vjp(const Cache& c, const ParamSet& params, const Tensor& seed, const std::string& prefix = "") const {
    ParamSet g;
    Tensor delta = seed;
    for (std::size_t i = layers(); i-- > 0;) {
      Tensor gw(c.inputs[i].cols(), delta.cols());
      gw.map().noalias() = c.inputs[i].map().transpose() * delta.map();
      Tensor gb(1, delta.cols());
      gb.map() = delta.map().colwise().sum();
      g.insert(prefix + weight_name(i), std::move(gw));
      g.insert(prefix + bias_name(i), std::move(gb));
      if (i == 0) break;
      Tensor prev(delta.rows(), c.inputs[i].cols());
      prev.map().noalias() = delta.map() * params.at(prefix + weight_name(i)).map().transpose();
      prev.map().array() *= c.slopes[i - 1].map().array();
      delta = std::move(prev);
    }
    return g;
  }

  static std::string weight_name(std::size_t i) { return "l" + std::to_string(i) + ".weight"; }
  static std::string bias_name(std::size_t i) { return "l" + std::to_string(i) + ".bias"; }

 private:
  void check_input(const Tensor& x) const {
    if (x.cols() != spec_.input) {
      throw ShapeError("MLP input width " + std::to_string(x.cols()) + ", expected " +
                       std::to_string(spec_.input) + " (input " + x.shape_string() + ")");
    }
  }

  MlpSpec spec_;
  std::vector<std::size_t> widths_;
};

struct ConvEncoderSpec {
  std::size_t length = 1;
  std::vector<std::size_t> channels{64, 64, 64, 128, 256, 256};
  std::size_t output = 8;
  double slope = 0.01;
};

// Action encoder: a stack of kernel-3 same-padded 1-D convolutions with
// LeakyReLU over the action vector (one input channel), an average over the
// length axis, and a linear head.
class ConvEncoder {
 public:
  ConvEncoder() = default;
  explicit ConvEncoder(ConvEncoderSpec spec) : spec_(std::move(spec)) {
    if (spec_.length == 0 || spec_.channels.empty()) throw ConfigError("conv encoder needs length and channels");
  }

  const ConvEncoderSpec& spec() const { return spec_; }
  std::size_t input_width() const { return spec_.length; }
  std::size_t output_width() const { return spec_.output; }

  ParamSet init(Rng& rng) const {
    ParamSet p;
    std::size_t in = 1;
    for (std::size_t i = 0; i < spec_.channels.size(); ++i) {
      const std::size_t out = spec_.channels[i];
      p.insert(conv_name(i) + ".weight", init_weight(rng, in * 3, in * 3, out, 1.0));
      p.insert(conv_name(i) + ".bias", Tensor(1, out));
      in = out;
    }
    p.insert("head.weight", init_weight(rng, in, in, spec_.output, 1.0));
    p.insert("head.bias", Tensor(1, spec_.output));
    return p;
  }

  diff::Var forward(const Bound& params, const diff::Var& input) const {
    if (input.cols() != spec_.length) {
      throw ShapeError("action encoder input width " + std::to_string(input.cols()) + ", expected " +
                       std::to_string(spec_.length));
    }
    diff::Var h = input;
    std::size_t in = 1;
    for (std::size_t i = 0; i < spec_.channels.size(); ++i) {
      h = diff::conv1d(h, param(params, conv_name(i) + ".weight"), param(params, conv_name(i) + ".bias"), in,
                       spec_.length);
      h = diff::leaky_relu(h, spec_.slope);
      in = spec_.channels[i];
    }
    h = diff::mean_over_length(h, in, spec_.length);
    return diff::matmul(h, param(params, "head.weight")) + param(params, "head.bias");
  }

  Tensor predict(const ParamSet& params, const Tensor& input) const {
    diff::Tape tape;
    const Bound b = bind(tape, params);
    return forward(b, tape.constant(input)).value();
  }

 private:
  static std::string conv_name(std::size_t i) { return "c" + std::to_string(i); }

  ConvEncoderSpec spec_;
};

}  // namespace sail
