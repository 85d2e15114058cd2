#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fndet/ops.hpp"
#include "fndet/tensor.hpp"

namespace fndet {

/// A named tensor owned by a model. Running statistics are stored as
/// non-trainable parameters so they travel with checkpoints.
struct Parameter {
  std::string name;
  Tensor4 value;
  bool trainable = true;
  bool decay = true;
};

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over the fixed operator set. Single-threaded; one tape
/// per forward/backward step. A non-recording tape only evaluates values.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Tensor4 value);
  /// Leaf that receives a gradient (used for input sensitivities in tests).
  Var variable(Tensor4 value);
  /// Leaf backed by `p.value`; backward accumulates into `p.value.grad()`.
  Var param(Parameter& p);

  const Tensor4& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return node(v.id).requires_grad; }
  /// Gradient of the last backward pass w.r.t. v (zeros if none flowed).
  std::vector<double> grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1; loss must hold exactly one element.
  void backward(Var loss);
  void backward(Var out, std::span<const double> seed);

  /// Appends a node. `fn` runs during backward and reads out_grad(self).
  Var record(Tensor4 value, std::span<const Var> inputs, BackwardFn fn);
  Var record(Tensor4 value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  std::span<const double> out_grad(int id) const { return node(id).grad; }
  /// Accumulation target for input `v`; empty span when v needs no gradient.
  std::span<double> grad_buffer(Var v);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor4 own;
    const Tensor4* external = nullptr;
    Parameter* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
    std::vector<double> grad;
  };
  const Node& node(int id) const;
  Node& node(int id);

  std::vector<Node> nodes_;
  bool recording_;
  bool backward_done_ = false;
};

namespace ag {

Var conv2d(Tape& t, Var x, Var w, std::optional<Var> b, int stride, int pad, int groups = 1);
/// Leading-cp-channel convolution; trailing channels pass through.
Var pconv2d(Tape& t, Var x, Var w, int cp);

struct BatchNormState {
  Tensor4* running_mean = nullptr;  // (1, c, 1, 1)
  Tensor4* running_var = nullptr;
  double eps = 1e-5;
  double momentum = 0.1;
};
Var batchnorm(Tape& t, Var x, Var gamma, Var beta, BatchNormState state, bool training);

Var activation(Tape& t, Var x, Activation kind);
Var softplus(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var maxpool2d(Tape& t, Var x, int k, int stride, int pad);
Var upsample2x(Tape& t, Var x);
Var concat(Tape& t, std::span<const Var> xs);
Var slice(Tape& t, Var x, int begin, int count);
/// Single-head attention over flattened spatial positions:
/// out[:, i] = sum_j softmax_j(q_i . k_j * scale) v[:, j].
Var spatial_attention(Tape& t, Var q, Var k, Var v, double scale);
/// Normalized weighted sum: sum_i relu(w_i) x_i / (sum_i relu(w_i) + eps).
/// `weights` has shape (1, m, 1, 1) for m inputs.
Var weighted_sum(Tape& t, std::span<const Var> xs, Var weights, double eps = 1e-4);
/// Scalar sum_i coeffs_i * x_i.
Var dot(Tape& t, Var x, const Tensor4& coeffs);
Var sum(Tape& t, Var x);

}  // namespace ag

/// Row-softmax attention weights (positions x positions) for image n.
std::vector<double> attention_weights(const Tensor4& q, const Tensor4& k, int n, double scale);

}  // namespace fndet
