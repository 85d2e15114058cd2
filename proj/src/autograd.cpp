#include "fndet/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace fndet {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

const Tape::Node& Tape::node(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw StateError("variable does not belong to this tape");
  return nodes_[id];
}

Tape::Node& Tape::node(int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw StateError("variable does not belong to this tape");
  return nodes_[id];
}

Var Tape::constant(Tensor4 value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Tensor4 value) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = recording_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = recording_ && p.trainable;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor4& Tape::value(Var v) const {
  const Node& n = node(v.id);
  return n.external != nullptr ? *n.external : n.own;
}

std::vector<double> Tape::grad(Var v) const {
  const Node& n = node(v.id);
  if (n.grad.empty()) return std::vector<double>(value(v).numel(), 0.0);
  return n.grad;
}

Var Tape::record(Tensor4 value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.own = std::move(value);
  if (recording_) {
    for (Var in : inputs) {
      if (node(in.id).requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

std::span<double> Tape::grad_buffer(Var v) {
  Node& n = node(v.id);
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(value(v).numel(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (value(loss).numel() != 1) throw DimensionError("loss", "backward(loss) requires a scalar");
  const double one = 1.0;
  backward(loss, std::span<const double>(&one, 1));
}

void Tape::backward(Var out, std::span<const double> seed) {
  if (!recording_) throw StateError("backward on a tape that did not record the forward pass");
  if (backward_done_) throw StateError("backward already ran on this tape");
  Node& root = node(out.id);
  if (!root.requires_grad) throw StateError("backward: output does not depend on any differentiable input");
  if (seed.size() != value(out).numel()) throw DimensionError("seed", "seed size does not match output");
  root.grad.assign(seed.begin(), seed.end());
  backward_done_ = true;

  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      auto g = n.param->value.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
}

namespace ag {

Var conv2d(Tape& t, Var x, Var w, std::optional<Var> b, int stride, int pad, int groups) {
  const Tensor4& xv = t.value(x);
  const Tensor4& wv = t.value(w);
  if (wv.h() != wv.w()) throw ConfigError("conv kernel must be square");
  const auto d = kernels::conv_dims(xv.shape(), wv.n(), wv.c(), wv.h(), stride, pad, groups);
  if (d.h_out < 1 || d.w_out < 1) throw DimensionError("h", "convolution produces an empty output");
  const double* bias = nullptr;
  if (b) {
    if (static_cast<int>(t.value(*b).numel()) != wv.n()) throw DimensionError("bias", "bias length != c_out");
    bias = t.value(*b).data().data();
  }
  Tensor4 y(d.out_shape());
  kernels::conv_forward(d, xv.data().data(), wv.data().data(), bias, y.data().data());

  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return t.record(std::move(y), inputs, [x, w, b, d](Tape& tp, int self) {
    auto dx = tp.grad_buffer(x);
    auto dw = tp.grad_buffer(w);
    double* db = nullptr;
    if (b) {
      auto g = tp.grad_buffer(*b);
      db = g.empty() ? nullptr : g.data();
    }
    kernels::conv_backward(d, tp.value(x).data().data(), tp.value(w).data().data(), tp.out_grad(self).data(),
                           dx.empty() ? nullptr : dx.data(), dw.empty() ? nullptr : dw.data(), db);
  });
}

Var pconv2d(Tape& t, Var x, Var w, int cp) {
  const int c = t.shape(x).c;
  if (cp < 1 || cp > c) throw ConfigError("pconv2d: partial channel count out of range");
  const Tensor4& wv = t.value(w);
  if (wv.n() != cp || wv.c() != cp) throw ConfigError("pconv2d: weights must map cp -> cp channels");
  const int pad = (wv.h() - 1) / 2;
  Var head = conv2d(t, cp == c ? x : slice(t, x, 0, cp), w, std::nullopt, 1, pad);
  if (cp == c) return head;
  const Var parts[] = {head, slice(t, x, cp, c - cp)};
  return concat(t, parts);
}

Var batchnorm(Tape& t, Var x, Var gamma, Var beta, BatchNormState st, bool training) {
  const Tensor4& xv = t.value(x);
  const int channels = xv.c();
  if (static_cast<int>(t.value(gamma).numel()) != channels || static_cast<int>(t.value(beta).numel()) != channels) {
    throw DimensionError("c", "batch norm affine parameters do not match input channels");
  }
  if (st.running_mean == nullptr || st.running_var == nullptr ||
      static_cast<int>(st.running_mean->numel()) != channels || static_cast<int>(st.running_var->numel()) != channels) {
    throw DimensionError("c", "batch norm running statistics do not match input channels");
  }
  const std::size_t plane = xv.shape().plane();
  const std::size_t count = plane * static_cast<std::size_t>(xv.n());
  if (training && count == 0) throw DimensionError("n", "batch norm training needs a non-empty batch");

  std::vector<double> mean(channels), inv_std(channels);
  for (int c = 0; c < channels; ++c) {
    double mu = (*st.running_mean)[c];
    double var = (*st.running_var)[c];
    if (training) {
      double s = 0.0;
      for (int n = 0; n < xv.n(); ++n) {
        const double* p = xv.data().data() + xv.index(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mu = s / static_cast<double>(count);
      double sq = 0.0;
      for (int n = 0; n < xv.n(); ++n) {
        const double* p = xv.data().data() + xv.index(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      (*st.running_mean)[c] = (1.0 - st.momentum) * (*st.running_mean)[c] + st.momentum * mu;
      (*st.running_var)[c] = (1.0 - st.momentum) * (*st.running_var)[c] + st.momentum * unbiased;
    }
    mean[c] = mu;
    inv_std[c] = 1.0 / std::sqrt(var + st.eps);
  }

  const Tensor4& g = t.value(gamma);
  const Tensor4& bt = t.value(beta);
  Tensor4 y(xv.shape());
  for (int n = 0; n < xv.n(); ++n) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t base = xv.index(n, c, 0, 0);
      const double sc = g[c] * inv_std[c];
      const double sh = bt[c] - mean[c] * sc;
      for (std::size_t i = 0; i < plane; ++i) y[base + i] = xv[base + i] * sc + sh;
    }
  }

  return t.record(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, mean = std::move(mean), inv_std = std::move(inv_std), training](Tape& tp, int self) {
                    const Tensor4& xv = tp.value(x);
                    const Tensor4& g = tp.value(gamma);
                    auto dy = tp.out_grad(self);
                    auto dx = tp.grad_buffer(x);
                    auto dg = tp.grad_buffer(gamma);
                    auto db = tp.grad_buffer(beta);
                    const std::size_t plane = xv.shape().plane();
                    const double count = static_cast<double>(plane * static_cast<std::size_t>(xv.n()));
                    for (int c = 0; c < xv.c(); ++c) {
                      double sum_dy = 0.0, sum_dy_xhat = 0.0;
                      for (int n = 0; n < xv.n(); ++n) {
                        const std::size_t base = xv.index(n, c, 0, 0);
                        for (std::size_t i = 0; i < plane; ++i) {
                          const double xhat = (xv[base + i] - mean[c]) * inv_std[c];
                          sum_dy += dy[base + i];
                          sum_dy_xhat += dy[base + i] * xhat;
                        }
                      }
                      if (!dg.empty()) dg[c] += sum_dy_xhat;
                      if (!db.empty()) db[c] += sum_dy;
                      if (dx.empty()) continue;
                      const double k = g[c] * inv_std[c];
                      for (int n = 0; n < xv.n(); ++n) {
                        const std::size_t base = xv.index(n, c, 0, 0);
                        for (std::size_t i = 0; i < plane; ++i) {
                          if (training) {
                            const double xhat = (xv[base + i] - mean[c]) * inv_std[c];
                            dx[base + i] += k * (dy[base + i] - sum_dy / count - xhat * sum_dy_xhat / count);
                          } else {
                            dx[base + i] += k * dy[base + i];
                          }
                        }
                      }
                    }
                  });
}

Var activation(Tape& t, Var x, Activation kind) {
  if (kind == Activation::kIdentity) return x;
  Tensor4 y = fndet::activation(t.value(x), kind);
  return t.record(std::move(y), {x}, [x, kind](Tape& tp, int self) {
    auto dx = tp.grad_buffer(x);
    auto dy = tp.out_grad(self);
    auto xv = tp.value(x).data();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = xv[i];
      double d = 0.0;
      switch (kind) {
        case Activation::kRelu: d = v > 0.0 ? 1.0 : 0.0; break;
        case Activation::kSilu: {
          const double s = sigmoid(v);
          d = s * (1.0 + v * (1.0 - s));
          break;
        }
        case Activation::kSigmoid: {
          const double s = sigmoid(v);
          d = s * (1.0 - s);
          break;
        }
        case Activation::kIdentity: d = 1.0; break;
      }
      dx[i] += d * dy[i];
    }
  });
}

Var softplus(Tape& t, Var x) {
  const Tensor4& xv = t.value(x);
  Tensor4 y(xv.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = fndet::softplus(xv[i]);
  return t.record(std::move(y), {x}, [x](Tape& tp, int self) {
    auto dx = tp.grad_buffer(x);
    auto dy = tp.out_grad(self);
    auto xv = tp.value(x).data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += sigmoid(xv[i]) * dy[i];
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor4& av = t.value(a);
  const Tensor4& bv = t.value(b);
  if (av.shape() != bv.shape()) throw DimensionError("shape", "add: " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  Tensor4 y(av.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] + bv[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, int self) {
    auto dy = tp.out_grad(self);
    for (Var v : {a, b}) {
      auto g = tp.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor4& av = t.value(a);
  const Tensor4& bv = t.value(b);
  if (av.shape() != bv.shape()) throw DimensionError("shape", "mul: " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  Tensor4 y(av.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, int self) {
    auto dy = tp.out_grad(self);
    auto av = tp.value(a).data();
    auto bv = tp.value(b).data();
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dy[i] * bv[i];
    auto gb = tp.grad_buffer(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += dy[i] * av[i];
  });
}

Var scale(Tape& t, Var a, double s) {
  const Tensor4& av = t.value(a);
  Tensor4 y(av.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] * s;
  return t.record(std::move(y), {a}, [a, s](Tape& tp, int self) {
    auto dy = tp.out_grad(self);
    auto g = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * s;
  });
}

Var maxpool2d(Tape& t, Var x, int k, int stride, int pad) {
  Tensor4 y;
  std::vector<std::int64_t> argmax;
  kernels::maxpool_forward(t.value(x), k, stride, pad, y, &argmax);
  return t.record(std::move(y), {x}, [x, argmax = std::move(argmax)](Tape& tp, int self) {
    auto dy = tp.out_grad(self);
    auto dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
      if (argmax[i] >= 0) dx[static_cast<std::size_t>(argmax[i])] += dy[i];
    }
  });
}

Var upsample2x(Tape& t, Var x) {
  Tensor4 y = nearest_upsample2x(t.value(x));
  return t.record(std::move(y), {x}, [x](Tape& tp, int self) {
    const Tensor4& xv = tp.value(x);
    auto dy = tp.out_grad(self);
    auto dx = tp.grad_buffer(x);
    const int ho = xv.h() * 2, wo = xv.w() * 2;
    std::size_t o = 0;
    for (int n = 0; n < xv.n(); ++n)
      for (int c = 0; c < xv.c(); ++c)
        for (int yy = 0; yy < ho; ++yy)
          for (int xx = 0; xx < wo; ++xx, ++o) dx[xv.index(n, c, yy / 2, xx / 2)] += dy[o];
  });
}

Var concat(Tape& t, std::span<const Var> xs) {
  if (xs.size() == 1) return xs[0];
  std::vector<Tensor4> parts;
  parts.reserve(xs.size());
  // concat_channels wants contiguous tensors; copy is cheap relative to convs
  for (Var v : xs) parts.push_back(t.value(v));
  Tensor4 y = concat_channels(parts);
  std::vector<Var> inputs(xs.begin(), xs.end());
  return t.record(std::move(y), xs, [inputs](Tape& tp, int self) {
    auto dy = tp.out_grad(self);
    const Shape s0 = tp.shape(inputs[0]);
    const std::size_t plane = s0.plane();
    int total_c = 0;
    for (Var v : inputs) total_c += tp.shape(v).c;
    int offset = 0;
    for (Var v : inputs) {
      const int c = tp.shape(v).c;
      auto g = tp.grad_buffer(v);
      if (!g.empty()) {
        const std::size_t len = static_cast<std::size_t>(c) * plane;
        for (int n = 0; n < s0.n; ++n) {
          const double* src = dy.data() + (static_cast<std::size_t>(n) * total_c + offset) * plane;
          double* dst = g.data() + static_cast<std::size_t>(n) * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
      offset += c;
    }
  });
}

Var slice(Tape& t, Var x, int begin, int count) {
  Tensor4 y = slice_channels(t.value(x), begin, count);
  return t.record(std::move(y), {x}, [x, begin, count](Tape& tp, int self) {
    const Tensor4& xv = tp.value(x);
    auto dy = tp.out_grad(self);
    auto dx = tp.grad_buffer(x);
    const std::size_t len = static_cast<std::size_t>(count) * xv.shape().plane();
    for (int n = 0; n < xv.n(); ++n) {
      double* dst = dx.data() + xv.index(n, begin, 0, 0);
      const double* src = dy.data() + static_cast<std::size_t>(n) * len;
      for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
    }
  });
}

namespace {

// Softmax rows of scale * q^T k for one image; q is (d, P), k is (d, P).
MatRM softmax_scores(const double* q, const double* k, int d, int positions, double scale) {
  CMapRM qm(q, d, positions);
  CMapRM km(k, d, positions);
  MatRM s = scale * (qm.transpose() * km);
  for (int i = 0; i < positions; ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
  return s;
}

}  // namespace

Var spatial_attention(Tape& t, Var q, Var k, Var v, double scale) {
  const Tensor4& qv = t.value(q);
  const Tensor4& kv = t.value(k);
  const Tensor4& vv = t.value(v);
  if (qv.shape() != kv.shape()) throw DimensionError("c", "attention query/key shapes differ");
  if (vv.n() != qv.n()) throw DimensionError("n", "attention value batch differs");
  if (vv.h() != qv.h() || vv.w() != qv.w()) throw DimensionError("h", "attention value spatial dims differ");
  const int positions = static_cast<int>(qv.shape().plane());
  const int dk = qv.c();
  const int dv = vv.c();
  Tensor4 y(vv.shape());
  std::vector<MatRM> attn;
  attn.reserve(qv.n());
  for (int n = 0; n < qv.n(); ++n) {
    attn.push_back(softmax_scores(qv.data().data() + qv.index(n, 0, 0, 0), kv.data().data() + kv.index(n, 0, 0, 0),
                                  dk, positions, scale));
    CMapRM vm(vv.data().data() + vv.index(n, 0, 0, 0), dv, positions);
    MapRM ym(y.data().data() + y.index(n, 0, 0, 0), dv, positions);
    ym.noalias() = vm * attn.back().transpose();
  }
  return t.record(std::move(y), {q, k, v}, [q, k, v, scale, attn = std::move(attn)](Tape& tp, int self) {
    const Tensor4& qv = tp.value(q);
    const Tensor4& kv = tp.value(k);
    const Tensor4& vv = tp.value(v);
    const int positions = static_cast<int>(qv.shape().plane());
    const int dk = qv.c();
    const int dv = vv.c();
    auto dy = tp.out_grad(self);
    auto dq = tp.grad_buffer(q);
    auto dkb = tp.grad_buffer(k);
    auto dvb = tp.grad_buffer(v);
    for (int n = 0; n < qv.n(); ++n) {
      const MatRM& a = attn[n];
      CMapRM dym(dy.data() + static_cast<std::size_t>(n) * dv * positions, dv, positions);
      CMapRM vm(vv.data().data() + vv.index(n, 0, 0, 0), dv, positions);
      if (!dvb.empty()) {
        MapRM g(dvb.data() + vv.index(n, 0, 0, 0), dv, positions);
        g.noalias() += dym * a;
      }
      if (dq.empty() && dkb.empty()) continue;
      MatRM da = dym.transpose() * vm;  // (P, P)
      MatRM ds(positions, positions);
      for (int i = 0; i < positions; ++i) {
        const double inner = a.row(i).dot(da.row(i));
        ds.row(i) = a.row(i).array() * (da.row(i).array() - inner);
      }
      CMapRM qm(qv.data().data() + qv.index(n, 0, 0, 0), dk, positions);
      CMapRM km(kv.data().data() + kv.index(n, 0, 0, 0), dk, positions);
      if (!dq.empty()) {
        MapRM g(dq.data() + qv.index(n, 0, 0, 0), dk, positions);
        g.noalias() += scale * (km * ds.transpose());
      }
      if (!dkb.empty()) {
        MapRM g(dkb.data() + kv.index(n, 0, 0, 0), dk, positions);
        g.noalias() += scale * (qm * ds);
      }
    }
  });
}

Var weighted_sum(Tape& t, std::span<const Var> xs, Var weights, double eps) {
  const Tensor4& wv = t.value(weights);
  if (xs.empty()) throw DimensionError("c", "weighted_sum of zero tensors");
  if (wv.numel() != xs.size()) throw DimensionError("weights", "one fusion weight per input required");
  const Shape s0 = t.shape(xs[0]);
  double denom = eps;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (t.shape(xs[i]) != s0) throw DimensionError("shape", "weighted_sum inputs must share a shape");
    denom += std::max(wv[i], 0.0);
  }
  Tensor4 y(s0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double wi = std::max(wv[i], 0.0) / denom;
    const Tensor4& xv = t.value(xs[i]);
    for (std::size_t j = 0; j < y.numel(); ++j) y[j] += wi * xv[j];
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  std::vector<Var> all = inputs;
  all.push_back(weights);
  return t.record(std::move(y), all, [inputs, weights, denom](Tape& tp, int self) {
    auto dy = tp.out_grad(self);
    const Tensor4& wv = tp.value(weights);
    auto gw = tp.grad_buffer(weights);
    // out = sum_i r_i x_i / denom with r_i = relu(w_i)
    double dy_dot_out = 0.0;
    std::vector<double> dy_dot_x(inputs.size(), 0.0);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Tensor4& xv = tp.value(inputs[i]);
      for (std::size_t j = 0; j < dy.size(); ++j) dy_dot_x[i] += dy[j] * xv[j];
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) dy_dot_out += std::max(wv[i], 0.0) * dy_dot_x[i];
    dy_dot_out /= denom;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const double ri = std::max(wv[i], 0.0);
      auto gx = tp.grad_buffer(inputs[i]);
      for (std::size_t j = 0; j < gx.size(); ++j) gx[j] += dy[j] * ri / denom;
      if (!gw.empty() && wv[i] > 0.0) gw[i] += (dy_dot_x[i] - dy_dot_out) / denom;
    }
  });
}

Var dot(Tape& t, Var x, const Tensor4& coeffs) {
  const Tensor4& xv = t.value(x);
  if (xv.numel() != coeffs.numel()) throw DimensionError("shape", "dot: coefficient count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i] * coeffs[i];
  return t.record(Tensor4({1, 1, 1, 1}, s), {x}, [x, coeffs](Tape& tp, int self) {
    const double g = tp.out_grad(self)[0];
    auto dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * coeffs[i];
  });
}

Var sum(Tape& t, Var x) {
  const Tensor4& xv = t.value(x);
  const double s = std::accumulate(xv.data().begin(), xv.data().end(), 0.0);
  return t.record(Tensor4({1, 1, 1, 1}, s), {x}, [x](Tape& tp, int self) {
    const double g = tp.out_grad(self)[0];
    auto dx = tp.grad_buffer(x);
    for (double& v : dx) v += g;
  });
}

}  // namespace ag

std::vector<double> attention_weights(const Tensor4& q, const Tensor4& k, int n, double scale) {
  if (q.shape() != k.shape()) throw DimensionError("c", "attention query/key shapes differ");
  const int positions = static_cast<int>(q.shape().plane());
  MatRM a = ag::softmax_scores(q.data().data() + q.index(n, 0, 0, 0), k.data().data() + k.index(n, 0, 0, 0), q.c(),
                           positions, scale);
  return std::vector<double>(a.data(), a.data() + a.size());
}

}  // namespace fndet
