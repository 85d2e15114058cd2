#include "fndet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace fndet {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void ConvWeights::validate() const {
  if (kernel.h() < 1) throw ConfigError("conv kernel size must be >= 1");
  if (kernel.h() != kernel.w()) throw ConfigError("conv kernel must be square");
  if (stride < 1) throw ConfigError("conv stride must be >= 1");
  if (padding < 0) throw ConfigError("conv padding must be >= 0");
  if (groups < 1 || kernel.n() % groups != 0) {
    throw ConfigError("conv groups (" + std::to_string(groups) + ") must divide c_out (" +
                      std::to_string(kernel.n()) + ")");
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != kernel.n()) {
    throw DimensionError("bias", "length " + std::to_string(bias.size()) + " != c_out " + std::to_string(kernel.n()));
  }
}

BatchNormParams BatchNormParams::identity(int channels) {
  BatchNormParams p;
  p.gamma.assign(channels, 1.0);
  p.beta.assign(channels, 0.0);
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  return p;
}

void BatchNormParams::validate() const {
  const std::size_t c = gamma.size();
  if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw DimensionError("c", "batch norm parameter vectors differ in length");
  }
  if (!(eps > 0.0)) throw ConfigError("batch norm eps must be > 0");
  if (!(momentum > 0.0 && momentum < 1.0)) throw ConfigError("batch norm momentum must be in (0, 1)");
  for (double v : running_var) {
    if (v < 0.0) throw ConfigError("batch norm running_var must be >= 0");
  }
}

Activation parse_activation(const std::string& name) {
  if (name == "identity" || name == "none") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "silu") return Activation::kSilu;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + name + "'");
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSilu: return "silu";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "?";
}

namespace kernels {

std::uint64_t& mac_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

ConvDims conv_dims(const Shape& x, int c_out, int c_in_per_group, int k, int stride, int pad, int groups) {
  if (k < 1) throw ConfigError("conv kernel size must be >= 1");
  if (stride < 1) throw ConfigError("conv stride must be >= 1");
  if (groups < 1 || c_out % groups != 0) throw ConfigError("conv groups must divide c_out");
  if (x.c != c_in_per_group * groups) {
    throw DimensionError("c", "input has " + std::to_string(x.c) + " channels, weights expect " +
                                  std::to_string(c_in_per_group * groups));
  }
  ConvDims d;
  d.n = x.n;
  d.c_in = x.c;
  d.h = x.h;
  d.w = x.w;
  d.c_out = c_out;
  d.k = k;
  d.stride = stride;
  d.pad = pad;
  d.groups = groups;
  const int hs = x.h + 2 * pad - k;
  const int ws = x.w + 2 * pad - k;
  if (hs < 0) throw DimensionError("h", "kernel " + std::to_string(k) + " exceeds padded height");
  if (ws < 0) throw DimensionError("w", "kernel " + std::to_string(k) + " exceeds padded width");
  d.h_out = hs / stride + 1;
  d.w_out = ws / stride + 1;
  return d;
}

namespace {

bool is_pointwise(const ConvDims& d) { return d.k == 1 && d.stride == 1 && d.pad == 0; }

// col has shape (c_in_g * k * k, h_out * w_out).
void im2col(const ConvDims& d, const double* x, double* col) {
  const int k = d.k;
  const std::size_t hw_out = static_cast<std::size_t>(d.h_out) * d.w_out;
  for (int ci = 0; ci < d.c_in_g(); ++ci) {
    const double* xc = x + static_cast<std::size_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw_out;
        for (int oy = 0; oy < d.h_out; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * d.w_out;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.w_out, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.w_out; ++ox) {
            const int ix = ox * d.stride - d.pad + kx;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvDims& d, const double* col, double* dx) {
  const int k = d.k;
  const std::size_t hw_out = static_cast<std::size_t>(d.h_out) * d.w_out;
  for (int ci = 0; ci < d.c_in_g(); ++ci) {
    double* xc = dx + static_cast<std::size_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw_out;
        for (int oy = 0; oy < d.h_out; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * d.w_out;
          double* dst = xc + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.w_out; ++ox) {
            const int ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

void conv_forward(const ConvDims& d, const double* x, const double* w, const double* bias, double* y) {
  const int cin_g = d.c_in_g();
  const int cout_g = d.c_out_g();
  const int kdim = cin_g * d.k * d.k;
  const std::size_t hw_in = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t hw_out = static_cast<std::size_t>(d.h_out) * d.w_out;
  const bool pointwise = is_pointwise(d);
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * hw_out);

  for (int n = 0; n < d.n; ++n) {
    for (int g = 0; g < d.groups; ++g) {
      const double* xg = x + (static_cast<std::size_t>(n) * d.c_in + static_cast<std::size_t>(g) * cin_g) * hw_in;
      double* yg = y + (static_cast<std::size_t>(n) * d.c_out + static_cast<std::size_t>(g) * cout_g) * hw_out;
      const double* src = xg;
      if (!pointwise) {
        im2col(d, xg, col.data());
        src = col.data();
      }
      CMapRM wm(w + static_cast<std::size_t>(g) * cout_g * kdim, cout_g, kdim);
      CMapRM cm(src, kdim, static_cast<Eigen::Index>(hw_out));
      MapRM ym(yg, cout_g, static_cast<Eigen::Index>(hw_out));
      ym.noalias() = wm * cm;
      if (bias != nullptr) {
        for (int co = 0; co < cout_g; ++co) ym.row(co).array() += bias[g * cout_g + co];
      }
      mac_counter() += static_cast<std::uint64_t>(cout_g) * kdim * hw_out;
    }
  }
}

void conv_backward(const ConvDims& d, const double* x, const double* w, const double* dy, double* dx, double* dw,
                   double* db) {
  const int cin_g = d.c_in_g();
  const int cout_g = d.c_out_g();
  const int kdim = cin_g * d.k * d.k;
  const std::size_t hw_in = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t hw_out = static_cast<std::size_t>(d.h_out) * d.w_out;
  const bool pointwise = is_pointwise(d);
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * hw_out);
  std::vector<double> dcol(pointwise || dx == nullptr ? 0 : static_cast<std::size_t>(kdim) * hw_out);

  for (int n = 0; n < d.n; ++n) {
    for (int g = 0; g < d.groups; ++g) {
      const std::size_t xoff = (static_cast<std::size_t>(n) * d.c_in + static_cast<std::size_t>(g) * cin_g) * hw_in;
      const double* xg = x + xoff;
      const double* dyg = dy + (static_cast<std::size_t>(n) * d.c_out + static_cast<std::size_t>(g) * cout_g) * hw_out;
      CMapRM dym(dyg, cout_g, static_cast<Eigen::Index>(hw_out));
      CMapRM wm(w + static_cast<std::size_t>(g) * cout_g * kdim, cout_g, kdim);

      if (db != nullptr) {
        for (int co = 0; co < cout_g; ++co) db[g * cout_g + co] += dym.row(co).sum();
      }
      if (dw != nullptr) {
        const double* src = xg;
        if (!pointwise) {
          im2col(d, xg, col.data());
          src = col.data();
        }
        CMapRM cm(src, kdim, static_cast<Eigen::Index>(hw_out));
        MapRM dwm(dw + static_cast<std::size_t>(g) * cout_g * kdim, cout_g, kdim);
        dwm.noalias() += dym * cm.transpose();
      }
      if (dx != nullptr) {
        if (pointwise) {
          MapRM dxm(dx + xoff, kdim, static_cast<Eigen::Index>(hw_out));
          dxm.noalias() += wm.transpose() * dym;
        } else {
          MapRM dcm(dcol.data(), kdim, static_cast<Eigen::Index>(hw_out));
          dcm.noalias() = wm.transpose() * dym;
          col2im_add(d, dcol.data(), dx + xoff);
        }
      }
    }
  }
}

void maxpool_forward(const Tensor4& x, int k, int stride, int pad, Tensor4& y, std::vector<std::int64_t>* argmax) {
  if (k < 1 || stride < 1 || pad < 0) throw ConfigError("maxpool: invalid k/stride/padding");
  if (2 * pad > k) throw ConfigError("maxpool: padding must be at most k / 2");
  const int hs = x.h() + 2 * pad - k;
  const int ws = x.w() + 2 * pad - k;
  if (hs < 0) throw DimensionError("h", "pool window exceeds padded height");
  if (ws < 0) throw DimensionError("w", "pool window exceeds padded width");
  const int h_out = hs / stride + 1;
  const int w_out = ws / stride + 1;
  y = Tensor4({x.n(), x.c(), h_out, w_out});
  if (argmax != nullptr) argmax->assign(y.numel(), -1);
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int oy = 0; oy < h_out; ++oy) {
        for (int ox = 0; ox < w_out; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_i = -1;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= x.h()) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= x.w()) continue;
              const std::size_t i = x.index(n, c, iy, ix);
              if (x[i] > best || best_i < 0) {
                best = x[i];
                best_i = static_cast<std::int64_t>(i);
              }
            }
          }
          y[o] = best;
          if (argmax != nullptr) (*argmax)[o] = best_i;
        }
      }
    }
  }
}

}  // namespace kernels

Tensor4 conv2d(const Tensor4& x, const ConvWeights& w) {
  w.validate();
  const auto d = kernels::conv_dims(x.shape(), w.c_out(), w.c_in_per_group(), w.k(), w.stride, w.padding, w.groups);
  if (d.h_out < 1 || d.w_out < 1) throw DimensionError("h", "convolution produces an empty output");
  Tensor4 y(d.out_shape());
  kernels::conv_forward(d, x.data().data(), w.kernel.data().data(), w.has_bias() ? w.bias.data() : nullptr,
                        y.data().data());
  return y;
}

Tensor4 dwconv2d(const Tensor4& x, const ConvWeights& w) {
  if (w.groups != x.c() || w.c_out() != x.c() || w.c_in_per_group() != 1) {
    throw ConfigError("dwconv2d requires groups == c_in == c_out (groups=" + std::to_string(w.groups) +
                      ", c_in=" + std::to_string(x.c()) + ", c_out=" + std::to_string(w.c_out()) + ")");
  }
  return conv2d(x, w);
}

Tensor4 pconv2d(const Tensor4& x, const ConvWeights& w, int cp) {
  if (cp < 1 || cp > x.c()) {
    throw ConfigError("pconv2d: partial channel count " + std::to_string(cp) + " outside [1, " +
                      std::to_string(x.c()) + "]");
  }
  if (w.c_out() != cp || w.c_in() != cp) {
    throw ConfigError("pconv2d: weights must map cp -> cp channels");
  }
  if (w.k() % 2 == 0 || w.stride != 1 || w.padding != (w.k() - 1) / 2) {
    throw ConfigError("pconv2d: requires odd k, stride 1 and same padding");
  }
  Tensor4 head = conv2d(slice_channels(x, 0, cp), w);
  Tensor4 y = x;
  const std::size_t block = static_cast<std::size_t>(cp) * x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    std::copy_n(head.data().data() + head.index(n, 0, 0, 0), block, y.data().data() + y.index(n, 0, 0, 0));
  }
  return y;
}

Tensor4 pwconv2d(const Tensor4& x, const ConvWeights& w) {
  if (w.k() != 1 || w.stride != 1 || w.padding != 0) {
    throw ConfigError("pwconv2d requires k == 1, stride == 1, padding == 0");
  }
  return conv2d(x, w);
}

Tensor4 batchnorm(const Tensor4& x, BatchNormParams& p) {
  p.validate();
  if (p.channels() != x.c()) {
    throw DimensionError("c", "batch norm has " + std::to_string(p.channels()) + " channels, input has " +
                                  std::to_string(x.c()));
  }
  const std::size_t plane = x.shape().plane();
  const std::size_t count = plane * static_cast<std::size_t>(x.n());
  Tensor4 y(x.shape());
  for (int c = 0; c < x.c(); ++c) {
    double mean = p.running_mean[c];
    double var = p.running_var[c];
    if (p.training) {
      if (count == 0) throw DimensionError("n", "batch norm training needs a non-empty batch");
      double sum = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* src = &x.data()[x.index(n, c, 0, 0)];
        for (std::size_t i = 0; i < plane; ++i) sum += src[i];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* src = &x.data()[x.index(n, c, 0, 0)];
        for (std::size_t i = 0; i < plane; ++i) sq += (src[i] - mean) * (src[i] - mean);
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mean;
      p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * unbiased;
    }
    const double scale = p.gamma[c] / std::sqrt(var + p.eps);
    const double shift = p.beta[c] - mean * scale;
    for (int n = 0; n < x.n(); ++n) {
      const std::size_t base = x.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) y[base + i] = x[base + i] * scale + shift;
    }
  }
  return y;
}

ConvWeights fuse_conv_bn(const ConvWeights& w, const BatchNormParams& p) {
  if (p.training) throw StateError("fuse_conv_bn: batch norm must be in inference mode");
  w.validate();
  p.validate();
  if (p.channels() != w.c_out()) throw DimensionError("c", "batch norm channels != conv c_out");
  ConvWeights fused = w;
  fused.bias.assign(w.c_out(), 0.0);
  const std::size_t per_out = static_cast<std::size_t>(w.c_in_per_group()) * w.k() * w.k();
  for (int co = 0; co < w.c_out(); ++co) {
    const double scale = p.gamma[co] / std::sqrt(p.running_var[co] + p.eps);
    double* kw = fused.kernel.data().data() + co * per_out;
    for (std::size_t i = 0; i < per_out; ++i) kw[i] *= scale;
    const double b = w.has_bias() ? w.bias[co] : 0.0;
    fused.bias[co] = (b - p.running_mean[co]) * scale + p.beta[co];
  }
  return fused;
}

Tensor4 activation(const Tensor4& x, Activation kind) {
  Tensor4 y(x.shape());
  auto src = x.data();
  auto dst = y.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = src[i];
    switch (kind) {
      case Activation::kIdentity: dst[i] = v; break;
      case Activation::kRelu: dst[i] = v > 0.0 ? v : 0.0; break;
      case Activation::kSilu: dst[i] = v * sigmoid(v); break;
      case Activation::kSigmoid: dst[i] = sigmoid(v); break;
    }
  }
  return y;
}

Tensor4 maxpool2d(const Tensor4& x, int k, int stride, int padding) {
  Tensor4 y;
  kernels::maxpool_forward(x, k, stride, padding, y, nullptr);
  return y;
}

Tensor4 nearest_upsample2x(const Tensor4& x) {
  Tensor4 y({x.n(), x.c(), x.h() * 2, x.w() * 2});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < y.h(); ++yy)
        for (int xx = 0; xx < y.w(); ++xx) y.at(n, c, yy, xx) = x.at(n, c, yy / 2, xx / 2);
  return y;
}

Tensor4 concat_channels(std::span<const Tensor4> xs) {
  if (xs.empty()) throw DimensionError("c", "concat of zero tensors");
  const Shape& s0 = xs[0].shape();
  int channels = 0;
  for (const auto& t : xs) {
    if (t.n() != s0.n) throw DimensionError("n", "concat inputs disagree on batch size");
    if (t.h() != s0.h) throw DimensionError("h", "concat inputs disagree on height");
    if (t.w() != s0.w) throw DimensionError("w", "concat inputs disagree on width");
    channels += t.c();
  }
  Tensor4 y({s0.n, channels, s0.h, s0.w});
  const std::size_t plane = s0.plane();
  for (int n = 0; n < s0.n; ++n) {
    double* dst = y.data().data() + y.index(n, 0, 0, 0);
    for (const auto& t : xs) {
      const std::size_t len = static_cast<std::size_t>(t.c()) * plane;
      std::copy_n(t.data().data() + t.index(n, 0, 0, 0), len, dst);
      dst += len;
    }
  }
  return y;
}

Tensor4 slice_channels(const Tensor4& x, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > x.c()) {
    throw DimensionError("c", "channel slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                  ") outside " + std::to_string(x.c()) + " channels");
  }
  Tensor4 y({x.n(), count, x.h(), x.w()});
  const std::size_t len = static_cast<std::size_t>(count) * x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    std::copy_n(x.data().data() + x.index(n, begin, 0, 0), len, y.data().data() + y.index(n, 0, 0, 0));
  }
  return y;
}

}  // namespace fndet
