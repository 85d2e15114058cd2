#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fndet/tensor.hpp"

namespace fndet {

/// Square-kernel convolution weights, cross-correlation convention, zero padding.
struct ConvWeights {
  Tensor4 kernel;             // (c_out, c_in_per_group, k, k)
  std::vector<double> bias;   // empty when the layer has no bias
  int stride = 1;
  int padding = 0;
  int groups = 1;

  int c_out() const { return kernel.n(); }
  int c_in_per_group() const { return kernel.c(); }
  int k() const { return kernel.h(); }
  int c_in() const { return kernel.c() * groups; }
  bool has_bias() const { return !bias.empty(); }
  /// Checks k >= 1, stride >= 1, square kernel, groups | c_out, bias length.
  void validate() const;
};

struct BatchNormParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;  // running = (1 - momentum) * running + momentum * batch
  bool training = false;

  static BatchNormParams identity(int channels);
  int channels() const { return static_cast<int>(gamma.size()); }
  void validate() const;
};

enum class Activation { kIdentity, kRelu, kSilu, kSigmoid };

Activation parse_activation(const std::string& name);
const char* activation_name(Activation a);

Tensor4 conv2d(const Tensor4& x, const ConvWeights& w);
/// Depthwise: groups == c_in == c_out.
Tensor4 dwconv2d(const Tensor4& x, const ConvWeights& w);
/// Convolves the leading `cp` channels with `w` (cp -> cp, spatial size preserved);
/// the trailing c - cp channels are copied through untouched.
Tensor4 pconv2d(const Tensor4& x, const ConvWeights& w, int cp);
/// 1x1, stride 1, no padding.
Tensor4 pwconv2d(const Tensor4& x, const ConvWeights& w);

/// Training mode normalizes with batch statistics and updates the running
/// statistics in `p`; inference mode uses the running statistics.
Tensor4 batchnorm(const Tensor4& x, BatchNormParams& p);
/// Folds an inference-mode batch norm into the preceding convolution.
ConvWeights fuse_conv_bn(const ConvWeights& w, const BatchNormParams& p);

Tensor4 activation(const Tensor4& x, Activation kind);
Tensor4 maxpool2d(const Tensor4& x, int k, int stride, int padding);
Tensor4 nearest_upsample2x(const Tensor4& x);
Tensor4 concat_channels(std::span<const Tensor4> xs);
Tensor4 slice_channels(const Tensor4& x, int begin, int count);

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

namespace kernels {

struct ConvDims {
  int n = 0, c_in = 0, h = 0, w = 0;
  int c_out = 0, k = 1, stride = 1, pad = 0, groups = 1;
  int h_out = 0, w_out = 0;

  int c_in_g() const { return c_in / groups; }
  int c_out_g() const { return c_out / groups; }
  Shape out_shape() const { return {n, c_out, h_out, w_out}; }
};

/// Validates and derives output extents. Throws DimensionError / ConfigError.
ConvDims conv_dims(const Shape& x, int c_out, int c_in_per_group, int k, int stride, int pad, int groups);

void conv_forward(const ConvDims& d, const double* x, const double* w, const double* bias, double* y);
/// Accumulates into dx, dw, db (each may be null).
void conv_backward(const ConvDims& d, const double* x, const double* w, const double* dy, double* dx, double* dw,
                   double* db);

/// Running count of multiply-accumulates executed by conv_forward on this thread.
std::uint64_t& mac_counter();

void maxpool_forward(const Tensor4& x, int k, int stride, int pad, Tensor4& y, std::vector<std::int64_t>* argmax);

}  // namespace kernels

}  // namespace fndet
