#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fndet {

/// Analytic cost of one operator. FLOPs count multiply-accumulates (one MAC
/// = one FLOP); memory access counts elements read plus written.
struct ConvCost {
  std::uint64_t flops = 0;
  std::uint64_t mem_access = 0;
  /// Memory access with the kernel term dropped (h*w*(c_in + c_out)).
  std::uint64_t mem_access_approx = 0;
  std::uint64_t params = 0;
  int h = 0, w = 0, c = 0, c_out = 0, cp = 0, k = 0, stride = 1;
};

/// Standard convolution, spatial size h x w preserved.
ConvCost cost_conv(int h, int w, int k, int c_in, int c_out);
/// Depthwise convolution over c channels.
ConvCost cost_dwconv(int h, int w, int k, int c);
/// Partial convolution over cp channels.
ConvCost cost_pconv(int h, int w, int k, int cp);

/// General strided/grouped convolution. (h_in, w_in) is the input extent.
ConvCost cost_conv_general(int h_in, int w_in, int k, int stride, int pad, int groups, int c_in, int c_out,
                           bool bias);

struct LayerCost {
  std::string layer;
  std::string op;  // conv, pwconv, pconv, dwconv, bn, attention, fusion
  std::uint64_t flops = 0;
  std::uint64_t mem_access = 0;
  std::uint64_t params = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;

  std::uint64_t total_flops() const;
  std::uint64_t total_mem_access() const;
  std::uint64_t total_params() const;
  void add(LayerCost row) { layers.push_back(std::move(row)); }
  /// CSV with header "layer,op,flops,mem_access,params".
  void write_csv(std::ostream& os) const;
};

}  // namespace fndet
