#include "fndet/cost.hpp"

#include <ostream>

#include "fndet/tensor.hpp"

namespace fndet {

namespace {

using u64 = std::uint64_t;

void require_positive(std::initializer_list<int> dims) {
  for (int d : dims) {
    if (d < 1) throw ConfigError("cost model dimensions must be positive");
  }
}

}  // namespace

ConvCost cost_conv(int h, int w, int k, int c_in, int c_out) {
  require_positive({h, w, k, c_in, c_out});
  ConvCost c;
  const u64 hw = static_cast<u64>(h) * static_cast<u64>(w);
  const u64 kk = static_cast<u64>(k) * static_cast<u64>(k);
  c.flops = hw * kk * static_cast<u64>(c_in) * static_cast<u64>(c_out);
  c.mem_access_approx = hw * (static_cast<u64>(c_in) + static_cast<u64>(c_out));
  c.mem_access = c.mem_access_approx + kk * static_cast<u64>(c_in) * static_cast<u64>(c_out);
  c.params = kk * static_cast<u64>(c_in) * static_cast<u64>(c_out);
  c.h = h;
  c.w = w;
  c.c = c_in;
  c.c_out = c_out;
  c.cp = c_in;
  c.k = k;
  return c;
}

ConvCost cost_dwconv(int h, int w, int k, int c) {
  require_positive({h, w, k, c});
  ConvCost r;
  const u64 hw = static_cast<u64>(h) * static_cast<u64>(w);
  const u64 kk = static_cast<u64>(k) * static_cast<u64>(k);
  r.flops = hw * kk * static_cast<u64>(c);
  r.mem_access_approx = hw * 2 * static_cast<u64>(c);
  r.mem_access = r.mem_access_approx + kk * static_cast<u64>(c);
  r.params = kk * static_cast<u64>(c);
  r.h = h;
  r.w = w;
  r.c = c;
  r.c_out = c;
  r.cp = c;
  r.k = k;
  return r;
}

ConvCost cost_pconv(int h, int w, int k, int cp) {
  require_positive({h, w, k, cp});
  ConvCost r;
  const u64 hw = static_cast<u64>(h) * static_cast<u64>(w);
  const u64 kk = static_cast<u64>(k) * static_cast<u64>(k);
  const u64 cp2 = static_cast<u64>(cp) * static_cast<u64>(cp);
  r.flops = hw * kk * cp2;
  r.mem_access_approx = hw * 2 * static_cast<u64>(cp);
  r.mem_access = r.mem_access_approx + kk * cp2;
  r.params = kk * cp2;
  r.h = h;
  r.w = w;
  r.c = cp;
  r.c_out = cp;
  r.cp = cp;
  r.k = k;
  return r;
}

ConvCost cost_conv_general(int h_in, int w_in, int k, int stride, int pad, int groups, int c_in, int c_out,
                           bool bias) {
  require_positive({h_in, w_in, k, stride, groups, c_in, c_out});
  if (c_in % groups != 0 || c_out % groups != 0) throw ConfigError("groups must divide channel counts");
  const int h_out = (h_in + 2 * pad - k) / stride + 1;
  const int w_out = (w_in + 2 * pad - k) / stride + 1;
  if (h_out < 1 || w_out < 1) throw ConfigError("convolution produces an empty output");
  ConvCost r;
  const u64 kk = static_cast<u64>(k) * static_cast<u64>(k);
  const u64 weights = kk * static_cast<u64>(c_in / groups) * static_cast<u64>(c_out);
  r.flops = static_cast<u64>(h_out) * static_cast<u64>(w_out) * weights;
  r.mem_access_approx = static_cast<u64>(h_in) * static_cast<u64>(w_in) * static_cast<u64>(c_in) +
                        static_cast<u64>(h_out) * static_cast<u64>(w_out) * static_cast<u64>(c_out);
  r.mem_access = r.mem_access_approx + weights;
  r.params = weights + (bias ? static_cast<u64>(c_out) : 0);
  r.h = h_out;
  r.w = w_out;
  r.c = c_in;
  r.c_out = c_out;
  r.cp = c_in;
  r.k = k;
  r.stride = stride;
  return r;
}

std::uint64_t CostReport::total_flops() const {
  u64 s = 0;
  for (const auto& l : layers) s += l.flops;
  return s;
}

std::uint64_t CostReport::total_mem_access() const {
  u64 s = 0;
  for (const auto& l : layers) s += l.mem_access;
  return s;
}

std::uint64_t CostReport::total_params() const {
  u64 s = 0;
  for (const auto& l : layers) s += l.params;
  return s;
}

void CostReport::write_csv(std::ostream& os) const {
  os << "layer,op,flops,mem_access,params\n";
  for (const auto& l : layers) {
    os << l.layer << ',' << l.op << ',' << l.flops << ',' << l.mem_access << ',' << l.params << '\n';
  }
}

}  // namespace fndet
