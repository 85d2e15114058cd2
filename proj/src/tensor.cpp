#include "fndet/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace fndet {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + ", " + std::to_string(s.c) + ", " + std::to_string(s.h) + ", " +
         std::to_string(s.w) + ")";
}

Tensor4::Tensor4(Shape shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw DimensionError("shape", "negative extent in " + to_string(shape));
  }
  data_.assign(shape.numel(), fill);
}

Tensor4::Tensor4(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw DimensionError("shape", "negative extent in " + to_string(shape));
  }
  if (data_.size() != shape.numel()) {
    throw DimensionError("data", "length " + std::to_string(data_.size()) + " does not match shape " +
                                     to_string(shape));
  }
}

std::span<double> Tensor4::grad() {
  if (!has_grad_) {
    grad_.assign(data_.size(), 0.0);
    has_grad_ = true;
  }
  return grad_;
}

std::span<const double> Tensor4::grad() const {
  if (!has_grad_) throw StateError("tensor has no gradient buffer");
  return grad_;
}

void Tensor4::zero_grad() {
  grad_.assign(data_.size(), 0.0);
  has_grad_ = true;
}

void Tensor4::validate_finite(const std::string& what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < grad_.size(); ++i) {
    if (!std::isfinite(grad_[i])) {
      throw NumericError(what + ": non-finite gradient at flat index " + std::to_string(i));
    }
  }
}

namespace {

constexpr std::array<char, 4> kMagic = {'T', '4', 'F', '1'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw ParseError("T4F1: truncated header");
  return to_little(v);
}

}  // namespace

void write_t4f1(std::ostream& os, const Tensor4& t) {
  os.write(kMagic.data(), kMagic.size());
  const Shape& s = t.shape();
  for (int d : {s.n, s.c, s.h, s.w}) put_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) {
    auto f = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    os.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
  if (!os) throw Error("T4F1: write failed");
}

Tensor4 read_t4f1(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw ParseError("T4F1: bad magic");
  Shape s;
  s.n = static_cast<int>(get_u32(is));
  s.c = static_cast<int>(get_u32(is));
  s.h = static_cast<int>(get_u32(is));
  s.w = static_cast<int>(get_u32(is));
  std::vector<double> data(s.numel());
  for (double& v : data) {
    std::uint32_t bits = 0;
    is.read(reinterpret_cast<char*>(&bits), sizeof bits);
    if (!is) throw ParseError("T4F1: truncated payload");
    v = static_cast<double>(std::bit_cast<float>(to_little(bits)));
  }
  return Tensor4(s, std::move(data));
}

void save_t4f1(const std::string& path, const Tensor4& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_t4f1(os, t);
}

Tensor4 load_t4f1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_t4f1(is);
}

}  // namespace fndet
