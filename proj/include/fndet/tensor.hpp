#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fndet {

// Error hierarchy. Everything thrown by the library derives from Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch. `axis` names the offending dimension ("n", "c", "h", "w", ...).
class DimensionError : public Error {
 public:
  DimensionError(std::string axis, const std::string& what)
      : Error("dimension error on axis '" + axis + "': " + what), axis_(std::move(axis)) {}
  const std::string& axis() const { return axis_; }

 private:
  std::string axis_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_ = 0;
};

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Dense (n, c, h, w) row-major grid with an optional same-shape gradient buffer.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape shape, double fill = 0.0);
  Tensor4(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool has_grad() const { return has_grad_; }
  /// Allocates a zeroed gradient buffer if absent and returns it.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void drop_grad() {
    grad_.clear();
    has_grad_ = false;
  }

  /// Throws NumericError on the first NaN/Inf (in data or grad).
  void validate_finite(const std::string& what = "tensor") const;

  bool operator==(const Tensor4& other) const { return shape_ == other.shape_ && data_ == other.data_; }

 private:
  Shape shape_{};
  std::vector<double> data_;
  std::vector<double> grad_;
  bool has_grad_ = false;
};

/// Little-endian "T4F1" record: magic, four u32 dims, then float32 data.
void write_t4f1(std::ostream& os, const Tensor4& t);
Tensor4 read_t4f1(std::istream& is);
void save_t4f1(const std::string& path, const Tensor4& t);
Tensor4 load_t4f1(const std::string& path);

}  // namespace fndet
