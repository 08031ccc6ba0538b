#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace prunemia {

// Shape mismatch between operands; the message names the op and both shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// An op produced NaN or Inf.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

// Dense row-major tensor of doubles. Value semantics; shape product always
// equals the data length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size()))
      throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match data length " +
                       std::to_string(data_.size()));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor row(std::initializer_list<double> vals) {
    return Tensor({static_cast<std::int64_t>(vals.size())}, std::vector<double>(vals));
  }

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }

  // Rows/cols of the trailing two axes (leading axes flattened into rows).
  std::int64_t last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
  std::int64_t lead_rows() const { return shape_.empty() ? 1 : numel() / shape_.back(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at2(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_.back() + c)]; }
  double at2(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * shape_.back() + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(s));
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

// C[m x n] = A[m x k] * B[k x n]; accumulate adds into C instead.
inline void gemm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                    std::int64_t n, bool accumulate = false) {
  ECMap A(a, m, k), B(b, k, n);
  EMap C(c, m, n);
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

// C[m x n] = A[m x k] * B[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                    std::int64_t n, bool accumulate = false) {
  ECMap A(a, m, k), B(b, n, k);
  EMap C(c, m, n);
  if (accumulate)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

// C[m x n] = A[k x m]^T * B[k x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                    std::int64_t n, bool accumulate = false) {
  ECMap A(a, k, m), B(b, k, n);
  EMap C(c, m, n);
  if (accumulate)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

}  // namespace prunemia
