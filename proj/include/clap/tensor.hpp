#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace clap {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float32 array. Owns its buffer; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor vector(std::initializer_list<float> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& values() const { return data_; }

  // 2-D accessors; callers are expected to have checked rank.
  std::size_t rows() const { return shape_.empty() ? 0 : shape_.front(); }
  std::size_t cols() const { return shape_.empty() ? 0 : numel() / rows(); }
  float& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  Tensor transposed() const;
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

float max_abs_diff(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Kernels. All are pure; accumulation order is fixed so results are
// bit-reproducible for a given build.
// ---------------------------------------------------------------------------

/// c[i,j] = sum_p a[i,p] * b[p,j], summed with p ascending.
Tensor matmul(const Tensor& a, const Tensor& b);

/// c[i,j] = sum_p a[i,p] * b[j,p]. Same accumulation order as
/// matmul(a, b.transposed()), so the two agree bit-for-bit.
Tensor matmul_transposed(const Tensor& a, const Tensor& b);

/// y = x * w + bias (Conv1D convention, w stored as [in, out]).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);

/// Tanh-approximation GELU.
float gelu(float x);
Tensor gelu(const Tensor& x);

Tensor softmax_rows(const Tensor& x);

/// Rows of `table` selected by `ids`.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

Tensor add(const Tensor& a, const Tensor& b);

}  // namespace clap
