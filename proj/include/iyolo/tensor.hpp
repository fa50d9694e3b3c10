#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace iyolo {

/// Dense row-major float32 tensor (last dimension fastest).
/// Images and feature maps are NCHW, matrices are rank-2 rows x cols.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims);                    // zero-filled
  Tensor(std::vector<int> dims, std::vector<float> values);
  static Tensor full(std::vector<int> dims, float value);

  const std::vector<int>& dims() const { return dims_; }
  int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(dims_.size()); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // rank-4 NCHW element access
  float& at4(int n, int c, int y, int x) {
    return data_[idx4(n, c, y, x)];
  }
  float at4(int n, int c, int y, int x) const {
    return data_[idx4(n, c, y, x)];
  }
  // rank-2 element access
  float& at2(int r, int c) { return data_[static_cast<std::size_t>(r) * dims_[1] + c]; }
  float at2(int r, int c) const { return data_[static_cast<std::size_t>(r) * dims_[1] + c]; }

  bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }

 private:
  std::size_t idx4(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * dims_[1] + c) * dims_[2] + y) * dims_[3] + x;
  }

  std::vector<int> dims_;
  std::vector<float> data_;
};

std::size_t numel(const std::vector<int>& dims);

[[noreturn]] void tensor_fail(const std::string& msg);

inline void tensor_require(bool cond, const std::string& msg) {
  if (!cond) tensor_fail(msg);
}

/// Throws if any element is NaN or Inf. Every kernel below calls this on
/// its output: a non-finite value is a contract violation, not a result.
void ensure_finite(const Tensor& t, const char* op);

/// Numerically stable logistic function. Built so that
/// sigmoid_scalar(-x) == 1 - sigmoid_scalar(x) holds bit-exactly.
inline float sigmoid_scalar(float x) {
  const float t = std::exp(-std::fabs(x));
  const float p = 1.0f / (1.0f + t);
  return x >= 0.0f ? p : 1.0f - p;
}

inline float silu_scalar(float x) { return x * sigmoid_scalar(x); }

/// Cross-correlation (no kernel flip), zero padding.
/// input NCHW, weight OIHW with I == C/groups, optional bias of length O.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              int stride, int padding, int groups = 1);

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, per channel (NCHW).
Tensor batchnorm_inference(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           const Tensor& mean, const Tensor& var, float eps);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Softmax along `axis`; subtracts the slice max before exponentiation.
Tensor softmax(const Tensor& x, int axis);

/// Rank-2 matrix product, (M x K) * (K x N) -> (M x N).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose2d(const Tensor& a);

/// Windowed max over NCHW; padding cells count as -inf.
Tensor maxpool2d(const Tensor& x, int k, int stride, int padding);

/// Nearest-neighbour upsampling: each pixel replicated scale x scale.
Tensor upsample_nearest(const Tensor& x, int scale);

/// Concatenate along `axis`; all other dims must match.
Tensor concat(std::span<const Tensor* const> parts, int axis);
Tensor concat(std::initializer_list<const Tensor*> parts, int axis);

Tensor add(const Tensor& a, const Tensor& b);

}  // namespace iyolo
