#include "iyolo/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <numeric>

namespace iyolo {

std::size_t numel(const std::vector<int>& dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

void tensor_fail(const std::string& msg) { throw std::invalid_argument(msg); }

static void validate_dims(const std::vector<int>& dims) {
  tensor_require(!dims.empty(), "tensor: rank must be >= 1");
  for (int d : dims) tensor_require(d > 0, "tensor: every dim must be > 0");
}

Tensor::Tensor(std::vector<int> dims) {
  validate_dims(dims);
  dims_ = std::move(dims);
  data_.assign(numel(dims_), 0.0f);
}

Tensor::Tensor(std::vector<int> dims, std::vector<float> values) {
  validate_dims(dims);
  tensor_require(values.size() == numel(dims), "tensor: data length != product(dims)");
  dims_ = std::move(dims);
  data_ = std::move(values);
}

Tensor Tensor::full(std::vector<int> dims, float value) {
  Tensor t(std::move(dims));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

void ensure_finite(const Tensor& t, const char* op) {
  const float* p = t.data();
  const std::size_t n = t.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw std::runtime_error(std::string(op) + ": non-finite value in output");
    }
  }
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              int stride, int padding, int groups) {
  tensor_require(input.rank() == 4, "conv2d: input must be NCHW");
  tensor_require(weight.rank() == 4, "conv2d: weight must be OIHW");
  tensor_require(stride >= 1, "conv2d: stride must be >= 1");
  tensor_require(padding >= 0, "conv2d: padding must be >= 0");
  tensor_require(groups >= 1, "conv2d: groups must be >= 1");

  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int O = weight.dim(0), I = weight.dim(1), kH = weight.dim(2), kW = weight.dim(3);
  tensor_require(C % groups == 0 && O % groups == 0,
                 "conv2d: groups must divide input and output channels");
  tensor_require(I == C / groups, "conv2d: weight input-channel dim mismatch");
  if (bias) {
    tensor_require(bias->rank() == 1 && bias->dim(0) == O, "conv2d: bias length != O");
  }
  const int Ho = (H + 2 * padding - kH) / stride + 1;
  const int Wo = (W + 2 * padding - kW) / stride + 1;
  tensor_require(H + 2 * padding >= kH && W + 2 * padding >= kW && Ho > 0 && Wo > 0,
                 "conv2d: non-positive output size");

  Tensor out({N, O, Ho, Wo});
  const int cpg = C / groups;  // channels per group
  const int opg = O / groups;

  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      float* out_plane = out.data() + ((static_cast<std::size_t>(n) * O + o) * Ho) * Wo;
      if (bias) {
        const float b = (*bias)[static_cast<std::size_t>(o)];
        std::fill(out_plane, out_plane + static_cast<std::size_t>(Ho) * Wo, b);
      }
      const int g = o / opg;
      for (int ic = 0; ic < cpg; ++ic) {
        const int c = g * cpg + ic;
        const float* in_plane =
            input.data() + ((static_cast<std::size_t>(n) * C + c) * H) * W;
        const float* w_plane =
            weight.data() + ((static_cast<std::size_t>(o) * I + ic) * kH) * kW;
        for (int ky = 0; ky < kH; ++ky) {
          for (int kx = 0; kx < kW; ++kx) {
            const float w = w_plane[ky * kW + kx];
            // valid output range so iy = oy*stride + ky - padding stays in [0, H)
            const int oy0 = std::max(0, (padding - ky + stride - 1) / stride);
            const int oy1 = std::min(Ho, (H - 1 - ky + padding) / stride + 1);
            const int ox0 = std::max(0, (padding - kx + stride - 1) / stride);
            const int ox1 = std::min(Wo, (W - 1 - kx + padding) / stride + 1);
            for (int oy = oy0; oy < oy1; ++oy) {
              const int iy = oy * stride + ky - padding;
              const float* in_row = in_plane + static_cast<std::size_t>(iy) * W;
              float* out_row = out_plane + static_cast<std::size_t>(oy) * Wo;
              const int off = kx - padding;
              if (stride == 1) {
                for (int ox = ox0; ox < ox1; ++ox) out_row[ox] += w * in_row[ox + off];
              } else {
                for (int ox = ox0; ox < ox1; ++ox) out_row[ox] += w * in_row[ox * stride + off];
              }
            }
          }
        }
      }
    }
  }
  ensure_finite(out, "conv2d");
  return out;
}

Tensor batchnorm_inference(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           const Tensor& mean, const Tensor& var, float eps) {
  tensor_require(x.rank() == 4, "batchnorm: input must be NCHW");
  const int C = x.dim(1);
  for (const Tensor* t : {&gamma, &beta, &mean, &var}) {
    tensor_require(t->rank() == 1 && t->dim(0) == C, "batchnorm: per-channel vector length != C");
  }
  for (std::size_t i = 0; i < var.size(); ++i) {
    tensor_require(var[i] >= 0.0f, "batchnorm: negative variance");
  }
  tensor_require(eps >= 0.0f, "batchnorm: eps must be >= 0");

  const int N = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out(x.dims());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const float scale = gamma[c] / std::sqrt(var[c] + eps);
      const float shift = beta[c] - scale * mean[c];
      const float* src = x.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      float* dst = out.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = scale * src[i] + shift;
    }
  }
  ensure_finite(out, "batchnorm_inference");
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = silu_scalar(x[i]);
  ensure_finite(out, "silu");
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_scalar(x[i]);
  ensure_finite(out, "sigmoid");
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  tensor_require(axis >= 0 && axis < x.rank(), "softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));
  for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<std::size_t>(x.dim(i));
  const std::size_t n = static_cast<std::size_t>(x.dim(axis));

  Tensor out(x.dims());
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t b = 0; b < inner; ++b) {
      const float* src = x.data() + a * n * inner + b;
      float* dst = out.data() + a * n * inner + b;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, src[i * inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const float e = std::exp(src[i * inner] - mx);
        dst[i * inner] = e;
        sum += e;
      }
      const float inv = static_cast<float>(1.0 / sum);
      for (std::size_t i = 0; i < n; ++i) dst[i * inner] *= inv;
    }
  }
  ensure_finite(out, "softmax");
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  tensor_require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank-2");
  tensor_require(a.dim(1) == b.dim(0), "matmul: inner dims mismatch");
  const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out({M, N});
  for (int i = 0; i < M; ++i) {
    float* out_row = out.data() + static_cast<std::size_t>(i) * N;
    const float* a_row = a.data() + static_cast<std::size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const float av = a_row[k];
      const float* b_row = b.data() + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) out_row[j] += av * b_row[j];
    }
  }
  ensure_finite(out, "matmul");
  return out;
}

Tensor transpose2d(const Tensor& a) {
  tensor_require(a.rank() == 2, "transpose2d: operand must be rank-2");
  const int M = a.dim(0), N = a.dim(1);
  Tensor out({N, M});
  for (int i = 0; i < M; ++i) {
    for (int j = 0; j < N; ++j) out.at2(j, i) = a.at2(i, j);
  }
  return out;
}

Tensor maxpool2d(const Tensor& x, int k, int stride, int padding) {
  tensor_require(x.rank() == 4, "maxpool2d: input must be NCHW");
  tensor_require(k >= 1 && stride >= 1 && padding >= 0, "maxpool2d: bad window parameters");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  tensor_require(H + 2 * padding >= k && W + 2 * padding >= k, "maxpool2d: window does not fit");
  const int Ho = (H + 2 * padding - k) / stride + 1;
  const int Wo = (W + 2 * padding - k) / stride + 1;

  Tensor out({N, C, Ho, Wo});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const float* in_plane = x.data() + ((static_cast<std::size_t>(n) * C + c) * H) * W;
      float* out_plane = out.data() + ((static_cast<std::size_t>(n) * C + c) * Ho) * Wo;
      for (int oy = 0; oy < Ho; ++oy) {
        const int y0 = std::max(0, oy * stride - padding);
        const int y1 = std::min(H, oy * stride - padding + k);
        for (int ox = 0; ox < Wo; ++ox) {
          const int x0 = std::max(0, ox * stride - padding);
          const int x1 = std::min(W, ox * stride - padding + k);
          float m = -std::numeric_limits<float>::infinity();
          for (int y = y0; y < y1; ++y) {
            const float* row = in_plane + static_cast<std::size_t>(y) * W;
            for (int xx = x0; xx < x1; ++xx) m = std::max(m, row[xx]);
          }
          out_plane[static_cast<std::size_t>(oy) * Wo + ox] = m;
        }
      }
    }
  }
  ensure_finite(out, "maxpool2d");
  return out;
}

Tensor upsample_nearest(const Tensor& x, int scale) {
  tensor_require(x.rank() == 4, "upsample_nearest: input must be NCHW");
  tensor_require(scale >= 1, "upsample_nearest: scale must be >= 1");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({N, C, H * scale, W * scale});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < H * scale; ++y) {
        const float* src =
            x.data() + ((static_cast<std::size_t>(n) * C + c) * H + y / scale) * W;
        float* dst = out.data() +
                     ((static_cast<std::size_t>(n) * C + c) * (H * scale) + y) *
                         static_cast<std::size_t>(W * scale);
        for (int xx = 0; xx < W * scale; ++xx) dst[xx] = src[xx / scale];
      }
    }
  }
  return out;
}

Tensor concat(std::span<const Tensor* const> parts, int axis) {
  tensor_require(!parts.empty(), "concat: needs at least one part");
  const Tensor& first = *parts[0];
  tensor_require(axis >= 0 && axis < first.rank(), "concat: axis out of range");

  int axis_total = 0;
  for (const Tensor* p : parts) {
    tensor_require(p->rank() == first.rank(), "concat: rank mismatch");
    for (int i = 0; i < first.rank(); ++i) {
      tensor_require(i == axis || p->dim(i) == first.dim(i), "concat: dims differ off-axis");
    }
    axis_total += p->dim(axis);
  }

  std::vector<int> out_dims = first.dims();
  out_dims[static_cast<std::size_t>(axis)] = axis_total;
  Tensor out(std::move(out_dims));

  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(first.dim(i));
  for (int i = axis + 1; i < first.rank(); ++i) inner *= static_cast<std::size_t>(first.dim(i));

  const std::size_t out_block = static_cast<std::size_t>(axis_total) * inner;
  std::size_t offset = 0;
  for (const Tensor* p : parts) {
    const std::size_t block = static_cast<std::size_t>(p->dim(axis)) * inner;
    for (std::size_t a = 0; a < outer; ++a) {
      std::memcpy(out.data() + a * out_block + offset, p->data() + a * block,
                  block * sizeof(float));
    }
    offset += block;
  }
  return out;
}

Tensor concat(std::initializer_list<const Tensor*> parts, int axis) {
  return concat(std::span<const Tensor* const>(parts.begin(), parts.size()), axis);
}

Tensor add(const Tensor& a, const Tensor& b) {
  tensor_require(a.same_dims(b), "add: dims mismatch");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  ensure_finite(out, "add");
  return out;
}

}  // namespace iyolo
