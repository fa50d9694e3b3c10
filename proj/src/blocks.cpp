#include "iyolo/blocks.hpp"

namespace iyolo {

Tensor conv_block_forward(const Tensor& x, const ConvBlockParams& p) {
  Tensor y = conv2d(x, p.weight, nullptr, p.stride, p.padding, p.groups);
  y = batchnorm_inference(y, p.gamma, p.beta, p.mean, p.var, p.bn_eps);
  return silu(y);
}

Tensor ghost_conv_forward(const Tensor& x, const GhostConvParams& p) {
  tensor_require(p.ratio >= 2, "ghost_conv: ratio must be >= 2");
  tensor_require(p.out_channels() % p.ratio == 0,
                 "ghost_conv: ratio must divide output channel count");
  Tensor intrinsic = conv_block_forward(x, p.primary);
  Tensor ghost = conv_block_forward(intrinsic, p.cheap);
  return concat({&intrinsic, &ghost}, 1);
}

Tensor bottleneck_forward(const Tensor& x, const BottleneckParams& p) {
  Tensor y = conv_block_forward(conv_block_forward(x, p.cv1), p.cv2);
  if (p.shortcut) {
    tensor_require(x.dim(1) == y.dim(1), "bottleneck: shortcut needs C_in == C_out");
    return add(x, y);
  }
  return y;
}

Tensor c2f_forward(const Tensor& x, const C2fParams& p) {
  Tensor h = conv_block_forward(x, p.entry);
  const int ch = h.dim(1);
  tensor_require(ch % 2 == 0, "c2f: entry output channel count must be even");
  const int half = ch / 2;

  // channel split without a dedicated slice kernel
  const int N = h.dim(0), H = h.dim(2), W = h.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<Tensor> ys;
  ys.reserve(2 + p.blocks.size());
  for (int part = 0; part < 2; ++part) {
    Tensor y({N, half, H, W});
    for (int n = 0; n < N; ++n) {
      const float* src = h.data() + ((static_cast<std::size_t>(n) * ch) + part * half) * plane;
      float* dst = y.data() + (static_cast<std::size_t>(n) * half) * plane;
      std::copy(src, src + static_cast<std::size_t>(half) * plane, dst);
    }
    ys.push_back(std::move(y));
  }
  for (const BottleneckParams& b : p.blocks) {
    ys.push_back(bottleneck_forward(ys.back(), b));
  }
  std::vector<const Tensor*> parts;
  parts.reserve(ys.size());
  for (const Tensor& y : ys) parts.push_back(&y);
  return conv_block_forward(concat(parts, 1), p.exit);
}

Tensor sppf_forward(const Tensor& x, const SPPFParams& p) {
  tensor_require(p.pool_k % 2 == 1, "sppf: pool kernel must be odd");
  const int pad = (p.pool_k - 1) / 2;
  Tensor h = conv_block_forward(x, p.entry);
  Tensor p1 = maxpool2d(h, p.pool_k, 1, pad);
  Tensor p2 = maxpool2d(p1, p.pool_k, 1, pad);
  Tensor p3 = maxpool2d(p2, p.pool_k, 1, pad);
  return conv_block_forward(concat({&h, &p1, &p2, &p3}, 1), p.exit);
}

std::int64_t conv_weight_param_count(int c_in, int c_out, int k, int groups) {
  return static_cast<std::int64_t>(c_out) * (c_in / groups) * k * k;
}

std::int64_t ghost_weight_param_count(int c_in, int c_out, int k, int d, int s) {
  const int intrinsic = c_out / s;
  return conv_weight_param_count(c_in, intrinsic, k) +
         conv_weight_param_count(intrinsic, (s - 1) * intrinsic, d, intrinsic);
}

}  // namespace iyolo
