#pragma once

#include <cstdint>
#include <vector>

#include "iyolo/tensor.hpp"

namespace iyolo {

/// Conv + batchnorm + SiLU, the basic YOLOv8 building block.
/// `weight` is OIHW; BN vectors have length O. No conv bias (BN absorbs it).
struct ConvBlockParams {
  Tensor weight;
  Tensor gamma, beta, mean, var;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  float bn_eps = 1e-5f;

  int out_channels() const { return weight.dim(0); }
  int in_channels() const { return weight.dim(1) * groups; }
  int kernel() const { return weight.dim(2); }
};

/// GhostConv: a full conv producing C_out/s "intrinsic" channels, then a
/// cheap depthwise conv deriving the remaining (s-1)*C_out/s from them.
struct GhostConvParams {
  ConvBlockParams primary;  // C_in -> C_out/s
  ConvBlockParams cheap;    // depthwise, C_out/s -> (s-1)*C_out/s
  int ratio = 2;

  int out_channels() const { return primary.out_channels() + cheap.out_channels(); }
};

struct BottleneckParams {
  ConvBlockParams cv1, cv2;
  bool shortcut = true;
};

/// CSP-style split block: entry conv to 2*C_hidden, chain of bottlenecks on
/// the second half, concat of every intermediate, exit conv.
struct C2fParams {
  ConvBlockParams entry;  // C_in -> 2*C_hidden
  std::vector<BottleneckParams> blocks;
  ConvBlockParams exit;   // (2+n)*C_hidden -> C_out
};

/// Cascaded small max-pools; concat of the pyramid goes through the exit conv.
struct SPPFParams {
  ConvBlockParams entry;  // C_in -> C_hidden
  ConvBlockParams exit;   // 4*C_hidden -> C_out
  int pool_k = 5;
};

Tensor conv_block_forward(const Tensor& x, const ConvBlockParams& p);
Tensor ghost_conv_forward(const Tensor& x, const GhostConvParams& p);
Tensor bottleneck_forward(const Tensor& x, const BottleneckParams& p);
Tensor c2f_forward(const Tensor& x, const C2fParams& p);
Tensor sppf_forward(const Tensor& x, const SPPFParams& p);

/// Conv-weight element counts (BN and bias excluded).
std::int64_t conv_weight_param_count(int c_in, int c_out, int k, int groups = 1);
std::int64_t ghost_weight_param_count(int c_in, int c_out, int k, int d, int s);

}  // namespace iyolo
