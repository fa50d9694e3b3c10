#pragma once

#include "iyolo/tensor.hpp"

namespace iyolo {

/// How attention scores are scaled before softmax: 1/sqrt(d_k) (the usual
/// transformer convention) or 1/d_k.
enum class ScaleMode { Sqrt, Linear };

struct TeConfig {
  int d_model = 0;
  int heads = 4;
  int mlp_hidden = 0;  // 0 means 2 * d_model
  ScaleMode scale_mode = ScaleMode::Sqrt;

  int head_dim() const { return d_model / heads; }
  int hidden() const { return mlp_hidden > 0 ? mlp_hidden : 2 * d_model; }
};

struct MhaWeights {
  Tensor wq, wk, wv, wo;  // each d_model x d_model
};

/// Two-layer feed-forward net: d_model -> hidden -> d_model, SiLU between.
struct MlpWeights {
  Tensor w1, b1, w2, b2;
};

/// One transformer-encoder block: multi-head attention + MLP, residual
/// connections, no layer normalization.
struct TeBlockWeights {
  MhaWeights attn;
  MlpWeights mlp;
};

/// Sinusoidal table, seq_len x d_model:
///   PE[pos, 2i]   = sin(pos / 10000^(2i/d_model))
///   PE[pos, 2i+1] = cos(pos / 10000^(2i/d_model))
Tensor positional_encoding(int seq_len, int d_model);

/// softmax(Q K^T * scale) row-wise; rows each sum to 1.
Tensor attention_matrix(const Tensor& q, const Tensor& k, ScaleMode mode);

/// attention_matrix(Q, K) * V. Q may have fewer rows than K/V (cross case).
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            ScaleMode mode);

Tensor multi_head_attention(const Tensor& x, const MhaWeights& w, const TeConfig& cfg);

/// Queries projected from `xq`, keys/values from `xkv`.
Tensor multi_head_cross_attention(const Tensor& xq, const Tensor& xkv,
                                  const MhaWeights& w, const TeConfig& cfg);

Tensor mlp_forward(const Tensor& x, const MlpWeights& w);

/// Feature-map form: 1 x C x H x W in and out, with each spatial position a
/// token (seq_len = H*W) and C == d_model. X = tokens + PE; Y = X + MHA(X);
/// Z = Y + MLP(Y).
Tensor te_block_forward(const Tensor& f, const TeBlockWeights& w, const TeConfig& cfg);

}  // namespace iyolo
