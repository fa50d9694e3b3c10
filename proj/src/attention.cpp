#include "iyolo/attention.hpp"

#include <cmath>

namespace iyolo {

Tensor positional_encoding(int seq_len, int d_model) {
  tensor_require(seq_len >= 1, "positional_encoding: seq_len must be >= 1");
  tensor_require(d_model >= 2 && d_model % 2 == 0, "positional_encoding: d_model must be even");
  Tensor pe({seq_len, d_model});
  for (int i = 0; i < d_model / 2; ++i) {
    const double omega = std::pow(10000.0, -2.0 * i / d_model);
    for (int pos = 0; pos < seq_len; ++pos) {
      const double angle = pos * omega;
      pe.at2(pos, 2 * i) = static_cast<float>(std::sin(angle));
      pe.at2(pos, 2 * i + 1) = static_cast<float>(std::cos(angle));
    }
  }
  return pe;
}

static float score_scale(int d_k, ScaleMode mode) {
  return mode == ScaleMode::Sqrt ? 1.0f / std::sqrt(static_cast<float>(d_k))
                                 : 1.0f / static_cast<float>(d_k);
}

Tensor attention_matrix(const Tensor& q, const Tensor& k, ScaleMode mode) {
  tensor_require(q.rank() == 2 && k.rank() == 2, "attention: Q and K must be rank-2");
  tensor_require(q.dim(1) == k.dim(1), "attention: Q/K width mismatch");
  Tensor scores = matmul(q, transpose2d(k));
  const float s = score_scale(q.dim(1), mode);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] *= s;
  return softmax(scores, 1);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            ScaleMode mode) {
  tensor_require(k.dim(0) == v.dim(0), "attention: K/V row counts differ");
  return matmul(attention_matrix(q, k, mode), v);
}

static Tensor cols_slice(const Tensor& x, int c0, int c1) {
  const int n = x.dim(0), w = c1 - c0;
  Tensor out({n, w});
  for (int i = 0; i < n; ++i) {
    const float* src = x.data() + static_cast<std::size_t>(i) * x.dim(1) + c0;
    std::copy(src, src + w, out.data() + static_cast<std::size_t>(i) * w);
  }
  return out;
}

Tensor multi_head_cross_attention(const Tensor& xq, const Tensor& xkv,
                                  const MhaWeights& w, const TeConfig& cfg) {
  tensor_require(cfg.d_model >= 1 && cfg.heads >= 1, "mha: bad config");
  tensor_require(cfg.d_model % cfg.heads == 0, "mha: head count must divide d_model");
  tensor_require(xq.dim(1) == cfg.d_model && xkv.dim(1) == cfg.d_model,
                 "mha: input width != d_model");

  Tensor q = matmul(xq, w.wq);
  Tensor k = matmul(xkv, w.wk);
  Tensor v = matmul(xkv, w.wv);

  const int d_k = cfg.head_dim();
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    const int c0 = h * d_k, c1 = (h + 1) * d_k;
    heads.push_back(scaled_dot_attention(cols_slice(q, c0, c1), cols_slice(k, c0, c1),
                                         cols_slice(v, c0, c1), cfg.scale_mode));
  }
  std::vector<const Tensor*> parts;
  parts.reserve(heads.size());
  for (const Tensor& h : heads) parts.push_back(&h);
  return matmul(concat(parts, 1), w.wo);
}

Tensor multi_head_attention(const Tensor& x, const MhaWeights& w, const TeConfig& cfg) {
  return multi_head_cross_attention(x, x, w, cfg);
}

static Tensor add_row_bias(Tensor x, const Tensor& b) {
  tensor_require(b.rank() == 1 && b.dim(0) == x.dim(1), "mlp: bias length mismatch");
  const int n = x.dim(0), d = x.dim(1);
  for (int i = 0; i < n; ++i) {
    float* row = x.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) row[j] += b[j];
  }
  return x;
}

Tensor mlp_forward(const Tensor& x, const MlpWeights& w) {
  Tensor h = silu(add_row_bias(matmul(x, w.w1), w.b1));
  return add_row_bias(matmul(h, w.w2), w.b2);
}

Tensor te_block_forward(const Tensor& f, const TeBlockWeights& w, const TeConfig& cfg) {
  tensor_require(f.rank() == 4, "te_block: input must be NCHW");
  const int N = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
  tensor_require(C == cfg.d_model, "te_block: channel count != d_model");

  const int seq = H * W;
  const Tensor pe = positional_encoding(seq, C);
  Tensor out({N, C, H, W});

  for (int n = 0; n < N; ++n) {
    // row-major flatten: token at (y, x) is position y*W + x
    Tensor tokens({seq, C});
    for (int c = 0; c < C; ++c) {
      const float* plane = f.data() + ((static_cast<std::size_t>(n) * C + c) * H) * W;
      for (int p = 0; p < seq; ++p) tokens.at2(p, c) = plane[p];
    }
    Tensor x = add(tokens, pe);
    Tensor y = add(x, multi_head_attention(x, w.attn, cfg));
    Tensor z = add(y, mlp_forward(y, w.mlp));
    for (int c = 0; c < C; ++c) {
      float* plane = out.data() + ((static_cast<std::size_t>(n) * C + c) * H) * W;
      for (int p = 0; p < seq; ++p) plane[p] = z.at2(p, c);
    }
  }
  return out;
}

}  // namespace iyolo
