#pragma once

#include "avlip/layers.hpp"

namespace avlip {

/// Cross-modal attention from one head. Q: d x T_q (target modality),
/// K = V: d x T_k (source modality); wq/wk/wv: d x d_h. Output d_h x T_q.
/// Attention rows (one per query frame) softmax over the key axis, scores
/// scaled by inv_scale. If attn_out is given it receives the T_q x T_k
/// attention matrix.
TensorPtr single_head_transfer(Tape& tape, const TensorPtr& q, const TensorPtr& k,
                               const TensorPtr& v, const TensorPtr& wq,
                               const TensorPtr& wk, const TensorPtr& wv,
                               Scalar inv_scale, TensorPtr* attn_out = nullptr);

/// Per-head attention matrices collected from one block forward.
struct AttentionProbe {
  std::vector<TensorPtr> head_attention;  // each T_q x T_k
};

/// One booster block: FFN+LN on both streams, multi-head cross-modal
/// attention (query = target stream), then max-feature-map fusion of the
/// target stream against the transferred features.
class MaxFormerBlock {
 public:
  MaxFormerBlock(Index d, Index heads, Index ffn_hidden, bool scale_by_model_dim, Rng& rng);

  /// Multi-head transfer: heads concatenated over channels, then projected
  /// back to d. q_stream/kv_stream are the post-FFN+LN streams.
  TensorPtr transfer(Tape& tape, const TensorPtr& q_stream, const TensorPtr& kv_stream,
                     AttentionProbe* probe = nullptr) const;

  /// max(F_theta1(target), transferred) — the competitive stage before G.
  TensorPtr fuse_pre(Tape& tape, const TensorPtr& target, const TensorPtr& transferred) const;

  /// Full fusion: G_theta2(fuse_pre(...)) with G = conv1(k=1) -> LN -> FFN.
  TensorPtr fuse(Tape& tape, const TensorPtr& target, const TensorPtr& transferred) const;

  /// source_in/target_in: d x T streams entering the block. Returns the
  /// fused d x T_target output.
  TensorPtr forward(Tape& tape, const TensorPtr& source_in, const TensorPtr& target_in,
                    AttentionProbe* probe = nullptr) const;

  void append_params(const std::string& prefix, ParamList& out) const;

  Index dim() const { return d_; }
  Index head_count() const { return static_cast<Index>(heads_.size()); }
  Index head_dim() const { return d_h_; }
  Scalar attention_scale() const;

  struct Head {
    TensorPtr wq, wk, wv;  // each d x d_h
  };
  const std::vector<Head>& heads() const { return heads_; }
  const TensorPtr& output_projection() const { return w_out_; }

 private:
  Index d_, d_h_;
  bool scale_by_model_dim_;
  FeedForward ffn_src_, ffn_tgt_;
  LayerNorm ln_src_, ln_tgt_;
  std::vector<Head> heads_;
  TensorPtr w_out_;  // (m*d_h) x d
  Affine f_theta1_;
  Conv1d g_conv_;
  LayerNorm g_ln_;
  FeedForward g_ffn_;
};

/// Stack of MaxFormer blocks behind per-modality input affines. The fused
/// output of block k becomes block k+1's target stream; every block re-derives
/// its own view of the (fixed) source stream. Output length always equals the
/// target stream's length.
class CrossModalBooster {
 public:
  CrossModalBooster(Index c_source, Index c_target, Index d, Index heads, Index n_blocks,
                    Index ffn_hidden, bool scale_by_model_dim, Rng& rng);

  TensorPtr forward(Tape& tape, const TensorPtr& source, const TensorPtr& target,
                    std::vector<AttentionProbe>* probes = nullptr) const;

  void append_params(const std::string& prefix, ParamList& out) const;

  Index dim() const { return d_; }
  const std::vector<MaxFormerBlock>& blocks() const { return blocks_; }
  std::vector<MaxFormerBlock>& blocks() { return blocks_; }

 private:
  Index d_;
  Affine src_affine_, tgt_affine_;
  std::vector<MaxFormerBlock> blocks_;
};

}  // namespace avlip
