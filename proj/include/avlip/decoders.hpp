#pragma once

#include "avlip/layers.hpp"

namespace avlip {

/// Attentive statistics pooling followed by an embedding affine. The scorer
/// sees only the local frame (kernel-1 convs, no utterance-level context).
/// Per-channel attention by default; shared_attention collapses the scorer
/// output to a single weight row broadcast over channels.
class AspDecoder {
 public:
  AspDecoder(Index channels, Index attn_hidden, Index emb_dim, bool shared_attention,
             Rng& rng);

  /// features: C x T (T >= 1) -> embedding E x 1. alpha_out, if given,
  /// receives the C x T attention weights (rows sum to 1 over frames).
  TensorPtr embed(Tape& tape, const TensorPtr& features,
                  TensorPtr* alpha_out = nullptr) const;

  void append_params(const std::string& prefix, ParamList& out) const;

  Index channels() const { return channels_; }
  Index emb_dim() const { return emb_.out_dim(); }

  static constexpr Scalar kVarianceFloor = 1e-9;

 private:
  Index channels_;
  bool shared_attention_;
  Conv1d score1_, score2_;
  Affine emb_;  // 2C -> E
};

/// Additive-angular-margin softmax over cosine logits. Class weight rows are
/// renormalized to unit length at every use; cos(theta + m) is expanded
/// trigonometrically with sin(theta) clamped at zero.
class AamSoftmaxHead {
 public:
  AamSoftmaxHead(Index n_classes, Index emb_dim, Scalar scale, Scalar margin, Rng& rng);

  /// Scalar cross-entropy loss for one embedding/label pair.
  TensorPtr loss(Tape& tape, const TensorPtr& embedding, Index label) const;

  /// Cosines against all renormalized class rows; n_classes x 1.
  TensorPtr cosines(Tape& tape, const TensorPtr& embedding) const;

  void append_params(const std::string& prefix, ParamList& out) const;

  Index n_classes() const { return weights_->rows(); }
  Scalar margin() const { return margin_; }
  Scalar logit_scale() const { return scale_; }

 private:
  TensorPtr weights_;  // n_classes x E
  Scalar scale_, margin_;
};

/// Margin cross-entropy over a column of cosines: the label logit becomes
/// s*cos(theta+m), the rest s*cos(theta), then softmax cross-entropy.
TensorPtr aam_margin_cross_entropy(Tape& tape, const TensorPtr& cosines, Index label,
                                   Scalar s, Scalar m);

/// Equal-weight sum of the four branch losses.
TensorPtr co_learning_loss(Tape& tape, const TensorPtr& l_a, const TensorPtr& l_v,
                           const TensorPtr& l_at, const TensorPtr& l_vt);

}  // namespace avlip
