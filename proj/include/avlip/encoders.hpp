#pragma once

#include "avlip/layers.hpp"

namespace avlip {

/// Frame-rate-preserving convolutional stack over fbank-like input frames.
/// Three conv+ReLU+LN blocks at the working width, then a kernel-1
/// projection with ReLU.
class AudioEncoder {
 public:
  AudioEncoder(Index in_channels, Index channels, Rng& rng);

  /// frames: in_channels x T_a -> channels x T_a.
  TensorPtr forward(Tape& tape, const TensorPtr& frames) const;
  void append_params(const std::string& prefix, ParamList& out) const;

  Index in_channels() const { return in_channels_; }
  Index channels() const { return channels_; }

 private:
  Index in_channels_, channels_;
  Conv1d conv0_, conv1_, conv2_;
  LayerNorm ln0_, ln1_, ln2_;
  Conv1d proj_;
};

/// Per-frame affine lift followed by two dilated TCN blocks (kernel 5,
/// dilations 1 and 2) for temporal context.
class VisualEncoder {
 public:
  VisualEncoder(Index in_dim, Index channels, Rng& rng);

  /// frames: in_dim x T_v -> channels x T_v.
  TensorPtr forward(Tape& tape, const TensorPtr& frames) const;
  void append_params(const std::string& prefix, ParamList& out) const;

  Index in_dim() const { return in_dim_; }
  Index channels() const { return channels_; }

 private:
  Index in_dim_, channels_;
  Affine input_;
  TcnBlock tcn0_, tcn1_;
};

}  // namespace avlip
