#pragma once

#include "avlip/rng.hpp"
#include "avlip/tensor.hpp"

namespace avlip {

struct NamedParam {
  std::string name;
  TensorPtr tensor;
};
using ParamList = std::vector<NamedParam>;

/// Per-frame affine map; applied to a C_in x T sequence it transforms every
/// column. Weights uniform in +-sqrt(1/fan_in), bias zero.
class Affine {
 public:
  Affine(Index in_dim, Index out_dim, Rng& rng);

  TensorPtr forward(Tape& tape, const TensorPtr& x) const;
  void append_params(const std::string& prefix, ParamList& out) const;

  Index in_dim() const { return in_dim_; }
  Index out_dim() const { return out_dim_; }
  const TensorPtr& weight() const { return weight_; }
  const TensorPtr& bias() const { return bias_; }

 private:
  Index in_dim_, out_dim_;
  TensorPtr weight_;  // out x in
  TensorPtr bias_;    // out
};

/// Same-length 1-D convolution over the frame axis (odd kernels only).
class Conv1d {
 public:
  Conv1d(Index in_channels, Index out_channels, Index kernel, Index dilation, Rng& rng);

  TensorPtr forward(Tape& tape, const TensorPtr& x) const;
  void append_params(const std::string& prefix, ParamList& out) const;

  Index kernel() const { return kernel_; }
  Index dilation() const { return dilation_; }
  const TensorPtr& weight() const { return weight_; }
  const TensorPtr& bias() const { return bias_; }

 private:
  Index kernel_, dilation_;
  TensorPtr weight_;  // out x in x kernel
  TensorPtr bias_;    // out
};

/// Channel-axis normalization applied per frame; gain starts at 1, bias at 0.
class LayerNorm {
 public:
  explicit LayerNorm(Index dim);

  TensorPtr forward(Tape& tape, const TensorPtr& x) const;
  void append_params(const std::string& prefix, ParamList& out) const;

 private:
  TensorPtr gain_, bias_;
};

/// Affine -> ReLU -> Affine with matching input/output width. Any residual
/// wiring is the caller's business.
class FeedForward {
 public:
  FeedForward(Index dim, Index hidden, Rng& rng);

  TensorPtr forward(Tape& tape, const TensorPtr& x) const;
  void append_params(const std::string& prefix, ParamList& out) const;

  Index dim() const { return fc1_.in_dim(); }

 private:
  Affine fc1_, fc2_;
};

/// Residual dilated conv block: x + conv2(relu(conv1(x))).
class TcnBlock {
 public:
  TcnBlock(Index channels, Index kernel, Index dilation, Rng& rng);

  TensorPtr forward(Tape& tape, const TensorPtr& x) const;
  void append_params(const std::string& prefix, ParamList& out) const;

 private:
  Conv1d conv1_, conv2_;
};

/// Uniform +-sqrt(1/fan_in) init shared by all layers.
void init_uniform_fan_in(Tensor& t, Index fan_in, Rng& rng);

}  // namespace avlip
