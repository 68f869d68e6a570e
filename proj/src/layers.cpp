#include "avlip/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace avlip {

void init_uniform_fan_in(Tensor& t, Index fan_in, Rng& rng) {
  const Scalar bound = std::sqrt(1.0 / static_cast<Scalar>(fan_in));
  for (Index i = 0; i < t.size(); ++i) t.values()(i) = rng.uniform(-bound, bound);
}

Affine::Affine(Index in_dim, Index out_dim, Rng& rng)
    : in_dim_(in_dim), out_dim_(out_dim) {
  weight_ = make_tensor({out_dim, in_dim}, true);
  bias_ = make_tensor({out_dim}, true);
  init_uniform_fan_in(*weight_, in_dim, rng);
}

TensorPtr Affine::forward(Tape& tape, const TensorPtr& x) const {
  return add_bias_cols(tape, matmul(tape, weight_, x), bias_);
}

void Affine::append_params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", weight_});
  out.push_back({prefix + ".b", bias_});
}

Conv1d::Conv1d(Index in_channels, Index out_channels, Index kernel, Index dilation, Rng& rng)
    : kernel_(kernel), dilation_(dilation) {
  if (kernel % 2 == 0)
    throw std::invalid_argument("Conv1d: even kernel size " + std::to_string(kernel));
  weight_ = make_tensor({out_channels, in_channels, kernel}, true);
  bias_ = make_tensor({out_channels}, true);
  init_uniform_fan_in(*weight_, in_channels * kernel, rng);
}

TensorPtr Conv1d::forward(Tape& tape, const TensorPtr& x) const {
  return conv1d(tape, x, weight_, bias_, dilation_);
}

void Conv1d::append_params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", weight_});
  out.push_back({prefix + ".b", bias_});
}

LayerNorm::LayerNorm(Index dim) {
  gain_ = make_tensor({dim}, true);
  bias_ = make_tensor({dim}, true);
  gain_->values().setOnes();
}

TensorPtr LayerNorm::forward(Tape& tape, const TensorPtr& x) const {
  return layer_norm_cols(tape, x, gain_, bias_);
}

void LayerNorm::append_params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain_});
  out.push_back({prefix + ".bias", bias_});
}

FeedForward::FeedForward(Index dim, Index hidden, Rng& rng)
    : fc1_(dim, hidden, rng), fc2_(hidden, dim, rng) {}

TensorPtr FeedForward::forward(Tape& tape, const TensorPtr& x) const {
  return fc2_.forward(tape, relu(tape, fc1_.forward(tape, x)));
}

void FeedForward::append_params(const std::string& prefix, ParamList& out) const {
  fc1_.append_params(prefix + ".fc1", out);
  fc2_.append_params(prefix + ".fc2", out);
}

TcnBlock::TcnBlock(Index channels, Index kernel, Index dilation, Rng& rng)
    : conv1_(channels, channels, kernel, dilation, rng),
      conv2_(channels, channels, kernel, dilation, rng) {}

TensorPtr TcnBlock::forward(Tape& tape, const TensorPtr& x) const {
  return add(tape, x, conv2_.forward(tape, relu(tape, conv1_.forward(tape, x))));
}

void TcnBlock::append_params(const std::string& prefix, ParamList& out) const {
  conv1_.append_params(prefix + ".conv1", out);
  conv2_.append_params(prefix + ".conv2", out);
}

}  // namespace avlip
