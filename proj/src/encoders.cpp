#include "avlip/encoders.hpp"

#include <stdexcept>

namespace avlip {

AudioEncoder::AudioEncoder(Index in_channels, Index channels, Rng& rng)
    : in_channels_(in_channels),
      channels_(channels),
      conv0_(in_channels, channels, 5, 1, rng),
      conv1_(channels, channels, 3, 1, rng),
      conv2_(channels, channels, 3, 1, rng),
      ln0_(channels),
      ln1_(channels),
      ln2_(channels),
      proj_(channels, channels, 1, 1, rng) {}

TensorPtr AudioEncoder::forward(Tape& tape, const TensorPtr& frames) const {
  if (frames->rows() != in_channels_)
    throw std::invalid_argument("AudioEncoder: expected " + std::to_string(in_channels_) +
                                " input channels, got " + frames->shape_str());
  auto h = ln0_.forward(tape, relu(tape, conv0_.forward(tape, frames)));
  h = ln1_.forward(tape, relu(tape, conv1_.forward(tape, h)));
  h = ln2_.forward(tape, relu(tape, conv2_.forward(tape, h)));
  return relu(tape, proj_.forward(tape, h));
}

void AudioEncoder::append_params(const std::string& prefix, ParamList& out) const {
  conv0_.append_params(prefix + ".conv0", out);
  ln0_.append_params(prefix + ".ln0", out);
  conv1_.append_params(prefix + ".conv1", out);
  ln1_.append_params(prefix + ".ln1", out);
  conv2_.append_params(prefix + ".conv2", out);
  ln2_.append_params(prefix + ".ln2", out);
  proj_.append_params(prefix + ".proj", out);
}

VisualEncoder::VisualEncoder(Index in_dim, Index channels, Rng& rng)
    : in_dim_(in_dim),
      channels_(channels),
      input_(in_dim, channels, rng),
      tcn0_(channels, 5, 1, rng),
      tcn1_(channels, 5, 2, rng) {}

TensorPtr VisualEncoder::forward(Tape& tape, const TensorPtr& frames) const {
  if (frames->rows() != in_dim_)
    throw std::invalid_argument("VisualEncoder: expected " + std::to_string(in_dim_) +
                                " input channels, got " + frames->shape_str());
  auto h = input_.forward(tape, frames);
  h = tcn0_.forward(tape, h);
  return tcn1_.forward(tape, h);
}

void VisualEncoder::append_params(const std::string& prefix, ParamList& out) const {
  input_.append_params(prefix + ".input", out);
  tcn0_.append_params(prefix + ".tcn0", out);
  tcn1_.append_params(prefix + ".tcn1", out);
}

}  // namespace avlip
