#include "avlip/decoders.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace avlip {

AspDecoder::AspDecoder(Index channels, Index attn_hidden, Index emb_dim,
                       bool shared_attention, Rng& rng)
    : channels_(channels),
      shared_attention_(shared_attention),
      score1_(channels, attn_hidden, 1, 1, rng),
      score2_(attn_hidden, shared_attention ? 1 : channels, 1, 1, rng),
      emb_(2 * channels, emb_dim, rng) {}

TensorPtr AspDecoder::embed(Tape& tape, const TensorPtr& features,
                            TensorPtr* alpha_out) const {
  if (features->cols() < 1)
    throw std::invalid_argument("AspDecoder: empty frame sequence");
  if (features->rows() != channels_)
    throw std::invalid_argument("AspDecoder: expected " + std::to_string(channels_) +
                                " channels, got " + features->shape_str());
  auto scores = score2_.forward(tape, tanh_op(tape, score1_.forward(tape, features)));
  auto alpha = softmax_rows(tape, scores);  // per channel (or single shared row) over frames
  if (shared_attention_) {
    // broadcast the shared weight row to every channel
    std::vector<TensorPtr> rows(static_cast<std::size_t>(channels_), alpha);
    alpha = concat_rows(tape, rows);
  }
  if (alpha_out) *alpha_out = alpha;
  auto mean = row_sum(tape, mul(tape, alpha, features));
  auto second = row_sum(tape, mul(tape, alpha, mul(tape, features, features)));
  auto sigma = sqrt_floor(tape, sub(tape, second, mul(tape, mean, mean)), kVarianceFloor);
  return emb_.forward(tape, concat_rows(tape, {mean, sigma}));
}

void AspDecoder::append_params(const std::string& prefix, ParamList& out) const {
  score1_.append_params(prefix + ".score1", out);
  score2_.append_params(prefix + ".score2", out);
  emb_.append_params(prefix + ".emb", out);
}

AamSoftmaxHead::AamSoftmaxHead(Index n_classes, Index emb_dim, Scalar scale, Scalar margin,
                               Rng& rng)
    : scale_(scale), margin_(margin) {
  if (scale <= 0.0) throw std::invalid_argument("AamSoftmaxHead: scale must be positive");
  if (margin < 0.0 || margin >= std::numbers::pi / 2.0)
    throw std::invalid_argument("AamSoftmaxHead: margin must lie in [0, pi/2)");
  weights_ = make_tensor({n_classes, emb_dim}, true);
  init_uniform_fan_in(*weights_, emb_dim, rng);
}

TensorPtr AamSoftmaxHead::cosines(Tape& tape, const TensorPtr& embedding) const {
  auto e_hat = l2_normalize_cols(tape, embedding);   // rejects zero-norm embeddings
  auto w_hat = l2_normalize_rows(tape, weights_);
  return matmul(tape, w_hat, e_hat);                 // n_classes x 1
}

TensorPtr AamSoftmaxHead::loss(Tape& tape, const TensorPtr& embedding, Index label) const {
  return aam_margin_cross_entropy(tape, cosines(tape, embedding), label, scale_, margin_);
}

void AamSoftmaxHead::append_params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", weights_});
}

TensorPtr aam_margin_cross_entropy(Tape& tape, const TensorPtr& cosines, Index label,
                                   Scalar s, Scalar m) {
  const Index n = cosines->rows();
  if (cosines->cols() != 1)
    throw std::invalid_argument("aam_margin_cross_entropy: cosines must be a column, got " +
                                cosines->shape_str());
  if (label < 0 || label >= n)
    throw std::invalid_argument("aam_margin_cross_entropy: label " + std::to_string(label) +
                                " out of range for " + std::to_string(n) + " classes");

  const Scalar cos_m = std::cos(m);
  const Scalar sin_m = std::sin(m);
  const Scalar cy = cosines->values()(label);
  const Scalar sin_sq = std::max(1.0 - cy * cy, 0.0);
  const Scalar sy = std::sqrt(sin_sq);

  ArrayX logits = s * cosines->values();
  logits(label) = s * (cy * cos_m - sy * sin_m);

  const Scalar zmax = logits.maxCoeff();
  const Scalar lse = zmax + std::log((logits - zmax).exp().sum());

  auto out = make_scalar(lse - logits(label), cosines->requires_grad());
  if (out->requires_grad()) {
    ArrayX probs = (logits - lse).exp();
    tape.record([cosines, out, probs, label, s, cos_m, sin_m, cy, sy, sin_sq] {
      const Scalar dl = out->grad()(0);
      ArrayX dz = probs;
      dz(label) -= 1.0;
      dz *= dl;
      // d z_y / d cos_y via the trig expansion; the sin branch vanishes when
      // the clamp at zero is active
      Scalar dzy_dcy = s * cos_m;
      if (sin_sq > 0.0) dzy_dcy = s * (cos_m + sin_m * cy / sy);
      ArrayX dcos = dz * s;
      dcos(label) = dz(label) * dzy_dcy;
      cosines->grad() += dcos;
    });
  }
  return out;
}

TensorPtr co_learning_loss(Tape& tape, const TensorPtr& l_a, const TensorPtr& l_v,
                           const TensorPtr& l_at, const TensorPtr& l_vt) {
  return add(tape, add(tape, l_a, l_v), add(tape, l_at, l_vt));
}

}  // namespace avlip
