#include "avlip/maxformer.hpp"

#include <cmath>
#include <stdexcept>

namespace avlip {

TensorPtr single_head_transfer(Tape& tape, const TensorPtr& q, const TensorPtr& k,
                               const TensorPtr& v, const TensorPtr& wq,
                               const TensorPtr& wk, const TensorPtr& wv,
                               Scalar inv_scale, TensorPtr* attn_out) {
  // (Q^T Wq)(K^T Wk)^T / scale, softmax over keys, times V^T Wv
  auto qp = matmul(tape, transpose(tape, q), wq);            // T_q x d_h
  auto kp = matmul(tape, transpose(tape, k), wk);            // T_k x d_h
  auto vp = matmul(tape, transpose(tape, v), wv);            // T_k x d_h
  auto scores = scale(tape, matmul(tape, qp, transpose(tape, kp)), inv_scale);
  auto attn = softmax_rows(tape, scores);                    // T_q x T_k
  if (attn_out) *attn_out = attn;
  return transpose(tape, matmul(tape, attn, vp));            // d_h x T_q
}

MaxFormerBlock::MaxFormerBlock(Index d, Index heads, Index ffn_hidden,
                               bool scale_by_model_dim, Rng& rng)
    : d_(d),
      d_h_(d / heads),
      scale_by_model_dim_(scale_by_model_dim),
      ffn_src_(d, ffn_hidden, rng),
      ffn_tgt_(d, ffn_hidden, rng),
      ln_src_(d),
      ln_tgt_(d),
      f_theta1_(d, d, rng),
      g_conv_(d, d, 1, 1, rng),
      g_ln_(d),
      g_ffn_(d, ffn_hidden, rng) {
  if (heads < 1 || d % heads != 0)
    throw std::invalid_argument("MaxFormerBlock: model dim " + std::to_string(d) +
                                " not divisible by head count " + std::to_string(heads));
  heads_.reserve(heads);
  for (Index i = 0; i < heads; ++i) {
    Head h;
    h.wq = make_tensor({d, d_h_}, true);
    h.wk = make_tensor({d, d_h_}, true);
    h.wv = make_tensor({d, d_h_}, true);
    init_uniform_fan_in(*h.wq, d, rng);
    init_uniform_fan_in(*h.wk, d, rng);
    init_uniform_fan_in(*h.wv, d, rng);
    heads_.push_back(std::move(h));
  }
  w_out_ = make_tensor({heads * d_h_, d}, true);
  init_uniform_fan_in(*w_out_, heads * d_h_, rng);
}

Scalar MaxFormerBlock::attention_scale() const {
  return 1.0 / std::sqrt(static_cast<Scalar>(scale_by_model_dim_ ? d_ : d_h_));
}

TensorPtr MaxFormerBlock::transfer(Tape& tape, const TensorPtr& q_stream,
                                   const TensorPtr& kv_stream, AttentionProbe* probe) const {
  const Scalar inv_scale = attention_scale();
  std::vector<TensorPtr> head_outs;
  head_outs.reserve(heads_.size());
  for (const Head& h : heads_) {
    TensorPtr attn;
    head_outs.push_back(single_head_transfer(tape, q_stream, kv_stream, kv_stream, h.wq,
                                             h.wk, h.wv, inv_scale, probe ? &attn : nullptr));
    if (probe) probe->head_attention.push_back(attn);
  }
  auto cat = concat_rows(tape, head_outs);                   // (m*d_h) x T_q
  return matmul(tape, transpose(tape, w_out_), cat);         // d x T_q
}

TensorPtr MaxFormerBlock::fuse_pre(Tape& tape, const TensorPtr& target,
                                   const TensorPtr& transferred) const {
  if (target->rows() != transferred->rows() || target->cols() != transferred->cols())
    throw std::invalid_argument("mfm_fuse: shape mismatch " + target->shape_str() + " vs " +
                                transferred->shape_str());
  return emax(tape, f_theta1_.forward(tape, target), transferred);
}

TensorPtr MaxFormerBlock::fuse(Tape& tape, const TensorPtr& target,
                               const TensorPtr& transferred) const {
  auto fused = fuse_pre(tape, target, transferred);
  return g_ffn_.forward(tape, g_ln_.forward(tape, g_conv_.forward(tape, fused)));
}

TensorPtr MaxFormerBlock::forward(Tape& tape, const TensorPtr& source_in,
                                  const TensorPtr& target_in, AttentionProbe* probe) const {
  auto src = ln_src_.forward(tape, ffn_src_.forward(tape, source_in));
  auto tgt = ln_tgt_.forward(tape, ffn_tgt_.forward(tape, target_in));
  auto transferred = transfer(tape, tgt, src, probe);
  return fuse(tape, tgt, transferred);
}

void MaxFormerBlock::append_params(const std::string& prefix, ParamList& out) const {
  ffn_src_.append_params(prefix + ".ffn_src", out);
  ln_src_.append_params(prefix + ".ln_src", out);
  ffn_tgt_.append_params(prefix + ".ffn_tgt", out);
  ln_tgt_.append_params(prefix + ".ln_tgt", out);
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const std::string hp = prefix + ".head" + std::to_string(i);
    out.push_back({hp + ".wq", heads_[i].wq});
    out.push_back({hp + ".wk", heads_[i].wk});
    out.push_back({hp + ".wv", heads_[i].wv});
  }
  out.push_back({prefix + ".w_out", w_out_});
  f_theta1_.append_params(prefix + ".f_theta1", out);
  g_conv_.append_params(prefix + ".g_conv", out);
  g_ln_.append_params(prefix + ".g_ln", out);
  g_ffn_.append_params(prefix + ".g_ffn", out);
}

CrossModalBooster::CrossModalBooster(Index c_source, Index c_target, Index d, Index heads,
                                     Index n_blocks, Index ffn_hidden,
                                     bool scale_by_model_dim, Rng& rng)
    : d_(d), src_affine_(c_source, d, rng), tgt_affine_(c_target, d, rng) {
  blocks_.reserve(n_blocks);
  for (Index i = 0; i < n_blocks; ++i)
    blocks_.emplace_back(d, heads, ffn_hidden, scale_by_model_dim, rng);
}

TensorPtr CrossModalBooster::forward(Tape& tape, const TensorPtr& source,
                                     const TensorPtr& target,
                                     std::vector<AttentionProbe>* probes) const {
  if (source->cols() < 1 || target->cols() < 1)
    throw std::invalid_argument("CrossModalBooster: empty sequence");
  auto src = src_affine_.forward(tape, source);
  auto tgt = tgt_affine_.forward(tape, target);
  for (const auto& block : blocks_) {
    AttentionProbe* probe = nullptr;
    if (probes) {
      probes->emplace_back();
      probe = &probes->back();
    }
    tgt = block.forward(tape, src, tgt, probe);
  }
  return tgt;
}

void CrossModalBooster::append_params(const std::string& prefix, ParamList& out) const {
  src_affine_.append_params(prefix + ".src_affine", out);
  tgt_affine_.append_params(prefix + ".tgt_affine", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].append_params(prefix + ".block" + std::to_string(i), out);
}

}  // namespace avlip
