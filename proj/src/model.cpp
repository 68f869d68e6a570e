#include "avlip/model.hpp"

namespace avlip {

CoLearnModel::CoLearnModel(const ModelConfig& config, Rng& rng) : config_(config) {
  const Index ffn_hidden = config.ffn_multiplier * config.d;
  audio_enc_ = std::make_unique<AudioEncoder>(config.audio_in, config.c_a, rng);
  visual_enc_ = std::make_unique<VisualEncoder>(config.visual_in, config.c_v, rng);
  audio_booster_ = std::make_unique<CrossModalBooster>(
      config.c_v, config.c_a, config.d, config.heads, config.blocks, ffn_hidden,
      config.scale_by_model_dim, rng);
  visual_booster_ = std::make_unique<CrossModalBooster>(
      config.c_a, config.c_v, config.d, config.heads, config.blocks, ffn_hidden,
      config.scale_by_model_dim, rng);
  dec_a_ = std::make_unique<AspDecoder>(config.c_a, config.asp_hidden, config.embedding_dim,
                                        config.asp_shared_attention, rng);
  dec_v_ = std::make_unique<AspDecoder>(config.c_v, config.asp_hidden, config.embedding_dim,
                                        config.asp_shared_attention, rng);
  dec_at_ = std::make_unique<AspDecoder>(config.d, config.asp_hidden, config.embedding_dim,
                                         config.asp_shared_attention, rng);
  dec_vt_ = std::make_unique<AspDecoder>(config.d, config.asp_hidden, config.embedding_dim,
                                         config.asp_shared_attention, rng);
  head_a_ = std::make_unique<AamSoftmaxHead>(config.n_classes, config.embedding_dim,
                                             config.aam_scale, config.aam_margin, rng);
  head_v_ = std::make_unique<AamSoftmaxHead>(config.n_classes, config.embedding_dim,
                                             config.aam_scale, config.aam_margin, rng);
  head_at_ = std::make_unique<AamSoftmaxHead>(config.n_classes, config.embedding_dim,
                                              config.aam_scale, config.aam_margin, rng);
  head_vt_ = std::make_unique<AamSoftmaxHead>(config.n_classes, config.embedding_dim,
                                              config.aam_scale, config.aam_margin, rng);
}

BranchEmbeddings CoLearnModel::embed(Tape& tape, const TensorPtr& audio_frames,
                                     const TensorPtr& visual_frames) const {
  auto f_a = audio_enc_->forward(tape, audio_frames);
  auto f_v = visual_enc_->forward(tape, visual_frames);
  auto f_at = audio_booster_->forward(tape, f_v, f_a);   // enhanced audio
  auto f_vt = visual_booster_->forward(tape, f_a, f_v);  // enhanced visual
  BranchEmbeddings e;
  e.a = dec_a_->embed(tape, f_a);
  e.v = dec_v_->embed(tape, f_v);
  e.at = dec_at_->embed(tape, f_at);
  e.vt = dec_vt_->embed(tape, f_vt);
  return e;
}

BranchLosses CoLearnModel::losses(Tape& tape, const TensorPtr& audio_frames,
                                  const TensorPtr& visual_frames, Index label) const {
  const BranchEmbeddings e = embed(tape, audio_frames, visual_frames);
  BranchLosses l;
  l.a = head_a_->loss(tape, e.a, label);
  l.v = head_v_->loss(tape, e.v, label);
  l.at = head_at_->loss(tape, e.at, label);
  l.vt = head_vt_->loss(tape, e.vt, label);
  l.total = co_learning_loss(tape, l.a, l.v, l.at, l.vt);
  return l;
}

ParamList CoLearnModel::params() const {
  ParamList out;
  audio_enc_->append_params("audio_enc", out);
  visual_enc_->append_params("visual_enc", out);
  audio_booster_->append_params("audio_booster", out);
  visual_booster_->append_params("visual_booster", out);
  dec_a_->append_params("dec_a", out);
  dec_v_->append_params("dec_v", out);
  dec_at_->append_params("dec_at", out);
  dec_vt_->append_params("dec_vt", out);
  head_a_->append_params("head_a", out);
  head_v_->append_params("head_v", out);
  head_at_->append_params("head_at", out);
  head_vt_->append_params("head_vt", out);
  return out;
}

BaselineModel::BaselineModel(Modality modality, const ModelConfig& config, Rng& rng)
    : modality_(modality), config_(config) {
  const Index channels = modality == Modality::kAudio ? config.c_a : config.c_v;
  if (modality == Modality::kAudio)
    audio_enc_ = std::make_unique<AudioEncoder>(config.audio_in, config.c_a, rng);
  else
    visual_enc_ = std::make_unique<VisualEncoder>(config.visual_in, config.c_v, rng);
  dec_ = std::make_unique<AspDecoder>(channels, config.asp_hidden, config.embedding_dim,
                                      config.asp_shared_attention, rng);
  head_ = std::make_unique<AamSoftmaxHead>(config.n_classes, config.embedding_dim,
                                           config.aam_scale, config.aam_margin, rng);
}

TensorPtr BaselineModel::embed(Tape& tape, const TensorPtr& frames) const {
  auto f = modality_ == Modality::kAudio ? audio_enc_->forward(tape, frames)
                                         : visual_enc_->forward(tape, frames);
  return dec_->embed(tape, f);
}

TensorPtr BaselineModel::loss(Tape& tape, const TensorPtr& frames, Index label) const {
  return head_->loss(tape, embed(tape, frames), label);
}

ParamList BaselineModel::params() const {
  ParamList out;
  if (audio_enc_) audio_enc_->append_params("enc", out);
  if (visual_enc_) visual_enc_->append_params("enc", out);
  dec_->append_params("dec", out);
  head_->append_params("head", out);
  return out;
}

}  // namespace avlip
