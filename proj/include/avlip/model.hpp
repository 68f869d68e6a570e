#pragma once

#include "avlip/decoders.hpp"
#include "avlip/encoders.hpp"
#include "avlip/maxformer.hpp"
#include "avlip/synth.hpp"

#include <memory>

namespace avlip {

struct ModelConfig {
  Index audio_in = kAudioDim;
  Index visual_in = kVisualDim;
  Index c_a = 64;
  Index c_v = 64;
  Index d = 128;
  Index heads = 4;
  Index blocks = 3;
  Index embedding_dim = 192;
  Index asp_hidden = 32;
  Index ffn_multiplier = 2;  // hidden = multiplier * width
  bool scale_by_model_dim = true;
  bool asp_shared_attention = false;
  Scalar aam_scale = 30.0;
  Scalar aam_margin = 0.2;
  Index n_classes = 16;
};

struct BranchEmbeddings {
  TensorPtr a, v, at, vt;  // audio, visual, audio-transferred, visual-transferred
};

struct BranchLosses {
  TensorPtr a, v, at, vt, total;
};

/// Two encoders, two pseudo-siamese boosters and four decoder/loss branches.
/// The audio booster enhances the audio stream with visual evidence; the
/// visual booster is the mirror image.
class CoLearnModel {
 public:
  CoLearnModel(const ModelConfig& config, Rng& rng);

  BranchEmbeddings embed(Tape& tape, const TensorPtr& audio_frames,
                         const TensorPtr& visual_frames) const;
  BranchLosses losses(Tape& tape, const TensorPtr& audio_frames,
                      const TensorPtr& visual_frames, Index label) const;

  ParamList params() const;
  const ModelConfig& config() const { return config_; }

  const AudioEncoder& audio_encoder() const { return *audio_enc_; }
  const VisualEncoder& visual_encoder() const { return *visual_enc_; }
  const CrossModalBooster& audio_booster() const { return *audio_booster_; }
  const CrossModalBooster& visual_booster() const { return *visual_booster_; }
  CrossModalBooster& visual_booster() { return *visual_booster_; }

 private:
  ModelConfig config_;
  std::unique_ptr<AudioEncoder> audio_enc_;
  std::unique_ptr<VisualEncoder> visual_enc_;
  std::unique_ptr<CrossModalBooster> audio_booster_;   // source visual, target audio
  std::unique_ptr<CrossModalBooster> visual_booster_;  // source audio, target visual
  std::unique_ptr<AspDecoder> dec_a_, dec_v_, dec_at_, dec_vt_;
  std::unique_ptr<AamSoftmaxHead> head_a_, head_v_, head_at_, head_vt_;
};

enum class Modality { kAudio, kVisual };

/// Single encoder + decoder + loss head, no cross-modal interaction.
class BaselineModel {
 public:
  BaselineModel(Modality modality, const ModelConfig& config, Rng& rng);

  TensorPtr embed(Tape& tape, const TensorPtr& frames) const;
  TensorPtr loss(Tape& tape, const TensorPtr& frames, Index label) const;

  ParamList params() const;
  Modality modality() const { return modality_; }
  const ModelConfig& config() const { return config_; }

 private:
  Modality modality_;
  ModelConfig config_;
  std::unique_ptr<AudioEncoder> audio_enc_;
  std::unique_ptr<VisualEncoder> visual_enc_;
  std::unique_ptr<AspDecoder> dec_;
  std::unique_ptr<AamSoftmaxHead> head_;
};

}  // namespace avlip
