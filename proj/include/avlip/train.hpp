#pragma once

#include "avlip/config.hpp"
#include "avlip/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>

namespace avlip {

/// Raised when a run produces non-finite numbers; the CLI maps it to its own
/// exit code.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  ModelConfig model;
  int epochs = 40;
  int batch_size = 16;
  Scalar lr = 1e-3;
  std::vector<int> milestones = {10, 15};
  Scalar gamma = 0.1;
  Scalar weight_decay = 1e-7;
  bool decoupled_weight_decay = false;
  Scalar adam_beta1 = 0.9;
  Scalar adam_beta2 = 0.999;
  Scalar adam_eps = 1e-8;
  Scalar augment_noise_sigma = 0.0;  // additive feature noise hook, off by default
  std::string mode = "co-learn-scratch";
  bool freeze_pretrained = false;
  std::uint64_t seed = 42;
  // paths are run inputs, not hyperparameters; they stay out of snapshots
  std::string corpus_dir;
  std::string warm_audio_checkpoint;
  std::string warm_visual_checkpoint;
};

/// Reads hyperparameters from a parsed config file, applying defaults.
TrainConfig train_config_from(const Config& file, std::uint64_t seed_override,
                              bool has_seed_override);

/// Corpus-generation settings from the [corpus] section.
CorpusConfig corpus_config_from(const Config& file);

/// Hyperparameters only (sorted key=value); no filesystem paths, so
/// checkpoints are byte-identical across runs rooted anywhere.
Config train_config_snapshot(const TrainConfig& cfg);
ModelConfig model_config_from_snapshot(const Config& snapshot);

/// Learning rate for a 1-based epoch under the multi-step schedule: the base
/// rate is multiplied by gamma once for every milestone the epoch has passed.
Scalar lr_at_epoch(const TrainConfig& cfg, int epoch);

/// Adam over the requires_grad parameters. Weight decay is loss-coupled
/// (added to the raw gradient before the moment updates) unless the
/// decoupled flag asks for the AdamW rule. Frozen tensors are skipped
/// entirely.
class Adam {
 public:
  Adam(ParamList params, const TrainConfig& cfg);

  void zero_grad();
  void step(Scalar lr);

  std::uint64_t step_count() const { return t_; }
  void set_step_count(std::uint64_t t) { t_ = t; }

  const ParamList& params() const { return params_; }
  ArrayX& moment1(std::size_t i) { return m_[i]; }
  ArrayX& moment2(std::size_t i) { return v_[i]; }
  const ArrayX& moment1(std::size_t i) const { return m_[i]; }
  const ArrayX& moment2(std::size_t i) const { return v_[i]; }

 private:
  ParamList params_;
  std::vector<ArrayX> m_, v_;
  Scalar beta1_, beta2_, eps_, weight_decay_;
  bool decoupled_;
  std::uint64_t t_ = 0;
};

// ---- checkpoints ------------------------------------------------------------

struct NamedArray {
  std::vector<Index> shape;
  ArrayX data;
};

/// Versioned binary container: hyperparameter snapshot, epoch counter, Adam
/// step, then a named-tensor table (model parameters plus optimizer moments).
struct Checkpoint {
  Config snapshot;
  int epoch = 0;
  std::uint64_t adam_step = 0;
  std::vector<std::pair<std::string, NamedArray>> arrays;

  const NamedArray* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// A model rebuilt from a checkpoint; exactly one of the two pointers is set.
struct LoadedModel {
  std::string mode;
  std::unique_ptr<CoLearnModel> colearn;
  std::unique_ptr<BaselineModel> baseline;

  ParamList params() const;
};

LoadedModel build_model_from_checkpoint(const Checkpoint& ckpt);

/// Copies pretrained unimodal encoder/decoder/head tensors into the matching
/// co-learn branches; boosters and transferred branches keep their fresh
/// init. Shape mismatches are rejected. When freeze is set the copied
/// tensors stop receiving gradient updates.
void warm_start(CoLearnModel& model, const Checkpoint& audio_baseline,
                const Checkpoint& visual_baseline, bool freeze);

// ---- training loop ----------------------------------------------------------

struct StepLosses {
  Scalar a = 0.0, v = 0.0, at = 0.0, vt = 0.0, total = 0.0;
};

/// Owns one model (co-learn or baseline per config.mode), its optimizer and
/// the batching stream. Single-threaded; one tape pass per utterance with
/// gradient accumulation across the batch.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Corpus& corpus);

  StepLosses train_step(const std::vector<const CorpusIndexEntry*>& batch, Scalar lr);

  /// Full epoch loop; one log line per epoch: `epoch lr L_a L_v L_at L_vt L_co`.
  void run(std::ostream* log);

  Checkpoint make_checkpoint() const;
  void restore(const Checkpoint& ckpt);

  const TrainConfig& config() const { return cfg_; }
  const CoLearnModel* colearn() const { return colearn_.get(); }
  const BaselineModel* baseline() const { return baseline_.get(); }
  int epoch() const { return epoch_; }
  Index label_of(int speaker_id) const;

 private:
  StepLosses utterance_losses(Tape& tape, const CorpusIndexEntry& entry, Scalar inv_batch,
                              Rng* augment_rng);

  TrainConfig cfg_;
  const Corpus* corpus_;
  std::unique_ptr<CoLearnModel> colearn_;
  std::unique_ptr<BaselineModel> baseline_;
  std::unique_ptr<Adam> adam_;
  std::unique_ptr<Rng> augment_rng_;
  std::map<int, Index> label_map_;
  int epoch_ = 0;
};

// ---- gradient checking -------------------------------------------------------

struct GradCheckEntry {
  std::string name;
  Scalar max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_tensor;
  Scalar max_rel_err = 0.0;
  const GradCheckEntry* worst() const;
  /// Max error aggregated by the prefix before the first '.'.
  std::vector<GradCheckEntry> by_module() const;
};

/// Central finite differences (step h) on every element of every listed
/// parameter against the analytic gradients produced by accumulate_grads.
/// Relative error uses max(|fd|, |analytic|, 1e-3) as denominator so that
/// difference noise on near-zero gradients is not flagged.
GradCheckReport grad_check(const ParamList& params,
                           const std::function<Scalar()>& loss_value,
                           const std::function<void()>& accumulate_grads, Scalar h = 1e-5);

/// The micro co-learn model gradcheck behind the `gradcheck` command:
/// d=8, 2 heads, 1 block, T_v=5 (T_a=20), 3 speakers, a 2-utterance batch.
GradCheckReport run_micro_gradcheck(std::uint64_t seed);

}  // namespace avlip
