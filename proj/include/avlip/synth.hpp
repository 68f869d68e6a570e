#pragma once

#include "avlip/rng.hpp"
#include "avlip/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace avlip {

// Frame-rate contract: audio at 100 Hz, visual at 25 Hz, so T_a = 4 * T_v.
inline constexpr Index kAudioDim = 80;
inline constexpr Index kVisualDim = 32;
inline constexpr Index kSharedDim = 16;
inline constexpr Index kRateRatio = 4;
inline constexpr Scalar kAudioRateHz = 100.0;
inline constexpr Scalar kVisualRateHz = 25.0;

struct SyntheticSpeaker {
  int id = 0;
  Vector audio_identity;   // 80, unit norm
  Vector visual_identity;  // 32, unit norm
  Vector shared_identity;  // 16, unit norm
};

struct SyntheticUtterance {
  int speaker_id = 0;
  Matrix audio;   // 80 x T_a
  Matrix visual;  // 32 x T_v
};

/// Corpus-wide mixing maps applied to [identity; shared_identity .* z(t)].
struct MixingMaps {
  Matrix audio;   // 80 x (80 + 16)
  Matrix visual;  // 32 x (32 + 16)
};

MixingMaps gen_mixing_maps(std::uint64_t seed);

/// Deterministic per seed; identity vectors pairwise distinct and unit norm.
/// Rejects n_speakers < 2.
std::vector<SyntheticSpeaker> gen_population(int n_speakers, std::uint64_t seed);

/// One utterance: a smooth shared latent trajectory z(t) (low-frequency
/// sinusoid mixture) sampled at both frame rates drives the dynamic part of
/// each modality; per-modality noise sigma on top. Rejects t_v < 1.
SyntheticUtterance gen_utterance(const SyntheticSpeaker& spk, Index t_v, Scalar sigma_a,
                                 Scalar sigma_v, const MixingMaps& maps, std::uint64_t seed);

struct UttRef {
  std::string id;
  int speaker_id = 0;
};

struct TrialPair {
  std::string enroll_id;
  std::string test_id;
  int label = 0;  // 1 same speaker, 0 different
};

/// Exactly n_target same-speaker and n_nontarget different-speaker unordered
/// pairs, no self-pairs, deterministic per seed. Rejects infeasible counts.
std::vector<TrialPair> build_trials(const std::vector<UttRef>& utterances, int n_target,
                                    int n_nontarget, std::uint64_t seed);

// ---- corpus on disk ---------------------------------------------------------

struct CorpusConfig {
  int train_speakers = 16;
  int train_utts_per_speaker = 30;
  int test_speakers = 8;
  int test_utts_per_speaker = 10;
  Index t_v = 50;
  Scalar sigma_a = 0.5;
  Scalar sigma_v = 1.0;
  int n_target_trials = 300;
  int n_nontarget_trials = 1200;
};

struct CorpusIndexEntry {
  std::string utt_id;
  int speaker_id = 0;
  std::string split;  // "train" | "test"
  std::string audio_path, visual_path;  // relative to the corpus root
};

struct CorpusStats {
  int train_speakers = 0, train_utterances = 0;
  int test_speakers = 0, test_utterances = 0;
};

/// Writes index.tsv, trials.txt and one binary matrix file per utterance per
/// modality under dir. Fully determined by (config, seed).
CorpusStats generate_corpus(const CorpusConfig& config, std::uint64_t seed,
                            const std::string& dir);

/// Random access to a generated corpus.
class Corpus {
 public:
  explicit Corpus(const std::string& dir);

  const std::vector<CorpusIndexEntry>& entries() const { return entries_; }
  const CorpusIndexEntry& entry(const std::string& utt_id) const;
  bool has(const std::string& utt_id) const;

  Matrix load_audio(const std::string& utt_id) const;
  Matrix load_visual(const std::string& utt_id) const;

  std::vector<const CorpusIndexEntry*> split(const std::string& name) const;
  std::vector<TrialPair> load_trials() const;

  /// Speaker ids of a split mapped to dense labels 0..n-1 in id order.
  std::vector<int> split_speaker_ids(const std::string& name) const;

  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::vector<CorpusIndexEntry> entries_;
};

// Binary matrix format: two little-endian int32 (rows, cols) then row-major
// little-endian float64.
void write_matrix_file(const std::string& path, const Matrix& m);
Matrix read_matrix_file(const std::string& path);

}  // namespace avlip
