#pragma once

#include "avlip/scoring.hpp"
#include "avlip/synth.hpp"
#include "avlip/train.hpp"

namespace avlip {

struct EvalOptions {
  FusionWeights fusion;
  Scalar p_target = 0.01;
  Scalar c_fa = 1.0;
  Scalar c_miss = 1.0;
};

/// Embeds every utterance referenced by the trials once per branch, scores
/// all trials with cosine similarity, applies both fusion rules for co-learn
/// models and fills the metric summaries. Unknown utterance ids are rejected
/// by name.
ScoreReport evaluate_trials(const LoadedModel& model, const Corpus& corpus,
                            const std::vector<TrialPair>& trials,
                            const EvalOptions& options = EvalOptions{});

}  // namespace avlip
