#include "avlip/eval.hpp"

#include <map>
#include <set>
#include <stdexcept>

namespace avlip {

namespace {

Vector to_vector(const TensorPtr& t) {
  return Eigen::Map<const Vector>(t->values().data(), t->size());
}

}  // namespace

ScoreReport evaluate_trials(const LoadedModel& model, const Corpus& corpus,
                            const std::vector<TrialPair>& trials, const EvalOptions& options) {
  if (trials.empty()) throw std::invalid_argument("evaluate_trials: no trials");
  const bool colearn = model.colearn != nullptr;

  std::set<std::string> utt_ids;
  for (const auto& t : trials) {
    utt_ids.insert(t.enroll_id);
    utt_ids.insert(t.test_id);
  }
  for (const auto& id : utt_ids)
    if (!corpus.has(id))
      throw std::invalid_argument("evaluate_trials: utterance " + id + " not in corpus");

  // one forward per utterance, all branches cached
  std::map<std::string, std::vector<Vector>> cache;
  for (const auto& id : utt_ids) {
    Tape tape;
    tape.set_enabled(false);
    std::vector<Vector> branches;
    if (colearn) {
      const BranchEmbeddings e = model.colearn->embed(
          tape, tensor_from(corpus.load_audio(id)), tensor_from(corpus.load_visual(id)));
      branches = {to_vector(e.a), to_vector(e.v), to_vector(e.at), to_vector(e.vt)};
    } else {
      const bool is_audio = model.baseline->modality() == Modality::kAudio;
      auto frames = tensor_from(is_audio ? corpus.load_audio(id) : corpus.load_visual(id));
      branches = {to_vector(model.baseline->embed(tape, frames))};
    }
    cache.emplace(id, std::move(branches));
  }

  ScoreReport report;
  if (colearn) {
    report.branch_names = {"audio", "visual", "audio_transferred", "visual_transferred"};
    report.has_fusion = true;
  } else {
    report.branch_names = {model.baseline->modality() == Modality::kAudio ? "audio" : "visual"};
  }

  report.trials.reserve(trials.size());
  for (const auto& t : trials) {
    const auto& enroll = cache.at(t.enroll_id);
    const auto& test = cache.at(t.test_id);
    ScoreReport::Trial row;
    row.enroll_id = t.enroll_id;
    row.test_id = t.test_id;
    row.label = t.label;
    for (std::size_t b = 0; b < enroll.size(); ++b)
      row.branch_scores.push_back(cosine_score(enroll[b], test[b]));
    if (colearn) {
      const Scalar s_a = row.branch_scores[0], s_v = row.branch_scores[1];
      const Scalar s_at = row.branch_scores[2], s_vt = row.branch_scores[3];
      row.audio_driven = fuse_audio_driven(s_a, s_v, s_vt, options.fusion);
      row.visual_driven = fuse_visual_driven(s_v, s_a, s_at, options.fusion);
    }
    report.trials.push_back(std::move(row));
  }

  summarize_report(report, options.p_target, options.c_fa, options.c_miss);
  return report;
}

}  // namespace avlip
