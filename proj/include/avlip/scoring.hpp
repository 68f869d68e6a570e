#pragma once

#include "avlip/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace avlip {

/// Cosine similarity in [-1, 1]; zero-norm embeddings are rejected.
Scalar cosine_score(const Vector& e1, const Vector& e2);

struct FusionWeights {
  Scalar primary = 0.5;
  Scalar auxiliary = 0.25;
  Scalar transferred = 0.25;
};

/// 0.5*s_a + 0.25*s_v + 0.25*s_vt (audio primary).
Scalar fuse_audio_driven(Scalar s_a, Scalar s_v, Scalar s_vt,
                         const FusionWeights& w = FusionWeights{});

/// 0.5*s_v + 0.25*s_a + 0.25*s_at (visual primary).
Scalar fuse_visual_driven(Scalar s_v, Scalar s_a, Scalar s_at,
                          const FusionWeights& w = FusionWeights{});

struct EerResult {
  Scalar eer = 0.0;
  Scalar threshold = 0.0;
};

/// Threshold sweep at midpoints between consecutive distinct scores plus
/// sentinels beyond both ends; FAR(t) = fraction of negatives >= t,
/// FRR(t) = fraction of positives < t. The equal-error point is linearly
/// interpolated in (FAR, FRR) value space between the adjacent sweep points
/// where FAR - FRR changes sign. Requires at least one positive and one
/// negative label.
EerResult compute_eer(const std::vector<Scalar>& scores, const std::vector<int>& labels);

/// Minimum normalized detection cost over the same sweep:
/// min_t [c_miss*p_target*FRR(t) + c_fa*(1-p_target)*FAR(t)] /
/// min(c_miss*p_target, c_fa*(1-p_target)).
Scalar compute_min_dcf(const std::vector<Scalar>& scores, const std::vector<int>& labels,
                       Scalar p_target = 0.01, Scalar c_fa = 1.0, Scalar c_miss = 1.0);

/// Per-trial branch scores plus fused scores and metric summaries for a
/// whole evaluation run.
struct ScoreReport {
  struct Trial {
    std::string enroll_id, test_id;
    int label = 0;
    // branch order: a, v, at, vt (absent branches are dropped, not zeroed)
    std::vector<Scalar> branch_scores;
    Scalar audio_driven = 0.0, visual_driven = 0.0;
  };
  std::vector<std::string> branch_names;  // subset of {a, v, at, vt}
  bool has_fusion = false;
  std::vector<Trial> trials;
  // summary per score type: eer, min_dcf, eer_threshold
  struct Summary {
    Scalar eer = 0.0, min_dcf = 0.0, threshold = 0.0;
  };
  std::map<std::string, Summary> summaries;  // keyed by score-type name
};

/// Fills report.summaries from the stored trials.
void summarize_report(ScoreReport& report, Scalar p_target = 0.01, Scalar c_fa = 1.0,
                      Scalar c_miss = 1.0);

/// One line per trial: enroll test label then the branch scores, space
/// separated, six fixed decimals.
void write_score_file(const std::string& path, const ScoreReport& report);

/// key=value lines, one eer/min_dcf/eer_threshold triple per score type,
/// plus the interpolation convention used.
void write_report_file(const std::string& path, const ScoreReport& report);

}  // namespace avlip
