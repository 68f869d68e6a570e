#include "avlip/scoring.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace avlip {

Scalar cosine_score(const Vector& e1, const Vector& e2) {
  const Scalar n1 = e1.norm(), n2 = e2.norm();
  if (n1 == 0.0 || n2 == 0.0)
    throw std::invalid_argument("cosine_score: zero-norm embedding rejected");
  return e1.dot(e2) / (n1 * n2);
}

Scalar fuse_audio_driven(Scalar s_a, Scalar s_v, Scalar s_vt, const FusionWeights& w) {
  return w.primary * s_a + w.auxiliary * s_v + w.transferred * s_vt;
}

Scalar fuse_visual_driven(Scalar s_v, Scalar s_a, Scalar s_at, const FusionWeights& w) {
  return w.primary * s_v + w.auxiliary * s_a + w.transferred * s_at;
}

namespace {

struct Sweep {
  std::vector<Scalar> thresholds;  // ascending
  std::vector<Scalar> far;         // fraction of negatives >= t
  std::vector<Scalar> frr;         // fraction of positives <  t
};

Sweep build_sweep(const std::vector<Scalar>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("metrics: scores/labels size mismatch");
  std::vector<Scalar> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i)
    (labels[i] ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty())
    throw std::invalid_argument("metrics: need at least one target and one non-target trial");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  std::vector<Scalar> distinct(scores);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  Sweep sweep;
  sweep.thresholds.push_back(distinct.front() - 1.0);
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i)
    sweep.thresholds.push_back(0.5 * (distinct[i] + distinct[i + 1]));
  sweep.thresholds.push_back(distinct.back() + 1.0);

  const Scalar n_pos = static_cast<Scalar>(pos.size());
  const Scalar n_neg = static_cast<Scalar>(neg.size());
  for (Scalar t : sweep.thresholds) {
    const auto neg_below = std::lower_bound(neg.begin(), neg.end(), t) - neg.begin();
    const auto pos_below = std::lower_bound(pos.begin(), pos.end(), t) - pos.begin();
    sweep.far.push_back((n_neg - static_cast<Scalar>(neg_below)) / n_neg);
    sweep.frr.push_back(static_cast<Scalar>(pos_below) / n_pos);
  }
  return sweep;
}

}  // namespace

EerResult compute_eer(const std::vector<Scalar>& scores, const std::vector<int>& labels) {
  const Sweep sweep = build_sweep(scores, labels);
  // FAR - FRR starts at +1 and ends at -1; find the sign change
  for (std::size_t i = 0; i + 1 < sweep.thresholds.size(); ++i) {
    const Scalar d0 = sweep.far[i] - sweep.frr[i];
    const Scalar d1 = sweep.far[i + 1] - sweep.frr[i + 1];
    if (d0 == 0.0) return {sweep.far[i], sweep.thresholds[i]};
    if (d0 > 0.0 && d1 <= 0.0) {
      if (d1 == 0.0) return {sweep.far[i + 1], sweep.thresholds[i + 1]};
      const Scalar lambda = d0 / (d0 - d1);
      return {sweep.far[i] + lambda * (sweep.far[i + 1] - sweep.far[i]),
              sweep.thresholds[i] + lambda * (sweep.thresholds[i + 1] - sweep.thresholds[i])};
    }
  }
  // monotone construction guarantees a crossing; the last point has d = -1
  const std::size_t last = sweep.thresholds.size() - 1;
  return {sweep.far[last], sweep.thresholds[last]};
}

Scalar compute_min_dcf(const std::vector<Scalar>& scores, const std::vector<int>& labels,
                       Scalar p_target, Scalar c_fa, Scalar c_miss) {
  const Sweep sweep = build_sweep(scores, labels);
  const Scalar norm = std::min(c_miss * p_target, c_fa * (1.0 - p_target));
  Scalar best = std::numeric_limits<Scalar>::infinity();
  for (std::size_t i = 0; i < sweep.thresholds.size(); ++i) {
    const Scalar cost = c_miss * p_target * sweep.frr[i] + c_fa * (1.0 - p_target) * sweep.far[i];
    best = std::min(best, cost);
  }
  return best / norm;
}

void summarize_report(ScoreReport& report, Scalar p_target, Scalar c_fa, Scalar c_miss) {
  std::vector<int> labels;
  labels.reserve(report.trials.size());
  for (const auto& t : report.trials) labels.push_back(t.label);

  auto add_summary = [&](const std::string& name, const std::vector<Scalar>& scores) {
    ScoreReport::Summary s;
    const EerResult e = compute_eer(scores, labels);
    s.eer = e.eer;
    s.threshold = e.threshold;
    s.min_dcf = compute_min_dcf(scores, labels, p_target, c_fa, c_miss);
    report.summaries[name] = s;
  };

  for (std::size_t b = 0; b < report.branch_names.size(); ++b) {
    std::vector<Scalar> scores;
    scores.reserve(report.trials.size());
    for (const auto& t : report.trials) scores.push_back(t.branch_scores[b]);
    add_summary(report.branch_names[b], scores);
  }
  if (report.has_fusion) {
    std::vector<Scalar> ad, vd;
    for (const auto& t : report.trials) {
      ad.push_back(t.audio_driven);
      vd.push_back(t.visual_driven);
    }
    add_summary("audio_driven_fusion", ad);
    add_summary("visual_driven_fusion", vd);
  }
}

void write_score_file(const std::string& path, const ScoreReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_score_file: cannot open " + path);
  char buf[64];
  for (const auto& t : report.trials) {
    out << t.enroll_id << ' ' << t.test_id << ' ' << t.label;
    for (Scalar s : t.branch_scores) {
      std::snprintf(buf, sizeof(buf), " %.6f", s);
      out << buf;
    }
    out << '\n';
  }
}

void write_report_file(const std::string& path, const ScoreReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_file: cannot open " + path);
  out << "eer.convention = value-interpolated-threshold-sweep\n";
  char buf[64];
  auto emit = [&](const std::string& key, Scalar v) {
    std::snprintf(buf, sizeof(buf), "%.10f", v);
    out << key << " = " << buf << '\n';
  };
  // branch order first, then fusions, matching summaries insertion
  std::vector<std::string> order = report.branch_names;
  if (report.has_fusion) {
    order.push_back("audio_driven_fusion");
    order.push_back("visual_driven_fusion");
  }
  for (const auto& name : order) {
    const auto it = report.summaries.find(name);
    if (it == report.summaries.end()) continue;
    emit(name + ".eer", it->second.eer);
    emit(name + ".min_dcf", it->second.min_dcf);
    emit(name + ".eer_threshold", it->second.threshold);
  }
}

}  // namespace avlip
