#pragma once

// Test-side reference implementations. These stay independent of the library
// paths they check: explicit loops, long-double accumulation, no tape ops.

#include "avlip/maxformer.hpp"
#include "avlip/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace avlip::testing {

inline Matrix multi_head_transfer_oracle(const Matrix& q, const Matrix& kv,
                                         const MaxFormerBlock& block) {
  const Index d = block.dim(), m = block.head_count(), d_h = block.head_dim();
  const Index t_q = q.cols(), t_k = kv.cols();
  const Scalar inv_scale = block.attention_scale();

  Matrix cat(m * d_h, t_q);
  for (Index h = 0; h < m; ++h) {
    const auto& head = block.heads()[h];
    auto proj = [&](const Matrix& x, const TensorPtr& w) {
      Matrix out = Matrix::Zero(d_h, x.cols());  // (x^T w)^T
      for (Index t = 0; t < x.cols(); ++t)
        for (Index j = 0; j < d_h; ++j) {
          long double acc = 0.0L;
          for (Index i = 0; i < d; ++i) acc += x(i, t) * w->values()(i * d_h + j);
          out(j, t) = static_cast<Scalar>(acc);
        }
      return out;
    };
    const Matrix qp = proj(q, head.wq), kp = proj(kv, head.wk), vp = proj(kv, head.wv);
    for (Index tq = 0; tq < t_q; ++tq) {
      std::vector<long double> e(t_k);
      long double denom = 0.0L;
      for (Index tk = 0; tk < t_k; ++tk) {
        long double s = 0.0L;
        for (Index j = 0; j < d_h; ++j) s += qp(j, tq) * kp(j, tk);
        e[tk] = std::exp(s * static_cast<long double>(inv_scale));
        denom += e[tk];
      }
      for (Index j = 0; j < d_h; ++j) {
        long double acc = 0.0L;
        for (Index tk = 0; tk < t_k; ++tk) acc += (e[tk] / denom) * vp(j, tk);
        cat(h * d_h + j, tq) = static_cast<Scalar>(acc);
      }
    }
  }
  Matrix out = Matrix::Zero(d, t_q);  // W_out^T * cat
  for (Index t = 0; t < t_q; ++t)
    for (Index j = 0; j < d; ++j) {
      long double acc = 0.0L;
      for (Index i = 0; i < m * d_h; ++i)
        acc += block.output_projection()->values()(i * d + j) * cat(i, t);
      out(j, t) = static_cast<Scalar>(acc);
    }
  return out;
}

/// Brute-force detection metrics on a dense threshold grid (default
/// resolution 1e-6, thresholds offset half a step so none can collide with
/// scores drawn on a coarser lattice). EER uses the same value-space
/// interpolation convention at the FAR/FRR sign change.
struct GridMetricsOracle {
  Scalar eer = 0.0;
  Scalar min_dcf = 0.0;

  GridMetricsOracle(const std::vector<Scalar>& scores, const std::vector<int>& labels,
                    Scalar p_target = 0.01, Scalar c_fa = 1.0, Scalar c_miss = 1.0,
                    Scalar step = 1e-6) {
    std::vector<Scalar> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i)
      (labels[i] ? pos : neg).push_back(scores[i]);
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    const Scalar lo = std::min(pos.front(), neg.front()) - 0.01;
    const Scalar hi = std::max(pos.back(), neg.back()) + 0.01;
    const long long n_steps = static_cast<long long>(std::ceil((hi - lo) / step)) + 1;

    const Scalar n_pos = static_cast<Scalar>(pos.size());
    const Scalar n_neg = static_cast<Scalar>(neg.size());
    std::size_t ip = 0, in = 0;  // counts strictly below the moving threshold
    Scalar best_cost = std::numeric_limits<Scalar>::infinity();
    Scalar prev_far = 1.0, prev_frr = 0.0;
    bool have_eer = false;
    for (long long k = 0; k <= n_steps; ++k) {
      const Scalar t = lo + (static_cast<Scalar>(k) + 0.5) * step;
      while (ip < pos.size() && pos[ip] < t) ++ip;
      while (in < neg.size() && neg[in] < t) ++in;
      const Scalar frr = static_cast<Scalar>(ip) / n_pos;
      const Scalar far = (n_neg - static_cast<Scalar>(in)) / n_neg;
      best_cost = std::min(best_cost, c_miss * p_target * frr + c_fa * (1.0 - p_target) * far);
      if (!have_eer && k > 0) {
        const Scalar d0 = prev_far - prev_frr;
        const Scalar d1 = far - frr;
        if (d0 == 0.0) {
          eer = prev_far;
          have_eer = true;
        } else if (d0 > 0.0 && d1 <= 0.0) {
          const Scalar lambda = d0 / (d0 - d1);
          eer = prev_far + lambda * (far - prev_far);
          have_eer = true;
        }
      }
      prev_far = far;
      prev_frr = frr;
    }
    min_dcf = best_cost / std::min(c_miss * p_target, c_fa * (1.0 - p_target));
  }
};

/// Random labeled score sets on a 1e-3 lattice (so every FAR/FRR jump sits
/// alone inside a 1e-6 grid cell), always containing both classes.
inline void random_lattice_trials(Rng& rng, std::size_t n, std::vector<Scalar>& scores,
                                  std::vector<int>& labels) {
  scores.clear();
  labels.clear();
  for (std::size_t i = 0; i < n; ++i) {
    const int label = rng.uniform() < 0.3 ? 1 : 0;
    Scalar s = static_cast<Scalar>(rng.uniform_int(-1000, 1000)) * 1e-3;
    if (label) s += 0.2;
    s = std::min(1.0, std::max(-1.0, s));
    s = std::round(s * 1000.0) * 1e-3;
    scores.push_back(s);
    labels.push_back(label);
  }
  labels[0] = 1;
  labels[n - 1] = 0;
}

}  // namespace avlip::testing
