#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "sgt/channel.hpp"
#include "sgt/tokenizer.hpp"

namespace sgt {

struct DetectorOutput {
  BitMatrix bits;                  // [2 n_t, bits_per_dim]
  std::optional<Matrix> llr;       // same shape, log P(0)/P(1)
  int iterations = 0;
  std::vector<double> error_variances;  // per iteration (OAMP)
  bool diverged = false;
};

class SearchSpaceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Upper bound on the number of candidates ml_detect will enumerate.
inline constexpr std::uint64_t kMlMaxCandidates = std::uint64_t{1} << 24;

/// Exact per-dimension soft demapping of z = x + N(0, tau) against the
/// constellation's real levels. Returns LLRs [z.size(), bits_per_dim].
template <typename Scalar>
Matrix gaussian_demap(const VectorX<Scalar>& z, const VectorX<Scalar>& tau, const Constellation& c) {
  const int bpd = c.bits_per_dim();
  const auto& levels = c.levels_by_label();
  Matrix llr(z.size(), bpd);
  std::vector<double> metric(levels.size());
  for (Index i = 0; i < z.size(); ++i) {
    const double t = std::max(static_cast<double>(tau(i)), 1e-300);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const double d = static_cast<double>(z(i)) - levels[l];
      metric[l] = -d * d / (2.0 * t);
    }
    for (int b = 0; b < bpd; ++b) {
      double m0 = -std::numeric_limits<double>::infinity(), m1 = m0;
      for (std::size_t l = 0; l < levels.size(); ++l) {
        const bool one = (l >> (bpd - 1 - b)) & 1U;
        (one ? m1 : m0) = std::max(one ? m1 : m0, metric[l]);
      }
      double s0 = 0.0, s1 = 0.0;
      for (std::size_t l = 0; l < levels.size(); ++l) {
        const bool one = (l >> (bpd - 1 - b)) & 1U;
        if (one) {
          s1 += std::exp(metric[l] - m1);
        } else {
          s0 += std::exp(metric[l] - m0);
        }
      }
      llr(i, b) = std::clamp(m0 + std::log(s0) - m1 - std::log(s1), -kLlrMax, kLlrMax);
    }
  }
  return llr;
}

/// Exhaustive maximum-likelihood detection.
///
/// Minimises sum_j (y_j - h_j x)^2 / sigma2_j over every constellation vector.
/// Candidate k assigns label (k / L^i) mod L to real dimension i, L being the
/// levels per dimension; ties go to the lowest k. With `soft`, max-log LLRs
/// are attached. Throws SearchSpaceError beyond kMlMaxCandidates.
template <typename Scalar>
DetectorOutput ml_detect(const MimoInstanceT<Scalar>& inst, const Constellation& c,
                         bool soft = false) {
  const Index rt = inst.H.cols(), rr = inst.H.rows();
  const int bpd = c.bits_per_dim();
  const std::uint64_t levels = static_cast<std::uint64_t>(c.levels_per_dim());
  std::uint64_t count = 1;
  for (Index i = 0; i < rt; ++i) {
    count *= levels;
    if (count > kMlMaxCandidates) {
      throw SearchSpaceError("ml_detect: search space exceeds 2^24 candidates");
    }
  }

  const VectorX<Scalar> w = inst.sigma2.cwiseSqrt().cwiseInverse();
  const MatrixX<Scalar> hw = w.asDiagonal() * inst.H;
  const VectorX<Scalar> yw = w.cwiseProduct(inst.y);

  // Meet in the middle: dimensions [0, lo) vary fastest.
  const Index lo = rt / 2, hi = rt - lo;
  std::uint64_t count_lo = 1, count_hi = 1;
  for (Index i = 0; i < lo; ++i) count_lo *= levels;
  for (Index i = 0; i < hi; ++i) count_hi *= levels;
  auto partial_sums = [&](Index first, Index n, std::uint64_t total) {
    MatrixX<Scalar> sums = MatrixX<Scalar>::Zero(rr, static_cast<Index>(total));
    for (std::uint64_t k = 0; k < total; ++k) {
      std::uint64_t rest = k;
      for (Index i = 0; i < n; ++i) {
        const auto label = static_cast<unsigned>(rest % levels);
        rest /= levels;
        sums.col(static_cast<Index>(k)) += hw.col(first + i) * static_cast<Scalar>(c.level(label));
      }
    }
    return sums;
  };
  const MatrixX<Scalar> part_lo = partial_sums(0, lo, count_lo);
  const MatrixX<Scalar> part_hi = partial_sums(lo, hi, count_hi);

  std::vector<double> best0, best1;
  if (soft) {
    best0.assign(static_cast<std::size_t>(rt * bpd), std::numeric_limits<double>::infinity());
    best1 = best0;
  }
  auto label_of = [&](std::uint64_t k, Index dim) {
    for (Index i = 0; i < dim; ++i) k /= levels;
    return static_cast<unsigned>(k % levels);
  };

  double best = std::numeric_limits<double>::infinity();
  std::uint64_t best_k = 0;
  VectorX<Scalar> v(rr);
  for (std::uint64_t kh = 0; kh < count_hi; ++kh) {
    v = yw - part_hi.col(static_cast<Index>(kh));
    for (std::uint64_t kl = 0; kl < count_lo; ++kl) {
      const double metric =
          static_cast<double>((v - part_lo.col(static_cast<Index>(kl))).squaredNorm());
      const std::uint64_t k = kh * count_lo + kl;
      if (metric < best) {
        best = metric;
        best_k = k;
      }
      if (soft) {
        for (Index i = 0; i < rt; ++i) {
          const unsigned label = label_of(k, i);
          for (int b = 0; b < bpd; ++b) {
            const bool one = (label >> (bpd - 1 - b)) & 1U;
            double& slot = (one ? best1 : best0)[static_cast<std::size_t>(i * bpd + b)];
            slot = std::min(slot, metric);
          }
        }
      }
    }
  }

  DetectorOutput out;
  out.bits.resize(rt, bpd);
  for (Index i = 0; i < rt; ++i) {
    const unsigned label = label_of(best_k, i);
    for (int b = 0; b < bpd; ++b) {
      out.bits(i, b) = static_cast<std::uint8_t>((label >> (bpd - 1 - b)) & 1U);
    }
  }
  if (soft) {
    Matrix llr(rt, bpd);
    for (Index i = 0; i < rt; ++i) {
      for (int b = 0; b < bpd; ++b) {
        const auto s = static_cast<std::size_t>(i * bpd + b);
        llr(i, b) = std::clamp(0.5 * (best1[s] - best0[s]), -kLlrMax, kLlrMax);
      }
    }
    out.llr = std::move(llr);
  }
  return out;
}

/// Weighted residual sum_j (y_j - h_j x)^2 / sigma2_j of a candidate.
template <typename Scalar>
Scalar weighted_residual(const MimoInstanceT<Scalar>& inst, const VectorX<Scalar>& x) {
  return ((inst.y - inst.H * x).array().square() / inst.sigma2.array()).sum();
}

/// Result of the linear MMSE estimator before demapping.
template <typename Scalar>
struct LmmseEstimate {
  VectorX<Scalar> x_hat;     // biased estimate
  VectorX<Scalar> bias;      // diag(W H)
  VectorX<Scalar> variance;  // per-dimension noise variance after bias removal
};

/// x_hat = (H^T S^-1 H + I / e)^-1 H^T S^-1 y with e the per-dimension
/// symbol energy and S = diag(sigma2).
template <typename Scalar>
LmmseEstimate<Scalar> lmmse_estimate(const MimoInstanceT<Scalar>& inst, Scalar dim_energy) {
  const Index rt = inst.H.cols();
  const MatrixX<Scalar> hts = inst.H.transpose() * inst.sigma2.cwiseInverse().asDiagonal();
  MatrixX<Scalar> a = hts * inst.H;
  a.diagonal().array() += Scalar(1) / dim_energy;
  const Eigen::LDLT<MatrixX<Scalar>> ldlt(a);
  LmmseEstimate<Scalar> est;
  est.x_hat = ldlt.solve(hts * inst.y);
  const MatrixX<Scalar> cov = ldlt.solve(MatrixX<Scalar>::Identity(rt, rt));
  est.bias = (Scalar(1) - cov.diagonal().array() / dim_energy).matrix();
  est.variance.resize(rt);
  for (Index i = 0; i < rt; ++i) {
    const Scalar mu = std::max(est.bias(i), Scalar(1e-12));
    est.variance(i) = dim_energy * (Scalar(1) - mu) / mu;
  }
  return est;
}

/// Linear MMSE detection followed by exact per-dimension Gaussian demapping.
template <typename Scalar>
DetectorOutput lmmse_detect(const MimoInstanceT<Scalar>& inst, const Constellation& c) {
  const auto est = lmmse_estimate(inst, static_cast<Scalar>(c.dim_energy()));
  VectorX<Scalar> z(est.x_hat.size());
  for (Index i = 0; i < z.size(); ++i) z(i) = est.x_hat(i) / std::max(est.bias(i), Scalar(1e-12));
  DetectorOutput out;
  out.llr = gaussian_demap(z, VectorX<Scalar>(est.variance.cwiseMax(Scalar(1e-300))), c);
  out.bits = decide_bits_from_llr(*out.llr);
  out.iterations = 1;
  return out;
}

/// Posterior mean and variance of x given r = x + N(0, tau), x uniform on levels.
template <typename Scalar>
void constellation_posterior(Scalar r, Scalar tau, const Constellation& c, Scalar& mean,
                             Scalar& var) {
  const auto& levels = c.levels_by_label();
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> logw(levels.size());
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const double d = static_cast<double>(r) - levels[l];
    logw[l] = -d * d / (2.0 * static_cast<double>(tau));
    mx = std::max(mx, logw[l]);
  }
  double z = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const double w = std::exp(logw[l] - mx);
    z += w;
    m1 += w * levels[l];
    m2 += w * levels[l] * levels[l];
  }
  m1 /= z;
  mean = static_cast<Scalar>(m1);
  var = static_cast<Scalar>(std::max(m2 / z - m1 * m1, 0.0));
}

/// Orthogonal AMP detection.
///
/// Starting from x = 0 and v2 = e (per-dimension energy), each iteration runs
///   W_hat = (H^T S^-1 H + I / v2)^-1 H^T S^-1         (LMMSE form)
///   W     = (2 n_t / tr(W_hat H)) W_hat               (de-correlated)
///   r     = x + W (y - H x)
///   tau2  = [tr(B B^T) v2 + tr(W S W^T)] / (2 n_t),   B = I - W H
///   x     = (E[x | r] - a r) / (1 - a),  a = mean Var[x | r] / tau2
///           (divergence-free posterior-mean denoiser)
///   v2    = max((|y - H x|^2 - tr S) / tr(H^T H), 1e-10)
/// Soft output is the Gaussian demap of the (r, tau2) with the smallest tau2. If tau2 rises on
/// three consecutive iterations the best iterate so far is returned and
/// `diverged` is set.
template <typename Scalar>
DetectorOutput oamp_detect(const MimoInstanceT<Scalar>& inst, const Constellation& c,
                           int iterations = 10) {
  if (iterations < 1) throw std::invalid_argument("oamp_detect: iterations must be >= 1");
  const Index rt = inst.H.cols();
  const Scalar e = static_cast<Scalar>(c.dim_energy());
  const MatrixX<Scalar>& H = inst.H;
  const MatrixX<Scalar> hts = H.transpose() * inst.sigma2.cwiseInverse().asDiagonal();
  const MatrixX<Scalar> gram = hts * H;
  const Scalar trace_hth = H.squaredNorm();
  const Scalar trace_s = inst.sigma2.sum();
  const MatrixX<Scalar> eye = MatrixX<Scalar>::Identity(rt, rt);

  VectorX<Scalar> x = VectorX<Scalar>::Zero(rt);
  Scalar v2 = e;
  VectorX<Scalar> best_r;
  Scalar best_tau = std::numeric_limits<Scalar>::infinity();
  Scalar prev_tau = std::numeric_limits<Scalar>::infinity();
  int rises = 0;

  DetectorOutput out;
  for (int t = 0; t < iterations; ++t) {
    MatrixX<Scalar> a = gram;
    a.diagonal().array() += Scalar(1) / v2;
    const MatrixX<Scalar> w_hat = a.ldlt().solve(hts);
    const Scalar tr = (w_hat * H).trace();
    const MatrixX<Scalar> w = (static_cast<Scalar>(rt) / tr) * w_hat;
    const VectorX<Scalar> r = x + w * (inst.y - H * x);
    const MatrixX<Scalar> b = eye - w * H;
    const Scalar tau2 =
        (b.squaredNorm() * v2 + (w * inst.sigma2.cwiseSqrt().asDiagonal()).squaredNorm()) /
        static_cast<Scalar>(rt);
    out.error_variances.push_back(static_cast<double>(tau2));
    out.iterations = t + 1;

    if (tau2 < best_tau) {
      best_tau = tau2;
      best_r = r;
    }
    rises = tau2 > prev_tau ? rises + 1 : 0;
    prev_tau = tau2;
    if (rises >= 3) {
      out.diverged = true;
      break;
    }

    VectorX<Scalar> post_mean(rt);
    Scalar post_var_sum = 0;
    for (Index i = 0; i < rt; ++i) {
      Scalar m, v;
      constellation_posterior(r(i), tau2, c, m, v);
      post_mean(i) = m;
      post_var_sum += v;
    }
    const Scalar alpha = std::min(post_var_sum / static_cast<Scalar>(rt) / tau2, Scalar(1) - Scalar(1e-6));
    x = (post_mean - alpha * r) / (Scalar(1) - alpha);
    v2 = std::max((inst.y - H * x).squaredNorm() - trace_s, Scalar(0)) / trace_hth;
    v2 = std::max(v2, Scalar(1e-10));
  }

  out.llr = gaussian_demap(best_r, VectorX<Scalar>(VectorX<Scalar>::Constant(rt, best_tau)), c);
  out.bits = decide_bits_from_llr(*out.llr);
  return out;
}

}  // namespace sgt
