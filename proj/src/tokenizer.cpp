#include "sgt/tokenizer.hpp"

#include <algorithm>
#include <cmath>

namespace sgt {

TokenSet tokenize(const MimoInstance& inst, int bits_per_dim, const std::optional<Matrix>& priors) {
  const Index rr = inst.H.rows(), rt = inst.H.cols();
  if (inst.y.size() != rr || inst.sigma2.size() != rr) {
    throw DimensionError("tokenize: y/sigma2 length does not match H rows");
  }
  TokenSet t;
  t.lin.resize(rr, rt + 2);
  t.lin.col(0) = inst.y;
  t.lin.middleCols(1, rt) = inst.H;
  t.lin.col(rt + 1) = inst.sigma2;

  if (priors) {
    if (priors->rows() != rt || priors->cols() != bits_per_dim) {
      throw DimensionError("tokenize: priors " + shape_string(*priors) + " expected [" +
                           std::to_string(rt) + ", " + std::to_string(bits_per_dim) + "]");
    }
    if (!priors->allFinite() || priors->minCoeff() < 0.0 || priors->maxCoeff() > 1.0) {
      throw std::invalid_argument("tokenize: prior probabilities must lie in [0, 1]");
    }
    t.sym = *priors;
  } else {
    t.sym = Matrix::Constant(rt, bits_per_dim, 0.5);
  }
  return t;
}

Matrix qr_tokens(const MimoInstance& inst) {
  const Index rr = inst.H.rows(), rt = inst.H.cols();
  if (rr < rt) {
    throw DimensionError("qr_tokens: needs at least as many receive rows as transmit columns, got " +
                         std::to_string(rr) + "x" + std::to_string(rt));
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(inst.H);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rr, rt);
  Eigen::MatrixXd r = qr.matrixQR().topRows(rt).triangularView<Eigen::Upper>();
  for (Index i = 0; i < rt; ++i) {
    if (r(i, i) < 0.0) {
      r.row(i) *= -1.0;
      q.col(i) *= -1.0;
    }
  }
  Matrix tokens(rt, rt + 2);
  tokens.col(0) = q.transpose() * inst.y;
  tokens.middleCols(1, rt) = r;
  // Q has orthonormal columns, so white noise keeps its variance.
  tokens.col(rt + 1) = inst.sigma2.head(rt);
  return tokens;
}

LinearSystemView untokenize_lin(const Matrix& lin) {
  const Index rt = lin.cols() - 2;
  if (rt <= 0) throw DimensionError("untokenize_lin: token width too small " + shape_string(lin));
  return {lin.col(0), lin.middleCols(1, rt), lin.col(rt + 1)};
}

double llr_to_prob(double llr) {
  const double c = std::clamp(llr, -kLlrMax, kLlrMax);
  return 1.0 / (1.0 + std::exp(-c));
}

double prob_to_llr(double p) {
  const double lo = llr_to_prob(-kLlrMax);
  const double hi = llr_to_prob(kLlrMax);
  const double c = std::clamp(p, lo, hi);
  return std::clamp(std::log(c) - std::log1p(-c), -kLlrMax, kLlrMax);
}

Matrix llr_to_prob(const Matrix& llr) {
  return llr.unaryExpr([](double v) { return llr_to_prob(v); });
}

Matrix prob_to_llr(const Matrix& prob) {
  return prob.unaryExpr([](double v) { return prob_to_llr(v); });
}

Matrix bit_zero_probability(const BitMatrix& bits) {
  return (1.0 - bits.cast<double>().array()).matrix();
}

BitMatrix decide_bits(const Matrix& prob_zero) {
  return (prob_zero.array() < 0.5).cast<std::uint8_t>();
}

BitMatrix decide_bits_from_llr(const Matrix& llr) {
  return (llr.array() < 0.0).cast<std::uint8_t>();
}

}  // namespace sgt
