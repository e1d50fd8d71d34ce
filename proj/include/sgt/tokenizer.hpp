#pragma once

#include <optional>

#include "sgt/channel.hpp"
#include "sgt/tensor.hpp"

namespace sgt {

/// Largest LLR magnitude emitted or accepted at the soft interface.
inline constexpr double kLlrMax = 30.0;

/// Graph-aware token families of one instance.
///
/// `lin` holds one linear-constraint token per receive row j:
/// (y_j, H[j, :], sigma2_j), width 2 n_t + 2. `sym` holds one symbol-prior
/// token per real transmit dimension: the prior probability that each of its
/// bits is 0.
struct TokenSet {
  Matrix lin;  // [2 n_r, 2 n_t + 2]
  Matrix sym;  // [2 n_t, bits_per_dim]
};

/// Builds the token set. Without priors the symbol tokens are 0.5 everywhere.
/// Throws DimensionError on a prior shape mismatch and std::invalid_argument
/// for priors outside [0, 1].
TokenSet tokenize(const MimoInstance& inst, int bits_per_dim,
                  const std::optional<Matrix>& priors = std::nullopt);

/// Tokens of the QR-compressed baseline: rows (y'_i, R[i, :], sigma2_i) with
/// H = QR, y' = Q^T y and diag(R) >= 0. Requires n_r >= n_t.
Matrix qr_tokens(const MimoInstance& inst);

/// Inverse of tokenize() for the linear-constraint family.
struct LinearSystemView {
  Eigen::VectorXd y;
  Eigen::MatrixXd H;
  Eigen::VectorXd sigma2;
};
LinearSystemView untokenize_lin(const Matrix& lin);

// LLR convention: llr = log P(bit = 0) / P(bit = 1), clamped to +-kLlrMax.
// Probabilities are P(bit = 0).

double llr_to_prob(double llr);
double prob_to_llr(double p);
Matrix llr_to_prob(const Matrix& llr);
Matrix prob_to_llr(const Matrix& prob);

/// P(bit = 0) targets for a ground-truth bit matrix.
Matrix bit_zero_probability(const BitMatrix& bits);

/// Bits decided from P(bit = 0); ties go to 0.
BitMatrix decide_bits(const Matrix& prob_zero);
BitMatrix decide_bits_from_llr(const Matrix& llr);

}  // namespace sgt
