#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgt/random.hpp"
#include "sgt/tensor.hpp"

namespace sgt {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Bits per real dimension, one row per real dimension, MSB first.
using BitMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct SystemDims {
  int n_t = 0;
  int n_r = 0;
  Index real_tx() const { return 2 * n_t; }
  Index real_rx() const { return 2 * n_r; }
  friend bool operator==(const SystemDims&, const SystemDims&) = default;
};

/// Square QAM built from two Gray-labelled PAM axes. The level with label 0
/// is the most positive one, so for QPSK bit 0 maps to +1/sqrt(2).
class Constellation {
 public:
  /// bits_per_symbol must be even (2 = QPSK, 4 = 16-QAM, ...).
  explicit Constellation(int bits_per_symbol);
  static Constellation qpsk() { return Constellation(2); }
  static Constellation from_name(const std::string& name);

  const std::string& name() const { return name_; }
  int bits_per_symbol() const { return bits_per_symbol_; }
  int bits_per_dim() const { return bits_per_symbol_ / 2; }
  int levels_per_dim() const { return 1 << bits_per_dim(); }
  /// Average complex symbol energy, always 1.
  double symbol_energy() const { return 1.0; }
  /// Average energy of one real axis.
  double dim_energy() const { return 0.5; }

  double level(unsigned label) const { return level_by_label_[label]; }
  const std::vector<double>& levels_by_label() const { return level_by_label_; }
  unsigned nearest_label(double v) const;

 private:
  std::string name_;
  int bits_per_symbol_;
  std::vector<double> level_by_label_;
};

template <typename Scalar>
struct ComplexMimoSystem {
  MatrixX<std::complex<Scalar>> H;
  VectorX<std::complex<Scalar>> x;
  VectorX<std::complex<Scalar>> n;
  VectorX<std::complex<Scalar>> y;
  Scalar sigma_c2 = 0;
};

/// One detection problem in the real-valued domain.
template <typename Scalar>
struct MimoInstanceT {
  MatrixX<Scalar> H;       // [2 n_r, 2 n_t], blocks [[Re, -Im], [Im, Re]]
  VectorX<Scalar> y;       // [2 n_r]
  VectorX<Scalar> x;       // [2 n_t]
  VectorX<Scalar> sigma2;  // [2 n_r], per-row noise variance
  BitMatrix bits;          // [2 n_t, bits_per_dim]
  double snr_db = 0.0;

  SystemDims dims() const {
    return {static_cast<int>(H.cols() / 2), static_cast<int>(H.rows() / 2)};
  }
};

using MimoInstance = MimoInstanceT<double>;
using ComplexSystem = ComplexMimoSystem<double>;

/// i.i.d. CN(0, 1) entries.
template <typename Scalar, typename Generator>
MatrixX<std::complex<Scalar>> sample_rayleigh(int n_r, int n_t, Generator& rng) {
  if (n_r < 1 || n_t < 1) throw std::invalid_argument("sample_rayleigh: dimensions must be >= 1");
  std::normal_distribution<Scalar> normal(Scalar(0), std::sqrt(Scalar(0.5)));
  MatrixX<std::complex<Scalar>> h(n_r, n_t);
  for (Index c = 0; c < h.cols(); ++c) {
    for (Index r = 0; r < h.rows(); ++r) {
      const Scalar re = normal(rng);
      const Scalar im = normal(rng);
      h(r, c) = {re, im};
    }
  }
  return h;
}

template <typename Scalar>
MatrixX<Scalar> lift_matrix(const MatrixX<std::complex<Scalar>>& hc) {
  const Index r = hc.rows(), c = hc.cols();
  MatrixX<Scalar> h(2 * r, 2 * c);
  h.topLeftCorner(r, c) = hc.real();
  h.topRightCorner(r, c) = -hc.imag();
  h.bottomLeftCorner(r, c) = hc.imag();
  h.bottomRightCorner(r, c) = hc.real();
  return h;
}

template <typename Scalar>
VectorX<Scalar> lift_vector(const VectorX<std::complex<Scalar>>& vc) {
  VectorX<Scalar> v(2 * vc.size());
  v.head(vc.size()) = vc.real();
  v.tail(vc.size()) = vc.imag();
  return v;
}

template <typename Scalar>
VectorX<std::complex<Scalar>> unlift_vector(const VectorX<Scalar>& v) {
  const Index n = v.size() / 2;
  VectorX<std::complex<Scalar>> vc(n);
  for (Index i = 0; i < n; ++i) vc(i) = {v(i), v(n + i)};
  return vc;
}

/// Real-valued equivalent of a complex system. Noise variance per real row
/// is sigma_c2 / 2. Bits are left empty.
template <typename Scalar>
MimoInstanceT<Scalar> lift_to_real(const ComplexMimoSystem<Scalar>& sys) {
  if (sys.H.cols() != sys.x.size() || sys.H.rows() != sys.y.size()) {
    throw DimensionError("lift_to_real: inconsistent complex dimensions");
  }
  MimoInstanceT<Scalar> inst;
  inst.H = lift_matrix(sys.H);
  inst.x = lift_vector(sys.x);
  inst.y = lift_vector(sys.y);
  inst.sigma2 = VectorX<Scalar>::Constant(inst.H.rows(), sys.sigma_c2 / Scalar(2));
  return inst;
}

template <typename Scalar = double>
VectorX<Scalar> modulate(const BitMatrix& bits, const Constellation& c) {
  if (bits.cols() != c.bits_per_dim() || bits.rows() == 0) {
    throw DimensionError("modulate: bit matrix has " + std::to_string(bits.cols()) +
                         " columns, constellation " + c.name() + " needs " +
                         std::to_string(c.bits_per_dim()));
  }
  VectorX<Scalar> x(bits.rows());
  for (Index i = 0; i < bits.rows(); ++i) {
    unsigned label = 0;
    for (Index b = 0; b < bits.cols(); ++b) {
      if (bits(i, b) > 1) throw std::invalid_argument("modulate: bits must be 0 or 1");
      label = (label << 1) | bits(i, b);
    }
    x(i) = static_cast<Scalar>(c.level(label));
  }
  return x;
}

template <typename Scalar>
BitMatrix hard_demap(const VectorX<Scalar>& x, const Constellation& c) {
  BitMatrix bits(x.size(), c.bits_per_dim());
  for (Index i = 0; i < x.size(); ++i) {
    const unsigned label = c.nearest_label(static_cast<double>(x(i)));
    for (int b = 0; b < c.bits_per_dim(); ++b) {
      bits(i, b) = static_cast<std::uint8_t>((label >> (c.bits_per_dim() - 1 - b)) & 1U);
    }
  }
  return bits;
}

/// Complex noise variance for a per-receive-antenna SNR:
/// sigma_c2 = n_t * E_s / 10^(snr_db / 10).
double snr_to_sigma(double snr_db, const Constellation& c, int n_t);

template <typename Generator>
BitMatrix random_bits(Index rows, Index cols, Generator& rng) {
  BitMatrix bits(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index b = 0; b < cols; ++b) bits(i, b) = static_cast<std::uint8_t>(rng() >> 63);
  }
  return bits;
}

/// Draws a Rayleigh channel, then AWGN, from `rng`.
template <typename Scalar, typename Generator>
ComplexMimoSystem<Scalar> sample_complex_system(const SystemDims& dims, const Constellation& c,
                                                double snr_db, const BitMatrix& bits,
                                                Generator& rng) {
  ComplexMimoSystem<Scalar> sys;
  sys.x = unlift_vector<Scalar>(modulate<Scalar>(bits, c));
  sys.H = sample_rayleigh<Scalar>(dims.n_r, dims.n_t, rng);
  sys.sigma_c2 = static_cast<Scalar>(snr_to_sigma(snr_db, c, dims.n_t));
  std::normal_distribution<Scalar> normal(Scalar(0), std::sqrt(sys.sigma_c2 / Scalar(2)));
  sys.n.resize(dims.n_r);
  for (Index i = 0; i < sys.n.size(); ++i) {
    const Scalar re = normal(rng);
    const Scalar im = normal(rng);
    sys.n(i) = {re, im};
  }
  sys.y = sys.H * sys.x + sys.n;
  return sys;
}

template <typename Scalar = double, typename Generator>
MimoInstanceT<Scalar> sample_instance(const SystemDims& dims, const Constellation& c, double snr_db,
                                      Generator& rng) {
  BitMatrix bits = random_bits(2 * dims.n_t, c.bits_per_dim(), rng);
  auto sys = sample_complex_system<Scalar>(dims, c, snr_db, bits, rng);
  auto inst = lift_to_real(sys);
  inst.bits = std::move(bits);
  inst.snr_db = snr_db;
  return inst;
}

/// Instance for slot `index` of a seeded stream; reproducible in isolation.
MimoInstance sample_instance_at(const SystemDims& dims, const Constellation& c, double snr_db,
                                std::uint64_t seed, std::uint64_t index);

/// CSV dump of an instance batch. Format:
///   # sgt-instances v1 n_t=<n_t> n_r=<n_r> bits_per_dim=<b>
///   snr_db,sigma2_0..,H_r_c (row-major)..,y_0..,bit_i_b..
/// Values use 17 significant digits, so a round trip is exact.
void write_instances_csv(std::ostream& os, std::span<const MimoInstance> batch,
                         const Constellation& c);
/// Reads a dump written by write_instances_csv; x is rebuilt from the bits.
std::vector<MimoInstance> read_instances_csv(std::istream& is, const Constellation& c);

}  // namespace sgt
