#include <cmath>

#include "doctest.h"
#include "sgt/baselines.hpp"
#include "sgt/trainer.hpp"

using namespace sgt;

namespace {

const Constellation kQpsk = Constellation::qpsk();

// Brute force over bit patterns in plain loops; shares nothing with ml_detect
// beyond modulate().
BitMatrix enumerate_ml(const MimoInstance& inst, const Constellation& c, double* best_metric = nullptr) {
  const Index rows = inst.H.cols();
  const int bpd = c.bits_per_dim();
  const int total = static_cast<int>(rows) * bpd;
  double best = 1e300;
  BitMatrix best_bits;
  for (std::uint64_t pattern = 0; pattern < (std::uint64_t{1} << total); ++pattern) {
    BitMatrix bits(rows, bpd);
    for (int i = 0; i < total; ++i) bits(i / bpd, i % bpd) = static_cast<std::uint8_t>((pattern >> i) & 1U);
    const Eigen::VectorXd x = modulate(bits, c);
    double metric = 0.0;
    for (Index j = 0; j < inst.H.rows(); ++j) {
      double r = inst.y(j);
      for (Index k = 0; k < rows; ++k) r -= inst.H(j, k) * x(k);
      metric += r * r / inst.sigma2(j);
    }
    if (metric < best) {
      best = metric;
      best_bits = bits;
    }
  }
  if (best_metric) *best_metric = best;
  return best_bits;
}

MimoInstance noiseless(SystemDims dims, std::uint64_t seed) {
  Rng rng(seed);
  MimoInstance inst = sample_instance(dims, kQpsk, 10.0, rng);
  inst.y = inst.H * inst.x;
  inst.sigma2.setConstant(1e-10);
  return inst;
}

}  // namespace

TEST_CASE("ML equals an independent enumerator") {
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const MimoInstance inst = sample_instance_at({2, 2}, kQpsk, 4.0 * (t % 4), 21, static_cast<std::uint64_t>(t));
    double best = 0.0;
    const BitMatrix oracle = enumerate_ml(inst, kQpsk, &best);
    const DetectorOutput out = ml_detect(inst, kQpsk);
    if (out.bits != oracle) ++mismatches;
    CHECK(weighted_residual(inst, Eigen::VectorXd(modulate(out.bits, kQpsk))) <= best * (1 + 1e-12));
  }
  CHECK(mismatches == 0);
}

TEST_CASE("ML on 16-QAM matches the enumerator") {
  const Constellation qam(4);
  for (int t = 0; t < 50; ++t) {
    const MimoInstance inst = sample_instance_at({2, 2}, qam, 12.0, 22, static_cast<std::uint64_t>(t));
    CHECK(ml_detect(inst, qam).bits == enumerate_ml(inst, qam));
  }
}

TEST_CASE("ML recovers noiseless transmissions") {
  for (auto dims : {SystemDims{2, 2}, SystemDims{4, 4}, SystemDims{3, 5}}) {
    const MimoInstance inst = noiseless(dims, 5);
    CHECK(ml_detect(inst, kQpsk).bits == inst.bits);
  }
}

TEST_CASE("ML ties go to the lowest candidate") {
  MimoInstance inst = noiseless({1, 1}, 6);
  inst.H.setZero();
  inst.y.setZero();
  CHECK((ml_detect(inst, kQpsk).bits.array() == 0).all());
}

TEST_CASE("ML search space guard") {
  const MimoInstance inst = sample_instance_at({13, 13}, kQpsk, 10.0, 1, 0);
  CHECK_THROWS_AS(ml_detect(inst, kQpsk), SearchSpaceError);
  const MimoInstance ok = sample_instance_at({8, 8}, kQpsk, 10.0, 1, 0);
  CHECK(ml_detect(ok, kQpsk).bits.rows() == 16);
}

TEST_CASE("ML max-log LLRs") {
  const MimoInstance inst = sample_instance_at({2, 2}, kQpsk, 6.0, 23, 0);
  const DetectorOutput out = ml_detect(inst, kQpsk, true);
  REQUIRE(out.llr);
  CHECK(decide_bits_from_llr(*out.llr) == out.bits);
  // Independent max-log: best metric with bit fixed to 0 and to 1.
  for (Index i = 0; i < 4; ++i) {
    double m0 = 1e300, m1 = 1e300;
    for (int pattern = 0; pattern < 16; ++pattern) {
      BitMatrix bits(4, 1);
      for (int k = 0; k < 4; ++k) bits(k, 0) = static_cast<std::uint8_t>((pattern >> k) & 1);
      const double m = weighted_residual(inst, Eigen::VectorXd(modulate(bits, kQpsk)));
      (bits(i, 0) ? m1 : m0) = std::min(bits(i, 0) ? m1 : m0, m);
    }
    CHECK((*out.llr)(i, 0) == doctest::Approx(0.5 * (m1 - m0)).epsilon(1e-9));
  }
}

TEST_CASE("LMMSE halves y for H = I and sigma2 = E") {
  MimoInstance inst;
  inst.H = Eigen::MatrixXd::Identity(4, 4);
  inst.y = Eigen::Vector4d(1.0, -2.0, 0.5, 3.0);
  inst.sigma2 = Eigen::Vector4d::Constant(kQpsk.dim_energy());
  const auto est = lmmse_estimate(inst, kQpsk.dim_energy());
  CHECK((est.x_hat - inst.y / 2).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((est.bias.array() - 0.5).abs().maxCoeff() < 1e-14);
}

TEST_CASE("LMMSE is exact without noise") {
  const MimoInstance inst = noiseless({4, 4}, 7);
  const auto est = lmmse_estimate(inst, kQpsk.dim_energy());
  CHECK((est.x_hat - inst.x).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(lmmse_detect(inst, kQpsk).bits == inst.bits);
}

TEST_CASE("OAMP with orthogonal columns matches the closed form") {
  Rng rng(8);
  std::normal_distribution<double> n;
  Eigen::MatrixXd a(6, 4);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() * Eigen::MatrixXd::Identity(6, 4);
  const double c = 2.5, s2 = 0.3;
  MimoInstance inst;
  inst.H = std::sqrt(c) * q;
  inst.y = Eigen::VectorXd(6);
  for (Index i = 0; i < 6; ++i) inst.y(i) = n(rng);
  inst.sigma2 = Eigen::VectorXd::Constant(6, s2);
  const DetectorOutput out = oamp_detect(inst, kQpsk, 1);
  const Eigen::VectorXd r = inst.H.transpose() * inst.y / c;
  const double tau = s2 / c;
  REQUIRE(out.llr);
  CHECK(out.error_variances.front() == doctest::Approx(tau).epsilon(1e-12));
  for (Index i = 0; i < 4; ++i) {
    CHECK((*out.llr)(i, 0) == doctest::Approx(2.0 * r(i) / std::sqrt(2.0) / tau).epsilon(1e-9));
  }
}

TEST_CASE("OAMP converges on noiseless well-conditioned channels") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MimoInstance inst = noiseless({4, 8}, 100 + seed);
    const DetectorOutput out = oamp_detect(inst, kQpsk, 10);
    CHECK(out.bits == inst.bits);
    CHECK(out.iterations >= 1);
  }
  CHECK_THROWS_AS(oamp_detect(noiseless({2, 2}, 1), kQpsk, 0), std::invalid_argument);
}

TEST_CASE("noiseless exactness of all detectors") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MimoInstance inst = noiseless({3, 4}, 200 + seed);
    CHECK(ml_detect(inst, kQpsk).bits == inst.bits);
    CHECK(lmmse_detect(inst, kQpsk).bits == inst.bits);
    CHECK(oamp_detect(inst, kQpsk).bits == inst.bits);
  }
}

TEST_CASE("Monte-Carlo ordering at 8x8, 10 dB") {
  BerOptions opts;
  opts.min_trials = 100000;
  opts.max_trials = 100000;
  opts.target_errors = 1;
  const double snr[] = {10.0};
  const SystemDims dims{8, 8};
  auto run = [&](const std::string& name, auto fn) {
    const BatchDetector det = [fn](std::span<const MimoInstance> batch) {
      std::vector<BitMatrix> out;
      for (const auto& inst : batch) out.push_back(fn(inst));
      return out;
    };
    return evaluate_ber(name, det, dims, kQpsk, snr, opts, 31).front();
  };
  const BerRecord ml = run("ml", [](const MimoInstance& i) { return ml_detect(i, kQpsk).bits; });
  const BerRecord lmmse = run("lmmse", [](const MimoInstance& i) { return lmmse_detect(i, kQpsk).bits; });
  const BerRecord oamp = run("oamp", [](const MimoInstance& i) { return oamp_detect(i, kQpsk).bits; });
  MESSAGE("ml " << ml.ber << " oamp " << oamp.ber << " lmmse " << lmmse.ber);
  CHECK(ml.ber < lmmse.ber);
  CHECK(lmmse.ber < 0.5);
  CHECK(ber_not_greater(ml, oamp));
  CHECK(ber_not_greater(oamp, lmmse));
  CHECK(ber_not_greater(ml, lmmse));
}
