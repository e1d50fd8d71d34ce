#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgt/channel.hpp"
#include "sgt/model.hpp"

namespace sgt {

struct TrainConfig {
  int batch_size = 128;
  int steps = 20000;
  double learning_rate = 1e-3;
  int warmup_steps = 200;
  double snr_min_db = 0.0;
  double snr_max_db = 15.0;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  /// Fraction of training instances that carry simulated decoder priors.
  double prior_fraction = 0.25;
  /// Prior reliabilities are drawn uniformly from [0, prior_max_llr].
  double prior_max_llr = 8.0;
  /// Batches are split into this many independent gradient chunks.
  int grad_chunks = 1;
  int checkpoint_every = 0;
  int validation_every = 0;
  std::vector<double> validation_snr_db;
  int validation_trials = 1000;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct ValidationRecord {
  int step = 0;
  double snr_db = 0.0;
  double ber = 0.0;
};

struct TrainLog {
  std::vector<double> loss;  // one entry per completed step
  std::vector<double> lr;
  std::vector<ValidationRecord> validation;
  double wall_seconds = 0.0;
  bool aborted = false;
  std::string abort_reason;
  int last_checkpoint_step = 0;
};

/// Mean bitwise binary cross-entropy between predicted P(bit = 0) and the
/// target probabilities.
Tensor bit_loss(const Tensor& pred, const Matrix& target);

/// Learning rate at `step` (0-based): linear warm-up, then cosine decay to 0.
double learning_rate_at(const TrainConfig& cfg, int step);

/// Simulated decoder feedback: LLR = (1 - 2 b) mu + sqrt(2 mu) n with n ~ N(0, 1),
/// returned as P(bit = 0). Reads the ground-truth bits by construction.
Matrix simulated_priors(const BitMatrix& bits, double mu, Rng& rng);

struct TrainHooks {
  /// Called every checkpoint_every steps and after the final step.
  std::function<void(int step, const SgtModel&)> on_checkpoint;
  /// Called after every step with the step's loss.
  std::function<void(int step, double loss)> on_step;
};

/// Trains `model` in place. Every step draws a fresh batch (or cycles through
/// `dataset` when non-empty) and applies one Adam update. Deterministic given
/// the config. On a non-finite loss the model is restored to the last
/// checkpoint and the log is returned with `aborted` set.
TrainLog train(SgtModel& model, const Constellation& c, const TrainConfig& cfg,
               const TrainHooks& hooks = {}, std::span<const MimoInstance> dataset = {});

/// Writes step,loss,lr[,val_ber@<snr>dB...]; wall-clock time is not written.
void write_train_log_csv(std::ostream& os, const TrainLog& log, const TrainConfig& cfg,
                         const std::string& provenance);

/// Trailing moving average with the given window (shorter at the start).
std::vector<double> moving_average(std::span<const double> values, std::size_t window);

/// First step (1-based count) whose moving-average loss is <= threshold, or
/// nullopt if never reached.
std::optional<int> steps_to_reach(std::span<const double> loss, double threshold,
                                  std::size_t window);

// BER evaluation --------------------------------------------------------------

struct BerRecord {
  std::string detector;
  double snr_db = 0.0;
  SystemDims dims;
  std::uint64_t trials = 0;
  std::uint64_t bits = 0;
  std::uint64_t errors = 0;
  double ber = 0.0;
  double ci_low = 0.0;   // Wilson 95 %
  double ci_high = 0.0;
  /// The trial cap was hit before target_errors were collected.
  bool capped = false;
};

struct BerOptions {
  std::uint64_t min_trials = 1000;
  std::uint64_t max_trials = 100000;
  std::uint64_t target_errors = 100;
  std::uint64_t chunk = 256;
  int workers = 1;
};

/// Hard decisions for a batch of instances.
using BatchDetector = std::function<std::vector<BitMatrix>(std::span<const MimoInstance>)>;

/// Monte-Carlo BER per SNR point. Trials run in fixed chunks; after each chunk
/// the run stops once min_trials and target_errors are both reached, or at
/// max_trials. Instance t at SNR index k is sample_instance_at(dims, c, snr,
/// derive_seed(seed, {k}), t), so detectors given the same seed see the same
/// instances and results do not depend on the worker count.
std::vector<BerRecord> evaluate_ber(const std::string& name, const BatchDetector& detector,
                                    const SystemDims& dims, const Constellation& c,
                                    std::span<const double> snr_db, const BerOptions& opts,
                                    std::uint64_t seed);

/// Wilson score interval at 95 %.
std::pair<double, double> wilson_interval(std::uint64_t errors, std::uint64_t bits);

/// One-sided check that BER a <= BER b is not contradicted at 95 % confidence
/// (two-proportion z-test, z = 1.645).
bool ber_not_greater(const BerRecord& a, const BerRecord& b);

/// One-sided check that BER a < BER b at 95 % confidence.
bool ber_less(const BerRecord& a, const BerRecord& b);

}  // namespace sgt
